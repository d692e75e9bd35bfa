use clap::Parser;
use spde_smooth::cli::{run, Cli, EXIT_INPUT};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap prints help/version with exit 0; everything else is an
            // input error
            if e.use_stderr() {
                eprintln!("{e}");
                std::process::exit(EXIT_INPUT);
            }
            print!("{e}");
            std::process::exit(0);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
