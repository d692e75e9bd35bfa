//! Command-line front end: mesh construction, fitting, prediction, prior
//! simulation, and the self-contained verification suite. Artifacts are
//! CSV/JSON/Matrix Market; every subcommand is deterministic given its
//! inputs, flags, and seed.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::fembasis::{
    direct_g2_1d, fem_matrices, projection_matrix, BasisSpec,
};
use crate::fitter::{
    optimize_hyperparameters, predict, posterior_samples, reml_eval, Dataset,
    DesignMatrix, FamilyKind, FitContext, FitOptions, FitResult,
};
use crate::matern::{
    covariance_by_convolution, dense_posterior_oracle, matern_covariance,
    matern_precision, simulate_field, verify_prop3, MaternParams,
};
use crate::mesh::{build_mesh_1d, delaunay_triangulate, extend_hull, Mesh};

/// Exit codes: 0 success, 1 input error, 2 non-convergence.
pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_NONCONVERGED: i32 = 2;

#[derive(Parser)]
#[command(name = "spde-smooth", about = "Matern-SPDE spatial smoothing", version)]
pub struct Cli {
    /// Worker threads (0 = auto). Reserved; execution is single-threaded.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Build a mesh from a points CSV (column x, or columns x,y).
    Mesh(MeshArgs),
    /// Fit a spatial smooth by penalized likelihood with REML.
    Fit(FitArgs),
    /// Predict from a stored fit at new locations.
    Predict(PredictArgs),
    /// Draw prior field realizations at given locations.
    Simulate(SimulateArgs),
    /// Run the built-in verification suite.
    Check(CheckArgs),
}

#[derive(Args)]
pub struct MeshArgs {
    /// Points CSV with header `x` (1D) or `x,y` (2D).
    #[arg(long)]
    pub points: PathBuf,
    /// Boundary extension distance beyond the data; omit for no extension.
    #[arg(long)]
    pub margin: Option<f64>,
    /// Target node spacing.
    #[arg(long, default_value_t = 0.5)]
    pub spacing: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct FitArgs {
    /// Data CSV with header `x[,y],z[,covariate...]`.
    #[arg(long)]
    pub data: PathBuf,
    /// Mesh file from the `mesh` subcommand.
    #[arg(long)]
    pub mesh: PathBuf,
    #[arg(long, value_parser = ["gaussian", "poisson"])]
    pub family: String,
    /// B-spline degree (1D only; 2D is always linear).
    #[arg(long, default_value_t = 1)]
    pub degree: usize,
    /// Comma-separated covariate column names from the data CSV.
    #[arg(long, value_delimiter = ',')]
    pub covariates: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct PredictArgs {
    /// fit.json from the `fit` subcommand.
    #[arg(long)]
    pub fit: PathBuf,
    /// Locations CSV with header `x[,y][,covariate...]`.
    #[arg(long)]
    pub locations: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also draw posterior samples of the linear predictor.
    #[arg(long, default_value_t = 0)]
    pub samples: usize,
    /// Output CSV for posterior samples (long format).
    #[arg(long)]
    pub samples_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub mesh: PathBuf,
    #[arg(long)]
    pub kappa: f64,
    #[arg(long)]
    pub tau: f64,
    /// Number of realizations.
    #[arg(long, default_value_t = 1)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub degree: usize,
    /// Locations CSV with header `x[,y]`.
    #[arg(long)]
    pub locations: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct CheckArgs {
    /// Grid step for the convolution check.
    #[arg(long, default_value_t = 1e-3)]
    pub grid_step: f64,
    /// Directory to dump C, G1, G2 in Matrix Market format.
    #[arg(long)]
    pub fem: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Input(String),
    NonConverged(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "{m}"),
            CliError::NonConverged(m) => write!(f, "{m}"),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::NonConverged(_) => EXIT_NONCONVERGED,
        }
    }
}

fn input<E: std::fmt::Display>(ctx: &str) -> impl FnOnce(E) -> CliError + '_ {
    move |e| CliError::Input(format!("{ctx}: {e}"))
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Mesh(args) => cmd_mesh(&args),
        Command::Fit(args) => cmd_fit(&args),
        Command::Predict(args) => cmd_predict(&args),
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Check(args) => cmd_check(&args),
    }
}

/// Numeric CSV with a header row; parse errors name the offending line.
struct Table {
    headers: Vec<String>,
    columns: Vec<Vec<f64>>,
}

impl Table {
    fn column(&self, name: &str) -> Option<&Vec<f64>> {
        self.headers.iter().position(|h| h == name).map(|i| &self.columns[i])
    }

    /// Locations from the leading `x[, y]` columns; returns (points, dim).
    fn locations(&self) -> Result<(Vec<[f64; 2]>, usize), CliError> {
        if self.headers.first().map(String::as_str) != Some("x") {
            return Err(CliError::Input("first CSV column must be named 'x'".into()));
        }
        let has_y = self.headers.get(1).map(String::as_str) == Some("y");
        let xs = &self.columns[0];
        let mut pts = Vec::with_capacity(xs.len());
        for i in 0..xs.len() {
            let y = if has_y { self.columns[1][i] } else { 0.0 };
            pts.push([xs[i], y]);
        }
        Ok((pts, if has_y { 2 } else { 1 }))
    }
}

fn read_table(path: &Path) -> Result<Table, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(input(&format!("cannot open {}", path.display())))?;
    let headers: Vec<String> =
        reader.headers().map_err(input("bad CSV header"))?.iter().map(String::from).collect();
    if headers.is_empty() {
        return Err(CliError::Input(format!("{}: empty header", path.display())));
    }
    let mut columns = vec![Vec::new(); headers.len()];
    for record in reader.records() {
        let record = record.map_err(input(&format!("{}", path.display())))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != headers.len() {
            return Err(CliError::Input(format!(
                "{} line {line}: expected {} fields, got {}",
                path.display(),
                headers.len(),
                record.len()
            )));
        }
        for (k, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                CliError::Input(format!(
                    "{} line {line}: cannot parse '{field}' as a number",
                    path.display()
                ))
            })?;
            columns[k].push(v);
        }
    }
    Ok(Table { headers, columns })
}

fn read_mesh(path: &Path) -> Result<Mesh, CliError> {
    let text =
        fs::read_to_string(path).map_err(input(&format!("cannot read {}", path.display())))?;
    Mesh::from_text(&text).map_err(input(&format!("{}", path.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(input(&format!("cannot write {}", path.display())))
}

fn cmd_mesh(args: &MeshArgs) -> Result<(), CliError> {
    let table = read_table(&args.points)?;
    let (pts, dim) = table.locations()?;
    if !(args.spacing > 0.0) || args.margin.is_some_and(|m| !(m > 0.0)) {
        return Err(CliError::Input("--margin and --spacing must be positive".into()));
    }
    let mesh = if dim == 1 {
        let lo = pts.iter().map(|p| p[0]).fold(f64::MAX, f64::min);
        let hi = pts.iter().map(|p| p[0]).fold(f64::MIN, f64::max);
        if !(hi > lo) {
            return Err(CliError::Input("1D points must span a positive range".into()));
        }
        let n = ((hi - lo) / args.spacing).ceil().max(3.0) as usize;
        let m = build_mesh_1d(lo, hi, n, args.margin.unwrap_or(0.0) / (hi - lo))
            .map_err(input("mesh construction"))?;
        println!("mesh1d: {} knots, {} intervals", m.knots().len(), m.n_intervals());
        Mesh::OneD(m)
    } else {
        let points2: Vec<(f64, f64)> = pts.iter().map(|p| (p[0], p[1])).collect();
        let all = match args.margin {
            Some(m) => extend_hull(&points2, m, args.spacing)
                .map_err(input("hull extension"))?,
            None => points2,
        };
        let m = delaunay_triangulate(&all).map_err(input("triangulation"))?;
        println!("mesh2d: {} nodes, {} triangles", m.nodes().len(), m.triangles().len());
        Mesh::TwoD(m)
    };
    write_file(&args.out, &mesh.to_text())
}

/// On-disk fit summary; predict rebuilds the posterior from these
/// references, so the mesh and data files must stay in place.
#[derive(Serialize, Deserialize)]
pub struct FitFile {
    pub family: FamilyKind,
    pub degree: usize,
    pub mesh_file: String,
    pub data_file: String,
    pub covariates: Vec<String>,
    pub kappa: f64,
    pub tau: f64,
    pub sigma2: Option<f64>,
    /// Optimizer coordinates at the optimum: (log kappa, log rho) for
    /// gaussian with rho = tau*sigma, (log kappa, log tau) for poisson.
    pub theta_internal: [f64; 2],
    pub reml_value: f64,
    pub converged: bool,
    pub n_obs: usize,
    pub beta_hat: Vec<f64>,
}

struct LoadedFit {
    file: FitFile,
    mesh: Mesh,
    fit: FitResult,
}

fn family_kind(name: &str) -> FamilyKind {
    match name {
        "poisson" => FamilyKind::Poisson,
        _ => FamilyKind::Gaussian,
    }
}

fn build_dataset(
    table: &Table,
    covariate_names: &[String],
    family: FamilyKind,
) -> Result<(Dataset, Vec<[f64; 2]>, usize), CliError> {
    let (locations, dim) = table.locations()?;
    let y = table
        .column("z")
        .ok_or_else(|| CliError::Input("data CSV needs a response column 'z'".into()))?
        .clone();
    let mut covariates = Vec::new();
    for name in covariate_names {
        let col = table.column(name).ok_or_else(|| {
            CliError::Input(format!("covariate column '{name}' not found in data CSV"))
        })?;
        covariates.push(col.clone());
    }
    let ds = Dataset::new(locations.clone(), y, covariates, family)
        .map_err(input("invalid dataset"))?;
    Ok((ds, locations, dim))
}

fn cmd_fit(args: &FitArgs) -> Result<(), CliError> {
    let mesh = read_mesh(&args.mesh)?;
    let table = read_table(&args.data)?;
    let family = family_kind(&args.family);
    let (dataset, locations, dim) = build_dataset(&table, &args.covariates, family)?;
    if dim != mesh.dimension() {
        return Err(CliError::Input(format!(
            "data is {dim}D but the mesh is {}D",
            mesh.dimension()
        )));
    }
    let spec = BasisSpec::for_mesh(&mesh, args.degree).map_err(input("basis"))?;
    let fem = fem_matrices(&spec, &mesh).map_err(input("assembly"))?;
    let (a, outside) = projection_matrix(&spec, &mesh, &locations).map_err(input("projection"))?;
    if !outside.is_empty() {
        return Err(CliError::Input(format!(
            "{} observation(s) fall outside the mesh (first at row {})",
            outside.len(),
            outside[0] + 2
        )));
    }
    let design =
        DesignMatrix::new(a, dataset.covariates.clone()).map_err(input("design"))?;
    let fit = optimize_hyperparameters(
        &dataset,
        &fem,
        &design,
        &spec,
        mesh.dimension(),
        &FitOptions::default(),
    )
    .map_err(input("fit"))?;

    let file = FitFile {
        family,
        degree: args.degree,
        mesh_file: args.mesh.display().to_string(),
        data_file: args.data.display().to_string(),
        covariates: args.covariates.clone(),
        kappa: fit.kappa,
        tau: fit.tau,
        sigma2: fit.sigma2,
        theta_internal: fit.theta,
        reml_value: fit.reml_value,
        converged: fit.converged,
        n_obs: dataset.n(),
        beta_hat: fit.beta_hat.clone(),
    };
    let json = serde_json::to_string_pretty(&file).expect("serialize fit");
    write_file(&args.out, &json)?;
    println!(
        "fit: family={} kappa={:.6} tau={:.6}{} reml={:.6} converged={}",
        args.family,
        fit.kappa,
        fit.tau,
        fit.sigma2.map_or(String::new(), |s| format!(" sigma2={s:.6}")),
        fit.reml_value,
        fit.converged
    );
    if !fit.converged {
        return Err(CliError::NonConverged(
            "REML optimization hit the evaluation cap; outputs written, flagged non-converged"
                .into(),
        ));
    }
    Ok(())
}

fn load_fit(path: &Path) -> Result<LoadedFit, CliError> {
    let text =
        fs::read_to_string(path).map_err(input(&format!("cannot read {}", path.display())))?;
    let file: FitFile =
        serde_json::from_str(&text).map_err(input(&format!("{}", path.display())))?;
    let mesh = read_mesh(Path::new(&file.mesh_file))?;
    let table = read_table(Path::new(&file.data_file))?;
    let (dataset, locations, _) = build_dataset(&table, &file.covariates, file.family)?;
    let spec = BasisSpec::for_mesh(&mesh, file.degree).map_err(input("basis"))?;
    let fem = fem_matrices(&spec, &mesh).map_err(input("assembly"))?;
    let (a, _) = projection_matrix(&spec, &mesh, &locations).map_err(input("projection"))?;
    let design =
        DesignMatrix::new(a, dataset.covariates.clone()).map_err(input("design"))?;
    let ctx = FitContext {
        design: &design,
        y: &dataset.y,
        fem: &fem,
        family_kind: file.family,
        domain_dim: mesh.dimension(),
    };
    // rebuild the posterior at the stored optimum
    let eval = reml_eval(file.theta_internal, &ctx).map_err(input("posterior rebuild"))?;
    let fit = FitResult {
        beta_hat: eval.beta,
        kappa: eval.kappa,
        tau: eval.tau,
        sigma2: eval.sigma2,
        theta: file.theta_internal,
        reml_value: eval.criterion,
        converged: file.converged,
        trace: Vec::new(),
        factor: eval.factor,
        spec,
    };
    Ok(LoadedFit { file, mesh, fit })
}

fn format_float(v: f64) -> String {
    format!("{v:.12e}")
}

fn cmd_predict(args: &PredictArgs) -> Result<(), CliError> {
    let loaded = load_fit(&args.fit)?;
    let table = read_table(&args.locations)?;
    let (locations, dim) = table.locations()?;
    if dim != loaded.mesh.dimension() {
        return Err(CliError::Input(format!(
            "locations are {dim}D but the mesh is {}D",
            loaded.mesh.dimension()
        )));
    }
    let mut covariates = Vec::new();
    for name in &loaded.file.covariates {
        let col = table.column(name).ok_or_else(|| {
            CliError::Input(format!("locations CSV is missing covariate column '{name}'"))
        })?;
        covariates.push(col.clone());
    }
    let cov_opt = if covariates.is_empty() { None } else { Some(covariates.as_slice()) };
    let preds = predict(&loaded.fit, &loaded.mesh, loaded.file.family, &locations, cov_opt)
        .map_err(input("predict"))?;

    let mut out = String::new();
    let coord_header = if dim == 2 { "x,y" } else { "x" };
    out.push_str(&format!("{coord_header},mean,se,response_mean\n"));
    let mut n_outside = 0usize;
    for (p, loc) in preds.iter().zip(&locations) {
        let coords = if dim == 2 {
            format!("{},{}", loc[0], loc[1])
        } else {
            format!("{}", loc[0])
        };
        out.push_str(&format!(
            "{coords},{},{},{}\n",
            format_float(p.mean),
            format_float(p.se),
            format_float(p.response_mean)
        ));
        n_outside += p.outside as usize;
    }
    write_file(&args.out, &out)?;
    if n_outside > 0 {
        eprintln!("warning: {n_outside} location(s) outside the mesh (zero-extrapolated)");
    }
    println!("predict: {} locations written to {}", preds.len(), args.out.display());

    if args.samples > 0 {
        let samples_path = args.samples_out.as_ref().ok_or_else(|| {
            CliError::Input("--samples requires --samples-out".into())
        })?;
        let draws =
            posterior_samples(&loaded.fit, &loaded.mesh, &locations, args.samples, args.seed)
                .map_err(input("posterior samples"))?;
        let mut out = String::new();
        out.push_str(&format!("sample_id,{coord_header},value\n"));
        for (s, draw) in draws.iter().enumerate() {
            for (loc, v) in locations.iter().zip(draw) {
                let coords = if dim == 2 {
                    format!("{},{}", loc[0], loc[1])
                } else {
                    format!("{}", loc[0])
                };
                out.push_str(&format!("{s},{coords},{}\n", format_float(*v)));
            }
        }
        write_file(samples_path, &out)?;
        println!(
            "predict: {} posterior draws written to {}",
            args.samples,
            samples_path.display()
        );
    }
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let mesh = read_mesh(&args.mesh)?;
    let table = read_table(&args.locations)?;
    let (locations, dim) = table.locations()?;
    if dim != mesh.dimension() {
        return Err(CliError::Input(format!(
            "locations are {dim}D but the mesh is {}D",
            mesh.dimension()
        )));
    }
    let params = MaternParams::new(args.tau, args.kappa, mesh.dimension())
        .map_err(input("parameters"))?;
    let spec = BasisSpec::for_mesh(&mesh, args.degree).map_err(input("basis"))?;
    let fem = fem_matrices(&spec, &mesh).map_err(input("assembly"))?;
    let q = matern_precision(&fem, &params).map_err(input("precision"))?;
    let (a, _) = projection_matrix(&spec, &mesh, &locations).map_err(input("projection"))?;
    let sample = simulate_field(&q, &a, args.n, args.seed).map_err(input("simulation"))?;

    let coord_header = if dim == 2 { "x,y" } else { "x" };
    let mut out = String::new();
    out.push_str(&format!("sample_id,{coord_header},value\n"));
    for (s, values) in sample.values.iter().enumerate() {
        for (loc, v) in locations.iter().zip(values) {
            let coords = if dim == 2 {
                format!("{},{}", loc[0], loc[1])
            } else {
                format!("{}", loc[0])
            };
            out.push_str(&format!("{s},{coords},{}\n", format_float(*v)));
        }
    }
    write_file(&args.out, &out)?;
    println!(
        "simulate: {} sample(s) at {} location(s), seed {}",
        args.n,
        locations.len(),
        args.seed
    );
    Ok(())
}

struct CheckRow {
    name: String,
    value: f64,
    tolerance: f64,
    pass: bool,
}

fn check_row(name: &str, value: f64, tolerance: f64) -> CheckRow {
    CheckRow { name: name.into(), value, tolerance, pass: value.is_finite() && value <= tolerance }
}

fn cmd_check(args: &CheckArgs) -> Result<(), CliError> {
    let mut rows = Vec::new();

    // operator identity: penalty equals projected diagonal precision
    let mesh_1d = Mesh::OneD(build_mesh_1d(0.0, 10.0, 50, 0.2).map_err(input("mesh"))?);
    let mut fem_deg2 = None;
    for degree in [1usize, 2] {
        let spec = BasisSpec::for_mesh(&mesh_1d, degree).map_err(input("basis"))?;
        let fem = fem_matrices(&spec, &mesh_1d).map_err(input("assembly"))?;
        let mut worst = 0.0f64;
        for &kappa in &[0.1, 1.0, 10.0] {
            for &tau in &[0.1, 1.0, 10.0] {
                let params = MaternParams::new(tau, kappa, 1).map_err(input("params"))?;
                let report = verify_prop3(&fem, &params, crate::fembasis::MassChoice::Lumped).map_err(input("prop3"))?;
                worst = worst.max(report.max_rel);
            }
        }
        rows.push(check_row(
            &format!("operator identity, 1D degree {degree} (rel)"),
            worst,
            1e-12,
        ));
        if degree == 2 {
            fem_deg2 = Some(fem);
        }
    }
    {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pts: Vec<(f64, f64)> =
            (0..80).map(|_| (rng.random::<f64>() * 10.0, rng.random::<f64>() * 10.0)).collect();
        let all = extend_hull(&pts, 2.0, 2.0).map_err(input("hull"))?;
        let mesh2 = Mesh::TwoD(delaunay_triangulate(&all).map_err(input("triangulation"))?);
        let spec = BasisSpec::for_mesh(&mesh2, 1).map_err(input("basis"))?;
        let fem = fem_matrices(&spec, &mesh2).map_err(input("assembly"))?;
        let mut worst = 0.0f64;
        for &kappa in &[0.1, 1.0, 10.0] {
            for &tau in &[0.1, 1.0, 10.0] {
                let params = MaternParams::new(tau, kappa, 2).map_err(input("params"))?;
                let report = verify_prop3(&fem, &params, crate::fembasis::MassChoice::Lumped).map_err(input("prop3"))?;
                worst = worst.max(report.max_rel);
            }
        }
        rows.push(check_row("operator identity, 2D degree 1 (rel)", worst, 1e-12));
    }

    // covariance as self-convolution of the Green's function
    {
        let params = MaternParams::new(1.0, 1.0, 1).map_err(input("params"))?;
        let mut worst = 0.0f64;
        let mut failed = false;
        for &r in &[0.0, 0.5, 1.0, 2.0] {
            match covariance_by_convolution(0.0, r, 1.0, 1.0, args.grid_step, 20.0) {
                Ok(conv) => {
                    let exact = matern_covariance(r, &params).map_err(input("covariance"))?;
                    worst = worst.max((conv - exact).abs() / exact.abs());
                }
                Err(e) => {
                    eprintln!("convolution check failed at r={r}: {e}");
                    failed = true;
                }
            }
        }
        let mut row = check_row(
            &format!("covariance vs convolution, step {} (rel)", args.grid_step),
            worst,
            1e-4,
        );
        if failed {
            row.pass = false;
        }
        if !row.pass {
            eprintln!(
                "convolution quadrature at step {} exceeds the 1e-4 tolerance; \
                 use a grid step of 1e-3 or finer",
                args.grid_step
            );
        }
        rows.push(row);
        let c0 = matern_covariance(0.0, &params).map_err(input("covariance"))?;
        rows.push(check_row("variance at r=0 vs 0.25 (abs)", (c0 - 0.25).abs(), 1e-12));
    }

    // sparse fit equals the dense posterior oracle
    {
        let mesh = Mesh::OneD(build_mesh_1d(0.0, 10.0, 40, 0.2).map_err(input("mesh"))?);
        let spec = BasisSpec::for_mesh(&mesh, 1).map_err(input("basis"))?;
        let fem = fem_matrices(&spec, &mesh).map_err(input("assembly"))?;
        let params = MaternParams::new(1.0, 1.0, 1).map_err(input("params"))?;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let locations: Vec<[f64; 2]> =
            (0..40).map(|_| [rng.random::<f64>() * 10.0, 0.0]).collect();
        let y: Vec<f64> = (0..40).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let (a, _) = projection_matrix(&spec, &mesh, &locations).map_err(input("projection"))?;
        let noise_var = 0.25;
        let (mean_o, cov_o) = dense_posterior_oracle(&y, &a, &fem, &params, noise_var)
            .map_err(input("oracle"))?;
        let q = matern_precision(&fem, &params).map_err(input("precision"))?;
        let design = DesignMatrix::new(a, Vec::new()).map_err(input("design"))?;
        let fit = crate::fitter::pirls(
            &design,
            &y,
            &q,
            crate::fitter::Family::gaussian(noise_var),
            None,
        )
        .map_err(input("pirls"))?;
        let scale = mean_o.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let mut worst = 0.0f64;
        for i in 0..mean_o.len() {
            worst = worst.max((fit.beta[i] - mean_o[i]).abs() / scale);
        }
        let mid = mean_o.len() / 2;
        let mut probe = vec![0.0; mean_o.len()];
        probe[mid] = 1.0;
        let hp = fit.factor.solve(&probe).map_err(input("solve"))?;
        let var_rel = (hp[mid] - cov_o[(mid, mid)]).abs() / cov_o[(mid, mid)];
        rows.push(check_row("posterior mean vs dense oracle (rel)", worst, 1e-8));
        rows.push(check_row("posterior variance vs dense oracle (rel)", var_rel, 1e-8));
    }

    // simulation fidelity against dense covariance and analytic values
    {
        let kappa = 1.0;
        let tau = 1.0;
        let mesh = Mesh::OneD(build_mesh_1d(0.0, 10.0, 200, 0.7).map_err(input("mesh"))?);
        let spec = BasisSpec::for_mesh(&mesh, 1).map_err(input("basis"))?;
        let fem = fem_matrices(&spec, &mesh).map_err(input("assembly"))?;
        let params = MaternParams::new(tau, kappa, 1).map_err(input("params"))?;
        let q = matern_precision(&fem, &params).map_err(input("precision"))?;
        let locs = [[5.0, 0.0], [5.0 + 1.0 / kappa, 0.0]];
        let (a, _) = projection_matrix(&spec, &mesh, &locs).map_err(input("projection"))?;
        let n = 20_000usize;
        let sample = simulate_field(&q, &a, n, 42).map_err(input("simulation"))?;
        let v0: Vec<f64> = sample.values.iter().map(|s| s[0]).collect();
        let v1: Vec<f64> = sample.values.iter().map(|s| s[1]).collect();
        let mean0 = v0.iter().sum::<f64>() / n as f64;
        let mean1 = v1.iter().sum::<f64>() / n as f64;
        let var0 =
            v0.iter().map(|v| (v - mean0) * (v - mean0)).sum::<f64>() / (n - 1) as f64;
        let cov01 = v0
            .iter()
            .zip(&v1)
            .map(|(a, b)| (a - mean0) * (b - mean1))
            .sum::<f64>()
            / (n - 1) as f64;
        let var1 =
            v1.iter().map(|v| (v - mean1) * (v - mean1)).sum::<f64>() / (n - 1) as f64;

        // discretized truth: A Q^{-1} A^T via sparse solves
        let factor = crate::sparsela::CholFactor::new(&q).map_err(input("factor"))?;
        let a0: Vec<f64> = {
            let mut row = vec![0.0; q.dim()];
            for (j, v) in a.row(0) {
                row[j] = v;
            }
            row
        };
        let qa0 = factor.solve(&a0).map_err(input("solve"))?;
        let var_fem: f64 = a0.iter().zip(&qa0).map(|(x, y)| x * y).sum();
        let se_var = var_fem * (2.0 / n as f64).sqrt();
        rows.push(check_row(
            "simulated variance vs discretized (units of 3*MC SE)",
            (var0 - var_fem).abs() / (3.0 * se_var),
            1.0,
        ));
        let c0 = params.variance();
        rows.push(check_row(
            "simulated variance vs analytic (rel)",
            (var0 - c0).abs() / c0,
            0.05 + 3.0 * se_var / c0,
        ));
        let corr = cov01 / (var0 * var1).sqrt();
        let r = 1.0 / kappa;
        let corr_true = (1.0 + kappa * r) * (-kappa * r).exp();
        let se_corr = (1.0 - corr_true * corr_true) / (n as f64).sqrt();
        rows.push(check_row(
            "lag-1/kappa correlation vs analytic (abs)",
            (corr - corr_true).abs(),
            3.0 * se_corr + 0.05,
        ));
    }

    // informational: the two G2 constructions differ by design
    if let Some(fem) = &fem_deg2 {
        if let Mesh::OneD(m1) = &mesh_1d {
            let spec = BasisSpec::for_mesh(&mesh_1d, 2).map_err(input("basis"))?;
            let direct = direct_g2_1d(&spec, m1).map_err(input("direct G2"))?;
            let gap = crate::sparsela::SparseSymMatrix::linear_combination(&[
                (1.0, &fem.g2),
                (-1.0, &direct),
            ])
            .map_err(input("G2 gap"))?
            .max_abs()
                / direct.max_abs();
            println!("info: Galerkin vs direct G2 (1D degree 2), max entry gap {gap:.3e} relative");
        }
    }

    if let Some(dir) = &args.fem {
        fs::create_dir_all(dir).map_err(input("cannot create --fem directory"))?;
        if let Some(fem) = &fem_deg2 {
            write_file(&dir.join("c.mtx"), &fem.c.to_matrix_market())?;
            write_file(&dir.join("g1.mtx"), &fem.g1.to_matrix_market())?;
            write_file(&dir.join("g2.mtx"), &fem.g2.to_matrix_market())?;
            println!("info: C, G1, G2 written to {}", dir.display());
        }
    }

    let mut all_pass = true;
    println!("{:<55} {:>12} {:>12} {:>6}", "check", "value", "tolerance", "status");
    for row in &rows {
        println!(
            "{:<55} {:>12.4e} {:>12.4e} {:>6}",
            row.name,
            row.value,
            row.tolerance,
            if row.pass { "pass" } else { "FAIL" }
        );
        all_pass &= row.pass;
    }
    if all_pass {
        println!("all checks passed");
        Ok(())
    } else {
        Err(CliError::Input("one or more checks failed".into()))
    }
}
