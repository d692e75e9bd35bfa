//! Matern covariance analytics, SPDE precision construction, Green's
//! function and convolution checks, GMRF simulation, and the dense
//! posterior oracle used for cross-validation of the sparse fit path.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::fembasis::{operator_matrix, noise_precision, FemError, FemMatrices, MassChoice};
use crate::sparsela::{CholFactor, SparseError, SparseMatrix, SparseSymMatrix};

#[derive(Debug, Error)]
pub enum MaternError {
    #[error("invalid parameters: tau = {tau}, kappa = {kappa} (must be finite and positive)")]
    InvalidParams { tau: f64, kappa: f64 },
    #[error("unsupported dimension {0} (must be 1 or 2)")]
    UnsupportedDimension(usize),
    #[error("negative distance {0}")]
    NegativeDistance(f64),
    #[error("convolution grid too narrow or coarse: need halfwidth * kappa >= 10, got {0}")]
    GridTooNarrow(f64),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Sparse(#[from] SparseError),
}

/// SPDE hyperparameters with alpha fixed at 2, so nu = 2 - d/2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaternParams {
    pub tau: f64,
    pub kappa: f64,
    pub d: usize,
}

impl MaternParams {
    pub fn new(tau: f64, kappa: f64, d: usize) -> Result<Self, MaternError> {
        if !(tau > 0.0) || !tau.is_finite() || !(kappa > 0.0) || !kappa.is_finite() {
            return Err(MaternError::InvalidParams { tau, kappa });
        }
        if d != 1 && d != 2 {
            return Err(MaternError::UnsupportedDimension(d));
        }
        Ok(Self { tau, kappa, d })
    }

    pub const ALPHA: f64 = 2.0;

    pub fn nu(&self) -> f64 {
        Self::ALPHA - self.d as f64 / 2.0
    }

    /// Marginal variance c(0) = Gamma(nu) / ((4 pi)^{d/2} kappa^{2 nu} tau^2 Gamma(nu + d/2)).
    pub fn variance(&self) -> f64 {
        match self.d {
            // nu = 3/2: Gamma(3/2)/ (sqrt(4 pi) kappa^3 tau^2 Gamma(2)) = 1/(4 kappa^3 tau^2)
            1 => 1.0 / (4.0 * self.kappa.powi(3) * self.tau * self.tau),
            // nu = 1: Gamma(1) / (4 pi kappa^2 tau^2 Gamma(2)) = 1/(4 pi kappa^2 tau^2)
            2 => 1.0 / (4.0 * std::f64::consts::PI * self.kappa * self.kappa * self.tau * self.tau),
            _ => unreachable!(),
        }
    }
}

/// Modified Bessel function of the second kind, order 1.
///
/// Ascending series for x <= 2; for larger x the exponentially weighted
/// integral representation K_1(x) = int_0^inf exp(-x cosh t) cosh t dt,
/// evaluated by trapezoid rule (the integrand decays doubly exponentially,
/// so a modest uniform grid reaches full accuracy).
pub fn bessel_k1(x: f64) -> f64 {
    assert!(x > 0.0, "bessel_k1 requires x > 0");
    if x <= 2.0 {
        // K1(x) = ln(x/2) I1(x) + 1/x - (x/4) sum_k [psi(k+1)+psi(k+2)] (x^2/4)^k / (k! (k+1)!)
        let half = 0.5 * x;
        let q = half * half;
        // I1 ascending series
        let mut i1 = 0.0f64;
        let mut term = half; // k = 0: (x/2)^{1+2k} / (k! (k+1)!)
        let mut k = 0usize;
        while term.abs() > 1e-18 * i1.abs().max(1e-300) && k < 60 {
            i1 += term;
            k += 1;
            term *= q / (k as f64 * (k + 1) as f64);
        }
        // digamma at integers: psi(1) = -gamma, psi(n+1) = psi(n) + 1/n
        const EULER_GAMMA: f64 = 0.577215664901532860606512090082;
        let mut psi_k1 = -EULER_GAMMA; // psi(1)
        let mut psi_k2 = 1.0 - EULER_GAMMA; // psi(2)
        let mut sum = 0.0f64;
        let mut t = 1.0f64; // (x^2/4)^k / (k! (k+1)!)
        for k in 0..60 {
            let term = (psi_k1 + psi_k2) * t;
            sum += term;
            if term.abs() < 1e-18 * sum.abs().max(1e-300) {
                break;
            }
            let kf = (k + 1) as f64;
            t *= q / (kf * (kf + 1.0));
            psi_k1 += 1.0 / kf;
            psi_k2 += 1.0 / (kf + 1.0);
        }
        (half.ln()) * i1 + 1.0 / x - 0.25 * x * sum
    } else {
        bessel_k_integral(1.0, x)
    }
}

/// K_nu(x) by trapezoid rule on the integral representation. Accurate for
/// x bounded away from 0; used directly for x > 2 and as a test oracle.
pub fn bessel_k_integral(nu: f64, x: f64) -> f64 {
    assert!(x > 0.0);
    // stop once exp(-x cosh t) underflows relative to the result scale
    let t_max = ((2.0 * 750.0 / x).max(4.0)).acosh() + 1.0;
    let h = 2e-3_f64;
    let n = (t_max / h).ceil() as usize;
    let mut s = 0.5 * (-x).exp(); // t = 0 term, cosh(0) = 1
    for k in 1..=n {
        let t = h * k as f64;
        let e = -x * t.cosh();
        if e < -745.0 {
            break;
        }
        s += e.exp() * (nu * t).cosh();
    }
    s * h
}

/// Matern covariance at distance r for alpha = 2 parameters.
pub fn matern_covariance(r: f64, params: &MaternParams) -> Result<f64, MaternError> {
    if r < 0.0 || !r.is_finite() {
        return Err(MaternError::NegativeDistance(r));
    }
    let c0 = params.variance();
    if r == 0.0 {
        return Ok(c0);
    }
    let kr = params.kappa * r;
    let corr = match params.d {
        // nu = 3/2 closed form: (1 + kr) exp(-kr)
        1 => (1.0 + kr) * (-kr).exp(),
        // nu = 1: kr K_1(kr); the 2^{1-nu}/Gamma(nu) normalization makes
        // the correlation kr K_1(kr) with limit 1 at r = 0
        2 => kr * bessel_k1(kr),
        _ => unreachable!(),
    };
    Ok(c0 * corr)
}

/// Green's function of tau (kappa^2 - d^2/dx^2) on the real line.
pub fn green_function_1d(r: f64, kappa: f64, tau: f64) -> Result<f64, MaternError> {
    let params = MaternParams::new(tau, kappa, 1)?;
    let _ = params;
    Ok((-kappa * r.abs()).exp() / (2.0 * kappa * tau))
}

/// Covariance by the convolution of Green's functions,
/// c(x, y) = int w(x - u) w(y - u) du, via trapezoid rule.
pub fn covariance_by_convolution(
    x: f64,
    y: f64,
    kappa: f64,
    tau: f64,
    grid_step: f64,
    grid_halfwidth: f64,
) -> Result<f64, MaternError> {
    MaternParams::new(tau, kappa, 1)?;
    if grid_halfwidth * kappa < 10.0 {
        return Err(MaternError::GridTooNarrow(grid_halfwidth * kappa));
    }
    let center = 0.5 * (x + y);
    let n = (2.0 * grid_halfwidth / grid_step).ceil() as usize;
    let h = 2.0 * grid_halfwidth / n as f64;
    let mut s = 0.0;
    for k in 0..=n {
        let u = center - grid_halfwidth + h * k as f64;
        let w = green_function_1d(x - u, kappa, tau)? * green_function_1d(y - u, kappa, tau)?;
        let weight = if k == 0 || k == n { 0.5 } else { 1.0 };
        s += weight * w;
    }
    Ok(s * h)
}

/// Q = tau^2 (kappa^4 C_lumped + 2 kappa^2 G1 + G2).
pub fn matern_precision(
    fem: &FemMatrices,
    params: &MaternParams,
) -> Result<SparseSymMatrix, MaternError> {
    let t2 = params.tau * params.tau;
    let k2 = params.kappa * params.kappa;
    let cl = fem.c_lumped_matrix();
    Ok(SparseSymMatrix::linear_combination(&[
        (t2 * k2 * k2, &cl),
        (2.0 * t2 * k2, &fem.g1),
        (t2, &fem.g2),
    ])?)
}

/// Discrepancy between the penalty route S and the FEM route P^T Q_e P.
#[derive(Debug, Clone, Copy)]
pub struct Prop3Report {
    pub max_abs: f64,
    pub max_rel: f64,
}

/// max |S - P^T Q_e P| and its value relative to max |S|. The lumped route
/// is an algebraic identity; the consistent route reports the genuine gap.
pub fn verify_prop3(
    fem: &FemMatrices,
    params: &MaternParams,
    mass: MassChoice,
) -> Result<Prop3Report, MaternError> {
    let s = matern_precision(fem, params)?;
    let p = operator_matrix(fem, params.kappa, params.tau, mass)?;
    let qe = noise_precision(fem)?;
    let qep = p.scale_rows(&qe)?;
    let ptqep = p.transpose().matmul(&qep)?;
    let m = s.dim();
    let mut max_abs = 0.0f64;
    for i in 0..m {
        for (j, v) in ptqep.row(i) {
            max_abs = max_abs.max((v - s.get(i, j)).abs());
        }
        // entries present in S but absent from the product
        // (same sparsity pattern in practice; kept for safety)
    }
    for (i, j, v) in s.iter_upper() {
        max_abs = max_abs.max((v - ptqep.get(i, j)).abs());
    }
    let scale = s.max_abs();
    Ok(Prop3Report { max_abs, max_rel: max_abs / scale })
}

/// Seeded draws from N(0, Q^{-1}) and their projection through A.
#[derive(Debug, Clone)]
pub struct FieldSample {
    /// Coefficient draws, one M-vector per sample.
    pub coefficients: Vec<Vec<f64>>,
    /// A times each coefficient draw.
    pub values: Vec<Vec<f64>>,
    pub seed: u64,
}

/// Deterministic standard normal stream (Box-Muller over ChaCha).
pub fn standard_normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let u1: f64 = rng.random::<f64>().max(1e-300);
        let u2: f64 = rng.random();
        let r = (-2.0 * u1.ln()).sqrt();
        let a = 2.0 * std::f64::consts::PI * u2;
        out.push(r * a.cos());
        if out.len() < n {
            out.push(r * a.sin());
        }
    }
    out
}

pub fn simulate_field(
    q: &SparseSymMatrix,
    a: &SparseMatrix,
    n_samples: usize,
    seed: u64,
) -> Result<FieldSample, MaternError> {
    if a.ncols() != q.dim() {
        return Err(MaternError::DimensionMismatch { expected: q.dim(), got: a.ncols() });
    }
    let factor = CholFactor::new(q)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coefficients = Vec::with_capacity(n_samples);
    let mut values = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let z = standard_normal_vec(&mut rng, q.dim());
        let beta = factor.whiten_sample(&z)?;
        values.push(a.mul_vec(&beta)?);
        coefficients.push(beta);
    }
    Ok(FieldSample { coefficients, values, seed })
}

/// Dense posterior mean and covariance of the coefficients for a Gaussian
/// response y = A beta + eps, eps ~ N(0, noise_var I), prior N(0, Q^{-1}).
/// Test oracle for the sparse fit path; sizes are expected to stay small.
pub fn dense_posterior_oracle(
    y: &[f64],
    a: &SparseMatrix,
    fem: &FemMatrices,
    params: &MaternParams,
    noise_var: f64,
) -> Result<(Vec<f64>, nalgebra::DMatrix<f64>), MaternError> {
    if a.nrows() != y.len() {
        return Err(MaternError::DimensionMismatch { expected: a.nrows(), got: y.len() });
    }
    let m = fem.dim();
    let q = matern_precision(fem, params)?;
    let mut h = nalgebra::DMatrix::<f64>::zeros(m, m);
    for (i, j, v) in q.iter_upper() {
        h[(i, j)] = v;
        h[(j, i)] = v;
    }
    let mut aty = nalgebra::DVector::<f64>::zeros(m);
    for r in 0..a.nrows() {
        let row: Vec<(usize, f64)> = a.row(r).collect();
        for &(j, vj) in &row {
            aty[j] += vj * y[r] / noise_var;
            for &(k, vk) in &row {
                h[(j, k)] += vj * vk / noise_var;
            }
        }
    }
    let chol = h
        .clone()
        .cholesky()
        .ok_or(SparseError::NotPositiveDefinite { index: 0, pivot: 0.0 })?;
    let mean = chol.solve(&aty);
    let cov = chol.inverse();
    Ok((mean.iter().copied().collect(), cov))
}
