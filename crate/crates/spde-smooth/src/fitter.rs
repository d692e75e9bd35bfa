//! Penalized-likelihood fitting: PIRLS inner loop, Laplace/REML outer
//! criterion with exact Gaussian variance profiling, Nelder-Mead
//! hyperparameter search, prediction, and posterior sampling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fembasis::{eval_basis, BasisSpec, FemError, FemMatrices};
use crate::matern::{standard_normal_vec, MaternError, MaternParams};
use crate::mesh::Mesh;
use crate::sparsela::{CholFactor, SparseError, SparseMatrix, SparseSymMatrix};

const LINK_CLAMP: f64 = 30.0;

#[derive(Debug, Error)]
pub enum FitError {
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("collinear fixed-effect columns (condition number {0:.3e})")]
    CollinearCovariates(f64),
    #[error("PIRLS failed to converge in {0} iterations")]
    PirlsNonConvergence(usize),
    #[error("non-finite working weights at iteration {0}")]
    NonFiniteWeights(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("fit did not converge")]
    NotConverged,
    #[error(transparent)]
    Sparse(#[from] SparseError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Matern(#[from] MaternError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyKind {
    Gaussian,
    Poisson,
}

/// Response family: link and variance structure for the PIRLS loop.
/// Gaussian uses the identity link with a free dispersion; Poisson uses the
/// log link with unit dispersion.
#[derive(Debug, Clone, Copy)]
pub struct Family {
    pub kind: FamilyKind,
    /// Gaussian noise variance used as fixed dispersion inside PIRLS.
    pub dispersion: f64,
}

impl Family {
    pub fn gaussian(noise_var: f64) -> Self {
        Self { kind: FamilyKind::Gaussian, dispersion: noise_var }
    }

    pub fn poisson() -> Self {
        Self { kind: FamilyKind::Poisson, dispersion: 1.0 }
    }
}

/// Observations: locations, responses, optional fixed-effect covariates.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub locations: Vec<[f64; 2]>,
    pub y: Vec<f64>,
    /// Fixed-effect covariate columns, each of length n.
    pub covariates: Vec<Vec<f64>>,
    pub family: FamilyKind,
}

impl Dataset {
    pub fn new(
        locations: Vec<[f64; 2]>,
        y: Vec<f64>,
        covariates: Vec<Vec<f64>>,
        family: FamilyKind,
    ) -> Result<Self, FitError> {
        let n = y.len();
        if n < 5 {
            return Err(FitError::InvalidDataset(format!("need at least 5 observations, got {n}")));
        }
        if locations.len() != n {
            return Err(FitError::InvalidDataset("locations/response length mismatch".into()));
        }
        if locations.iter().flatten().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
            return Err(FitError::InvalidDataset("non-finite location or response".into()));
        }
        for col in &covariates {
            if col.len() != n {
                return Err(FitError::InvalidDataset("covariate column length mismatch".into()));
            }
            if col.iter().any(|v| !v.is_finite()) {
                return Err(FitError::InvalidDataset("non-finite covariate".into()));
            }
        }
        if family == FamilyKind::Poisson {
            if y.iter().any(|&v| v < 0.0 || v.fract() != 0.0) {
                return Err(FitError::InvalidDataset(
                    "poisson responses must be non-negative integers".into(),
                ));
            }
        }
        Ok(Self { locations, y, covariates, family })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }
}

/// Combined design: sparse projection block A plus dense fixed-effect
/// columns appended on the right.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub a: SparseMatrix,
    pub covariates: Vec<Vec<f64>>,
}

impl DesignMatrix {
    pub fn new(a: SparseMatrix, covariates: Vec<Vec<f64>>) -> Result<Self, FitError> {
        for col in &covariates {
            if col.len() != a.nrows() {
                return Err(FitError::DimensionMismatch { expected: a.nrows(), got: col.len() });
            }
        }
        check_covariate_conditioning(&covariates)?;
        Ok(Self { a, covariates })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.a.ncols()
    }

    pub fn nc(&self) -> usize {
        self.covariates.len()
    }

    pub fn p(&self) -> usize {
        self.m() + self.nc()
    }

    pub fn eta(&self, beta: &[f64]) -> Vec<f64> {
        let m = self.m();
        let mut eta = self.a.mul_vec(&beta[..m]).expect("design dimension");
        for (c, col) in self.covariates.iter().enumerate() {
            let b = beta[m + c];
            for (e, &x) in eta.iter_mut().zip(col.iter()) {
                *e += b * x;
            }
        }
        eta
    }

    /// B^T diag(w) B as a symmetric sparse matrix.
    pub fn weighted_normal_matrix(&self, w: &[f64]) -> Result<SparseSymMatrix, FitError> {
        let m = self.m();
        let p = self.p();
        let mut triplets = Vec::new();
        for r in 0..self.n() {
            let mut row: Vec<(usize, f64)> = self.a.row(r).collect();
            for (c, col) in self.covariates.iter().enumerate() {
                row.push((m + c, col[r]));
            }
            for (ii, &(i, vi)) in row.iter().enumerate() {
                for &(j, vj) in &row[ii..] {
                    let (i, j) = if i <= j { (i, j) } else { (j, i) };
                    triplets.push((i, j, w[r] * vi * vj));
                }
            }
        }
        Ok(SparseSymMatrix::from_triplets(&triplets, p)?)
    }

    /// B^T diag(w) z.
    pub fn weighted_rhs(&self, w: &[f64], z: &[f64]) -> Vec<f64> {
        let m = self.m();
        let mut rhs = vec![0.0; self.p()];
        for r in 0..self.n() {
            let wz = w[r] * z[r];
            for (j, v) in self.a.row(r) {
                rhs[j] += v * wz;
            }
            for (c, col) in self.covariates.iter().enumerate() {
                rhs[m + c] += col[r] * wz;
            }
        }
        rhs
    }
}

fn check_covariate_conditioning(covariates: &[Vec<f64>]) -> Result<(), FitError> {
    let nc = covariates.len();
    if nc < 2 {
        return Ok(());
    }
    let n = covariates[0].len();
    let x = nalgebra::DMatrix::from_fn(n, nc, |r, c| covariates[c][r]);
    let svd = x.svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if cond > 1e8 {
        return Err(FitError::CollinearCovariates(cond));
    }
    Ok(())
}

/// Pad an M x M penalty with a zero block for `extra` unpenalized columns.
pub fn pad_penalty(s: &SparseSymMatrix, extra: usize) -> SparseSymMatrix {
    let triplets: Vec<_> = s.iter_upper().collect();
    SparseSymMatrix::from_triplets(&triplets, s.dim() + extra).expect("pad penalty")
}

fn log_factorials(y: &[f64]) -> Vec<f64> {
    y.iter()
        .map(|&v| {
            let n = v as u64;
            (2..=n).map(|k| (k as f64).ln()).sum()
        })
        .collect()
}

#[derive(Debug)]
pub struct PirlsResult {
    pub beta: Vec<f64>,
    /// Cholesky factor of the penalized Hessian B^T W B + S-bar.
    pub factor: CholFactor,
    pub loglik: f64,
    /// 0.5 beta^T S-bar beta at convergence.
    pub penalty: f64,
    pub penalized_loglik: f64,
    pub iterations: usize,
}

/// Penalized IRLS: maximizes l(beta) - 0.5 beta^T S-bar beta with
/// step-halving; the objective is non-decreasing across iterations.
pub fn pirls(
    design: &DesignMatrix,
    y: &[f64],
    s_bar: &SparseSymMatrix,
    family: Family,
    beta_init: Option<&[f64]>,
) -> Result<PirlsResult, FitError> {
    let n = design.n();
    let p = design.p();
    if y.len() != n {
        return Err(FitError::DimensionMismatch { expected: n, got: y.len() });
    }
    if s_bar.dim() != p {
        return Err(FitError::DimensionMismatch { expected: p, got: s_bar.dim() });
    }
    let ln_fact = match family.kind {
        FamilyKind::Poisson => log_factorials(y),
        FamilyKind::Gaussian => Vec::new(),
    };

    let loglik = |eta: &[f64]| -> f64 {
        match family.kind {
            FamilyKind::Gaussian => {
                let rss: f64 = y.iter().zip(eta).map(|(yi, ei)| (yi - ei) * (yi - ei)).sum();
                -0.5 * n as f64 * (2.0 * std::f64::consts::PI * family.dispersion).ln()
                    - 0.5 * rss / family.dispersion
            }
            FamilyKind::Poisson => y
                .iter()
                .zip(eta)
                .zip(&ln_fact)
                .map(|((yi, ei), lf)| {
                    let e = ei.clamp(-LINK_CLAMP, LINK_CLAMP);
                    yi * e - e.exp() - lf
                })
                .sum(),
        }
    };
    let penalty = |beta: &[f64]| -> f64 {
        let sb = s_bar.mul_vec(beta).expect("penalty dimension");
        0.5 * beta.iter().zip(&sb).map(|(b, s)| b * s).sum::<f64>()
    };

    let mut beta = beta_init.map(|b| b.to_vec()).unwrap_or_else(|| vec![0.0; p]);
    let mut eta = design.eta(&beta);
    let mut obj = loglik(&eta) - penalty(&beta);
    let max_iter = 100;
    let mut last_factor: Option<CholFactor> = None;

    for iter in 0..max_iter {
        // working weights and response
        let mut w = vec![0.0; n];
        let mut z = vec![0.0; n];
        match family.kind {
            FamilyKind::Gaussian => {
                for i in 0..n {
                    w[i] = 1.0 / family.dispersion;
                    z[i] = y[i];
                }
            }
            FamilyKind::Poisson => {
                for i in 0..n {
                    let e = eta[i].clamp(-LINK_CLAMP, LINK_CLAMP);
                    let mu = e.exp();
                    w[i] = mu;
                    z[i] = e + (y[i] - mu) / mu;
                    if !w[i].is_finite() || !z[i].is_finite() {
                        return Err(FitError::NonFiniteWeights(iter));
                    }
                }
            }
        }
        let h = SparseSymMatrix::linear_combination(&[
            (1.0, &design.weighted_normal_matrix(&w)?),
            (1.0, s_bar),
        ])?;
        let factor = CholFactor::new(&h)?;
        let rhs = design.weighted_rhs(&w, &z);
        let beta_full = factor.solve(&rhs)?;

        // step-halving on the penalized objective
        let mut t = 1.0;
        let mut accepted = false;
        let mut beta_try = beta.clone();
        let mut obj_try = obj;
        for _ in 0..30 {
            for i in 0..p {
                beta_try[i] = beta[i] + t * (beta_full[i] - beta[i]);
            }
            let eta_try = design.eta(&beta_try);
            obj_try = loglik(&eta_try) - penalty(&beta_try);
            if obj_try >= obj - 1e-12 * (1.0 + obj.abs()) {
                eta = eta_try;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        assert!(
            !accepted || obj_try >= obj - 1e-10 * (1.0 + obj.abs()),
            "PIRLS objective decreased"
        );
        if !accepted {
            return Err(FitError::PirlsNonConvergence(iter));
        }
        beta = beta_try;
        obj = obj_try;
        last_factor = Some(factor);

        // gradient of the penalized log-likelihood
        let resid: Vec<f64> = match family.kind {
            FamilyKind::Gaussian => (0..n).map(|i| (y[i] - eta[i]) / family.dispersion).collect(),
            FamilyKind::Poisson => (0..n)
                .map(|i| y[i] - eta[i].clamp(-LINK_CLAMP, LINK_CLAMP).exp())
                .collect(),
        };
        let ones = vec![1.0; n];
        let mut grad = design.weighted_rhs(&ones, &resid);
        let sb = s_bar.mul_vec(&beta)?;
        for i in 0..p {
            grad[i] -= sb[i];
        }
        let gmax = grad.iter().fold(0.0f64, |a, g| a.max(g.abs()));
        if gmax <= 1e-8 * (1.0 + obj.abs()) {
            // refresh the factor at the accepted beta for the Hessian report
            let mut w = vec![0.0; n];
            match family.kind {
                FamilyKind::Gaussian => w.fill(1.0 / family.dispersion),
                FamilyKind::Poisson => {
                    for i in 0..n {
                        w[i] = eta[i].clamp(-LINK_CLAMP, LINK_CLAMP).exp();
                    }
                }
            }
            let h = SparseSymMatrix::linear_combination(&[
                (1.0, &design.weighted_normal_matrix(&w)?),
                (1.0, s_bar),
            ])?;
            let factor = CholFactor::new(&h)?;
            let pen = penalty(&beta);
            let ll = loglik(&eta);
            return Ok(PirlsResult {
                beta,
                factor,
                loglik: ll,
                penalty: pen,
                penalized_loglik: ll - pen,
                iterations: iter + 1,
            });
        }
    }
    let _ = last_factor;
    Err(FitError::PirlsNonConvergence(max_iter))
}

/// Everything the REML criterion needs per evaluation, assembled once.
pub struct FitContext<'a> {
    pub design: &'a DesignMatrix,
    pub y: &'a [f64],
    pub fem: &'a FemMatrices,
    pub family_kind: FamilyKind,
    pub domain_dim: usize,
}

impl<'a> FitContext<'a> {
    /// S0(kappa) = kappa^4 C_lumped + 2 kappa^2 G1 + G2.
    fn penalty_base(&self, kappa: f64) -> Result<SparseSymMatrix, FitError> {
        let k2 = kappa * kappa;
        let cl = self.fem.c_lumped_matrix();
        Ok(SparseSymMatrix::linear_combination(&[
            (k2 * k2, &cl),
            (2.0 * k2, &self.fem.g1),
            (1.0, &self.fem.g2),
        ])?)
    }
}

/// Per-evaluation REML quantities.
pub struct RemlEval {
    pub criterion: f64,
    pub beta: Vec<f64>,
    pub factor: CholFactor,
    /// Profiled Gaussian noise variance; None for Poisson.
    pub sigma2: Option<f64>,
    pub kappa: f64,
    pub tau: f64,
}

/// Negative Laplace-approximate restricted likelihood at theta.
///
/// theta[0] is log kappa for both families. theta[1] is log tau for
/// Poisson; for Gaussian it is log rho with rho^2 = tau^2 sigma^2, the
/// penalty scale in noise-variance units, which makes the sigma^2 profile
/// exact (tau is recovered as rho / sigma-hat).
pub fn reml_eval(theta: [f64; 2], ctx: &FitContext) -> Result<RemlEval, FitError> {
    let kappa = theta[0].exp();
    if !kappa.is_finite() || kappa <= 0.0 {
        return Err(FitError::InvalidDataset(format!("bad theta {theta:?}")));
    }
    let s0 = ctx.penalty_base(kappa)?;
    let m = s0.dim() as f64;
    let n = ctx.y.len() as f64;
    let nc = ctx.design.nc() as f64;
    let ld_s0 = CholFactor::new(&s0)?.logdet();
    let two_pi = 2.0 * std::f64::consts::PI;

    match ctx.family_kind {
        FamilyKind::Gaussian => {
            let rho2 = (2.0 * theta[1]).exp();
            let s_w = SparseSymMatrix::linear_combination(&[(rho2, &s0)])?;
            let s_bar = pad_penalty(&s_w, ctx.design.nc());
            let fit = pirls(ctx.design, ctx.y, &s_bar, Family::gaussian(1.0), None)?;
            let eta = ctx.design.eta(&fit.beta);
            let rss: f64 =
                ctx.y.iter().zip(&eta).map(|(yi, ei)| (yi - ei) * (yi - ei)).sum();
            let d = rss + 2.0 * fit.penalty;
            let sigma2 = d / (n - nc);
            let ld_sw = m * rho2.ln() + ld_s0;
            let ld_h0 = fit.factor.logdet();
            let criterion = 0.5 * (n - nc)
                + 0.5 * n * two_pi.ln()
                + 0.5 * (n - nc) * sigma2.ln()
                - 0.5 * ld_sw
                + 0.5 * ld_h0
                - 0.5 * m * two_pi.ln();
            let tau = (rho2 / sigma2).sqrt();
            Ok(RemlEval { criterion, beta: fit.beta, factor: fit.factor, sigma2: Some(sigma2), kappa, tau })
        }
        FamilyKind::Poisson => {
            let tau = theta[1].exp();
            let s = SparseSymMatrix::linear_combination(&[(tau * tau, &s0)])?;
            let s_bar = pad_penalty(&s, ctx.design.nc());
            let fit = pirls(ctx.design, ctx.y, &s_bar, Family::poisson(), None)?;
            let ld_s = m * (tau * tau).ln() + ld_s0;
            let criterion = -(fit.loglik - fit.penalty + 0.5 * ld_s - 0.5 * fit.factor.logdet()
                + 0.5 * m * two_pi.ln());
            Ok(RemlEval { criterion, beta: fit.beta, factor: fit.factor, sigma2: None, kappa, tau })
        }
    }
}

/// REML criterion value; +inf when the evaluation fails (rejected point).
pub fn reml_criterion(theta: [f64; 2], ctx: &FitContext) -> f64 {
    match reml_eval(theta, ctx) {
        Ok(e) if e.criterion.is_finite() => e.criterion,
        _ => f64::INFINITY,
    }
}

/// Central-difference gradient of the REML criterion.
pub fn reml_gradient(theta: [f64; 2], ctx: &FitContext, step: f64) -> [f64; 2] {
    let mut g = [0.0; 2];
    for k in 0..2 {
        let mut up = theta;
        let mut dn = theta;
        up[k] += step;
        dn[k] -= step;
        g[k] = (reml_criterion(up, ctx) - reml_criterion(dn, ctx)) / (2.0 * step);
    }
    g
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceEntry {
    pub eval: usize,
    pub theta: [f64; 2],
    pub criterion: f64,
}

#[derive(Debug)]
pub struct FitResult {
    pub beta_hat: Vec<f64>,
    pub kappa: f64,
    pub tau: f64,
    pub sigma2: Option<f64>,
    /// Internal optimizer coordinates at the optimum.
    pub theta: [f64; 2],
    pub reml_value: f64,
    pub converged: bool,
    pub trace: Vec<TraceEntry>,
    /// Factor of the sigma-free penalized Hessian; posterior covariance is
    /// `posterior_scale` times its inverse.
    pub factor: CholFactor,
    pub spec: BasisSpec,
}

impl FitResult {
    pub fn posterior_scale(&self) -> f64 {
        self.sigma2.unwrap_or(1.0)
    }
}

pub struct FitOptions {
    pub theta_init: Option<[f64; 2]>,
    pub max_evals: usize,
    pub simplex_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self { theta_init: None, max_evals: 500, simplex_tol: 1e-5 }
    }
}

fn domain_diameter(locations: &[[f64; 2]], dim: usize) -> f64 {
    let mut lo = [f64::MAX; 2];
    let mut hi = [f64::MIN; 2];
    for l in locations {
        for k in 0..dim {
            lo[k] = lo[k].min(l[k]);
            hi[k] = hi[k].max(l[k]);
        }
    }
    let mut d2 = 0.0;
    for k in 0..dim {
        d2 += (hi[k] - lo[k]) * (hi[k] - lo[k]);
    }
    d2.sqrt().max(1e-12)
}

/// Scale-aware starting point: correlation range about 20% of the domain
/// diameter, prior marginal variance matched to the response variance.
pub fn default_theta_init(dataset: &Dataset, domain_dim: usize) -> [f64; 2] {
    let diam = domain_diameter(&dataset.locations, domain_dim);
    let kappa0 = 2.0 / (0.2 * diam);
    let resp: Vec<f64> = match dataset.family {
        FamilyKind::Gaussian => dataset.y.clone(),
        FamilyKind::Poisson => dataset.y.iter().map(|&v| (v + 1.0).ln()).collect(),
    };
    let mean = resp.iter().sum::<f64>() / resp.len() as f64;
    let var = (resp.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
        / resp.len() as f64)
        .max(1e-12);
    // solve variance formula for tau at kappa0
    let tau0 = match domain_dim {
        1 => (1.0 / (4.0 * kappa0.powi(3) * var)).sqrt(),
        _ => (1.0 / (4.0 * std::f64::consts::PI * kappa0 * kappa0 * var)).sqrt(),
    };
    match dataset.family {
        FamilyKind::Gaussian => {
            // second coordinate is log rho = log(tau sigma); start sigma^2
            // at half the response variance
            let sigma0 = (0.5 * var).sqrt();
            [kappa0.ln(), (tau0 * sigma0).ln()]
        }
        FamilyKind::Poisson => [kappa0.ln(), tau0.ln()],
    }
}

/// Nelder-Mead over theta, deterministic, converging when the simplex
/// diameter drops below `simplex_tol`.
pub fn optimize_hyperparameters(
    dataset: &Dataset,
    fem: &FemMatrices,
    design: &DesignMatrix,
    spec: &BasisSpec,
    domain_dim: usize,
    options: &FitOptions,
) -> Result<FitResult, FitError> {
    let ctx = FitContext {
        design,
        y: &dataset.y,
        fem,
        family_kind: dataset.family,
        domain_dim,
    };
    let theta0 = options.theta_init.unwrap_or_else(|| default_theta_init(dataset, domain_dim));

    let mut trace = Vec::new();
    let mut evals = 0usize;
    let eval_fn = |theta: [f64; 2], trace: &mut Vec<TraceEntry>, evals: &mut usize| -> f64 {
        let c = reml_criterion(theta, &ctx);
        trace.push(TraceEntry { eval: *evals, theta, criterion: c });
        *evals += 1;
        c
    };

    let mut simplex: Vec<([f64; 2], f64)> = vec![
        (theta0, eval_fn(theta0, &mut trace, &mut evals)),
        (
            [theta0[0] + 0.5, theta0[1]],
            eval_fn([theta0[0] + 0.5, theta0[1]], &mut trace, &mut evals),
        ),
        (
            [theta0[0], theta0[1] + 0.5],
            eval_fn([theta0[0], theta0[1] + 0.5], &mut trace, &mut evals),
        ),
    ];

    let mut converged = false;
    while evals < options.max_evals {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
        let diam = simplex
            .iter()
            .flat_map(|a| simplex.iter().map(move |b| dist(a.0, b.0)))
            .fold(0.0f64, f64::max);
        if diam <= options.simplex_tol {
            converged = true;
            break;
        }
        let best = simplex[0];
        let second = simplex[1];
        let worst = simplex[2];
        let centroid = [
            0.5 * (best.0[0] + second.0[0]),
            0.5 * (best.0[1] + second.0[1]),
        ];
        let refl = [
            centroid[0] + (centroid[0] - worst.0[0]),
            centroid[1] + (centroid[1] - worst.0[1]),
        ];
        let f_refl = eval_fn(refl, &mut trace, &mut evals);
        if f_refl < best.1 {
            let exp = [
                centroid[0] + 2.0 * (centroid[0] - worst.0[0]),
                centroid[1] + 2.0 * (centroid[1] - worst.0[1]),
            ];
            let f_exp = eval_fn(exp, &mut trace, &mut evals);
            simplex[2] = if f_exp < f_refl { (exp, f_exp) } else { (refl, f_refl) };
        } else if f_refl < second.1 {
            simplex[2] = (refl, f_refl);
        } else {
            let contr = if f_refl < worst.1 {
                [
                    centroid[0] + 0.5 * (refl[0] - centroid[0]),
                    centroid[1] + 0.5 * (refl[1] - centroid[1]),
                ]
            } else {
                [
                    centroid[0] + 0.5 * (worst.0[0] - centroid[0]),
                    centroid[1] + 0.5 * (worst.0[1] - centroid[1]),
                ]
            };
            let f_contr = eval_fn(contr, &mut trace, &mut evals);
            if f_contr < worst.1.min(f_refl) {
                simplex[2] = (contr, f_contr);
            } else {
                // shrink toward the best vertex
                for k in 1..3 {
                    let p = [
                        best.0[0] + 0.5 * (simplex[k].0[0] - best.0[0]),
                        best.0[1] + 0.5 * (simplex[k].0[1] - best.0[1]),
                    ];
                    let f = eval_fn(p, &mut trace, &mut evals);
                    simplex[k] = (p, f);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
    let best = simplex[0];
    let eval = reml_eval(best.0, &ctx)?;
    Ok(FitResult {
        beta_hat: eval.beta,
        kappa: eval.kappa,
        tau: eval.tau,
        sigma2: eval.sigma2,
        theta: best.0,
        reml_value: eval.criterion,
        converged,
        trace,
        factor: eval.factor,
        spec: *spec,
    })
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Prediction {
    pub mean: f64,
    pub se: f64,
    pub response_mean: f64,
    pub outside: bool,
}

/// Linear-predictor mean and standard error at each location, with the
/// response-scale mean through the inverse link. Variances come from
/// sparse solves against the penalized Hessian.
pub fn predict(
    fit: &FitResult,
    mesh: &Mesh,
    family: FamilyKind,
    locations: &[[f64; 2]],
    covariates: Option<&[Vec<f64>]>,
) -> Result<Vec<Prediction>, FitError> {
    let m = fit.spec.m;
    let p = fit.factor.dim();
    let nc = p - m;
    if let Some(cov) = covariates {
        if cov.len() != nc {
            return Err(FitError::DimensionMismatch { expected: nc, got: cov.len() });
        }
    } else if nc > 0 {
        return Err(FitError::DimensionMismatch { expected: nc, got: 0 });
    }
    let scale = fit.posterior_scale();
    let mut out = Vec::with_capacity(locations.len());
    for (i, &loc) in locations.iter().enumerate() {
        let ev = eval_basis(&fit.spec, mesh, loc);
        let mut a_row = vec![0.0; p];
        let mut mean = 0.0;
        for &(j, v) in &ev.entries {
            a_row[j] = v;
            mean += v * fit.beta_hat[j];
        }
        if let Some(cov) = covariates {
            for (c, col) in cov.iter().enumerate() {
                a_row[m + c] = col[i];
                mean += col[i] * fit.beta_hat[m + c];
            }
        }
        let hinv_a = fit.factor.solve(&a_row)?;
        let var: f64 = scale * a_row.iter().zip(&hinv_a).map(|(a, h)| a * h).sum::<f64>();
        let response_mean = match family {
            FamilyKind::Gaussian => mean,
            FamilyKind::Poisson => mean.clamp(-LINK_CLAMP, LINK_CLAMP).exp(),
        };
        out.push(Prediction {
            mean,
            se: var.max(0.0).sqrt(),
            response_mean,
            outside: !ev.inside,
        });
    }
    Ok(out)
}

/// Draws from the Gaussian posterior N(beta-hat, H^{-1}) projected to the
/// requested locations; reproducible per seed. Returns an
/// n_samples x n_locations matrix of linear-predictor values.
pub fn posterior_samples(
    fit: &FitResult,
    mesh: &Mesh,
    locations: &[[f64; 2]],
    n_samples: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>, FitError> {
    let p = fit.factor.dim();
    let m = fit.spec.m;
    let mut rows = Vec::with_capacity(locations.len());
    for &loc in locations {
        let ev = eval_basis(&fit.spec, mesh, loc);
        rows.push(ev.entries);
    }
    let a = SparseMatrix::from_rows(&rows, m)?;
    let sd_scale = fit.posterior_scale().sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let z = standard_normal_vec(&mut rng, p);
        let dev = fit.factor.whiten_sample(&z)?;
        let beta: Vec<f64> =
            fit.beta_hat.iter().zip(&dev).map(|(b, d)| b + sd_scale * d).collect();
        out.push(a.mul_vec(&beta[..m])?);
    }
    Ok(out)
}

/// Convenience: simulate Gaussian or Poisson data from known parameters on
/// a mesh (used by tests and the simulation-study path).
pub fn simulate_gaussian_dataset(
    mesh: &Mesh,
    spec: &BasisSpec,
    fem: &FemMatrices,
    params: &MaternParams,
    locations: Vec<[f64; 2]>,
    noise_sd: f64,
    seed: u64,
) -> Result<(Dataset, Vec<f64>), FitError> {
    let q = crate::matern::matern_precision(fem, params)?;
    let (a, _) = crate::fembasis::projection_matrix(spec, mesh, &locations)?;
    let field = crate::matern::simulate_field(&q, &a, 1, seed)?;
    let f_true = field.values[0].clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e3779b97f4a7c15));
    let noise = standard_normal_vec(&mut rng, f_true.len());
    let y: Vec<f64> =
        f_true.iter().zip(&noise).map(|(f, e)| f + noise_sd * e).collect();
    let ds = Dataset::new(locations, y, Vec::new(), FamilyKind::Gaussian)?;
    Ok((ds, f_true))
}
