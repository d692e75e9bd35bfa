//! Basis evaluation and finite-element assembly: the mass matrix C (plus its
//! row-sum lumped diagonal), stiffness matrix G1, the Galerkin G2, the
//! projection matrix A, and the operator matrix P.

use thiserror::Error;

use crate::mesh::{ElementLocation, Mesh, Mesh1D, Mesh2D};
use crate::sparsela::{SparseError, SparseMatrix, SparseSymMatrix};

#[derive(Debug, Error)]
pub enum FemError {
    #[error("unsupported degree {degree} for {kind:?}")]
    UnsupportedDegree { kind: BasisKind, degree: usize },
    #[error("basis/mesh mismatch: {0}")]
    BasisMeshMismatch(String),
    #[error("degenerate element {element} (measure {measure})")]
    DegenerateElement { element: usize, measure: f64 },
    #[error("disconnected node {0}: zero lumped mass")]
    ZeroLumpedMass(usize),
    #[error("hyperparameters must be positive: kappa = {kappa}, tau = {tau}")]
    NonPositiveHyperparameters { kappa: f64, tau: f64 },
    #[error(transparent)]
    Sparse(#[from] SparseError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisKind {
    Bspline1D,
    PiecewiseLinear2D,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BasisSpec {
    pub kind: BasisKind,
    pub degree: usize,
    /// Number of basis functions.
    pub m: usize,
}

impl BasisSpec {
    pub fn for_mesh(mesh: &Mesh, degree: usize) -> Result<Self, FemError> {
        match mesh {
            Mesh::OneD(m) => {
                if !(1..=2).contains(&degree) {
                    return Err(FemError::UnsupportedDegree {
                        kind: BasisKind::Bspline1D,
                        degree,
                    });
                }
                Ok(Self {
                    kind: BasisKind::Bspline1D,
                    degree,
                    m: m.n_intervals() + degree,
                })
            }
            Mesh::TwoD(m) => {
                if degree != 1 {
                    return Err(FemError::UnsupportedDegree {
                        kind: BasisKind::PiecewiseLinear2D,
                        degree,
                    });
                }
                Ok(Self { kind: BasisKind::PiecewiseLinear2D, degree: 1, m: m.nodes().len() })
            }
        }
    }
}

/// B-spline basis on the extended knot vector of a 1D mesh. The mesh knots
/// are padded with `degree` uniform knots beyond each end, which gives the
/// free-boundary basis: M = n_intervals + degree functions, all partially
/// or fully supported on the mesh domain.
struct Bspline1D {
    knots: Vec<f64>,
    degree: usize,
}

impl Bspline1D {
    fn from_mesh(mesh: &Mesh1D, degree: usize) -> Self {
        let mk = mesh.knots();
        let h_lo = mk[1] - mk[0];
        let h_hi = mk[mk.len() - 1] - mk[mk.len() - 2];
        let mut knots = Vec::with_capacity(mk.len() + 2 * degree);
        for k in (1..=degree).rev() {
            knots.push(mk[0] - h_lo * k as f64);
        }
        knots.extend_from_slice(mk);
        for k in 1..=degree {
            knots.push(mk[mk.len() - 1] + h_hi * k as f64);
        }
        Self { knots, degree }
    }

    fn n_basis(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    /// Knot span index s with knots[s] <= x < knots[s+1], clamped to valid
    /// basis spans.
    fn find_span(&self, x: f64) -> usize {
        let p = self.degree;
        let hi_span = self.n_basis() - 1;
        if x >= self.knots[hi_span + 1] {
            return hi_span;
        }
        let mut lo = p;
        let mut hi = hi_span;
        while lo < hi {
            let mid = (lo + hi + 1) / 2;
            if self.knots[mid] <= x {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        lo
    }

    /// Values and derivatives up to order `nders` of the degree+1 basis
    /// functions alive at x. Returns (first basis index, ders[k][j]).
    fn eval_ders(&self, x: f64, nders: usize) -> (usize, Vec<Vec<f64>>) {
        let p = self.degree;
        let s = self.find_span(x);
        let u = &self.knots;

        // Piegl & Tiller DersBasisFuns
        let mut ndu = vec![vec![0.0f64; p + 1]; p + 1];
        let mut left = vec![0.0f64; p + 1];
        let mut right = vec![0.0f64; p + 1];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = x - u[s + 1 - j];
            right[j] = u[s + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = ndu[r][j - 1] / ndu[j][r];
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }

        let n = nders.min(p);
        let mut ders = vec![vec![0.0f64; p + 1]; nders + 1];
        for j in 0..=p {
            ders[0][j] = ndu[j][p];
        }
        let mut a = vec![vec![0.0f64; p + 1]; 2];
        for r in 0..=p {
            let mut s1 = 0usize;
            let mut s2 = 1usize;
            a[0][0] = 1.0;
            for k in 1..=n {
                let mut d = 0.0;
                let rk = r as isize - k as isize;
                let pk = p - k;
                if r >= k {
                    a[s2][0] = a[s1][0] / ndu[pk + 1][rk as usize];
                    d = a[s2][0] * ndu[rk as usize][pk];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if r as isize - 1 <= pk as isize { k - 1 } else { p - r };
                for j in j1..=j2 {
                    a[s2][j] =
                        (a[s1][j] - a[s1][j - 1]) / ndu[pk + 1][(rk + j as isize) as usize];
                    d += a[s2][j] * ndu[(rk + j as isize) as usize][pk];
                }
                if r <= pk {
                    a[s2][k] = -a[s1][k - 1] / ndu[pk + 1][r];
                    d += a[s2][k] * ndu[r][pk];
                }
                ders[k][r] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut f = p as f64;
        for k in 1..=n {
            for j in 0..=p {
                ders[k][j] *= f;
            }
            f *= (p - k) as f64;
        }
        (s - p, ders)
    }
}

/// Sparse evaluation of all basis functions at one location.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisEval {
    /// (basis index, value) pairs; empty when outside the mesh.
    pub entries: Vec<(usize, f64)>,
    pub inside: bool,
}

pub fn eval_basis(spec: &BasisSpec, mesh: &Mesh, point: [f64; 2]) -> BasisEval {
    match (spec.kind, mesh) {
        (BasisKind::Bspline1D, Mesh::OneD(m)) => {
            if mesh.locate(point).is_none() {
                return BasisEval { entries: Vec::new(), inside: false };
            }
            let bsp = Bspline1D::from_mesh(m, spec.degree);
            let (first, ders) = bsp.eval_ders(point[0], 0);
            let entries = ders[0].iter().enumerate().map(|(j, &v)| (first + j, v)).collect();
            BasisEval { entries, inside: true }
        }
        (BasisKind::PiecewiseLinear2D, Mesh::TwoD(m)) => match mesh.locate(point) {
            Some(ElementLocation::Triangle { element, bary }) => {
                let tri = m.triangles()[element];
                let entries = (0..3).map(|k| (tri[k], bary[k])).collect();
                BasisEval { entries, inside: true }
            }
            _ => BasisEval { entries: Vec::new(), inside: false },
        },
        _ => BasisEval { entries: Vec::new(), inside: false },
    }
}

/// Assembled finite-element matrices.
#[derive(Debug, Clone)]
pub struct FemMatrices {
    pub c: SparseSymMatrix,
    /// Row-sum lumped mass diagonal.
    pub c_lumped: Vec<f64>,
    pub g1: SparseSymMatrix,
    /// Galerkin second-order matrix G1 C_lumped^{-1} G1.
    pub g2: SparseSymMatrix,
}

impl FemMatrices {
    pub fn dim(&self) -> usize {
        self.c.dim()
    }

    pub fn c_lumped_matrix(&self) -> SparseSymMatrix {
        SparseSymMatrix::from_diagonal(&self.c_lumped)
    }
}

const GAUSS3: [(f64, f64); 3] = [
    (-0.774596669241483377035853079956, 5.0 / 9.0),
    (0.0, 8.0 / 9.0),
    (0.774596669241483377035853079956, 5.0 / 9.0),
];

pub fn fem_matrices(spec: &BasisSpec, mesh: &Mesh) -> Result<FemMatrices, FemError> {
    let (c, g1) = match (spec.kind, mesh) {
        (BasisKind::Bspline1D, Mesh::OneD(m)) => assemble_1d(m, spec.degree)?,
        (BasisKind::PiecewiseLinear2D, Mesh::TwoD(m)) => assemble_2d(m)?,
        _ => {
            return Err(FemError::BasisMeshMismatch(format!(
                "basis {:?} cannot be assembled on a {}D mesh",
                spec.kind,
                mesh.dimension()
            )))
        }
    };
    let dim = c.dim();
    let mut c_lumped = vec![0.0; dim];
    for (i, j, v) in c.iter_upper() {
        c_lumped[i] += v;
        if i != j {
            c_lumped[j] += v;
        }
    }
    for (i, &v) in c_lumped.iter().enumerate() {
        if v <= 0.0 {
            return Err(FemError::ZeroLumpedMass(i));
        }
    }
    let g2 = galerkin_g2(&g1, &c_lumped)?;
    Ok(FemMatrices { c, c_lumped, g1, g2 })
}

fn galerkin_g2(g1: &SparseSymMatrix, c_lumped: &[f64]) -> Result<SparseSymMatrix, FemError> {
    let g = SparseMatrix::from_sym(g1);
    let inv: Vec<f64> = c_lumped.iter().map(|&v| 1.0 / v).collect();
    let prod = g.scale_rows(&inv)?; // C~^{-1} G1 (rows scaled)
    let g2 = g.matmul(&prod)?; // G1 C~^{-1} G1, symmetric in exact arithmetic
    Ok(g2.into_sym(1e-10)?)
}

fn assemble_1d(
    mesh: &Mesh1D,
    degree: usize,
) -> Result<(SparseSymMatrix, SparseSymMatrix), FemError> {
    let bsp = Bspline1D::from_mesh(mesh, degree);
    let m = bsp.n_basis();
    let knots = mesh.knots();
    let mut c_trip = Vec::new();
    let mut g1_trip = Vec::new();
    for e in 0..mesh.n_intervals() {
        let (a, b) = (knots[e], knots[e + 1]);
        let len = b - a;
        if !(len > 0.0) {
            return Err(FemError::DegenerateElement { element: e, measure: len });
        }
        for &(q, w) in &GAUSS3 {
            let x = 0.5 * (a + b) + 0.5 * len * q;
            let wx = 0.5 * len * w;
            let (first, ders) = bsp.eval_ders(x, 1);
            for li in 0..=degree {
                for lj in li..=degree {
                    let (gi, gj) = (first + li, first + lj);
                    c_trip.push((gi, gj, wx * ders[0][li] * ders[0][lj]));
                    g1_trip.push((gi, gj, wx * ders[1][li] * ders[1][lj]));
                }
            }
        }
    }
    Ok((
        SparseSymMatrix::from_triplets(&c_trip, m)?,
        SparseSymMatrix::from_triplets(&g1_trip, m)?,
    ))
}

fn assemble_2d(mesh: &Mesh2D) -> Result<(SparseSymMatrix, SparseSymMatrix), FemError> {
    let m = mesh.nodes().len();
    let mut c_trip = Vec::new();
    let mut g1_trip = Vec::new();
    for (e, tri) in mesh.triangles().iter().enumerate() {
        let p0 = mesh.nodes()[tri[0]];
        let p1 = mesh.nodes()[tri[1]];
        let p2 = mesh.nodes()[tri[2]];
        let area =
            0.5 * ((p1.0 - p0.0) * (p2.1 - p0.1) - (p2.0 - p0.0) * (p1.1 - p0.1));
        if !(area > 1e-300) {
            return Err(FemError::DegenerateElement { element: e, measure: area });
        }
        // gradients of the barycentric hat functions are constant
        let grads = [
            ((p1.1 - p2.1) / (2.0 * area), (p2.0 - p1.0) / (2.0 * area)),
            ((p2.1 - p0.1) / (2.0 * area), (p0.0 - p2.0) / (2.0 * area)),
            ((p0.1 - p1.1) / (2.0 * area), (p1.0 - p0.0) / (2.0 * area)),
        ];
        for li in 0..3 {
            for lj in li..3 {
                let (gi, gj) = (tri[li], tri[lj]);
                let mass = if li == lj { area / 6.0 } else { area / 12.0 };
                c_trip.push((gi, gj, mass));
                let stiff = area * (grads[li].0 * grads[lj].0 + grads[li].1 * grads[lj].1);
                g1_trip.push((gi, gj, stiff));
            }
        }
    }
    Ok((
        SparseSymMatrix::from_triplets(&c_trip, m)?,
        SparseSymMatrix::from_triplets(&g1_trip, m)?,
    ))
}

/// Direct assembly of <Lap psi_i, Lap psi_j> for degree-2 1D B-splines, whose
/// second derivatives are piecewise constant. Used by `check` to report the
/// discrepancy against the Galerkin G2.
pub fn direct_g2_1d(spec: &BasisSpec, mesh: &Mesh1D) -> Result<SparseSymMatrix, FemError> {
    if spec.kind != BasisKind::Bspline1D || spec.degree != 2 {
        return Err(FemError::BasisMeshMismatch(
            "direct G2 assembly requires degree-2 1D B-splines".into(),
        ));
    }
    let bsp = Bspline1D::from_mesh(mesh, 2);
    let m = bsp.n_basis();
    let knots = mesh.knots();
    let mut trip = Vec::new();
    for e in 0..mesh.n_intervals() {
        let (a, b) = (knots[e], knots[e + 1]);
        let len = b - a;
        let x = 0.5 * (a + b);
        let (first, ders) = bsp.eval_ders(x, 2);
        for li in 0..=2 {
            for lj in li..=2 {
                trip.push((first + li, first + lj, len * ders[2][li] * ders[2][lj]));
            }
        }
    }
    Ok(SparseSymMatrix::from_triplets(&trip, m)?)
}

/// Projection matrix A: row i evaluates the basis at locations[i]. Rows for
/// locations outside the mesh are zero; their indices are returned alongside.
pub fn projection_matrix(
    spec: &BasisSpec,
    mesh: &Mesh,
    locations: &[[f64; 2]],
) -> Result<(SparseMatrix, Vec<usize>), FemError> {
    let mut rows = Vec::with_capacity(locations.len());
    let mut outside = Vec::new();
    for (i, &loc) in locations.iter().enumerate() {
        let ev = eval_basis(spec, mesh, loc);
        if !ev.inside {
            outside.push(i);
        }
        rows.push(ev.entries);
    }
    Ok((SparseMatrix::from_rows(&rows, spec.m)?, outside))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MassChoice {
    #[default]
    Lumped,
    Consistent,
}

/// Operator matrix P = tau (kappa^2 C + G1); lumped mass by default.
pub fn operator_matrix(
    fem: &FemMatrices,
    kappa: f64,
    tau: f64,
    mass: MassChoice,
) -> Result<SparseMatrix, FemError> {
    if !(kappa > 0.0) || !(tau > 0.0) {
        return Err(FemError::NonPositiveHyperparameters { kappa, tau });
    }
    let c = match mass {
        MassChoice::Lumped => fem.c_lumped_matrix(),
        MassChoice::Consistent => fem.c.clone(),
    };
    let p = SparseSymMatrix::linear_combination(&[(tau * kappa * kappa, &c), (tau, &fem.g1)])?;
    Ok(SparseMatrix::from_sym(&p))
}

/// Q_e = C_lumped^{-1}: the diagonal noise precision of the FEM load vector.
pub fn noise_precision(fem: &FemMatrices) -> Result<Vec<f64>, FemError> {
    fem.c_lumped
        .iter()
        .enumerate()
        .map(|(i, &v)| if v > 0.0 { Ok(1.0 / v) } else { Err(FemError::ZeroLumpedMass(i)) })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_mesh_1d, delaunay_triangulate};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mesh_1d() -> Mesh {
        Mesh::OneD(build_mesh_1d(0.0, 10.0, 10, 0.0).unwrap())
    }

    #[test]
    fn degree1_eval_at_knot_is_indicator() {
        let mesh = mesh_1d();
        let spec = BasisSpec::for_mesh(&mesh, 1).unwrap();
        assert_eq!(spec.m, 11);
        for k in 0..=10 {
            let ev = eval_basis(&spec, &mesh, [k as f64, 0.0]);
            assert!(ev.inside);
            let nonzero: Vec<_> = ev.entries.iter().filter(|(_, v)| v.abs() > 1e-14).collect();
            assert_eq!(nonzero.len(), 1);
            assert_eq!(nonzero[0].0, k);
            assert!((nonzero[0].1 - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn degree2_midpoint_weights() {
        let mesh = mesh_1d();
        let spec = BasisSpec::for_mesh(&mesh, 2).unwrap();
        assert_eq!(spec.m, 12);
        let ev = eval_basis(&spec, &mesh, [4.5, 0.0]);
        let vals: Vec<f64> = ev.entries.iter().map(|&(_, v)| v).collect();
        assert_eq!(vals.len(), 3);
        assert!((vals[0] - 0.125).abs() < 1e-14);
        assert!((vals[1] - 0.75).abs() < 1e-14);
        assert!((vals[2] - 0.125).abs() < 1e-14);
    }

    #[test]
    fn centroid_eval_2d() {
        let mesh = Mesh::TwoD(
            delaunay_triangulate(&[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]).unwrap(),
        );
        let spec = BasisSpec::for_mesh(&mesh, 1).unwrap();
        let tri = match &mesh {
            Mesh::TwoD(m) => m.triangles()[0],
            _ => unreachable!(),
        };
        let nodes = match &mesh {
            Mesh::TwoD(m) => m.nodes().to_vec(),
            _ => unreachable!(),
        };
        let cx = (nodes[tri[0]].0 + nodes[tri[1]].0 + nodes[tri[2]].0) / 3.0;
        let cy = (nodes[tri[0]].1 + nodes[tri[1]].1 + nodes[tri[2]].1) / 3.0;
        let ev = eval_basis(&spec, &mesh, [cx, cy]);
        assert_eq!(ev.entries.len(), 3);
        for &(_, v) in &ev.entries {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn partition_of_unity() {
        let meshes = [
            (mesh_1d(), 1usize),
            (mesh_1d(), 2usize),
            (
                Mesh::TwoD(
                    delaunay_triangulate(
                        &(0..25)
                            .map(|k| ((k % 5) as f64, (k / 5) as f64))
                            .collect::<Vec<_>>(),
                    )
                    .unwrap(),
                ),
                1usize,
            ),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (mesh, degree) in meshes {
            let spec = BasisSpec::for_mesh(&mesh, degree).unwrap();
            for _ in 0..100 {
                let p = match &mesh {
                    Mesh::OneD(_) => [rng.random::<f64>() * 10.0, 0.0],
                    Mesh::TwoD(_) => [rng.random::<f64>() * 4.0, rng.random::<f64>() * 4.0],
                };
                let ev = eval_basis(&spec, &mesh, p);
                assert!(ev.inside);
                let s: f64 = ev.entries.iter().map(|&(_, v)| v).sum();
                assert!((s - 1.0).abs() <= 1e-12, "sum {s} at {p:?}");
            }
        }
    }

    #[test]
    fn hat_function_mass_and_stiffness_pattern() {
        let mesh = mesh_1d();
        let spec = BasisSpec::for_mesh(&mesh, 1).unwrap();
        let fem = fem_matrices(&spec, &mesh).unwrap();
        let h = 1.0;
        // interior rows
        for i in 2..9 {
            assert!((fem.c.get(i, i) - 2.0 * h / 3.0).abs() < 1e-14);
            assert!((fem.c.get(i, i + 1) - h / 6.0).abs() < 1e-14);
            assert!((fem.c_lumped[i] - h).abs() < 1e-14);
            assert!((fem.g1.get(i, i) - 2.0 / h).abs() < 1e-12);
            assert!((fem.g1.get(i, i + 1) + 1.0 / h).abs() < 1e-12);
        }
    }

    #[test]
    fn mass_total_equals_domain_measure() {
        let mesh = Mesh::OneD(build_mesh_1d(0.0, 2.0, 4, 0.0).unwrap());
        for degree in [1, 2] {
            let spec = BasisSpec::for_mesh(&mesh, degree).unwrap();
            let fem = fem_matrices(&spec, &mesh).unwrap();
            let total: f64 = fem
                .c
                .iter_upper()
                .map(|(i, j, v)| if i == j { v } else { 2.0 * v })
                .sum();
            assert!((total - 2.0).abs() <= 1e-9 * 2.0, "degree {degree}: total {total}");
            let lumped_total: f64 = fem.c_lumped.iter().sum();
            assert!((lumped_total - 2.0).abs() <= 1e-9 * 2.0);
        }
    }

    #[test]
    fn right_triangle_stiffness() {
        let mesh2 = Mesh2D::new(
            vec![(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let mesh = Mesh::TwoD(mesh2);
        let spec = BasisSpec::for_mesh(&mesh, 1).unwrap();
        let fem = fem_matrices(&spec, &mesh).unwrap();
        let want = [
            [1.0, -0.5, -0.5],
            [-0.5, 0.5, 0.0],
            [-0.5, 0.0, 0.5],
        ];
        for i in 0..3 {
            for j in 0..3 {
                assert!(
                    (fem.g1.get(i, j) - want[i][j]).abs() < 1e-14,
                    "g1({i},{j}) = {}",
                    fem.g1.get(i, j)
                );
            }
        }
    }

    #[test]
    fn g1_annihilates_constants() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<(f64, f64)> =
            (0..40).map(|_| (rng.random::<f64>() * 5.0, rng.random::<f64>() * 5.0)).collect();
        let mesh = Mesh::TwoD(delaunay_triangulate(&pts).unwrap());
        let spec = BasisSpec::for_mesh(&mesh, 1).unwrap();
        let fem = fem_matrices(&spec, &mesh).unwrap();
        let ones = vec![1.0; spec.m];
        let g1_ones = fem.g1.mul_vec(&ones).unwrap();
        let gmax = fem.g1.max_abs();
        for v in g1_ones {
            assert!(v.abs() <= 1e-10 * gmax);
        }
    }

    #[test]
    fn projection_matrix_properties() {
        let mesh = mesh_1d();
        let spec = BasisSpec::for_mesh(&mesh, 1).unwrap();
        // locations at the knots give an identity pattern
        let locs: Vec<[f64; 2]> = (0..=10).map(|k| [k as f64, 0.0]).collect();
        let (a, outside) = projection_matrix(&spec, &mesh, &locs).unwrap();
        assert!(outside.is_empty());
        for i in 0..=10 {
            assert!((a.get(i, i) - 1.0).abs() < 1e-14);
        }
        // interior row sums to 1; outside rows are zero and reported
        let (a, outside) =
            projection_matrix(&spec, &mesh, &[[2.7, 0.0], [42.0, 0.0]]).unwrap();
        assert_eq!(outside, vec![1]);
        let s: f64 = a.row(0).map(|(_, v)| v).sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert_eq!(a.row(1).count(), 0);
    }

    #[test]
    fn projection_reproduces_linear_functions_2d() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let pts: Vec<(f64, f64)> =
            (0..30).map(|_| (rng.random::<f64>() * 3.0, rng.random::<f64>() * 3.0)).collect();
        let mesh2 = delaunay_triangulate(&pts).unwrap();
        let mesh = Mesh::TwoD(mesh2.clone());
        let spec = BasisSpec::for_mesh(&mesh, 1).unwrap();
        let g = |x: f64, y: f64| 0.7 * x - 1.3 * y + 0.25;
        let nodal: Vec<f64> = mesh2.nodes().iter().map(|&(x, y)| g(x, y)).collect();
        let locs: Vec<[f64; 2]> =
            (0..50).map(|_| [rng.random::<f64>() * 2.0 + 0.5, rng.random::<f64>() * 2.0 + 0.5]).collect();
        let (a, outside) = projection_matrix(&spec, &mesh, &locs).unwrap();
        let vals = a.mul_vec(&nodal).unwrap();
        for (i, loc) in locs.iter().enumerate() {
            if outside.contains(&i) {
                continue;
            }
            assert!((vals[i] - g(loc[0], loc[1])).abs() < 1e-10);
        }
    }

    #[test]
    fn operator_matrix_forms() {
        let mesh = mesh_1d();
        let spec = BasisSpec::for_mesh(&mesh, 1).unwrap();
        let fem = fem_matrices(&spec, &mesh).unwrap();
        let p = operator_matrix(&fem, 1.0, 1.0, MassChoice::Lumped).unwrap();
        for i in 0..spec.m {
            for j in 0..spec.m {
                let want = if i == j { fem.c_lumped[i] } else { 0.0 } + fem.g1.get(i, j);
                assert!((p.get(i, j) - want).abs() < 1e-14);
            }
        }
        // linear in tau
        let p2 = operator_matrix(&fem, 1.0, 2.0, MassChoice::Lumped).unwrap();
        for i in 0..spec.m {
            for j in 0..spec.m {
                assert!((p2.get(i, j) - 2.0 * p.get(i, j)).abs() < 1e-12);
            }
        }
        // kappa -> 0 limit approaches tau G1
        let p3 = operator_matrix(&fem, 1e-9, 3.0, MassChoice::Lumped).unwrap();
        for i in 0..spec.m {
            for j in 0..spec.m {
                assert!((p3.get(i, j) - 3.0 * fem.g1.get(i, j)).abs() < 1e-12);
            }
        }
        assert!(operator_matrix(&fem, 0.0, 1.0, MassChoice::Lumped).is_err());
    }

    #[test]
    fn noise_precision_is_inverse_lumped_mass() {
        let mesh = mesh_1d();
        let spec = BasisSpec::for_mesh(&mesh, 1).unwrap();
        let fem = fem_matrices(&spec, &mesh).unwrap();
        let qe = noise_precision(&fem).unwrap();
        for i in 0..spec.m {
            assert!((qe[i] * fem.c_lumped[i] - 1.0).abs() < 1e-15);
        }
        // interior diagonal is 1/h
        for i in 2..9 {
            assert!((qe[i] - 1.0).abs() < 1e-12);
        }
        // doubling mesh density doubles the diagonal
        let fine = Mesh::OneD(build_mesh_1d(0.0, 10.0, 20, 0.0).unwrap());
        let spec2 = BasisSpec::for_mesh(&fine, 1).unwrap();
        let fem2 = fem_matrices(&spec2, &fine).unwrap();
        let qe2 = noise_precision(&fem2).unwrap();
        assert!((qe2[10] - 2.0 * qe[5]).abs() < 1e-12);
    }

    #[test]
    fn direct_g2_interior_stencil() {
        // uniform degree-2 splines have piecewise-constant second
        // derivatives {1, -2, 1}/h^2, giving the biharmonic stencil
        // [1, -4, 6, -4, 1]/h^3 on interior rows
        let mesh1 = build_mesh_1d(0.0, 1.0, 20, 0.0).unwrap();
        let mesh = Mesh::OneD(mesh1.clone());
        let spec = BasisSpec::for_mesh(&mesh, 2).unwrap();
        let direct = direct_g2_1d(&spec, &mesh1).unwrap();
        let h: f64 = 1.0 / 20.0;
        let i = spec.m / 2;
        let want = [1.0, -4.0, 6.0, -4.0, 1.0];
        for (k, w) in (-2i64..=2).zip(want) {
            let j = (i as i64 + k) as usize;
            let got = direct.get(i, j);
            assert!(
                (got - w / h.powi(3)).abs() <= 1e-6 * h.powi(-3),
                "offset {k}: {got}"
            );
        }
    }

    #[test]
    fn g2_quadratic_forms_agree_on_smooth_fields() {
        // entrywise the Galerkin and direct G2 differ by construction, but
        // both quadratic forms converge to the bending energy of a smooth
        // field sampled at the Greville points
        let mut gaps = Vec::new();
        for n in [50usize, 200] {
            let mesh1 = build_mesh_1d(0.0, 1.0, n, 0.0).unwrap();
            let mesh = Mesh::OneD(mesh1.clone());
            let spec = BasisSpec::for_mesh(&mesh, 2).unwrap();
            let fem = fem_matrices(&spec, &mesh).unwrap();
            let direct = direct_g2_1d(&spec, &mesh1).unwrap();
            let h = 1.0 / n as f64;
            // Greville abscissae of the extended knot vector; a bump that
            // vanishes at the boundary keeps edge rows out of the picture
            let coef: Vec<f64> = (0..spec.m)
                .map(|i| {
                    let xi = -2.0 * h + h * (i as f64 + 1.0);
                    (-(xi - 0.5) * (xi - 0.5) / 0.02).exp()
                })
                .collect();
            let qd: f64 = coef
                .iter()
                .zip(direct.mul_vec(&coef).unwrap())
                .map(|(c, v)| c * v)
                .sum();
            let qg: f64 = coef
                .iter()
                .zip(fem.g2.mul_vec(&coef).unwrap())
                .map(|(c, v)| c * v)
                .sum();
            gaps.push((qd - qg).abs() / qd.abs());
        }
        assert!(gaps[1] < 0.05, "fine-mesh form gap {}", gaps[1]);
        assert!(gaps[1] < gaps[0], "gap did not shrink: {gaps:?}");
    }

    proptest::proptest! {
        #[test]
        fn partition_of_unity_everywhere_inside(x in 0.0f64..10.0, degree in 1usize..=2) {
            let mesh = Mesh::OneD(build_mesh_1d(0.0, 10.0, 23, 0.1).unwrap());
            let spec = BasisSpec::for_mesh(&mesh, degree).unwrap();
            let ev = eval_basis(&spec, &mesh, [x, 0.0]);
            proptest::prop_assert!(ev.inside);
            let sum: f64 = ev.entries.iter().map(|(_, v)| v).sum();
            proptest::prop_assert!((sum - 1.0).abs() < 1e-12);
        }
    }
}
