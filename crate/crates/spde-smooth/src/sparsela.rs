//! Sparse symmetric linear algebra: triplet assembly, simplicial Cholesky
//! with a fill-reducing ordering, solves, log-determinants, and GMRF
//! whitening.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SparseError {
    #[error("index ({row}, {col}) out of range for dimension {dim}")]
    IndexOutOfRange { row: usize, col: usize, dim: usize },
    #[error("non-finite value at ({row}, {col})")]
    NonFiniteValue { row: usize, col: usize },
    #[error("matrix is not positive definite (pivot {pivot} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("matrix is not symmetric: |a({i},{j}) - a({j},{i})| = {diff}")]
    NotSymmetric { i: usize, j: usize, diff: f64 },
    #[error("matrix market parse error at line {line}: {msg}")]
    MatrixMarket { line: usize, msg: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Symmetric sparse matrix. Only the upper triangle (col >= row) is stored,
/// in compressed row form with deterministic layout.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSymMatrix {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseSymMatrix {
    /// Build from triplets. Entries may address either triangle; duplicates
    /// are summed and exact zeros dropped after summation.
    pub fn from_triplets(
        triplets: &[(usize, usize, f64)],
        dim: usize,
    ) -> Result<Self, SparseError> {
        let mut map: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for &(i, j, v) in triplets {
            if i >= dim || j >= dim {
                return Err(SparseError::IndexOutOfRange { row: i, col: j, dim });
            }
            if !v.is_finite() {
                return Err(SparseError::NonFiniteValue { row: i, col: j });
            }
            let key = if i <= j { (i, j) } else { (j, i) };
            *map.entry(key).or_insert(0.0) += v;
        }
        map.retain(|_, v| *v != 0.0);

        let mut row_ptr = vec![0usize; dim + 1];
        for &(i, _) in map.keys() {
            row_ptr[i + 1] += 1;
        }
        for r in 0..dim {
            row_ptr[r + 1] += row_ptr[r];
        }
        let mut cols = Vec::with_capacity(map.len());
        let mut vals = Vec::with_capacity(map.len());
        for ((_, j), v) in map {
            cols.push(j);
            vals.push(v);
        }
        Ok(Self { dim, row_ptr, cols, vals })
    }

    pub fn zeros(dim: usize) -> Self {
        Self { dim, row_ptr: vec![0; dim + 1], cols: Vec::new(), vals: Vec::new() }
    }

    pub fn identity(dim: usize) -> Self {
        let triplets: Vec<_> = (0..dim).map(|i| (i, i, 1.0)).collect();
        Self::from_triplets(&triplets, dim).unwrap()
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let triplets: Vec<_> = diag.iter().enumerate().map(|(i, &v)| (i, i, v)).collect();
        Self::from_triplets(&triplets, diag.len()).unwrap()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Stored entries in the upper triangle.
    pub fn nnz_upper(&self) -> usize {
        self.cols.len()
    }

    /// Number of structurally nonzero entries of the full symmetric matrix.
    pub fn nnz_full(&self) -> usize {
        let diag = self
            .iter_upper()
            .filter(|&(i, j, _)| i == j)
            .count();
        2 * self.cols.len() - diag
    }

    /// Symmetric lookup: (i, j) and (j, i) return the same value.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (r, c) = if i <= j { (i, j) } else { (j, i) };
        if r >= self.dim {
            return 0.0;
        }
        let lo = self.row_ptr[r];
        let hi = self.row_ptr[r + 1];
        match self.cols[lo..hi].binary_search(&c) {
            Ok(k) => self.vals[lo + k],
            Err(_) => 0.0,
        }
    }

    /// Iterate stored upper-triangle entries (i, j, v) with i <= j.
    pub fn iter_upper(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.dim).flat_map(move |i| {
            (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (i, self.cols[k], self.vals[k]))
        })
    }

    /// y = A x using symmetric storage.
    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>, SparseError> {
        if x.len() != self.dim {
            return Err(SparseError::DimensionMismatch { expected: self.dim, got: x.len() });
        }
        let mut y = vec![0.0; self.dim];
        for (i, j, v) in self.iter_upper() {
            y[i] += v * x[j];
            if i != j {
                y[j] += v * x[i];
            }
        }
        Ok(y)
    }

    /// Weighted sum sum_k c_k A_k of same-dimension symmetric matrices.
    pub fn linear_combination(terms: &[(f64, &SparseSymMatrix)]) -> Result<Self, SparseError> {
        let dim = terms.first().map(|(_, m)| m.dim).unwrap_or(0);
        let mut triplets = Vec::new();
        for &(c, m) in terms {
            if m.dim != dim {
                return Err(SparseError::DimensionMismatch { expected: dim, got: m.dim });
            }
            for (i, j, v) in m.iter_upper() {
                triplets.push((i, j, c * v));
            }
        }
        Self::from_triplets(&triplets, dim)
    }

    pub fn max_abs(&self) -> f64 {
        self.vals.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.dim]; self.dim];
        for (i, j, v) in self.iter_upper() {
            d[i][j] = v;
            d[j][i] = v;
        }
        d
    }

    /// Matrix Market coordinate text, symmetric kind, 1-based, lower triangle
    /// listed (the format stores one triangle; we emit col <= row).
    pub fn to_matrix_market(&self) -> String {
        let mut s = String::new();
        s.push_str("%%MatrixMarket matrix coordinate real symmetric\n");
        let _ = writeln!(s, "{} {} {}", self.dim, self.dim, self.nnz_upper());
        for (i, j, v) in self.iter_upper() {
            // symmetric MM convention: row >= col
            let _ = writeln!(s, "{} {} {}", j + 1, i + 1, v);
        }
        s
    }

    pub fn from_matrix_market(text: &str) -> Result<Self, SparseError> {
        let mut lines = text.lines().enumerate();
        let (lno, header) = lines
            .next()
            .ok_or(SparseError::MatrixMarket { line: 1, msg: "empty input".into() })?;
        let h = header.to_ascii_lowercase();
        if !h.starts_with("%%matrixmarket matrix coordinate real symmetric") {
            return Err(SparseError::MatrixMarket {
                line: lno + 1,
                msg: "expected '%%MatrixMarket matrix coordinate real symmetric'".into(),
            });
        }
        let mut size: Option<(usize, usize)> = None;
        let mut triplets = Vec::new();
        for (lno, line) in lines {
            let line = line.trim();
            if line.is_empty() || line.starts_with('%') {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            let parse = |t: &str| -> Result<f64, SparseError> {
                t.parse().map_err(|_| SparseError::MatrixMarket {
                    line: lno + 1,
                    msg: format!("bad number '{t}'"),
                })
            };
            match size {
                None => {
                    if toks.len() != 3 {
                        return Err(SparseError::MatrixMarket {
                            line: lno + 1,
                            msg: "expected 'rows cols nnz'".into(),
                        });
                    }
                    let r = parse(toks[0])? as usize;
                    let c = parse(toks[1])? as usize;
                    if r != c {
                        return Err(SparseError::MatrixMarket {
                            line: lno + 1,
                            msg: "symmetric matrix must be square".into(),
                        });
                    }
                    size = Some((r, parse(toks[2])? as usize));
                }
                Some((dim, _)) => {
                    if toks.len() != 3 {
                        return Err(SparseError::MatrixMarket {
                            line: lno + 1,
                            msg: "expected 'i j value'".into(),
                        });
                    }
                    let i = parse(toks[0])? as usize;
                    let j = parse(toks[1])? as usize;
                    if i == 0 || j == 0 || i > dim || j > dim {
                        return Err(SparseError::MatrixMarket {
                            line: lno + 1,
                            msg: "index out of range (1-based)".into(),
                        });
                    }
                    triplets.push((i - 1, j - 1, parse(toks[2])?));
                }
            }
        }
        let (dim, _) =
            size.ok_or(SparseError::MatrixMarket { line: 2, msg: "missing size line".into() })?;
        Self::from_triplets(&triplets, dim)
    }
}

/// General (possibly rectangular) sparse matrix in compressed row form.
/// Covers the operator matrix P and the projection matrix A.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SparseMatrix {
    pub fn from_triplets(
        triplets: &[(usize, usize, f64)],
        nrows: usize,
        ncols: usize,
    ) -> Result<Self, SparseError> {
        let mut map: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for &(i, j, v) in triplets {
            if i >= nrows || j >= ncols {
                return Err(SparseError::IndexOutOfRange { row: i, col: j, dim: nrows.max(ncols) });
            }
            if !v.is_finite() {
                return Err(SparseError::NonFiniteValue { row: i, col: j });
            }
            *map.entry((i, j)).or_insert(0.0) += v;
        }
        map.retain(|_, v| *v != 0.0);
        let mut row_ptr = vec![0usize; nrows + 1];
        for &(i, _) in map.keys() {
            row_ptr[i + 1] += 1;
        }
        for r in 0..nrows {
            row_ptr[r + 1] += row_ptr[r];
        }
        let mut cols = Vec::with_capacity(map.len());
        let mut vals = Vec::with_capacity(map.len());
        for ((_, j), v) in map {
            cols.push(j);
            vals.push(v);
        }
        Ok(Self { nrows, ncols, row_ptr, cols, vals })
    }

    /// Build rows one by one; rows are given as (col, value) lists.
    pub fn from_rows(rows: &[Vec<(usize, f64)>], ncols: usize) -> Result<Self, SparseError> {
        let mut triplets = Vec::new();
        for (i, row) in rows.iter().enumerate() {
            for &(j, v) in row {
                triplets.push((i, j, v));
            }
        }
        Self::from_triplets(&triplets, rows.len(), ncols)
    }

    pub fn from_sym(m: &SparseSymMatrix) -> Self {
        let mut triplets = Vec::new();
        for (i, j, v) in m.iter_upper() {
            triplets.push((i, j, v));
            if i != j {
                triplets.push((j, i, v));
            }
        }
        Self::from_triplets(&triplets, m.dim(), m.dim()).unwrap()
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (self.cols[k], self.vals[k]))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        match self.cols[lo..hi].binary_search(&j) {
            Ok(k) => self.vals[lo + k],
            Err(_) => 0.0,
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Result<Vec<f64>, SparseError> {
        if x.len() != self.ncols {
            return Err(SparseError::DimensionMismatch { expected: self.ncols, got: x.len() });
        }
        let mut y = vec![0.0; self.nrows];
        for i in 0..self.nrows {
            let mut s = 0.0;
            for (j, v) in self.row(i) {
                s += v * x[j];
            }
            y[i] = s;
        }
        Ok(y)
    }

    /// y = A^T x.
    pub fn mul_vec_transpose(&self, x: &[f64]) -> Result<Vec<f64>, SparseError> {
        if x.len() != self.nrows {
            return Err(SparseError::DimensionMismatch { expected: self.nrows, got: x.len() });
        }
        let mut y = vec![0.0; self.ncols];
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                y[j] += v * x[i];
            }
        }
        Ok(y)
    }

    pub fn transpose(&self) -> Self {
        let mut triplets = Vec::with_capacity(self.nnz());
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                triplets.push((j, i, v));
            }
        }
        Self::from_triplets(&triplets, self.ncols, self.nrows).unwrap()
    }

    pub fn matmul(&self, other: &SparseMatrix) -> Result<Self, SparseError> {
        if self.ncols != other.nrows {
            return Err(SparseError::DimensionMismatch { expected: self.ncols, got: other.nrows });
        }
        let mut triplets = Vec::new();
        for i in 0..self.nrows {
            let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
            for (k, v) in self.row(i) {
                for (j, w) in other.row(k) {
                    *acc.entry(j).or_insert(0.0) += v * w;
                }
            }
            for (j, v) in acc {
                triplets.push((i, j, v));
            }
        }
        Self::from_triplets(&triplets, self.nrows, other.ncols)
    }

    /// Scale rows by a diagonal: D A with D = diag(d).
    pub fn scale_rows(&self, d: &[f64]) -> Result<Self, SparseError> {
        if d.len() != self.nrows {
            return Err(SparseError::DimensionMismatch { expected: self.nrows, got: d.len() });
        }
        let mut out = self.clone();
        for i in 0..self.nrows {
            for k in out.row_ptr[i]..out.row_ptr[i + 1] {
                out.vals[k] *= d[i];
            }
        }
        Ok(out)
    }

    /// Convert a numerically symmetric square matrix to symmetric storage,
    /// averaging the two triangles. Fails if asymmetry exceeds `tol`
    /// relative to the largest entry.
    pub fn into_sym(&self, tol: f64) -> Result<SparseSymMatrix, SparseError> {
        if self.nrows != self.ncols {
            return Err(SparseError::DimensionMismatch { expected: self.nrows, got: self.ncols });
        }
        let scale = self.vals.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1e-300);
        let mut triplets = Vec::new();
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                if j < i {
                    continue;
                }
                if j == i {
                    triplets.push((i, j, v));
                } else {
                    let w = self.get(j, i);
                    let diff = (v - w).abs();
                    if diff > tol * scale {
                        return Err(SparseError::NotSymmetric { i, j, diff });
                    }
                    triplets.push((i, j, 0.5 * (v + w)));
                }
            }
        }
        SparseSymMatrix::from_triplets(&triplets, self.nrows)
    }
}

/// Sparse Cholesky factorization P Q P^T = L L^T with a fill-reducing
/// permutation. Factors are immutable; solves and sampling borrow them.
#[derive(Debug, Clone)]
pub struct CholFactor {
    n: usize,
    /// perm[k] = original index placed at elimination position k.
    perm: Vec<usize>,
    // L stored by columns (lower triangular, diagonal first in each column).
    col_ptr: Vec<usize>,
    rows: Vec<usize>,
    vals: Vec<f64>,
    logdet: f64,
}

/// Minimum-degree ordering on the adjacency graph of the matrix pattern.
/// Ties broken by lowest node index so the ordering is deterministic.
fn min_degree_ordering(m: &SparseSymMatrix) -> Vec<usize> {
    let n = m.dim();
    let mut adj: Vec<std::collections::BTreeSet<usize>> =
        vec![std::collections::BTreeSet::new(); n];
    for (i, j, _) in m.iter_upper() {
        if i != j {
            adj[i].insert(j);
            adj[j].insert(i);
        }
    }
    let mut eliminated = vec![false; n];
    let mut perm = Vec::with_capacity(n);
    for _ in 0..n {
        let mut best = usize::MAX;
        let mut best_deg = usize::MAX;
        for v in 0..n {
            if !eliminated[v] && adj[v].len() < best_deg {
                best = v;
                best_deg = adj[v].len();
            }
        }
        let v = best;
        eliminated[v] = true;
        perm.push(v);
        let neigh: Vec<usize> = adj[v].iter().copied().collect();
        for &a in &neigh {
            adj[a].remove(&v);
        }
        for (ai, &a) in neigh.iter().enumerate() {
            for &b in &neigh[ai + 1..] {
                adj[a].insert(b);
                adj[b].insert(a);
            }
        }
        adj[v].clear();
    }
    perm
}

impl CholFactor {
    /// Up-looking simplicial Cholesky with minimum-degree ordering.
    pub fn new(q: &SparseSymMatrix) -> Result<Self, SparseError> {
        let n = q.dim();
        let perm = min_degree_ordering(q);
        let mut iperm = vec![0usize; n];
        for (k, &p) in perm.iter().enumerate() {
            iperm[p] = k;
        }

        // Permuted upper-triangular pattern in column-major form:
        // for column k, the stored rows i <= k of A' = P Q P^T.
        let mut upper_cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (i, j, v) in q.iter_upper() {
            let (pi, pj) = (iperm[i], iperm[j]);
            let (r, c) = if pi <= pj { (pi, pj) } else { (pj, pi) };
            upper_cols[c].push((r, v));
        }
        for col in &mut upper_cols {
            col.sort_unstable_by_key(|&(r, _)| r);
        }

        let max_diag = (0..n)
            .map(|k| {
                upper_cols[k]
                    .iter()
                    .find(|&&(r, _)| r == k)
                    .map(|&(_, v)| v)
                    .unwrap_or(0.0)
            })
            .fold(0.0f64, |a, v| a.max(v));
        let pivot_floor = 1e-12 * max_diag;

        // Elimination tree from the upper pattern, with path compression.
        let mut parent = vec![usize::MAX; n];
        let mut ancestor = vec![usize::MAX; n];
        for k in 0..n {
            for &(i, _) in &upper_cols[k] {
                let mut i = i;
                while i != usize::MAX && i < k {
                    let next = ancestor[i];
                    ancestor[i] = k;
                    if next == usize::MAX {
                        parent[i] = k;
                    }
                    i = next;
                }
            }
        }

        let mut l_cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        let mut l_diag = vec![0.0f64; n];
        let mut x = vec![0.0f64; n];
        let mut mark = vec![usize::MAX; n];
        let mut stack = Vec::with_capacity(n);
        let mut pattern = Vec::with_capacity(n);
        let mut logdet = 0.0;

        for k in 0..n {
            // ereach: pattern of row k of L, topologically ordered.
            pattern.clear();
            let mut d = 0.0;
            for &(i, v) in &upper_cols[k] {
                if i == k {
                    d = v;
                    continue;
                }
                x[i] = v;
                stack.clear();
                let mut t = i;
                while t != usize::MAX && t < k && mark[t] != k {
                    mark[t] = k;
                    stack.push(t);
                    t = parent[t];
                }
                while let Some(s) = stack.pop() {
                    pattern.push(s);
                }
            }
            pattern.sort_unstable();

            for &i in &pattern {
                let lki = x[i] / l_diag[i];
                x[i] = 0.0;
                for &(r, lv) in &l_cols[i] {
                    x[r] -= lv * lki;
                }
                d -= lki * lki;
                l_cols[i].push((k, lki));
            }
            if d <= pivot_floor {
                return Err(SparseError::NotPositiveDefinite { index: perm[k], pivot: d });
            }
            let lkk = d.sqrt();
            l_diag[k] = lkk;
            logdet += 2.0 * lkk.ln();
        }

        // Flatten to CSC with the diagonal entry first in each column.
        let mut col_ptr = vec![0usize; n + 1];
        for k in 0..n {
            col_ptr[k + 1] = col_ptr[k] + 1 + l_cols[k].len();
        }
        let nnz = col_ptr[n];
        let mut rows = Vec::with_capacity(nnz);
        let mut vals = Vec::with_capacity(nnz);
        for k in 0..n {
            rows.push(k);
            vals.push(l_diag[k]);
            for &(r, v) in &l_cols[k] {
                rows.push(r);
                vals.push(v);
            }
        }

        Ok(Self { n, perm, col_ptr, rows, vals, logdet })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.rows.len()
    }

    /// Log-determinant of the factored matrix.
    pub fn logdet(&self) -> f64 {
        self.logdet
    }

    fn solve_lower(&self, b: &mut [f64]) {
        for k in 0..self.n {
            let xk = b[k] / self.vals[self.col_ptr[k]];
            b[k] = xk;
            for p in self.col_ptr[k] + 1..self.col_ptr[k + 1] {
                b[self.rows[p]] -= self.vals[p] * xk;
            }
        }
    }

    fn solve_upper(&self, b: &mut [f64]) {
        for k in (0..self.n).rev() {
            let mut s = b[k];
            for p in self.col_ptr[k] + 1..self.col_ptr[k + 1] {
                s -= self.vals[p] * b[self.rows[p]];
            }
            b[k] = s / self.vals[self.col_ptr[k]];
        }
    }

    /// Solve Q x = b.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, SparseError> {
        if b.len() != self.n {
            return Err(SparseError::DimensionMismatch { expected: self.n, got: b.len() });
        }
        let mut w: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        self.solve_lower(&mut w);
        self.solve_upper(&mut w);
        let mut x = vec![0.0; self.n];
        for (k, &p) in self.perm.iter().enumerate() {
            x[p] = w[k];
        }
        Ok(x)
    }

    /// Map a standard-normal vector z to x ~ N(0, Q^{-1}) by solving
    /// L^T (P x) = z.
    pub fn whiten_sample(&self, z: &[f64]) -> Result<Vec<f64>, SparseError> {
        if z.len() != self.n {
            return Err(SparseError::DimensionMismatch { expected: self.n, got: z.len() });
        }
        let mut w = z.to_vec();
        self.solve_upper(&mut w);
        let mut x = vec![0.0; self.n];
        for (k, &p) in self.perm.iter().enumerate() {
            x[p] = w[k];
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_spd(dim: usize, seed: u64) -> (SparseSymMatrix, nalgebra::DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = nalgebra::DMatrix::from_fn(dim, dim, |_, _| rng.random::<f64>() - 0.5);
        let spd = &a * a.transpose() + nalgebra::DMatrix::identity(dim, dim) * (dim as f64);
        let mut triplets = Vec::new();
        for i in 0..dim {
            for j in i..dim {
                triplets.push((i, j, spd[(i, j)]));
            }
        }
        (SparseSymMatrix::from_triplets(&triplets, dim).unwrap(), spd)
    }

    #[test]
    fn duplicates_are_summed() {
        let m = SparseSymMatrix::from_triplets(&[(0, 0, 1.0), (0, 0, 1.0)], 2).unwrap();
        assert_eq!(m.get(0, 0), 2.0);
        assert_eq!(m.get(1, 1), 0.0);
        assert_eq!(m.nnz_upper(), 1);
    }

    #[test]
    fn empty_triplets_give_zero_matrix() {
        let m = SparseSymMatrix::from_triplets(&[], 3).unwrap();
        assert_eq!(m.dim(), 3);
        assert_eq!(m.nnz_upper(), 0);
    }

    #[test]
    fn symmetric_query() {
        let m = SparseSymMatrix::from_triplets(&[(0, 1, 2.0)], 2).unwrap();
        assert_eq!(m.get(0, 1), 2.0);
        assert_eq!(m.get(1, 0), 2.0);
    }

    #[test]
    fn rejects_out_of_range_and_non_finite() {
        assert!(SparseSymMatrix::from_triplets(&[(0, 5, 1.0)], 2).is_err());
        assert!(SparseSymMatrix::from_triplets(&[(0, 0, f64::NAN)], 2).is_err());
    }

    #[test]
    fn layout_independent_of_triplet_order() {
        let a = SparseSymMatrix::from_triplets(&[(0, 1, 2.0), (1, 1, 3.0), (0, 0, 1.0)], 2)
            .unwrap();
        let b = SparseSymMatrix::from_triplets(&[(1, 1, 3.0), (1, 0, 2.0), (0, 0, 1.0)], 2)
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cholesky_identity() {
        let f = CholFactor::new(&SparseSymMatrix::identity(4)).unwrap();
        assert_eq!(f.logdet(), 0.0);
        let x = f.solve(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(x, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn cholesky_diagonal_logdet() {
        let f = CholFactor::new(&SparseSymMatrix::from_diagonal(&[4.0, 9.0])).unwrap();
        assert!((f.logdet() - 36.0f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn logdet_of_exp_diagonal() {
        let e = std::f64::consts::E;
        let f = CholFactor::new(&SparseSymMatrix::from_diagonal(&[e, e * e])).unwrap();
        assert!((f.logdet() - 3.0).abs() < 1e-13);
    }

    #[test]
    fn cholesky_matches_dense_eigen_logdet() {
        for seed in [1u64, 2, 3] {
            let (q, dense) = random_spd(10, seed);
            let f = CholFactor::new(&q).unwrap();
            let eig = dense.symmetric_eigen();
            let oracle: f64 = eig.eigenvalues.iter().map(|l| l.ln()).sum();
            assert!((f.logdet() - oracle).abs() <= 1e-9 * oracle.abs().max(1.0));
        }
    }

    #[test]
    fn solve_matches_dense_oracle() {
        let (q, dense) = random_spd(10, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let b: Vec<f64> = (0..10).map(|_| rng.random::<f64>() - 0.5).collect();
        let x = CholFactor::new(&q).unwrap().solve(&b).unwrap();
        let bd = nalgebra::DVector::from_vec(b.clone());
        let xd = dense.clone().lu().solve(&bd).unwrap();
        let bmax = b.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for i in 0..10 {
            assert!((x[i] - xd[i]).abs() <= 1e-8 * bmax);
        }
    }

    #[test]
    fn solve_recovers_known_vector() {
        let (q, _) = random_spd(20, 11);
        let x0: Vec<f64> = (0..20).map(|i| (i as f64) * 0.3 - 2.0).collect();
        let b = q.mul_vec(&x0).unwrap();
        let x = CholFactor::new(&q).unwrap().solve(&b).unwrap();
        let xmax = x0.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for i in 0..20 {
            assert!((x[i] - x0[i]).abs() <= 1e-8 * xmax);
        }
    }

    #[test]
    fn reconstruction_error_small() {
        // L L^T built back against the permuted matrix via solves on unit vectors.
        let (q, dense) = random_spd(15, 21);
        let f = CholFactor::new(&q).unwrap();
        let qmax = q.max_abs();
        for j in 0..15 {
            let mut e = vec![0.0; 15];
            e[j] = 1.0;
            let x = f.solve(&e).unwrap();
            // Q x should be e
            let qx = q.mul_vec(&x).unwrap();
            for i in 0..15 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((qx[i] - want).abs() <= 1e-10 * qmax.max(1.0));
            }
            let _ = dense[(j, j)];
        }
    }

    #[test]
    fn indefinite_matrix_rejected() {
        let m =
            SparseSymMatrix::from_triplets(&[(0, 0, 1.0), (1, 1, -1.0)], 2).unwrap();
        match CholFactor::new(&m) {
            Err(SparseError::NotPositiveDefinite { .. }) => {}
            other => panic!("expected indefinite error, got {other:?}"),
        }
    }

    #[test]
    fn whiten_identity_returns_input() {
        let f = CholFactor::new(&SparseSymMatrix::identity(3)).unwrap();
        let z = vec![0.3, -1.2, 2.0];
        assert_eq!(f.whiten_sample(&z).unwrap(), z);
    }

    #[test]
    fn whiten_diagonal_scales_by_inv_sqrt() {
        let f = CholFactor::new(&SparseSymMatrix::from_diagonal(&[4.0])).unwrap();
        let x = f.whiten_sample(&[2.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn whiten_empirical_covariance_matches_inverse() {
        let q = SparseSymMatrix::from_triplets(
            &[(0, 0, 2.0), (0, 1, 0.6), (1, 1, 1.5)],
            2,
        )
        .unwrap();
        let f = CholFactor::new(&q).unwrap();
        let dense = nalgebra::DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.5]);
        let qinv = dense.try_inverse().unwrap();

        let n = 50_000usize;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut cov = [[0.0f64; 2]; 2];
        for _ in 0..n {
            let z: Vec<f64> = (0..2).map(|_| standard_normal(&mut rng)).collect();
            let x = f.whiten_sample(&z).unwrap();
            for i in 0..2 {
                for j in 0..2 {
                    cov[i][j] += x[i] * x[j];
                }
            }
        }
        for i in 0..2 {
            for j in 0..2 {
                let est = cov[i][j] / n as f64;
                let truth = qinv[(i, j)];
                // MC standard error of a covariance estimate
                let se = ((qinv[(i, i)] * qinv[(j, j)] + truth * truth) / n as f64).sqrt();
                assert!(
                    (est - truth).abs() <= 3.0 * se,
                    "cov[{i}][{j}] = {est}, want {truth} +- {}",
                    3.0 * se
                );
            }
        }
    }

    fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
        // Box-Muller; test-local to stay independent of library sampling.
        let u1: f64 = rng.random::<f64>().max(1e-300);
        let u2: f64 = rng.random();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    #[test]
    fn matrix_market_round_trip() {
        let (q, _) = random_spd(6, 99);
        let text = q.to_matrix_market();
        let back = SparseSymMatrix::from_matrix_market(&text).unwrap();
        assert_eq!(q, back);
    }

    #[test]
    fn matrix_market_rejects_garbage() {
        assert!(SparseSymMatrix::from_matrix_market("nonsense\n1 1 0\n").is_err());
    }

    #[test]
    fn general_matmul_against_dense() {
        let a = SparseMatrix::from_triplets(&[(0, 0, 1.0), (0, 2, 2.0), (1, 1, 3.0)], 2, 3)
            .unwrap();
        let b = SparseMatrix::from_triplets(
            &[(0, 0, 1.0), (1, 0, -1.0), (2, 1, 0.5)],
            3,
            2,
        )
        .unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.get(0, 0), 1.0);
        assert_eq!(c.get(0, 1), 1.0);
        assert_eq!(c.get(1, 0), -3.0);
        assert_eq!(c.get(1, 1), 0.0);
    }

    proptest::proptest! {
        #[test]
        fn from_triplets_always_symmetric_and_summed(
            trips in proptest::collection::vec(
                (0usize..8, 0usize..8, -10.0f64..10.0), 0..40
            )
        ) {
            let m = SparseSymMatrix::from_triplets(&trips, 8).unwrap();
            // dense accumulation oracle over the symmetrized triplets
            let mut dense = [[0.0f64; 8]; 8];
            for &(i, j, v) in &trips {
                dense[i][j] += v;
                if i != j {
                    dense[j][i] += v;
                }
            }
            for i in 0..8 {
                for j in 0..8 {
                    proptest::prop_assert!((m.get(i, j) - dense[i][j]).abs() < 1e-12);
                    proptest::prop_assert_eq!(m.get(i, j), m.get(j, i));
                }
            }
        }

        #[test]
        fn mul_vec_matches_dense(
            trips in proptest::collection::vec(
                (0usize..6, 0usize..6, -5.0f64..5.0), 1..20
            ),
            x in proptest::collection::vec(-3.0f64..3.0, 6)
        ) {
            let m = SparseSymMatrix::from_triplets(&trips, 6).unwrap();
            let y = m.mul_vec(&x).unwrap();
            for i in 0..6 {
                let want: f64 = (0..6).map(|j| m.get(i, j) * x[j]).sum();
                proptest::prop_assert!((y[i] - want).abs() < 1e-10);
            }
        }
    }
}
