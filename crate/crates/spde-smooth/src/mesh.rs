//! Discretization domains: 1D interval meshes with boundary extension and
//! 2D Delaunay triangulations (Bowyer-Watson), point location, hull
//! extension rings, and the text mesh format.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("degenerate range: lo = {lo}, hi = {hi}")]
    DegenerateRange { lo: f64, hi: f64 },
    #[error("too few intervals: {got} (need at least 3)")]
    TooFewIntervals { got: usize },
    #[error("negative extension fraction {0}")]
    NegativeExtension(f64),
    #[error("need at least 3 non-collinear points, got {0}")]
    TooFewPoints(usize),
    #[error("input points are collinear")]
    CollinearInput,
    #[error("duplicate points at indices {a} and {b}")]
    DuplicatePoints { a: usize, b: usize },
    #[error("margin and spacing must be positive")]
    NonPositiveMarginOrSpacing,
    #[error("mesh file parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Uniform 1D mesh over an extended interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh1D {
    knots: Vec<f64>,
    interior_range: (f64, f64),
    extension: f64,
}

impl Mesh1D {
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn n_intervals(&self) -> usize {
        self.knots.len() - 1
    }

    pub fn interior_range(&self) -> (f64, f64) {
        self.interior_range
    }

    pub fn extension(&self) -> f64 {
        self.extension
    }

    pub fn spacing(&self) -> f64 {
        (self.knots[self.knots.len() - 1] - self.knots[0]) / self.n_intervals() as f64
    }

    /// Construct from explicit strictly increasing knots.
    pub fn from_knots(knots: Vec<f64>) -> Result<Self, MeshError> {
        if knots.len() < 4 {
            return Err(MeshError::TooFewIntervals { got: knots.len().saturating_sub(1) });
        }
        for w in knots.windows(2) {
            if !(w[1] > w[0]) {
                return Err(MeshError::DegenerateRange { lo: w[0], hi: w[1] });
            }
        }
        let lo = knots[0];
        let hi = knots[knots.len() - 1];
        Ok(Self { knots, interior_range: (lo, hi), extension: 0.0 })
    }
}

/// Uniform knots spanning [lo - e, hi + e] with e = extension_fraction (hi - lo),
/// spacing no larger than (hi - lo) / n_intervals.
pub fn build_mesh_1d(
    lo: f64,
    hi: f64,
    n_intervals: usize,
    extension_fraction: f64,
) -> Result<Mesh1D, MeshError> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(MeshError::DegenerateRange { lo, hi });
    }
    if n_intervals < 3 {
        return Err(MeshError::TooFewIntervals { got: n_intervals });
    }
    if extension_fraction < 0.0 || !extension_fraction.is_finite() {
        return Err(MeshError::NegativeExtension(extension_fraction));
    }
    let e = extension_fraction * (hi - lo);
    let target_h = (hi - lo) / n_intervals as f64;
    let span = (hi - lo) + 2.0 * e;
    let n = (span / target_h).ceil() as usize;
    let h = span / n as f64;
    let start = lo - e;
    let mut knots: Vec<f64> = (0..=n).map(|k| start + h * k as f64).collect();
    // pin the endpoints exactly
    knots[0] = lo - e;
    knots[n] = hi + e;
    Ok(Mesh1D { knots, interior_range: (lo, hi), extension: e })
}

/// Conforming triangulation: CCW triangles indexed into `nodes`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh2D {
    nodes: Vec<(f64, f64)>,
    triangles: Vec<[usize; 3]>,
}

impl Mesh2D {
    pub fn nodes(&self) -> &[(f64, f64)] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn new(nodes: Vec<(f64, f64)>, triangles: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        for (t, tri) in triangles.iter().enumerate() {
            let area = signed_area(nodes[tri[0]], nodes[tri[1]], nodes[tri[2]]);
            if !(area > 0.0) {
                return Err(MeshError::Parse {
                    line: 0,
                    msg: format!("triangle {t} is not counter-clockwise (signed area {area})"),
                });
            }
        }
        Ok(Self { nodes, triangles })
    }

    /// Edges that belong to exactly one triangle.
    pub fn boundary_edges(&self) -> Vec<(usize, usize)> {
        use std::collections::BTreeMap;
        let mut count: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        for tri in &self.triangles {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                *count.entry(key).or_insert(0) += 1;
            }
        }
        count.into_iter().filter(|&(_, c)| c == 1).map(|(e, _)| e).collect()
    }

    pub fn total_area(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| signed_area(self.nodes[t[0]], self.nodes[t[1]], self.nodes[t[2]]))
            .sum()
    }
}

/// Location of a point inside a mesh element.
#[derive(Debug, Clone, PartialEq)]
pub enum ElementLocation {
    /// 1D interval index and normalized offset in [0, 1].
    Interval { element: usize, offset: f64 },
    /// 2D triangle index and barycentric coordinates.
    Triangle { element: usize, bary: [f64; 3] },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Mesh {
    OneD(Mesh1D),
    TwoD(Mesh2D),
}

impl Mesh {
    pub fn dimension(&self) -> usize {
        match self {
            Mesh::OneD(_) => 1,
            Mesh::TwoD(_) => 2,
        }
    }

    /// Point location; coordinates beyond the mesh return None.
    pub fn locate(&self, p: [f64; 2]) -> Option<ElementLocation> {
        match self {
            Mesh::OneD(m) => locate_1d(m, p[0]),
            Mesh::TwoD(m) => locate_2d(m, p),
        }
    }

    pub fn to_text(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        match self {
            Mesh::OneD(m) => {
                s.push_str("mesh1d\n");
                let _ = writeln!(s, "nodes {}", m.knots.len());
                for k in &m.knots {
                    let _ = writeln!(s, "{k}");
                }
            }
            Mesh::TwoD(m) => {
                s.push_str("mesh2d\n");
                let _ = writeln!(s, "nodes {}", m.nodes.len());
                for (x, y) in &m.nodes {
                    let _ = writeln!(s, "{x} {y}");
                }
                let _ = writeln!(s, "triangles {}", m.triangles.len());
                for t in &m.triangles {
                    let _ = writeln!(s, "{} {} {}", t[0], t[1], t[2]);
                }
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, MeshError> {
        let mut lines = text.lines().enumerate().peekable();
        let err = |line: usize, msg: &str| MeshError::Parse { line: line + 1, msg: msg.into() };
        let (l0, kind) = lines.next().ok_or_else(|| err(0, "empty file"))?;
        let kind = kind.trim();
        let (l1, nheader) = lines.next().ok_or_else(|| err(l0, "missing nodes header"))?;
        let n: usize = nheader
            .trim()
            .strip_prefix("nodes ")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| err(l1, "expected 'nodes N'"))?;
        match kind {
            "mesh1d" => {
                let mut knots = Vec::with_capacity(n);
                for _ in 0..n {
                    let (lk, line) = lines.next().ok_or_else(|| err(l1, "truncated node list"))?;
                    knots.push(
                        line.trim().parse().map_err(|_| err(lk, "bad knot coordinate"))?,
                    );
                }
                Ok(Mesh::OneD(Mesh1D::from_knots(knots)?))
            }
            "mesh2d" => {
                let mut nodes = Vec::with_capacity(n);
                for _ in 0..n {
                    let (lk, line) = lines.next().ok_or_else(|| err(l1, "truncated node list"))?;
                    let mut it = line.split_whitespace();
                    let x: f64 = it
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| err(lk, "bad node line"))?;
                    let y: f64 = it
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| err(lk, "bad node line"))?;
                    nodes.push((x, y));
                }
                let (lt, theader) =
                    lines.next().ok_or_else(|| err(l1, "missing triangles header"))?;
                let m: usize = theader
                    .trim()
                    .strip_prefix("triangles ")
                    .and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| err(lt, "expected 'triangles M'"))?;
                let mut triangles = Vec::with_capacity(m);
                for _ in 0..m {
                    let (lk, line) =
                        lines.next().ok_or_else(|| err(lt, "truncated triangle list"))?;
                    let idx: Vec<usize> = line
                        .split_whitespace()
                        .map(|t| t.parse::<usize>())
                        .collect::<Result<_, _>>()
                        .map_err(|_| err(lk, "bad triangle line"))?;
                    if idx.len() != 3 || idx.iter().any(|&i| i >= n) {
                        return Err(err(lk, "bad triangle indices"));
                    }
                    triangles.push([idx[0], idx[1], idx[2]]);
                }
                Ok(Mesh::TwoD(Mesh2D::new(nodes, triangles)?))
            }
            other => Err(err(l0, &format!("unknown mesh kind '{other}'"))),
        }
    }
}

fn locate_1d(m: &Mesh1D, x: f64) -> Option<ElementLocation> {
    let knots = &m.knots;
    if !x.is_finite() || x < knots[0] || x > knots[knots.len() - 1] {
        return None;
    }
    // knot hits go to the lowest-index containing interval
    let e = match knots.binary_search_by(|k| k.partial_cmp(&x).unwrap()) {
        Ok(i) => i.saturating_sub(1),
        Err(i) => i - 1,
    };
    let offset = (x - knots[e]) / (knots[e + 1] - knots[e]);
    Some(ElementLocation::Interval { element: e, offset })
}

fn locate_2d(m: &Mesh2D, p: [f64; 2]) -> Option<ElementLocation> {
    if !p[0].is_finite() || !p[1].is_finite() {
        return None;
    }
    let tol = 1e-12;
    for (t, tri) in m.triangles.iter().enumerate() {
        let a = m.nodes[tri[0]];
        let b = m.nodes[tri[1]];
        let c = m.nodes[tri[2]];
        let area = signed_area(a, b, c);
        let l0 = signed_area((p[0], p[1]), b, c) / area;
        let l1 = signed_area(a, (p[0], p[1]), c) / area;
        let l2 = signed_area(a, b, (p[0], p[1])) / area;
        if l0 >= -tol && l1 >= -tol && l2 >= -tol {
            // clamp and renormalize so the triple sums to 1 exactly enough
            let mut bary = [l0.max(0.0), l1.max(0.0), l2.max(0.0)];
            let s: f64 = bary.iter().sum();
            for v in &mut bary {
                *v /= s;
            }
            return Some(ElementLocation::Triangle { element: t, bary });
        }
    }
    None
}

fn signed_area(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    0.5 * ((b.0 - a.0) * (c.1 - a.1) - (c.0 - a.0) * (b.1 - a.1))
}

const DUPLICATE_TOL: f64 = 1e-12;

/// Bowyer-Watson Delaunay triangulation with a super-triangle and
/// deterministic insertion in input order.
pub fn delaunay_triangulate(points: &[(f64, f64)]) -> Result<Mesh2D, MeshError> {
    if points.len() < 3 {
        return Err(MeshError::TooFewPoints(points.len()));
    }
    for (i, &(xi, yi)) in points.iter().enumerate() {
        for (j, &(xj, yj)) in points.iter().enumerate().skip(i + 1) {
            if (xi - xj).abs() <= DUPLICATE_TOL && (yi - yj).abs() <= DUPLICATE_TOL {
                return Err(MeshError::DuplicatePoints { a: i, b: j });
            }
        }
    }

    let (mut xmin, mut xmax, mut ymin, mut ymax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in points {
        xmin = xmin.min(x);
        xmax = xmax.max(x);
        ymin = ymin.min(y);
        ymax = ymax.max(y);
    }
    let span = (xmax - xmin).max(ymax - ymin).max(1.0);
    let cx = 0.5 * (xmin + xmax);
    let cy = 0.5 * (ymin + ymax);
    let big = 50.0 * span;

    let n = points.len();
    let mut nodes: Vec<(f64, f64)> = points.to_vec();
    nodes.push((cx - big, cy - big));
    nodes.push((cx + big, cy - big));
    nodes.push((cx, cy + big));
    let mut tris: Vec<[usize; 3]> = vec![[n, n + 1, n + 2]];

    for p in 0..n {
        let pt = nodes[p];
        // cavity: triangles whose circumcircle contains the point
        let mut bad = Vec::new();
        for (t, tri) in tris.iter().enumerate() {
            if in_circumcircle(nodes[tri[0]], nodes[tri[1]], nodes[tri[2]], pt) {
                bad.push(t);
            }
        }
        // boundary of the cavity: edges appearing in exactly one bad triangle
        let mut edge_count: std::collections::BTreeMap<(usize, usize), (usize, usize, usize)> =
            std::collections::BTreeMap::new();
        for &t in &bad {
            let tri = tris[t];
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                let e = edge_count.entry(key).or_insert((0, a, b));
                e.0 += 1;
            }
        }
        // bad is ascending, so removing from the back keeps indices valid
        for &t in bad.iter().rev() {
            tris.swap_remove(t);
        }
        for (_, (count, a, b)) in edge_count {
            if count == 1 {
                tris.push([a, b, p]);
            }
        }
    }

    // drop triangles touching the super-triangle vertices
    tris.retain(|t| t.iter().all(|&v| v < n));
    if tris.is_empty() {
        return Err(MeshError::CollinearInput);
    }
    nodes.truncate(n);

    // normalize orientation and ordering for determinism
    let mut triangles = Vec::with_capacity(tris.len());
    for t in tris {
        let mut t = t;
        if signed_area(nodes[t[0]], nodes[t[1]], nodes[t[2]]) < 0.0 {
            t.swap(1, 2);
        }
        // rotate so the smallest index comes first
        let k = (0..3).min_by_key(|&k| t[k]).unwrap();
        let t = [t[k], t[(k + 1) % 3], t[(k + 2) % 3]];
        triangles.push(t);
    }
    triangles.sort_unstable();

    // every input node must appear in some triangle
    let mut used = vec![false; n];
    for t in &triangles {
        for &v in t {
            used[v] = true;
        }
    }
    if used.iter().any(|u| !u) {
        return Err(MeshError::CollinearInput);
    }

    Mesh2D::new(nodes, triangles)
}

/// Circumcircle membership with a scaled tolerance; cocircular points count
/// as outside so cavities stay minimal and deterministic.
fn in_circumcircle(a: (f64, f64), b: (f64, f64), c: (f64, f64), p: (f64, f64)) -> bool {
    // orientation-corrected incircle determinant
    let orient = signed_area(a, b, c);
    let ax = a.0 - p.0;
    let ay = a.1 - p.1;
    let bx = b.0 - p.0;
    let by = b.1 - p.1;
    let cx = c.0 - p.0;
    let cy = c.1 - p.1;
    let det = (ax * ax + ay * ay) * (bx * cy - cx * by)
        - (bx * bx + by * by) * (ax * cy - cx * ay)
        + (cx * cx + cy * cy) * (ax * by - bx * ay);
    let det = if orient >= 0.0 { det } else { -det };
    let scale = (ax * ax + ay * ay).max(bx * bx + by * by).max(cx * cx + cy * cy);
    det > 1e-12 * scale * scale.sqrt()
}

/// Convex hull by monotone chain; returns indices in CCW order.
pub fn convex_hull(points: &[(f64, f64)]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.sort_by(|&a, &b| {
        points[a]
            .partial_cmp(&points[b])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let cross = |o: usize, a: usize, b: usize| -> f64 {
        (points[a].0 - points[o].0) * (points[b].1 - points[o].1)
            - (points[a].1 - points[o].1) * (points[b].0 - points[o].0)
    };
    let mut hull: Vec<usize> = Vec::new();
    for &i in &idx {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], i) <= 0.0 {
            hull.pop();
        }
        hull.push(i);
    }
    let lower_len = hull.len() + 1;
    for &i in idx.iter().rev() {
        while hull.len() >= lower_len && cross(hull[hull.len() - 2], hull[hull.len() - 1], i) <= 0.0
        {
            hull.pop();
        }
        hull.push(i);
    }
    hull.pop();
    hull
}

/// Input points plus a ring of points at distance `margin` outside the
/// convex hull, spaced roughly `spacing` apart along the offset curve.
pub fn extend_hull(
    points: &[(f64, f64)],
    margin: f64,
    spacing: f64,
) -> Result<Vec<(f64, f64)>, MeshError> {
    if !(margin > 0.0) || !(spacing > 0.0) {
        return Err(MeshError::NonPositiveMarginOrSpacing);
    }
    if points.len() < 3 {
        return Err(MeshError::TooFewPoints(points.len()));
    }
    let hull = convex_hull(points);
    if hull.len() < 3 {
        return Err(MeshError::CollinearInput);
    }
    let h = hull.len();
    // offset curve: each hull edge shifted outward, joined by arcs at vertices
    let mut curve: Vec<(f64, f64)> = Vec::new();
    for k in 0..h {
        let prev = points[hull[(k + h - 1) % h]];
        let cur = points[hull[k]];
        let next = points[hull[(k + 1) % h]];
        let n_in = outward_normal(prev, cur);
        let n_out = outward_normal(cur, next);
        // arc at the vertex from n_in to n_out
        let a0 = n_in.1.atan2(n_in.0);
        let mut a1 = n_out.1.atan2(n_out.0);
        while a1 < a0 {
            a1 += 2.0 * std::f64::consts::PI;
        }
        let arc_len = margin * (a1 - a0);
        let n_arc = (arc_len / spacing).ceil().max(1.0) as usize;
        for s in 0..n_arc {
            let a = a0 + (a1 - a0) * s as f64 / n_arc as f64;
            curve.push((cur.0 + margin * a.cos(), cur.1 + margin * a.sin()));
        }
        // edge from cur to next shifted by n_out
        let e_len = ((next.0 - cur.0).powi(2) + (next.1 - cur.1).powi(2)).sqrt();
        let n_edge = (e_len / spacing).ceil().max(1.0) as usize;
        for s in 0..n_edge {
            let t = s as f64 / n_edge as f64;
            let px = cur.0 + t * (next.0 - cur.0) + margin * n_out.0;
            let py = cur.1 + t * (next.1 - cur.1) + margin * n_out.1;
            curve.push((px, py));
        }
    }
    let mut out = points.to_vec();
    out.extend(curve);
    Ok(out)
}

fn outward_normal(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    // hull is CCW, so the outward normal of edge a->b points right of it
    let dx = b.0 - a.0;
    let dy = b.1 - a.1;
    let len = (dx * dx + dy * dy).sqrt();
    (dy / len, -dx / len)
}

/// Distance from a point to the convex hull of `points` (0 inside).
pub fn distance_to_hull(points: &[(f64, f64)], hull: &[usize], p: (f64, f64)) -> f64 {
    let h = hull.len();
    let mut inside = true;
    let mut best = f64::MAX;
    for k in 0..h {
        let a = points[hull[k]];
        let b = points[hull[(k + 1) % h]];
        if signed_area(a, b, p) < 0.0 {
            inside = false;
        }
        best = best.min(point_segment_distance(p, a, b));
    }
    if inside {
        0.0
    } else {
        best
    }
}

fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let abx = b.0 - a.0;
    let aby = b.1 - a.1;
    let apx = p.0 - a.0;
    let apy = p.1 - a.1;
    let t = ((apx * abx + apy * aby) / (abx * abx + aby * aby)).clamp(0.0, 1.0);
    let dx = apx - t * abx;
    let dy = apy - t * aby;
    (dx * dx + dy * dy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_knots_no_extension() {
        let m = build_mesh_1d(0.0, 10.0, 10, 0.0).unwrap();
        assert_eq!(m.knots().len(), 11);
        for (k, &x) in m.knots().iter().enumerate() {
            assert!((x - k as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn extension_widens_span_keeps_spacing() {
        let m = build_mesh_1d(0.0, 10.0, 10, 0.2).unwrap();
        assert!((m.knots()[0] + 2.0).abs() < 1e-12);
        assert!((m.knots()[m.knots().len() - 1] - 12.0).abs() < 1e-12);
        assert!(m.spacing() <= 1.0 + 1e-12);
        assert_eq!(m.interior_range(), (0.0, 10.0));
    }

    #[test]
    fn thirds() {
        let m = build_mesh_1d(0.0, 1.0, 3, 0.0).unwrap();
        let want = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        for (a, b) in m.knots().iter().zip(want.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mesh_1d_rejects_bad_input() {
        assert!(build_mesh_1d(1.0, 1.0, 10, 0.0).is_err());
        assert!(build_mesh_1d(0.0, 1.0, 2, 0.0).is_err());
        assert!(build_mesh_1d(0.0, 1.0, 10, -0.1).is_err());
    }

    #[test]
    fn unit_square_two_triangles() {
        let m =
            delaunay_triangulate(&[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]).unwrap();
        assert_eq!(m.triangles().len(), 2);
        assert!((m.total_area() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn interior_point_gives_three_triangles() {
        let pts = [(0.0, 0.0), (2.0, 0.0), (1.0, 2.0), (1.0, 0.7)];
        let m = delaunay_triangulate(&pts).unwrap();
        assert_eq!(m.triangles().len(), 3);
        assert_delaunay(&m, 1e-10);
    }

    /// Brute-force empty-circumcircle oracle.
    fn assert_delaunay(m: &Mesh2D, tol: f64) {
        for tri in m.triangles() {
            let a = m.nodes()[tri[0]];
            let b = m.nodes()[tri[1]];
            let c = m.nodes()[tri[2]];
            let (cc, r2) = circumcircle(a, b, c);
            for (v, &p) in m.nodes().iter().enumerate() {
                if tri.contains(&v) {
                    continue;
                }
                let d2 = (p.0 - cc.0).powi(2) + (p.1 - cc.1).powi(2);
                assert!(
                    d2 >= r2 * (1.0 - tol),
                    "node {v} inside circumcircle of {tri:?}: d2 = {d2}, r2 = {r2}"
                );
            }
        }
    }

    fn circumcircle(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> ((f64, f64), f64) {
        let d = 2.0 * (a.0 * (b.1 - c.1) + b.0 * (c.1 - a.1) + c.0 * (a.1 - b.1));
        let ux = ((a.0 * a.0 + a.1 * a.1) * (b.1 - c.1)
            + (b.0 * b.0 + b.1 * b.1) * (c.1 - a.1)
            + (c.0 * c.0 + c.1 * c.1) * (a.1 - b.1))
            / d;
        let uy = ((a.0 * a.0 + a.1 * a.1) * (c.0 - b.0)
            + (b.0 * b.0 + b.1 * b.1) * (a.0 - c.0)
            + (c.0 * c.0 + c.1 * c.1) * (b.0 - a.0))
            / d;
        let r2 = (a.0 - ux).powi(2) + (a.1 - uy).powi(2);
        ((ux, uy), r2)
    }

    #[test]
    fn random_points_satisfy_empty_circumcircle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<(f64, f64)> =
            (0..50).map(|_| (rng.random::<f64>() * 10.0, rng.random::<f64>() * 10.0)).collect();
        let m = delaunay_triangulate(&pts).unwrap();
        assert_delaunay(&m, 1e-10);
        // hull-area conservation
        let hull = convex_hull(&pts);
        let mut hull_area = 0.0;
        for k in 1..hull.len() - 1 {
            hull_area += signed_area(pts[hull[0]], pts[hull[k]], pts[hull[k + 1]]);
        }
        assert!((m.total_area() - hull_area).abs() <= 1e-9 * hull_area);
        // every node belongs to at least one triangle
        let mut used = vec![false; pts.len()];
        for t in m.triangles() {
            for &v in t {
                used[v] = true;
            }
        }
        assert!(used.iter().all(|&u| u));
    }

    #[test]
    fn collinear_and_duplicate_inputs_rejected() {
        let collinear: Vec<(f64, f64)> = (0..5).map(|i| (i as f64, 2.0 * i as f64)).collect();
        assert!(matches!(delaunay_triangulate(&collinear), Err(MeshError::CollinearInput)));
        let dup = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 0.0)];
        assert!(matches!(
            delaunay_triangulate(&dup),
            Err(MeshError::DuplicatePoints { .. })
        ));
    }

    #[test]
    fn triangulation_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let pts: Vec<(f64, f64)> =
            (0..30).map(|_| (rng.random::<f64>(), rng.random::<f64>())).collect();
        let a = delaunay_triangulate(&pts).unwrap();
        let b = delaunay_triangulate(&pts).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn extend_hull_ring_distance_and_count() {
        let square = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
        let out = extend_hull(&square, 1.0, 1.0).unwrap();
        assert!(out.len() > square.len());
        let hull = convex_hull(&square);
        for &p in &out[square.len()..] {
            let d = distance_to_hull(&square, &hull, p);
            assert!(d >= 1.0 * (1.0 - 1e-9), "ring point {p:?} too close: {d}");
        }

        // ring count tracks offset-curve length
        let tri = [(0.0, 0.0), (3.0, 0.0), (0.0, 4.0)];
        let margin = 0.5;
        let spacing = 0.25;
        let out = extend_hull(&tri, margin, spacing).unwrap();
        let added = (out.len() - tri.len()) as f64;
        let perimeter = 3.0 + 4.0 + 5.0; // right triangle 3-4-5
        let curve_len = perimeter + 2.0 * std::f64::consts::PI * margin;
        let expect = curve_len / spacing;
        assert!(
            (added - expect).abs() <= 3.0 + 0.05 * expect,
            "added {added}, expected about {expect}"
        );
    }

    #[test]
    fn locate_1d_basic() {
        let m = build_mesh_1d(0.0, 10.0, 10, 0.0).unwrap();
        match Mesh::OneD(m.clone()).locate([3.5, 0.0]) {
            Some(ElementLocation::Interval { element, offset }) => {
                assert_eq!(element, 3);
                assert!((offset - 0.5).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(Mesh::OneD(m).locate([11.0, 0.0]).is_none());
    }

    #[test]
    fn locate_2d_centroid_and_outside() {
        let m =
            delaunay_triangulate(&[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]).unwrap();
        let tri = m.triangles()[0];
        let cx = (m.nodes()[tri[0]].0 + m.nodes()[tri[1]].0 + m.nodes()[tri[2]].0) / 3.0;
        let cy = (m.nodes()[tri[0]].1 + m.nodes()[tri[1]].1 + m.nodes()[tri[2]].1) / 3.0;
        match Mesh::TwoD(m.clone()).locate([cx, cy]) {
            Some(ElementLocation::Triangle { element, bary }) => {
                assert_eq!(element, 0);
                for b in bary {
                    assert!((b - 1.0 / 3.0).abs() < 1e-12);
                }
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(Mesh::TwoD(m).locate([5.0, 5.0]).is_none());
    }

    #[test]
    fn locate_node_has_unit_barycentric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<(f64, f64)> =
            (0..20).map(|_| (rng.random::<f64>(), rng.random::<f64>())).collect();
        let m = delaunay_triangulate(&pts).unwrap();
        let mesh = Mesh::TwoD(m.clone());
        for &(x, y) in m.nodes() {
            match mesh.locate([x, y]) {
                Some(ElementLocation::Triangle { bary, .. }) => {
                    assert!(bary.iter().any(|&b| (b - 1.0).abs() < 1e-9));
                }
                other => panic!("node not located: {other:?}"),
            }
        }
    }

    #[test]
    fn mesh_text_round_trip() {
        let m1 = Mesh::OneD(build_mesh_1d(-1.5, 2.25, 7, 0.1).unwrap());
        let t = m1.to_text();
        let back = Mesh::from_text(&t).unwrap();
        match (&m1, &back) {
            (Mesh::OneD(a), Mesh::OneD(b)) => assert_eq!(a.knots(), b.knots()),
            _ => panic!("kind mismatch"),
        }

        let m2 = Mesh::TwoD(
            delaunay_triangulate(&[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.25, 0.8)]).unwrap(),
        );
        let t = m2.to_text();
        assert_eq!(Mesh::from_text(&t).unwrap(), m2);
    }

    #[test]
    fn mesh_text_rejects_malformed() {
        assert!(Mesh::from_text("mesh3d\nnodes 0\n").is_err());
        assert!(Mesh::from_text("mesh2d\nnodes 1\n0 0\ntriangles 1\n0 0 0\n").is_err());
    }
}
