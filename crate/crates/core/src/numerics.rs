//! Small dense linear algebra, grid interpolation and fixed quadrature rules.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{HedgeError, Result};

/// Relative pivot floor for symmetric positive-definite factorizations.
pub const PIVOT_TOLERANCE: f64 = 1e-12;

const SYMMETRY_TOLERANCE: f64 = 1e-12;

/// A symmetric positive-definite matrix together with its Cholesky factor.
#[derive(Debug, Clone)]
pub struct SpdMatrix {
    entries: DMatrix<f64>,
    factor: Cholesky<f64, Dyn>,
}

impl SpdMatrix {
    /// Factorizes `entries`, rejecting asymmetric input and pivots below
    /// `PIVOT_TOLERANCE * max diagonal`.
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if !entries.is_square() || entries.nrows() == 0 {
            return Err(HedgeError::InvalidArgument(format!(
                "expected a non-empty square matrix, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(HedgeError::InvalidArgument("matrix has non-finite entries".into()));
        }
        let scale = entries.amax().max(f64::MIN_POSITIVE);
        let d = entries.nrows();
        for i in 0..d {
            for j in (i + 1)..d {
                if (entries[(i, j)] - entries[(j, i)]).abs() > SYMMETRY_TOLERANCE * scale {
                    return Err(HedgeError::InvalidArgument(format!(
                        "matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let max_diag = entries.diagonal().max();
        let factor = Cholesky::new(entries.clone()).ok_or_else(|| {
            HedgeError::DegenerateModel("second-moment matrix is not positive definite".into())
        })?;
        let l = factor.l_dirty();
        for i in 0..d {
            let pivot = l[(i, i)] * l[(i, i)];
            if !(pivot > PIVOT_TOLERANCE * max_diag) {
                return Err(HedgeError::DegenerateModel(format!(
                    "second-moment matrix is numerically singular (pivot {pivot:e} at {i})"
                )));
            }
        }
        Ok(Self { entries, factor })
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.factor.solve(rhs)
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.factor.inverse()
    }
}

/// Inverse of `Sigma + b b^T` from `Sigma^{-1}` by a rank-one update.
///
/// Returns the inverse and the residual `1 - b^T (Sigma + b b^T)^{-1} b`, which
/// equals `1 / (1 + b^T Sigma^{-1} b)` and is strictly positive whenever
/// `Sigma` is positive definite.
pub fn rank_one_inverse(sigma_inv: &DMatrix<f64>, b: &DVector<f64>) -> Result<(DMatrix<f64>, f64)> {
    if !sigma_inv.is_square() || sigma_inv.nrows() != b.len() {
        return Err(HedgeError::InvalidArgument(format!(
            "dimension mismatch: {}x{} inverse with vector of length {}",
            sigma_inv.nrows(),
            sigma_inv.ncols(),
            b.len()
        )));
    }
    if sigma_inv.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(HedgeError::InvalidArgument("non-finite input to rank_one_inverse".into()));
    }
    let u = sigma_inv * b;
    let c = b.dot(&u);
    let denom = 1.0 + c;
    if !(denom.abs() > 0.0) {
        return Err(HedgeError::DegenerateModel("rank-one update is singular".into()));
    }
    let a_inv = sigma_inv - (&u * u.transpose()) / denom;
    Ok((a_inv, 1.0 / denom))
}

/// Strictly increasing one-dimensional grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridRepr", into = "GridRepr")]
pub struct Grid1D {
    nodes: Vec<f64>,
    uniform: bool,
    inv_step: f64,
}

#[derive(Serialize, Deserialize)]
struct GridRepr {
    nodes: Vec<f64>,
}

impl TryFrom<GridRepr> for Grid1D {
    type Error = HedgeError;
    fn try_from(r: GridRepr) -> Result<Self> {
        Grid1D::from_nodes(r.nodes)
    }
}

impl From<Grid1D> for GridRepr {
    fn from(g: Grid1D) -> Self {
        GridRepr { nodes: g.nodes }
    }
}

impl Grid1D {
    /// `n` equally spaced nodes on `[lo, hi]`.
    pub fn uniform(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n < 2 || !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(HedgeError::InvalidArgument(format!(
                "uniform grid needs lo < hi and at least 2 nodes (lo={lo}, hi={hi}, n={n})"
            )));
        }
        let step = (hi - lo) / (n - 1) as f64;
        let mut nodes: Vec<f64> = (0..n).map(|i| lo + step * i as f64).collect();
        nodes[n - 1] = hi;
        Self::from_nodes(nodes)
    }

    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(HedgeError::InvalidArgument("grid needs at least 2 nodes".into()));
        }
        if nodes.iter().any(|v| !v.is_finite()) || nodes.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(HedgeError::InvalidArgument(
                "grid nodes must be finite and strictly increasing".into(),
            ));
        }
        let n = nodes.len();
        let step = (nodes[n - 1] - nodes[0]) / (n - 1) as f64;
        let uniform = nodes
            .iter()
            .enumerate()
            .all(|(i, &x)| (x - (nodes[0] + step * i as f64)).abs() <= 1e-9 * step);
        Ok(Self {
            nodes,
            uniform,
            inv_step: 1.0 / step,
        })
    }

    pub fn lo(&self) -> f64 {
        self.nodes[0]
    }

    pub fn hi(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Segment index `i` and weight `t` such that `x = (1 - t) nodes[i] + t nodes[i + 1]`.
    /// Outside the grid the boundary segment is used and `t` falls outside `[0, 1]`.
    #[inline]
    pub fn locate(&self, x: f64) -> (usize, f64) {
        let last = self.nodes.len() - 2;
        let i = if self.uniform {
            let t = (x - self.nodes[0]) * self.inv_step;
            if t <= 0.0 {
                0
            } else {
                let mut i = (t as usize).min(last);
                // The fast guess may be off by one from rounding.
                if i < last && x >= self.nodes[i + 1] {
                    i += 1;
                } else if i > 0 && x < self.nodes[i] {
                    i -= 1;
                }
                i
            }
        } else {
            self.nodes.partition_point(|&v| v <= x).saturating_sub(1).min(last)
        };
        let (a, b) = (self.nodes[i], self.nodes[i + 1]);
        (i, (x - a) / (b - a))
    }
}

#[inline]
pub(crate) fn lerp(a: f64, b: f64, t: f64) -> f64 {
    (1.0 - t) * a + t * b
}

/// Piecewise-linear interpolation with linear extrapolation from the boundary segments.
#[inline]
pub fn linear_interp(grid: &Grid1D, values: &[f64], x: f64) -> f64 {
    debug_assert_eq!(grid.len(), values.len());
    let (i, t) = grid.locate(x);
    lerp(values[i], values[i + 1], t)
}

/// Tensor-product linear interpolation; `values` is row-major with one row per `grid_h` node.
pub fn bilinear_interp(grid_s: &Grid1D, grid_h: &Grid1D, values: &[f64], s: f64, h: f64) -> f64 {
    let ns = grid_s.len();
    debug_assert_eq!(values.len(), ns * grid_h.len());
    let (j, u) = grid_h.locate(h);
    let (i, t) = grid_s.locate(s);
    let lo = &values[j * ns..(j + 1) * ns];
    let hi = &values[(j + 1) * ns..(j + 2) * ns];
    lerp(lerp(lo[i], lo[i + 1], t), lerp(hi[i], hi[i + 1], t), u)
}

/// Weighted quadrature points of a fixed dimension, fixed once and reused at
/// every grid node and period (common random numbers).
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureDraws {
    seed: Option<u64>,
    dim: usize,
    weights: Vec<f64>,
    points: Vec<f64>,
}

impl QuadratureDraws {
    /// `m` i.i.d. standard normal vectors of dimension `dim`, equally weighted.
    pub fn standard_normal(seed: u64, m: usize, dim: usize) -> Result<Self> {
        if m == 0 || dim == 0 {
            return Err(HedgeError::InvalidArgument("quadrature size must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points: Vec<f64> = (0..m * dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        Ok(Self {
            seed: Some(seed),
            dim,
            weights: vec![1.0 / m as f64; m],
            points,
        })
    }

    /// Equal weights on the given points (flattened, `dim` values per point).
    pub fn equal_weights(seed: Option<u64>, dim: usize, points: Vec<f64>) -> Result<Self> {
        if dim == 0 || points.is_empty() || !points.len().is_multiple_of(dim) {
            return Err(HedgeError::InvalidArgument("points do not match dimension".into()));
        }
        let m = points.len() / dim;
        Ok(Self {
            seed,
            dim,
            weights: vec![1.0 / m as f64; m],
            points,
        })
    }

    /// Explicit atoms with probabilities summing to one.
    pub fn from_atoms(atoms: &[(f64, Vec<f64>)]) -> Result<Self> {
        let dim = atoms.first().map(|a| a.1.len()).unwrap_or(0);
        if dim == 0 || atoms.iter().any(|a| a.1.len() != dim) {
            return Err(HedgeError::InvalidArgument("atoms must share a positive dimension".into()));
        }
        if atoms.iter().any(|a| !(a.0 > 0.0) || a.1.iter().any(|v| !v.is_finite())) {
            return Err(HedgeError::InvalidArgument("atom probabilities must be positive".into()));
        }
        let total: f64 = atoms.iter().map(|a| a.0).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(HedgeError::InvalidArgument(format!(
                "atom probabilities sum to {total}, expected 1"
            )));
        }
        Ok(Self {
            seed: None,
            dim,
            weights: atoms.iter().map(|a| a.0).collect(),
            points: atoms.iter().flat_map(|a| a.1.iter().copied()).collect(),
        })
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, &[f64])> + '_ {
        self.weights.iter().copied().zip(self.points.chunks_exact(self.dim))
    }

    /// Applies `f` to every point, keeping weights and seed.
    pub fn map_points(&self, out_dim: usize, mut f: impl FnMut(&[f64], &mut [f64])) -> Self {
        let mut points = vec![0.0; self.len() * out_dim];
        for (src, dst) in self.points.chunks_exact(self.dim).zip(points.chunks_exact_mut(out_dim)) {
            f(src, dst);
        }
        Self {
            seed: self.seed,
            dim: out_dim,
            weights: self.weights.clone(),
            points,
        }
    }

    /// Weighted first and second moments of the points.
    pub fn moments(&self) -> (DVector<f64>, DMatrix<f64>) {
        let d = self.dim;
        let mut mean = DVector::zeros(d);
        let mut second = DMatrix::zeros(d, d);
        for (w, y) in self.iter() {
            for a in 0..d {
                mean[a] += w * y[a];
                for b in 0..d {
                    second[(a, b)] += w * y[a] * y[b];
                }
            }
        }
        (mean, second)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn rank_one_scalar_case() {
        let (a_inv, r) =
            rank_one_inverse(&DMatrix::from_element(1, 1, 1.0), &DVector::from_element(1, 1.0)).unwrap();
        assert_abs_diff_eq!(a_inv[(0, 0)], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(r, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn rank_one_zero_vector_is_identity() {
        let (a_inv, r) = rank_one_inverse(&DMatrix::identity(2, 2), &DVector::zeros(2)).unwrap();
        assert_eq!(a_inv, DMatrix::identity(2, 2));
        assert_eq!(r, 1.0);
    }

    #[test]
    fn rank_one_rejects_nan() {
        let err = rank_one_inverse(&DMatrix::identity(2, 2), &DVector::from_vec(vec![f64::NAN, 0.0]));
        assert!(matches!(err, Err(HedgeError::InvalidArgument(_))));
    }

    #[test]
    fn spd_rejects_singular_and_asymmetric() {
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(SpdMatrix::new(singular), Err(HedgeError::DegenerateModel(_))));
        let asym = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 2.0]);
        assert!(matches!(SpdMatrix::new(asym), Err(HedgeError::InvalidArgument(_))));
    }

    #[test]
    fn linear_interp_examples() {
        let g = Grid1D::from_nodes(vec![0.0, 1.0, 2.0]).unwrap();
        let v = [0.0, 1.0, 2.0];
        assert_eq!(linear_interp(&g, &v, 0.5), 0.5);
        assert_eq!(linear_interp(&g, &v, 3.0), 3.0);
        assert_eq!(linear_interp(&g, &v, -1.0), -1.0);
        let g2 = Grid1D::from_nodes(vec![0.0, 1.0]).unwrap();
        assert_eq!(linear_interp(&g2, &[5.0, 5.0], 0.25), 5.0);
    }

    #[test]
    fn interp_is_exact_at_nodes() {
        let g = Grid1D::uniform(80.0, 120.0, 2000).unwrap();
        let v: Vec<f64> = g.nodes().iter().map(|x| (x * 0.37).sin()).collect();
        for (x, y) in g.nodes().iter().zip(&v) {
            assert_eq!(linear_interp(&g, &v, *x), *y);
        }
        let nu = Grid1D::from_nodes(vec![0.0, 0.1, 0.5, 2.0]).unwrap();
        let w = [3.0, -1.0, 4.0, 1.5];
        for (x, y) in nu.nodes().iter().zip(&w) {
            assert_eq!(linear_interp(&nu, &w, *x), *y);
        }
    }

    #[test]
    fn grid_validation() {
        assert!(Grid1D::from_nodes(vec![1.0]).is_err());
        assert!(Grid1D::from_nodes(vec![0.0, 0.0, 1.0]).is_err());
        assert!(Grid1D::uniform(1.0, 0.0, 5).is_err());
        let g = Grid1D::uniform(5e-5, 7e-4, 90).unwrap();
        assert_eq!(g.lo(), 5e-5);
        assert_eq!(g.hi(), 7e-4);
    }

    #[test]
    fn bilinear_reproduces_affine_and_nodes() {
        let gs = Grid1D::uniform(0.0, 2.0, 5).unwrap();
        let gh = Grid1D::from_nodes(vec![1.0, 1.5, 3.0]).unwrap();
        let mut vals = Vec::new();
        for h in gh.nodes() {
            for s in gs.nodes() {
                vals.push(s + h);
            }
        }
        for &(s, h) in &[(0.3, 1.2), (1.9, 2.9), (0.0, 3.0), (2.5, 0.5)] {
            assert_abs_diff_eq!(bilinear_interp(&gs, &gh, &vals, s, h), s + h, epsilon = 1e-12);
        }
        assert_eq!(bilinear_interp(&gs, &gh, &vals, 1.0, 1.5), vals[5 + 2]);
    }

    #[test]
    fn bilinear_product_midpoints() {
        // f(s,h) = s h on {0,1,2}^2; tensor weights at a cell midpoint average four corners.
        let g = Grid1D::from_nodes(vec![0.0, 1.0, 2.0]).unwrap();
        let vals: Vec<f64> = (0..3)
            .flat_map(|j| (0..3).map(move |i| (i * j) as f64))
            .collect();
        // Corners (1,1),(2,1),(1,2),(2,2) -> 1,2,2,4; mean 2.25.
        assert_abs_diff_eq!(bilinear_interp(&g, &g, &vals, 1.5, 1.5), 2.25, epsilon = 1e-15);
        // Corners (0,0),(1,0),(0,1),(1,1) -> 0,0,0,1; mean 0.25.
        assert_abs_diff_eq!(bilinear_interp(&g, &g, &vals, 0.5, 0.5), 0.25, epsilon = 1e-15);
        // Edge midpoint (0.5, 2): between (0,2)=0 and (1,2)=2.
        assert_abs_diff_eq!(bilinear_interp(&g, &g, &vals, 0.5, 2.0), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn quadrature_is_reproducible() {
        let a = QuadratureDraws::standard_normal(7, 1000, 2).unwrap();
        let b = QuadratureDraws::standard_normal(7, 1000, 2).unwrap();
        assert_eq!(a, b);
        let (m, s) = a.moments();
        assert!(m.amax() < 0.15);
        assert!((s[(0, 0)] - 1.0).abs() < 0.15);
        assert!(QuadratureDraws::from_atoms(&[(0.5, vec![1.0]), (0.4, vec![2.0])]).is_err());
    }

    proptest! {
        #[test]
        fn linear_interp_reproduces_affine(a in -5.0..5.0f64, b in -5.0..5.0f64, x in -10.0..10.0f64,
                                           extra in proptest::collection::vec(0.01..1.0f64, 1..8)) {
            let mut nodes = vec![-1.0];
            for e in extra { let last = *nodes.last().unwrap(); nodes.push(last + e); }
            let g = Grid1D::from_nodes(nodes).unwrap();
            let v: Vec<f64> = g.nodes().iter().map(|s| a + b * s).collect();
            prop_assert!((linear_interp(&g, &v, x) - (a + b * x)).abs() < 1e-10);
        }
    }
}
