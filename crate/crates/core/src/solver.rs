//! Grid-based backward induction producing policy tables for regime-switching
//! models (state `(s, regime)`) and GARCH models (state `(s, h)`).

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HedgeError, Result};
use crate::hedging::{hedge_ratio, DiscountCurve};
use crate::models::regime::ScalarRegimeKernel;
use crate::models::{rs_rho_gamma_step, GarchDynamics, GarchNodeKernel, LatentValue, RegimeSwitchingModel};
use crate::numerics::{lerp, linear_interp, Grid1D, QuadratureDraws};
use crate::payoff::Payoff;

/// Grids and quadrature settings of a solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverSpec {
    pub asset_grid: Grid1D,
    pub variance_grid: Option<Grid1D>,
    pub n_periods: usize,
    pub quadrature_size: usize,
    pub seed: u64,
}

impl SolverSpec {
    fn validate(&self, discount: &DiscountCurve) -> Result<()> {
        if self.n_periods == 0 || self.quadrature_size == 0 {
            return Err(HedgeError::InvalidArgument(
                "n_periods and quadrature_size must be at least 1".into(),
            ));
        }
        if discount.n_periods() != self.n_periods {
            return Err(HedgeError::InvalidArgument(format!(
                "discount curve has {} periods, solver expects {}",
                discount.n_periods(),
                self.n_periods
            )));
        }
        if !(self.asset_grid.lo() > 0.0) {
            return Err(HedgeError::InvalidArgument("asset grid must be positive".into()));
        }
        Ok(())
    }
}

/// Latent coordinate of the tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LatentSpace {
    Regimes { count: usize },
    Variance { grid: Grid1D },
}

impl LatentSpace {
    pub fn len(&self) -> usize {
        match self {
            LatentSpace::Regimes { count } => *count,
            LatentSpace::Variance { grid } => grid.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TableMeta {
    /// Hash of the configuration the tables were built from.
    pub model_hash: String,
    pub quadrature_seed: u64,
    pub quadrature_size: usize,
}

/// Gridded `C_k`, `alpha_k`, `b_k` and `gamma_k` for every period.
///
/// Each table is row-major with one row of asset-grid values per latent node.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTables {
    pub asset_grid: Grid1D,
    pub latent: LatentSpace,
    pub payoff: Payoff,
    pub discount: DiscountCurve,
    pub meta: TableMeta,
    /// `C_0..C_n`.
    value: Vec<Vec<f64>>,
    /// `alpha_1..alpha_n`.
    alpha: Vec<Vec<f64>>,
    /// `b_1..b_n`.
    b: Vec<Vec<f64>>,
    /// `gamma_1..gamma_{n+1}`, one value per latent node.
    gamma: Vec<Vec<f64>>,
}

/// Position and value read off the tables at one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyLookup {
    pub phi: f64,
    pub alpha: f64,
    pub b: f64,
    /// `C_{k-1}` at the state.
    pub c: f64,
}

impl PolicyTables {
    pub fn n_periods(&self) -> usize {
        self.alpha.len()
    }

    /// `C_k` for `k = 0..=n`.
    pub fn value(&self, k: usize) -> &[f64] {
        &self.value[k]
    }

    /// `alpha_k` for `k = 1..=n`.
    pub fn alpha(&self, k: usize) -> &[f64] {
        &self.alpha[k - 1]
    }

    /// `b_k` for `k = 1..=n`.
    pub fn b(&self, k: usize) -> &[f64] {
        &self.b[k - 1]
    }

    /// `gamma_k` for `k = 1..=n+1`.
    pub fn gamma(&self, k: usize) -> &[f64] {
        &self.gamma[k - 1]
    }

    fn interp(&self, table: &[f64], s: f64, latent: LatentValue) -> Result<f64> {
        let ns = self.asset_grid.len();
        match (&self.latent, latent) {
            (LatentSpace::Regimes { count }, LatentValue::Regime(i)) if i < *count => {
                Ok(linear_interp(&self.asset_grid, &table[i * ns..(i + 1) * ns], s))
            }
            (LatentSpace::Variance { grid }, LatentValue::Variance(h)) => {
                Ok(crate::numerics::bilinear_interp(&self.asset_grid, grid, table, s, h))
            }
            _ => Err(HedgeError::InvalidState(format!(
                "latent value {latent:?} does not match the tables"
            ))),
        }
    }

    /// `C_k(s, latent)`.
    pub fn value_at(&self, k: usize, s: f64, latent: LatentValue) -> Result<f64> {
        self.interp(&self.value[k], s, latent)
    }

    /// `gamma_k` at a latent state (linear in `h` with flat extrapolation for GARCH tables).
    pub fn gamma_at(&self, k: usize, latent: LatentValue) -> Result<f64> {
        let g = &self.gamma[k - 1];
        match (&self.latent, latent) {
            (LatentSpace::Regimes { count }, LatentValue::Regime(i)) if i < *count => Ok(g[i]),
            (LatentSpace::Variance { grid }, LatentValue::Variance(h)) => Ok(interp_flat(grid, g, h)),
            _ => Err(HedgeError::InvalidState(format!(
                "latent value {latent:?} does not match the tables"
            ))),
        }
    }

    fn check_dims(&self) -> Result<()> {
        let cells = self.asset_grid.len() * self.latent.len();
        let n = self.alpha.len();
        let ok = n >= 1
            && self.value.len() == n + 1
            && self.b.len() == n
            && self.gamma.len() == n + 1
            && self.discount.n_periods() == n
            && self.value.iter().chain(&self.alpha).chain(&self.b).all(|t| t.len() == cells)
            && self.gamma.iter().all(|g| g.len() == self.latent.len());
        if ok {
            Ok(())
        } else {
            Err(HedgeError::Format("table dimensions do not match the grids".into()))
        }
    }
}

/// Reads `alpha_k`, `b_k` and `C_{k-1}` at the state of period `k - 1` and forms
/// `phi_k = alpha_k - V_{k-1} b_k`.
pub fn policy_lookup(
    tables: &PolicyTables,
    k: usize,
    s: f64,
    latent: LatentValue,
    v_prev: f64,
) -> Result<PolicyLookup> {
    if k == 0 || k > tables.n_periods() {
        return Err(HedgeError::InvalidArgument(format!(
            "period {k} outside 1..={}",
            tables.n_periods()
        )));
    }
    let alpha = tables.interp(tables.alpha(k), s, latent)?;
    let b = tables.interp(tables.b(k), s, latent)?;
    let c = tables.interp(&tables.value[k - 1], s, latent)?;
    let phi = hedge_ratio(&[alpha], &[b], v_prev)[0];
    Ok(PolicyLookup { phi, alpha, b, c })
}

/// Linear interpolation clamped to the boundary values outside the grid.
#[inline]
pub(crate) fn interp_flat(grid: &Grid1D, values: &[f64], x: f64) -> f64 {
    linear_interp(grid, values, x.clamp(grid.lo(), grid.hi()))
}

/// Backward induction for a one-asset regime-switching model.
///
/// `gamma` is exact per regime; `C_k` is interpolated linearly in `s` at the
/// transformed points, except in the last period where the payoff is evaluated
/// directly.
pub fn solve_rs(
    model: &RegimeSwitchingModel,
    payoff: &Payoff,
    spec: &SolverSpec,
    discount: &DiscountCurve,
) -> Result<PolicyTables> {
    spec.validate(discount)?;
    if model.dim() != 1 {
        return Err(HedgeError::InvalidArgument(format!(
            "the grid solver handles one asset, model has {}",
            model.dim()
        )));
    }
    let disc = model.discretize(spec.seed, spec.quadrature_size)?;
    let grid = &spec.asset_grid;
    let ns = grid.len();
    let l = model.n_regimes();
    let n = spec.n_periods;

    let terminal: Vec<f64> = grid.nodes().iter().map(|&s| payoff.eval_scalar(s)).collect();
    let mut value = vec![Vec::new(); n + 1];
    value[n] = terminal.repeat(l);
    let mut alpha = vec![Vec::new(); n];
    let mut b = vec![Vec::new(); n];
    let mut gamma = vec![Vec::new(); n + 1];
    gamma[n] = vec![1.0; l];

    for k in (1..=n).rev() {
        let step = rs_rho_gamma_step(&disc.moments, &gamma[k])
            .map_err(|e| e.with_context(format!("period {k}")))?;
        let betas = (discount.beta(k - 1), discount.beta(k));
        let next = &value[k];
        let mut c_rows = vec![0.0; l * ns];
        let mut a_rows = vec![0.0; l * ns];
        let mut b_rows = vec![0.0; l * ns];
        for i in 0..l {
            let kernel = ScalarRegimeKernel::new(&disc, &step, i);
            let results: Vec<(f64, f64)> = grid
                .nodes()
                .par_iter()
                .map(|&s| {
                    if k == n {
                        kernel.value_alpha(s, betas, |sn, _| payoff.eval_scalar(sn))
                    } else {
                        kernel.value_alpha(s, betas, |sn, j| linear_interp(grid, &next[j * ns..(j + 1) * ns], sn))
                    }
                })
                .collect();
            for (idx, ((c, a), &s)) in results.into_iter().zip(grid.nodes()).enumerate() {
                if !c.is_finite() || !a.is_finite() {
                    return Err(HedgeError::InvalidState(format!(
                        "non-finite value at period {k}, regime {i}, s = {s}"
                    )));
                }
                c_rows[i * ns + idx] = c;
                a_rows[i * ns + idx] = a;
                b_rows[i * ns + idx] = kernel.rho() / (betas.0 * s);
            }
        }
        value[k - 1] = c_rows;
        alpha[k - 1] = a_rows;
        b[k - 1] = b_rows;
        gamma[k - 1] = step.gamma;
    }

    Ok(PolicyTables {
        asset_grid: grid.clone(),
        latent: LatentSpace::Regimes { count: l },
        payoff: payoff.clone(),
        discount: discount.clone(),
        meta: TableMeta {
            model_hash: String::new(),
            quadrature_seed: spec.seed,
            quadrature_size: disc.rules.iter().map(QuadratureDraws::len).max().unwrap_or(0),
        },
        value,
        alpha,
        b,
        gamma,
    })
}

/// Per-atom location of `h'` on the variance grid: row offset and weight.
struct VarianceLocations {
    rows: Vec<(usize, f64)>,
}

impl VarianceLocations {
    fn new(grid_h: &Grid1D, ns: usize, h_next: &[f64]) -> Self {
        let rows = h_next
            .iter()
            .map(|&h| {
                let (j, u) = grid_h.locate(h);
                (j * ns, u)
            })
            .collect();
        Self { rows }
    }

    #[inline]
    fn eval(&self, grid_s: &Grid1D, table: &[f64], atom: usize, s: f64) -> f64 {
        let ns = grid_s.len();
        let (off, u) = self.rows[atom];
        let (i, t) = grid_s.locate(s);
        let lo = lerp(table[off + i], table[off + i + 1], t);
        let hi = lerp(table[off + ns + i], table[off + ns + i + 1], t);
        lerp(lo, hi, u)
    }
}

/// `gamma` at one variance node with `C`, `alpha` and `b` along the asset grid.
type VarianceRow = (f64, Vec<f64>, Vec<f64>, Vec<f64>);

/// Backward induction for a one-asset GARCH model on an `(s, h)` grid.
///
/// `gamma_{k+1}` is interpolated linearly in `h` (flat outside the grid) and
/// `C_k` bilinearly, except in the last period where the payoff is exact.
pub fn solve_garch(
    model: &impl GarchDynamics,
    payoff: &Payoff,
    spec: &SolverSpec,
    discount: &DiscountCurve,
) -> Result<PolicyTables> {
    spec.validate(discount)?;
    let grid_h = spec
        .variance_grid
        .as_ref()
        .ok_or_else(|| HedgeError::InvalidArgument("GARCH solve needs a variance grid".into()))?;
    if !(grid_h.lo() > 0.0) {
        return Err(HedgeError::InvalidArgument("variance grid must be positive".into()));
    }
    let quad = QuadratureDraws::standard_normal(spec.seed, spec.quadrature_size, 1)?;
    let grid_s = &spec.asset_grid;
    let ns = grid_s.len();
    let nh = grid_h.len();
    let n = spec.n_periods;
    let pf = discount.period_factor();

    let terminal: Vec<f64> = grid_s.nodes().iter().map(|&s| payoff.eval_scalar(s)).collect();
    let mut value = vec![Vec::new(); n + 1];
    value[n] = terminal.repeat(nh);
    let mut alpha = vec![Vec::new(); n];
    let mut b = vec![Vec::new(); n];
    let mut gamma = vec![Vec::new(); n + 1];
    gamma[n] = vec![1.0; nh];

    for k in (1..=n).rev() {
        let beta_prev = discount.beta(k - 1);
        let next = &value[k];
        let gamma_next = &gamma[k];
        let rows: Vec<Result<VarianceRow>> = grid_h
            .nodes()
            .par_iter()
            .map(|&h| {
                let kernel = GarchNodeKernel::new(model, h, |hn| interp_flat(grid_h, gamma_next, hn), &quad)
                    .map_err(|e| e.with_context(format!("period {k}")))?;
                let locs = VarianceLocations::new(grid_h, ns, kernel.h_next());
                let mut c_row = Vec::with_capacity(ns);
                let mut a_row = Vec::with_capacity(ns);
                let mut b_row = Vec::with_capacity(ns);
                for &s in grid_s.nodes() {
                    let (c, a) = if k == n {
                        kernel.value_alpha(s, pf, |_, sn| payoff.eval_scalar(sn))
                    } else {
                        kernel.value_alpha(s, pf, |i, sn| locs.eval(grid_s, next, i, sn))
                    };
                    if !c.is_finite() || !a.is_finite() {
                        return Err(HedgeError::InvalidState(format!(
                            "non-finite value at period {k}, s = {s}, h = {h:e}"
                        )));
                    }
                    c_row.push(c);
                    a_row.push(a);
                    b_row.push(kernel.b(s, beta_prev));
                }
                Ok((kernel.moments().gamma, c_row, a_row, b_row))
            })
            .collect();
        let mut g = Vec::with_capacity(nh);
        let (mut c_rows, mut a_rows, mut b_rows) =
            (Vec::with_capacity(nh * ns), Vec::with_capacity(nh * ns), Vec::with_capacity(nh * ns));
        for row in rows {
            let (gm, c, a, bb) = row?;
            g.push(gm);
            c_rows.extend(c);
            a_rows.extend(a);
            b_rows.extend(bb);
        }
        value[k - 1] = c_rows;
        alpha[k - 1] = a_rows;
        b[k - 1] = b_rows;
        gamma[k - 1] = g;
    }

    Ok(PolicyTables {
        asset_grid: grid_s.clone(),
        latent: LatentSpace::Variance { grid: grid_h.clone() },
        payoff: payoff.clone(),
        discount: discount.clone(),
        meta: TableMeta {
            model_hash: String::new(),
            quadrature_seed: spec.seed,
            quadrature_size: spec.quadrature_size,
        },
        value,
        alpha,
        b,
        gamma,
    })
}

/// Plain discounted expectations `beta_k C_k = E[beta_n C | S_k, h_k]` on the
/// `(s, h)` grid, one row-major table per period `k = 0..=n`.
pub fn garch_expectation_tables(
    model: &impl GarchDynamics,
    payoff: &Payoff,
    spec: &SolverSpec,
    discount: &DiscountCurve,
) -> Result<Vec<Vec<f64>>> {
    spec.validate(discount)?;
    let grid_h = spec
        .variance_grid
        .as_ref()
        .ok_or_else(|| HedgeError::InvalidArgument("GARCH solve needs a variance grid".into()))?;
    let quad = QuadratureDraws::standard_normal(spec.seed, spec.quadrature_size, 1)?;
    let grid_s = &spec.asset_grid;
    let ns = grid_s.len();
    let n = spec.n_periods;
    let pf = discount.period_factor();
    let terminal: Vec<f64> = grid_s.nodes().iter().map(|&s| payoff.eval_scalar(s)).collect();
    let mut value = vec![Vec::new(); n + 1];
    value[n] = terminal.repeat(grid_h.len());
    for k in (1..=n).rev() {
        let next = &value[k];
        let rows: Vec<Result<Vec<f64>>> = grid_h
            .nodes()
            .par_iter()
            .map(|&h| {
                let kernel = GarchNodeKernel::new(model, h, |_| 1.0, &quad)
                    .map_err(|e| e.with_context(format!("period {k}")))?;
                let locs = VarianceLocations::new(grid_h, ns, kernel.h_next());
                Ok(grid_s
                    .nodes()
                    .iter()
                    .map(|&s| {
                        if k == n {
                            kernel.expectation(s, pf, |_, sn| payoff.eval_scalar(sn))
                        } else {
                            kernel.expectation(s, pf, |i, sn| locs.eval(grid_s, next, i, sn))
                        }
                    })
                    .collect())
            })
            .collect();
        let mut flat = Vec::with_capacity(grid_h.len() * ns);
        for r in rows {
            flat.extend(r?);
        }
        value[k - 1] = flat;
    }
    Ok(value)
}

const MAGIC: &[u8; 4] = b"QHPT";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    asset_grid: Grid1D,
    latent: LatentSpace,
    n_periods: usize,
    payoff: Payoff,
    discount: DiscountCurve,
    meta: TableMeta,
}

impl PolicyTables {
    /// Writes the binary container: magic, version, JSON header, then the
    /// `C`, `alpha`, `b` and `gamma` tables as little-endian `f64`.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let header = Header {
            version: FORMAT_VERSION,
            asset_grid: self.asset_grid.clone(),
            latent: self.latent.clone(),
            n_periods: self.n_periods(),
            payoff: self.payoff.clone(),
            discount: self.discount.clone(),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        let mut buf = Vec::new();
        for table in self.value.iter().chain(&self.alpha).chain(&self.b).chain(&self.gamma) {
            buf.clear();
            buf.reserve(table.len() * 8);
            for v in table {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(HedgeError::Format("not a policy table file".into()));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != FORMAT_VERSION {
            return Err(HedgeError::Format(format!("unsupported format version {version}")));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len) as usize;
        let mut json = vec![0u8; len];
        r.read_exact(&mut json)?;
        let header: Header = serde_json::from_slice(&json)?;
        let n = header.n_periods;
        let cells = header.asset_grid.len() * header.latent.len();
        let mut read_table = |count: usize| -> Result<Vec<f64>> {
            let mut bytes = vec![0u8; count * 8];
            r.read_exact(&mut bytes)?;
            Ok(bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect())
        };
        let value = (0..=n).map(|_| read_table(cells)).collect::<Result<Vec<_>>>()?;
        let alpha = (0..n).map(|_| read_table(cells)).collect::<Result<Vec<_>>>()?;
        let b = (0..n).map(|_| read_table(cells)).collect::<Result<Vec<_>>>()?;
        let gamma = (0..=n)
            .map(|_| read_table(header.latent.len()))
            .collect::<Result<Vec<_>>>()?;
        let tables = PolicyTables {
            asset_grid: header.asset_grid,
            latent: header.latent,
            payoff: header.payoff,
            discount: header.discount,
            meta: header.meta,
            value,
            alpha,
            b,
            gamma,
        };
        tables.check_dims()?;
        Ok(tables)
    }
}
