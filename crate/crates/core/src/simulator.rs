//! Monte Carlo evaluation of hedging strategies on simulated paths.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{HedgeError, Result};
use crate::hedging::{DiscountCurve, HedgeRun};
use crate::models::{LatentValue, MarketModel, Measure, NgarchModel, SimulatedPath};
use crate::numerics::{bilinear_interp, Grid1D};
use crate::payoff::Payoff;
use crate::solver::{garch_expectation_tables, policy_lookup, PolicyTables, SolverSpec};

/// Descriptive statistics of hedging errors `G = beta_n C - V_n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub average: f64,
    pub median: f64,
    pub volatility: f64,
    pub skewness: f64,
    /// Raw (non-excess) kurtosis.
    pub kurtosis: f64,
    pub minimum: f64,
    pub maximum: f64,
    pub var99: f64,
    pub var999: f64,
    pub rmse: f64,
    /// Set when the sample has zero spread; skewness and kurtosis are then 0.
    pub degenerate: bool,
}

impl ErrorStats {
    /// Row labels and values in reporting order.
    pub fn rows(&self) -> [(&'static str, f64); 10] {
        [
            ("Average", self.average),
            ("Median", self.median),
            ("Volatility", self.volatility),
            ("Skewness", self.skewness),
            ("Kurtosis", self.kurtosis),
            ("Minimum", self.minimum),
            ("Maximum", self.maximum),
            ("VaR(99%)", self.var99),
            ("VaR(99.9%)", self.var999),
            ("RMSE", self.rmse),
        ]
    }
}

/// Upper empirical quantile: the order statistic at 1-based index `ceil(q N)`.
fn upper_quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let idx = ((q * n as f64).ceil() as usize).clamp(1, n);
    sorted[idx - 1]
}

pub fn error_statistics(errors: &[f64]) -> Result<ErrorStats> {
    let n = errors.len();
    if n < 2 {
        return Err(HedgeError::InvalidArgument(format!("need at least 2 errors, got {n}")));
    }
    if errors.iter().any(|x| !x.is_finite()) {
        return Err(HedgeError::InvalidState("hedging errors contain non-finite values".into()));
    }
    let nf = n as f64;
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let average = errors.iter().sum::<f64>() / nf;
    let (mut m2, mut m3, mut m4, mut sq) = (0.0, 0.0, 0.0, 0.0);
    for &x in errors {
        let d = x - average;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
        sq += x * x;
    }
    let (m2, m3, m4) = (m2 / nf, m3 / nf, m4 / nf);
    let degenerate = sorted[0] == sorted[n - 1];
    let (m2, skewness, kurtosis) = if degenerate { (0.0, 0.0, 0.0) } else { (m2, m3 / m2.powf(1.5), m4 / (m2 * m2)) };
    let median = if n % 2 == 1 { sorted[n / 2] } else { 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]) };
    Ok(ErrorStats {
        average,
        median,
        volatility: (m2 * nf / (nf - 1.0)).sqrt(),
        skewness,
        kurtosis,
        minimum: sorted[0],
        maximum: sorted[n - 1],
        var99: upper_quantile(&sorted, 0.99),
        var999: upper_quantile(&sorted, 0.999),
        rmse: (sq / nf).sqrt(),
        degenerate,
    })
}

/// Gaussian kernel density estimate on an equally spaced grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Density {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub bandwidth: f64,
}

pub const DENSITY_POINTS: usize = 512;

/// Kernel density of the errors; the default bandwidth is Silverman's
/// `1.06 sd N^(-1/5)`, replaced by `1e-3` for a sample with no spread.
pub fn density_data(errors: &[f64], bandwidth: Option<f64>) -> Result<Density> {
    let n = errors.len();
    if n < 10 {
        return Err(HedgeError::InvalidArgument(format!("density needs at least 10 errors, got {n}")));
    }
    let nf = n as f64;
    let mean = errors.iter().sum::<f64>() / nf;
    let sd = (errors.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0)).sqrt();
    let bw = match bandwidth {
        Some(b) if b > 0.0 && b.is_finite() => b,
        Some(b) => return Err(HedgeError::InvalidArgument(format!("bandwidth must be positive, got {b}"))),
        None if sd > 0.0 => 1.06 * sd * nf.powf(-0.2),
        None => 1e-3,
    };
    let (lo, hi) = errors
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let grid = Grid1D::uniform(lo - 3.0 * bw, hi + 3.0 * bw, DENSITY_POINTS)?.nodes().to_vec();
    let norm = 1.0 / (nf * bw * (2.0 * std::f64::consts::PI).sqrt());
    let values = grid
        .par_iter()
        .map(|&x| {
            norm * errors
                .iter()
                .map(|&e| {
                    let z = (x - e) / bw;
                    (-0.5 * z * z).exp()
                })
                .sum::<f64>()
        })
        .collect();
    Ok(Density { grid, values, bandwidth: bw })
}

fn d1(s: f64, strike: f64, vol: f64, rate: f64, tau: f64) -> f64 {
    ((s / strike).ln() + (rate + 0.5 * vol * vol) * tau) / (vol * tau.sqrt())
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Lognormal-model call delta with annualized volatility and remaining time `tau` in years.
pub fn bs_delta(s: f64, strike: f64, vol: f64, rate: f64, tau: f64) -> f64 {
    if tau <= 0.0 {
        return if s > strike { 1.0 } else { 0.0 };
    }
    std_normal().cdf(d1(s, strike, vol, rate, tau))
}

/// Lognormal-model call price.
pub fn bs_call_price(s: f64, strike: f64, vol: f64, rate: f64, tau: f64) -> f64 {
    if tau <= 0.0 {
        return (s - strike).max(0.0);
    }
    let n = std_normal();
    let a = d1(s, strike, vol, rate, tau);
    let b = a - vol * tau.sqrt();
    s * n.cdf(a) - strike * (-rate * tau).exp() * n.cdf(b)
}

/// EMM prices and their finite-difference deltas on the `(s, h)` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaTables {
    pub asset_grid: Grid1D,
    pub variance_grid: Grid1D,
    /// Cash prices `C^Q_k`, `k = 0..=n`, row-major `[h][s]`.
    pub price: Vec<Vec<f64>>,
    /// `dC^Q_k / ds`, `k = 0..n`.
    pub delta: Vec<Vec<f64>>,
}

impl DeltaTables {
    pub fn price_at(&self, k: usize, s: f64, h: f64) -> f64 {
        bilinear_interp(&self.asset_grid, &self.variance_grid, &self.price[k], s, h)
    }

    pub fn delta_at(&self, k: usize, s: f64, h: f64) -> f64 {
        bilinear_interp(&self.asset_grid, &self.variance_grid, &self.delta[k], s, h)
    }
}

/// Price under Duan's EMM by backward expectation, then central differences
/// in `s` (one-sided at the grid ends).
pub fn duan_delta_tables(
    model: &NgarchModel,
    payoff: &Payoff,
    spec: &SolverSpec,
    discount: &DiscountCurve,
) -> Result<DeltaTables> {
    let emm = model.under(Measure::Emm);
    let price = garch_expectation_tables(&emm, payoff, spec, discount)?;
    let grid_s = spec.asset_grid.clone();
    let grid_h = spec.variance_grid.clone().expect("checked by the expectation solve");
    let ns = grid_s.len();
    let x = grid_s.nodes();
    let delta = price[..price.len() - 1]
        .iter()
        .map(|table| {
            table
                .chunks_exact(ns)
                .flat_map(|row| {
                    (0..ns).map(move |i| {
                        let (a, b) = (i.saturating_sub(1), (i + 1).min(ns - 1));
                        (row[b] - row[a]) / (x[b] - x[a])
                    })
                })
                .collect()
        })
        .collect();
    Ok(DeltaTables { asset_grid: grid_s, variance_grid: grid_h, price, delta })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Optimal,
    BsDelta,
    DuanDelta,
}

impl StrategyKind {
    pub fn label(&self) -> &'static str {
        match self {
            StrategyKind::Optimal => "Optimal",
            StrategyKind::BsDelta => "Delta",
            StrategyKind::DuanDelta => "Duan",
        }
    }
}

/// Lognormal-model parameters for delta hedging a call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BsParams {
    pub strike: f64,
    /// Annualized volatility.
    pub vol: f64,
    /// Annual rate.
    pub rate: f64,
    pub maturity: f64,
}

/// A strategy ready to be applied to paths.
#[derive(Debug, Clone, Copy)]
pub enum Strategy<'a> {
    Optimal(&'a PolicyTables),
    /// Starts from the lognormal price and holds the lognormal delta.
    BsDelta(BsParams),
    /// Starts from the EMM price and holds its finite-difference delta.
    DuanDelta(&'a DeltaTables),
}

impl Strategy<'_> {
    pub fn kind(&self) -> StrategyKind {
        match self {
            Strategy::Optimal(_) => StrategyKind::Optimal,
            Strategy::BsDelta(_) => StrategyKind::BsDelta,
            Strategy::DuanDelta(_) => StrategyKind::DuanDelta,
        }
    }
}

/// Hedges one path with the optimal policy: `V_0 = C_0(s_0, latent_0)`, then
/// `phi_k = alpha_k - V_{k-1} b_k` read from the tables.
pub fn run_hedge(tables: &PolicyTables, path: &SimulatedPath, discount: &DiscountCurve) -> Result<HedgeRun> {
    apply_strategy(&Strategy::Optimal(tables), path, discount, &tables.payoff)
}

fn variance_at(path: &SimulatedPath, k: usize) -> Result<f64> {
    match path.latent_at(k) {
        LatentValue::Variance(h) => Ok(h),
        LatentValue::Regime(_) => Err(HedgeError::InvalidArgument(
            "Duan delta needs a GARCH path with variances".into(),
        )),
    }
}

pub fn apply_strategy(
    strategy: &Strategy<'_>,
    path: &SimulatedPath,
    discount: &DiscountCurve,
    payoff: &Payoff,
) -> Result<HedgeRun> {
    let n = path.n_periods();
    if discount.n_periods() != n {
        return Err(HedgeError::InvalidArgument(format!(
            "path has {n} periods, discount curve {}",
            discount.n_periods()
        )));
    }
    let s = |k: usize| path.prices[k][0];
    let increments = path.increments(discount);
    let target = discount.beta(n) * payoff.eval(&path.prices[n]);
    let mut failure = None;
    let run = match strategy {
        Strategy::Optimal(tables) => {
            if tables.n_periods() != n {
                return Err(HedgeError::InvalidArgument(format!(
                    "tables have {} periods, path {n}",
                    tables.n_periods()
                )));
            }
            let v0 = tables.value_at(0, s(0), path.latent_at(0))?;
            HedgeRun::accumulate(v0, increments, target, |k, v| {
                match policy_lookup(tables, k, s(k - 1), path.latent_at(k - 1), v) {
                    Ok(l) => vec![l.phi],
                    Err(e) => {
                        failure.get_or_insert(e);
                        vec![0.0]
                    }
                }
            })
        }
        Strategy::BsDelta(p) => {
            let dt = p.maturity / n as f64;
            let tau = |k: usize| p.maturity - k as f64 * dt;
            let v0 = bs_call_price(s(0), p.strike, p.vol, p.rate, tau(0));
            HedgeRun::accumulate(v0, increments, target, |k, _| {
                vec![bs_delta(s(k - 1), p.strike, p.vol, p.rate, tau(k - 1))]
            })
        }
        Strategy::DuanDelta(t) => {
            if t.delta.len() != n {
                return Err(HedgeError::InvalidArgument("Duan tables do not match the path length".into()));
            }
            let v0 = t.price_at(0, s(0), variance_at(path, 0)?);
            HedgeRun::accumulate(v0, increments, target, |k, _| match variance_at(path, k - 1) {
                Ok(h) => vec![t.delta_at(k - 1, s(k - 1), h)],
                Err(e) => {
                    failure.get_or_insert(e);
                    vec![0.0]
                }
            })
        }
    };
    match failure {
        Some(e) => Err(e),
        None => Ok(run),
    }
}

/// Simulates `n_paths` paths; path `i` uses stream `i` of a ChaCha8 generator
/// seeded with `seed`, so results do not depend on scheduling.
pub fn simulate_paths(
    model: &MarketModel,
    n: usize,
    s0: &[f64],
    discount: &DiscountCurve,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<SimulatedPath>> {
    (0..n_paths)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            model.sample_path(n, s0, discount, &mut rng)
        })
        .collect()
}

/// Results of one strategy over a set of paths.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyReport {
    pub kind: StrategyKind,
    pub errors: Vec<f64>,
    pub stats: ErrorStats,
    pub density: Density,
}

/// Paired evaluation of several strategies on the same paths.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub reports: Vec<StrategyReport>,
    /// Discounted increments of the first asset, per path and period.
    pub increments: Vec<Vec<f64>>,
}

impl Comparison {
    pub fn report(&self, kind: StrategyKind) -> Option<&StrategyReport> {
        self.reports.iter().find(|r| r.kind == kind)
    }
}

pub fn evaluate_strategies(
    strategies: &[Strategy<'_>],
    paths: &[SimulatedPath],
    discount: &DiscountCurve,
    payoff: &Payoff,
) -> Result<Comparison> {
    let mut reports = Vec::with_capacity(strategies.len());
    for strategy in strategies {
        let errors = paths
            .par_iter()
            .map(|p| apply_strategy(strategy, p, discount, payoff).map(|r| r.error))
            .collect::<Result<Vec<f64>>>()?;
        let stats = error_statistics(&errors)?;
        let density = density_data(&errors, None)?;
        reports.push(StrategyReport { kind: strategy.kind(), errors, stats, density });
    }
    let increments = paths
        .iter()
        .map(|p| p.increments(discount).into_iter().map(|d| d[0]).collect())
        .collect();
    Ok(Comparison { reports, increments })
}

/// Simulates once and evaluates every strategy on the same paths.
#[allow(clippy::too_many_arguments)]
pub fn compare_strategies(
    model: &MarketModel,
    strategies: &[Strategy<'_>],
    payoff: &Payoff,
    s0: &[f64],
    discount: &DiscountCurve,
    n_paths: usize,
    seed: u64,
) -> Result<Comparison> {
    if strategies.iter().any(|s| s.kind() == StrategyKind::DuanDelta) && !matches!(model, MarketModel::Ngarch(_)) {
        return Err(HedgeError::InvalidArgument("Duan delta applies to GARCH models only".into()));
    }
    let paths = simulate_paths(model, discount.n_periods(), s0, discount, n_paths, seed)?;
    evaluate_strategies(strategies, &paths, discount, payoff)
}

/// Sample mean and its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_error: f64,
}

impl MeanEstimate {
    pub fn from_sample(xs: impl ExactSizeIterator<Item = f64> + Clone) -> Self {
        let n = xs.len() as f64;
        let mean = xs.clone().sum::<f64>() / n;
        let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Self { mean, std_error: (var / n).sqrt() }
    }

    /// `|mean| <= z * std_error`.
    pub fn within(&self, z: f64) -> bool {
        self.mean.abs() <= z * self.std_error
    }
}

/// Sampled first-order conditions `E[G] = 0` and `E[G Delta_k] = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledOptimality {
    pub error: MeanEstimate,
    pub per_period: Vec<MeanEstimate>,
}

impl SampledOptimality {
    pub fn within(&self, z: f64) -> bool {
        self.error.within(z) && self.per_period.iter().all(|m| m.within(z))
    }
}

pub fn sampled_optimality(errors: &[f64], increments: &[Vec<f64>]) -> Result<SampledOptimality> {
    if errors.len() != increments.len() || errors.len() < 2 {
        return Err(HedgeError::InvalidArgument("need matching errors and increments for at least 2 paths".into()));
    }
    let n = increments[0].len();
    let per_period = (0..n)
        .map(|k| MeanEstimate::from_sample(errors.iter().zip(increments).map(move |(g, d)| g * d[k])))
        .collect();
    Ok(SampledOptimality { error: MeanEstimate::from_sample(errors.iter().copied()), per_period })
}

/// Stationary-variance lognormal volatility, annualized, used for the plain
/// delta hedge under GARCH dynamics.
pub fn garch_equivalent_vol(model: &NgarchModel, dt: f64) -> f64 {
    (model.params.stationary_variance() / dt).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{DiscreteReturn, NgarchParams, RegimeSwitchingModel, ReturnLaw};
    use crate::solver::solve_rs;
    use approx::assert_abs_diff_eq;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn two_point_statistics() {
        let s = error_statistics(&[-1.0, 1.0]).unwrap();
        assert_eq!(s.average, 0.0);
        assert_abs_diff_eq!(s.volatility, 2f64.sqrt(), epsilon = 1e-15);
        assert_eq!((s.rmse, s.minimum, s.maximum, s.median), (1.0, -1.0, 1.0, 0.0));
        assert!(error_statistics(&[1.0]).is_err());
    }

    #[test]
    fn constant_sample_is_flagged() {
        let s = error_statistics(&[0.3; 50]).unwrap();
        assert!(s.degenerate);
        assert_eq!((s.volatility, s.skewness, s.kurtosis), (0.0, 0.0, 0.0));
    }

    #[test]
    fn gaussian_sample_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let xs: Vec<f64> = (0..1_000_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let s = error_statistics(&xs).unwrap();
        assert!((s.kurtosis - 3.0).abs() < 0.05, "{}", s.kurtosis);
        let n = xs.len() as f64;
        let lhs = s.rmse * s.rmse;
        let rhs = s.average * s.average + s.volatility * s.volatility * (n - 1.0) / n;
        assert!((lhs - rhs).abs() < 1e-9 * lhs);
        assert!(s.minimum <= s.median && s.median <= s.maximum);
        assert!((s.var99 - 2.326).abs() < 0.02);
    }

    #[test]
    fn var_uses_upper_order_statistic() {
        let xs: Vec<f64> = (1..=1000).map(f64::from).collect();
        let s = error_statistics(&xs).unwrap();
        assert_eq!(s.var99, 990.0);
        assert_eq!(s.var999, 999.0);
    }

    #[test]
    fn density_normalizes_and_matches_gaussian() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xs: Vec<f64> = (0..100_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let d = density_data(&xs, None).unwrap();
        let h = d.grid[1] - d.grid[0];
        let integral: f64 = d.values.windows(2).map(|w| 0.5 * h * (w[0] + w[1])).sum();
        assert!((integral - 1.0).abs() < 1e-3);
        let sup = d
            .grid
            .iter()
            .zip(&d.values)
            .map(|(x, v)| (v - (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()).abs())
            .fold(0.0, f64::max);
        assert!(sup < 0.02, "{sup}");
    }

    #[test]
    fn density_of_symmetric_sample_is_symmetric() {
        let xs: Vec<f64> = (-50..=50).map(|i| f64::from(i) * 0.1).collect();
        let d = density_data(&xs, None).unwrap();
        let n = d.values.len();
        for i in 0..n {
            assert!((d.values[i] - d.values[n - 1 - i]).abs() < 1e-12);
        }
    }

    /// Simpson integration of the normal density, independent of the library CDF.
    fn simpson_cdf(x: f64) -> f64 {
        let steps = 20_000;
        let (a, b) = (-12.0, x);
        let h = (b - a) / steps as f64;
        let f = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut acc = f(a) + f(b);
        for i in 1..steps {
            acc += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * h / 3.0
    }

    #[test]
    fn bs_delta_limits_and_cross_check() {
        assert!(bs_delta(1000.0, 100.0, 0.06, 0.05, 1.0) > 1.0 - 1e-12);
        assert!(bs_delta(10.0, 100.0, 0.06, 0.05, 1.0) < 1e-12);
        assert_eq!(bs_delta(101.0, 100.0, 0.06, 0.05, 0.0), 1.0);
        assert_eq!(bs_delta(99.0, 100.0, 0.06, 0.05, 0.0), 0.0);
        let x = ((0.05 + 0.5 * 0.06f64.powi(2)) * 1.0) / 0.06;
        assert_abs_diff_eq!(bs_delta(100.0, 100.0, 0.06, 0.05, 1.0), simpson_cdf(x), epsilon = 1e-10);
    }

    fn binomial_tables(payoff: Payoff) -> (PolicyTables, MarketModel) {
        let model = RegimeSwitchingModel::new(
            vec![vec![1.0]],
            vec![ReturnLaw::Discrete {
                atoms: vec![
                    DiscreteReturn { prob: 0.6, xi: vec![0.1] },
                    DiscreteReturn { prob: 0.4, xi: vec![-0.1] },
                ],
            }],
        )
        .unwrap();
        let grid = Grid1D::uniform(0.5, 1.5, 11).unwrap();
        let spec = SolverSpec { asset_grid: grid, variance_grid: None, n_periods: 1, quadrature_size: 2, seed: 0 };
        let tables = solve_rs(&model, &payoff, &spec, &DiscountCurve::flat(1)).unwrap();
        (tables, MarketModel::RegimeSwitching { model, initial_regime: 0 })
    }

    #[test]
    fn complete_market_replicates_exactly() {
        let (tables, model) = binomial_tables(Payoff::Call { strike: 1.0 });
        let curve = DiscountCurve::flat(1);
        let paths = simulate_paths(&model, 1, &[1.0], &curve, 50, 3).unwrap();
        for p in &paths {
            let run = run_hedge(&tables, p, &curve).unwrap();
            assert!(run.error.abs() < 1e-12);
        }
    }

    #[test]
    fn zero_payoff_never_trades() {
        let (tables, model) = binomial_tables(Payoff::Constant { value: 0.0 });
        let curve = DiscountCurve::flat(1);
        let p = &simulate_paths(&model, 1, &[1.0], &curve, 1, 3).unwrap()[0];
        let run = run_hedge(&tables, p, &curve).unwrap();
        assert!(run.values.iter().all(|v| *v == 0.0) && run.error == 0.0);
    }

    #[test]
    fn martingale_model_has_unbiased_error() {
        let n = 4;
        let model = RegimeSwitchingModel::new(
            vec![vec![1.0]],
            vec![ReturnLaw::Discrete {
                atoms: vec![
                    DiscreteReturn { prob: 0.3, xi: vec![0.1] },
                    DiscreteReturn { prob: 0.4, xi: vec![0.0] },
                    DiscreteReturn { prob: 0.3, xi: vec![-0.1] },
                ],
            }],
        )
        .unwrap();
        let grid = Grid1D::uniform(50.0, 200.0, 1501).unwrap();
        let spec = SolverSpec { asset_grid: grid, variance_grid: None, n_periods: n, quadrature_size: 3, seed: 9 };
        let curve = DiscountCurve::flat(n);
        let payoff = Payoff::Call { strike: 100.0 };
        let tables = solve_rs(&model, &payoff, &spec, &curve).unwrap();
        let market = MarketModel::RegimeSwitching { model, initial_regime: 0 };
        let cmp = compare_strategies(&market, &[Strategy::Optimal(&tables)], &payoff, &[100.0], &curve, 100_000, 1)
            .unwrap();
        let g = &cmp.reports[0].errors;
        assert!(g.iter().any(|x| x.abs() > 1e-3));
        let est = MeanEstimate::from_sample(g.iter().copied());
        assert!(est.within(3.0), "{est:?}");
    }

    #[test]
    fn paths_are_reproducible() {
        let model = MarketModel::Ngarch(
            NgarchModel::new(
                NgarchParams { alpha0: 1.524e-5, alpha1: 0.1883, beta1: 0.7162, lambda: 7.452e-3, r: 0.0 },
                Measure::Physical,
            )
            .unwrap(),
        );
        let curve = DiscountCurve::flat(5);
        let a = simulate_paths(&model, 5, &[100.0], &curve, 20, 7).unwrap();
        let b = simulate_paths(&model, 5, &[100.0], &curve, 20, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0], a[1]);
    }

    fn small_duan(payoff: Payoff) -> DeltaTables {
        let model = NgarchModel::new(
            NgarchParams { alpha0: 1.524e-5, alpha1: 0.1883, beta1: 0.7162, lambda: 7.452e-3, r: 0.0 },
            Measure::Physical,
        )
        .unwrap();
        let spec = SolverSpec {
            asset_grid: Grid1D::uniform(60.0, 140.0, 81).unwrap(),
            variance_grid: Some(Grid1D::uniform(5e-5, 7e-4, 12).unwrap()),
            n_periods: 3,
            quadrature_size: 4000,
            seed: 2,
        };
        duan_delta_tables(&model, &payoff, &spec, &DiscountCurve::flat(3)).unwrap()
    }

    #[test]
    fn duan_forward_and_constant() {
        let fwd = small_duan(Payoff::Forward);
        for (k, table) in fwd.price.iter().enumerate() {
            for (v, s) in table.iter().zip(fwd.asset_grid.nodes().iter().cycle()) {
                assert!((v / s - 1.0).abs() < 2e-3, "k={k}: {v} vs {s}");
            }
        }
        assert!(fwd.delta.iter().flatten().all(|d| (d - 1.0).abs() < 2e-3));
        let cst = small_duan(Payoff::Constant { value: 3.0 });
        assert!(cst.delta.iter().flatten().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn duan_call_price_increases_with_variance() {
        let t = small_duan(Payoff::Call { strike: 100.0 });
        let hs = t.variance_grid.nodes();
        let prices: Vec<f64> = hs.iter().map(|&h| t.price_at(0, 100.0, h)).collect();
        assert!(prices[0] > 0.0);
        assert!(prices.windows(2).all(|w| w[1] > w[0]), "{prices:?}");
    }
}
