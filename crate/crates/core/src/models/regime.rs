//! Regime-switching geometric random walks.
//!
//! Discounted prices follow `beta_k S_k = beta_{k-1} S_{k-1} (1 + xi_k)` where the
//! law of `xi_k` is picked by a hidden Markov chain with transition matrix `Q`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{HedgeError, Result};
use crate::numerics::{QuadratureDraws, SpdMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteReturn {
    pub prob: f64,
    pub xi: Vec<f64>,
}

/// Law of the discounted one-period return `xi` in one regime.
///
/// For the continuous families `x` is the raw log-return and
/// `xi = exp(x - discount) - 1`, with `discount = r * dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReturnLaw {
    /// Finitely many discounted returns, used for trees and exact tests.
    Discrete { atoms: Vec<DiscreteReturn> },
    /// Gaussian log-returns.
    LogNormal {
        mean: Vec<f64>,
        cov: Vec<Vec<f64>>,
        discount: f64,
    },
    /// Scalar log-return `drift + G1 - G2` with `G1, G2` i.i.d. Gamma(shape, scale).
    VarianceGamma {
        drift: f64,
        shape: f64,
        scale: f64,
        discount: f64,
    },
}

impl ReturnLaw {
    pub fn dim(&self) -> usize {
        match self {
            ReturnLaw::Discrete { atoms } => atoms.first().map_or(0, |a| a.xi.len()),
            ReturnLaw::LogNormal { mean, .. } => mean.len(),
            ReturnLaw::VarianceGamma { .. } => 1,
        }
    }

    fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 {
            return Err(HedgeError::InvalidArgument("return law has dimension 0".into()));
        }
        match self {
            ReturnLaw::Discrete { atoms } => {
                let total: f64 = atoms.iter().map(|a| a.prob).sum();
                if atoms.iter().any(|a| a.xi.len() != d || !(a.prob > 0.0))
                    || (total - 1.0).abs() > 1e-12
                {
                    return Err(HedgeError::InvalidArgument(
                        "discrete returns need positive probabilities summing to 1".into(),
                    ));
                }
                if atoms.iter().flat_map(|a| &a.xi).any(|x| !(*x > -1.0) || !x.is_finite()) {
                    return Err(HedgeError::InvalidArgument("returns must exceed -1".into()));
                }
            }
            ReturnLaw::LogNormal { cov, .. } => {
                if cov.len() != d || cov.iter().any(|r| r.len() != d) {
                    return Err(HedgeError::InvalidArgument("covariance shape mismatch".into()));
                }
                SpdMatrix::new(self.cov_matrix())
                    .map_err(|e| e.with_context("log-return covariance"))?;
            }
            ReturnLaw::VarianceGamma { shape, scale, .. } => {
                if !(*shape > 0.0) || !(*scale > 0.0) || *scale >= 0.5 {
                    return Err(HedgeError::InvalidArgument(
                        "variance-gamma needs shape > 0 and 0 < scale < 1/2".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    fn cov_matrix(&self) -> DMatrix<f64> {
        match self {
            ReturnLaw::LogNormal { cov, .. } => {
                let d = cov.len();
                DMatrix::from_fn(d, d, |i, j| cov[i][j])
            }
            _ => DMatrix::zeros(0, 0),
        }
    }

    /// Exact mean vector and second-moment matrix of `xi`.
    pub fn moments(&self) -> (DVector<f64>, DMatrix<f64>) {
        match self {
            ReturnLaw::Discrete { atoms } => {
                let d = self.dim();
                let mut m = DVector::zeros(d);
                let mut b = DMatrix::zeros(d, d);
                for a in atoms {
                    let y = DVector::from_column_slice(&a.xi);
                    m.axpy(a.prob, &y, 1.0);
                    b.ger(a.prob, &y, &y, 1.0);
                }
                (m, b)
            }
            ReturnLaw::LogNormal { mean, cov, discount } => {
                let d = mean.len();
                let gross = |a: usize| (mean[a] - discount + 0.5 * cov[a][a]).exp();
                let m = DVector::from_fn(d, |a, _| gross(a) - 1.0);
                let b = DMatrix::from_fn(d, d, |a, c| {
                    let cross = (mean[a] + mean[c] - 2.0 * discount
                        + 0.5 * (cov[a][a] + cov[c][c] + 2.0 * cov[a][c]))
                        .exp();
                    cross - gross(a) - gross(c) + 1.0
                });
                (m, b)
            }
            ReturnLaw::VarianceGamma { drift, shape, scale, discount } => {
                let mgf = |t: f64| ((1.0 - scale * t) * (1.0 + scale * t)).powf(-shape);
                let g1 = (drift - discount).exp() * mgf(1.0);
                let g2 = (2.0 * (drift - discount)).exp() * mgf(2.0);
                (
                    DVector::from_element(1, g1 - 1.0),
                    DMatrix::from_element(1, 1, g2 - 2.0 * g1 + 1.0),
                )
            }
        }
    }

    /// One draw of `xi`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            ReturnLaw::Discrete { atoms } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for a in atoms {
                    acc += a.prob;
                    if u < acc {
                        return a.xi.clone();
                    }
                }
                atoms[atoms.len() - 1].xi.clone()
            }
            ReturnLaw::LogNormal { mean, discount, .. } => {
                let d = mean.len();
                let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
                let l = self.cov_matrix().cholesky().expect("validated covariance").l();
                (0..d)
                    .map(|a| {
                        let x = mean[a] + (0..=a).map(|c| l[(a, c)] * z[c]).sum::<f64>();
                        (x - discount).exp() - 1.0
                    })
                    .collect()
            }
            ReturnLaw::VarianceGamma { drift, shape, scale, discount } => {
                let g = Gamma::new(*shape, *scale).expect("validated gamma parameters");
                let x = drift + g.sample(rng) - g.sample(rng);
                vec![(x - discount).exp() - 1.0]
            }
        }
    }

    /// Fixed quadrature for integrals against this law: the atoms themselves
    /// for discrete laws, `m` seeded draws otherwise.
    pub fn quadrature(&self, seed: u64, m: usize) -> Result<QuadratureDraws> {
        match self {
            ReturnLaw::Discrete { atoms } => {
                let pairs: Vec<(f64, Vec<f64>)> = atoms.iter().map(|a| (a.prob, a.xi.clone())).collect();
                QuadratureDraws::from_atoms(&pairs)
            }
            ReturnLaw::LogNormal { mean, discount, .. } => {
                let d = mean.len();
                let l = self.cov_matrix().cholesky().expect("validated covariance").l();
                let z = QuadratureDraws::standard_normal(seed, m, d)?;
                Ok(z.map_points(d, |z, out| {
                    for a in 0..d {
                        let x = mean[a] + (0..=a).map(|c| l[(a, c)] * z[c]).sum::<f64>();
                        out[a] = (x - discount).exp() - 1.0;
                    }
                }))
            }
            ReturnLaw::VarianceGamma { .. } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let points: Vec<f64> = (0..m).map(|_| self.sample(&mut rng)[0]).collect();
                QuadratureDraws::equal_weights(Some(seed), 1, points)
            }
        }
    }
}

/// Transition matrix with per-regime first and second moments of `xi`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeMoments {
    pub transition: Vec<Vec<f64>>,
    pub means: Vec<DVector<f64>>,
    pub second: Vec<DMatrix<f64>>,
}

impl RegimeMoments {
    pub fn n_regimes(&self) -> usize {
        self.means.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    /// Rejects regimes whose covariance `B(i) - m(i) m(i)^T` is singular.
    pub fn check_covariances(&self) -> Result<()> {
        for (i, (m, b)) in self.means.iter().zip(&self.second).enumerate() {
            let cov = b - m * m.transpose();
            SpdMatrix::new(cov).map_err(|e| e.with_context(format!("covariance of regime {i}")))?;
        }
        Ok(())
    }
}

/// A regime-switching geometric random walk.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeSwitchingModel {
    regimes: Vec<ReturnLaw>,
    moments: RegimeMoments,
}

impl RegimeSwitchingModel {
    pub fn new(transition: Vec<Vec<f64>>, regimes: Vec<ReturnLaw>) -> Result<Self> {
        let l = regimes.len();
        if l == 0 || transition.len() != l || transition.iter().any(|r| r.len() != l) {
            return Err(HedgeError::InvalidArgument(format!(
                "transition matrix must be {l}x{l}"
            )));
        }
        for (i, row) in transition.iter().enumerate() {
            let total: f64 = row.iter().sum();
            if row.iter().any(|q| !(*q >= 0.0)) || (total - 1.0).abs() > 1e-12 {
                return Err(HedgeError::InvalidArgument(format!(
                    "row {i} of the transition matrix is not a probability vector"
                )));
            }
        }
        let d = regimes[0].dim();
        for r in &regimes {
            r.validate()?;
            if r.dim() != d {
                return Err(HedgeError::InvalidArgument("regimes differ in dimension".into()));
            }
        }
        let (means, second) = regimes.iter().map(ReturnLaw::moments).unzip();
        let moments = RegimeMoments { transition, means, second };
        moments.check_covariances()?;
        Ok(Self { regimes, moments })
    }

    pub fn regimes(&self) -> &[ReturnLaw] {
        &self.regimes
    }

    pub fn moments(&self) -> &RegimeMoments {
        &self.moments
    }

    pub fn transition(&self) -> &[Vec<f64>] {
        &self.moments.transition
    }

    pub fn n_regimes(&self) -> usize {
        self.regimes.len()
    }

    pub fn dim(&self) -> usize {
        self.regimes[0].dim()
    }

    /// Fixed quadrature per regime; regime `j` is seeded with `seed + j`.
    /// The returned moments are those of the atoms, so the discrete recursion
    /// built on them is internally consistent.
    pub fn discretize(&self, seed: u64, m: usize) -> Result<DiscretizedRegimes> {
        let rules = self
            .regimes
            .iter()
            .enumerate()
            .map(|(j, r)| r.quadrature(seed.wrapping_add(j as u64), m))
            .collect::<Result<Vec<_>>>()?;
        let (means, second) = rules.iter().map(QuadratureDraws::moments).unzip();
        let moments = RegimeMoments {
            transition: self.moments.transition.clone(),
            means,
            second,
        };
        moments
            .check_covariances()
            .map_err(|e| e.with_context("quadrature atoms"))?;
        Ok(DiscretizedRegimes { rules, moments })
    }
}

/// Quadrature rules per regime together with their atom moments.
#[derive(Debug, Clone)]
pub struct DiscretizedRegimes {
    pub rules: Vec<QuadratureDraws>,
    pub moments: RegimeMoments,
}

/// State-independent quantities of one backward period.
#[derive(Debug, Clone)]
pub struct RegimeStep {
    /// `rho_{k+1}(i)`.
    pub rho: Vec<DVector<f64>>,
    /// `gamma_k(i)`.
    pub gamma: Vec<f64>,
    /// `gamma_{k+1}(j)` the step was built from.
    pub gamma_next: Vec<f64>,
    /// `sum_j Q_ij gamma_{k+1}(j) B(j)`, factorized.
    pub mixed_second: Vec<SpdMatrix>,
}

/// `rho_{k+1}(i)` and `gamma_k(i)` from `gamma_{k+1}`.
pub fn rs_rho_gamma_step(moments: &RegimeMoments, gamma_next: &[f64]) -> Result<RegimeStep> {
    let l = moments.n_regimes();
    let d = moments.dim();
    if gamma_next.len() != l {
        return Err(HedgeError::InvalidArgument(format!(
            "expected {l} next-period gammas, got {}",
            gamma_next.len()
        )));
    }
    if let Some(g) = gamma_next.iter().find(|g| !(**g > 0.0 && **g <= 1.0)) {
        return Err(HedgeError::GammaOutOfRange {
            context: "next-period gamma".into(),
            gamma: *g,
        });
    }
    let mut rho = Vec::with_capacity(l);
    let mut gamma = Vec::with_capacity(l);
    let mut mixed_second = Vec::with_capacity(l);
    #[allow(clippy::needless_range_loop)]
    for i in 0..l {
        let mut mixed = DMatrix::zeros(d, d);
        let mut mixed_mean = DVector::zeros(d);
        for j in 0..l {
            let w = moments.transition[i][j] * gamma_next[j];
            if w == 0.0 {
                continue;
            }
            mixed += &moments.second[j] * w;
            mixed_mean.axpy(w, &moments.means[j], 1.0);
        }
        let factor = SpdMatrix::new(mixed).map_err(|e| e.with_context(format!("regime {i}")))?;
        let r = factor.solve(&mixed_mean);
        let g: f64 = (0..l)
            .map(|j| moments.transition[i][j] * gamma_next[j] * (1.0 - r.dot(&moments.means[j])))
            .sum();
        if !(g > 0.0 && g <= 1.0 + 1e-12) {
            return Err(HedgeError::GammaOutOfRange {
                context: format!("regime {i}"),
                gamma: g,
            });
        }
        rho.push(r);
        gamma.push(g.min(1.0));
        mixed_second.push(factor);
    }
    Ok(RegimeStep {
        rho,
        gamma,
        gamma_next: gamma_next.to_vec(),
        mixed_second,
    })
}

/// `A_k(s, i)` and `b_k(s, i)` for cash price vector `s` at period `k-1`.
pub fn rs_ab(step: &RegimeStep, s: &[f64], regime: usize, beta_prev: f64) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if s.iter().any(|x| !(*x > 0.0)) {
        return Err(HedgeError::InvalidState(format!("asset prices must be positive: {s:?}")));
    }
    let m = step.mixed_second[regime].entries();
    let d = s.len();
    let a = DMatrix::from_fn(d, d, |p, q| beta_prev * beta_prev * s[p] * m[(p, q)] * s[q]);
    let b = DVector::from_fn(d, |p, _| step.rho[regime][p] / (beta_prev * s[p]));
    Ok((a, b))
}

/// `C_{k-1}(s, i)` and `alpha_k(s, i)` with integrals replaced by the regime
/// quadrature. `c_next(s', j)` is the period-`k` value function and
/// `betas = (beta_{k-1}, beta_k)`.
pub fn rs_value_alpha(
    disc: &DiscretizedRegimes,
    step: &RegimeStep,
    c_next: impl Fn(&[f64], usize) -> f64,
    s: &[f64],
    regime: usize,
    betas: (f64, f64),
) -> Result<(f64, DVector<f64>)> {
    let (beta_prev, beta_next) = betas;
    let d = s.len();
    if s.iter().any(|x| !(*x > 0.0)) {
        return Err(HedgeError::InvalidState(format!("asset prices must be positive: {s:?}")));
    }
    let growth = beta_prev / beta_next;
    let rho = &step.rho[regime];
    let mut acc_c = 0.0;
    let mut acc_y = DVector::zeros(d);
    let mut s_next = vec![0.0; d];
    for (j, rule) in disc.rules.iter().enumerate() {
        let wj = disc.moments.transition[regime][j] * step.gamma_next[j];
        if wj == 0.0 {
            continue;
        }
        for (w, y) in rule.iter() {
            for a in 0..d {
                s_next[a] = growth * s[a] * (1.0 + y[a]);
            }
            let c = c_next(&s_next, j);
            if !c.is_finite() {
                return Err(HedgeError::InvalidState(format!(
                    "non-finite continuation value at {s_next:?}"
                )));
            }
            let corr = 1.0 - rho.iter().zip(y).map(|(r, yy)| r * yy).sum::<f64>();
            acc_c += wj * w * c * corr;
            for a in 0..d {
                acc_y[a] += wj * w * c * y[a];
            }
        }
    }
    let ratio = beta_next / beta_prev;
    let c_prev = ratio * acc_c / step.gamma[regime];
    let mut alpha = step.mixed_second[regime].solve(&acc_y) * ratio;
    for a in 0..d {
        alpha[a] /= s[a];
    }
    Ok((c_prev, alpha))
}

/// Flattened quadrature for one starting regime of a one-asset model,
/// used by the grid solver's inner loop.
#[derive(Debug, Clone)]
pub(crate) struct ScalarRegimeKernel {
    /// `(Q_ij gamma'(j) w, 1 + y, y, 1 - rho y, j)` per atom.
    terms: Vec<(f64, f64, f64, f64, usize)>,
    gamma: f64,
    mixed: f64,
    rho: f64,
}

impl ScalarRegimeKernel {
    pub(crate) fn new(disc: &DiscretizedRegimes, step: &RegimeStep, regime: usize) -> Self {
        let rho = step.rho[regime][0];
        let mut terms = Vec::new();
        for (j, rule) in disc.rules.iter().enumerate() {
            let wj = disc.moments.transition[regime][j] * step.gamma_next[j];
            if wj == 0.0 {
                continue;
            }
            for (w, y) in rule.iter() {
                terms.push((wj * w, 1.0 + y[0], y[0], 1.0 - rho * y[0], j));
            }
        }
        Self {
            terms,
            gamma: step.gamma[regime],
            mixed: step.mixed_second[regime].entries()[(0, 0)],
            rho,
        }
    }

    pub(crate) fn rho(&self) -> f64 {
        self.rho
    }

    /// Same quantities as [`rs_value_alpha`] for `d = 1`.
    #[inline]
    pub(crate) fn value_alpha(
        &self,
        s: f64,
        betas: (f64, f64),
        c_next: impl Fn(f64, usize) -> f64,
    ) -> (f64, f64) {
        let (beta_prev, beta_next) = betas;
        let base = beta_prev / beta_next * s;
        let mut acc_c = 0.0;
        let mut acc_y = 0.0;
        for &(w, g, y, corr, j) in &self.terms {
            let c = w * c_next(base * g, j);
            acc_c += c * corr;
            acc_y += c * y;
        }
        let ratio = beta_next / beta_prev;
        (ratio * acc_c / self.gamma, ratio * acc_y / (self.mixed * s))
    }
}

/// One-regime model with Gaussian log-returns: mean `total_mean / n` and
/// variance `total_vol^2 / n` per period, discounted at `rate * maturity / n`.
pub fn make_bs_model(
    n_periods: usize,
    total_mean: f64,
    total_vol: f64,
    rate: f64,
    maturity: f64,
) -> Result<RegimeSwitchingModel> {
    check_walk_inputs(n_periods, total_vol, maturity)?;
    let n = n_periods as f64;
    RegimeSwitchingModel::new(
        vec![vec![1.0]],
        vec![ReturnLaw::LogNormal {
            mean: vec![total_mean / n],
            cov: vec![vec![total_vol * total_vol / n]],
            discount: rate * maturity / n,
        }],
    )
}

/// One-regime variance-gamma walk whose centered terminal log-return is
/// Laplace with standard deviation `total_vol`.
pub fn make_vg_model(
    n_periods: usize,
    total_mean: f64,
    total_vol: f64,
    rate: f64,
    maturity: f64,
) -> Result<RegimeSwitchingModel> {
    check_walk_inputs(n_periods, total_vol, maturity)?;
    let n = n_periods as f64;
    RegimeSwitchingModel::new(
        vec![vec![1.0]],
        vec![ReturnLaw::VarianceGamma {
            drift: total_mean / n,
            shape: 1.0 / n,
            scale: total_vol / std::f64::consts::SQRT_2,
            discount: rate * maturity / n,
        }],
    )
}

fn check_walk_inputs(n_periods: usize, total_vol: f64, maturity: f64) -> Result<()> {
    if n_periods == 0 || !(total_vol > 0.0) || !(maturity > 0.0) {
        return Err(HedgeError::InvalidArgument(format!(
            "need n_periods >= 1, total_vol > 0, maturity > 0 (got {n_periods}, {total_vol}, {maturity})"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    pub(crate) fn binomial_model() -> RegimeSwitchingModel {
        RegimeSwitchingModel::new(
            vec![vec![1.0]],
            vec![ReturnLaw::Discrete {
                atoms: vec![
                    DiscreteReturn { prob: 0.6, xi: vec![0.1] },
                    DiscreteReturn { prob: 0.4, xi: vec![-0.1] },
                ],
            }],
        )
        .unwrap()
    }

    fn gaussian_discrete(mean: f64, sd: f64) -> ReturnLaw {
        ReturnLaw::Discrete {
            atoms: vec![
                DiscreteReturn { prob: 0.5, xi: vec![mean + sd] },
                DiscreteReturn { prob: 0.5, xi: vec![mean - sd] },
            ],
        }
    }

    #[test]
    fn martingale_regime() {
        let model = RegimeSwitchingModel::new(vec![vec![1.0]], vec![gaussian_discrete(0.0, 0.1)]).unwrap();
        let step = rs_rho_gamma_step(model.moments(), &[0.7]).unwrap();
        assert_abs_diff_eq!(step.rho[0][0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(step.gamma[0], 0.7, epsilon = 1e-15);
    }

    #[test]
    fn binomial_rho_gamma() {
        let step = rs_rho_gamma_step(binomial_model().moments(), &[1.0]).unwrap();
        assert_abs_diff_eq!(step.rho[0][0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(step.gamma[0], 0.96, epsilon = 1e-12);
    }

    #[test]
    fn identity_transition_decouples() {
        let a = gaussian_discrete(0.02, 0.1);
        let b = gaussian_discrete(-0.01, 0.05);
        let two = RegimeSwitchingModel::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![a.clone(), b.clone()])
            .unwrap();
        let one_a = RegimeSwitchingModel::new(vec![vec![1.0]], vec![a]).unwrap();
        let one_b = RegimeSwitchingModel::new(vec![vec![1.0]], vec![b]).unwrap();
        let mut g2 = vec![1.0, 1.0];
        let (mut ga, mut gb) = (vec![1.0], vec![1.0]);
        for _ in 0..5 {
            g2 = rs_rho_gamma_step(two.moments(), &g2).unwrap().gamma;
            ga = rs_rho_gamma_step(one_a.moments(), &ga).unwrap().gamma;
            gb = rs_rho_gamma_step(one_b.moments(), &gb).unwrap().gamma;
        }
        assert_abs_diff_eq!(g2[0], ga[0], epsilon = 1e-14);
        assert_abs_diff_eq!(g2[1], gb[0], epsilon = 1e-14);
    }

    #[test]
    fn ab_examples() {
        let step = rs_rho_gamma_step(binomial_model().moments(), &[1.0]).unwrap();
        let (a, b) = rs_ab(&step, &[1.0], 0, 1.0).unwrap();
        assert_abs_diff_eq!(a[(0, 0)], 0.01, epsilon = 1e-15);
        assert_abs_diff_eq!(b[0], 2.0, epsilon = 1e-12);
        let (a3, b3) = rs_ab(&step, &[3.0], 0, 1.0).unwrap();
        assert_abs_diff_eq!(a3[(0, 0)], 9.0 * a[(0, 0)], epsilon = 1e-14);
        assert_abs_diff_eq!(b3[0], b[0] / 3.0, epsilon = 1e-14);
        assert!(matches!(rs_ab(&step, &[0.0], 0, 1.0), Err(HedgeError::InvalidState(_))));
    }

    #[test]
    fn ab_two_assets_diagonal() {
        // Independent components: four equiprobable atoms from two binomials.
        let mut atoms = Vec::new();
        for (y1, p1) in [(0.1, 0.6), (-0.1, 0.4)] {
            for (y2, p2) in [(0.2, 0.5), (-0.1, 0.5)] {
                atoms.push(DiscreteReturn { prob: p1 * p2, xi: vec![y1, y2] });
            }
        }
        let model = RegimeSwitchingModel::new(vec![vec![1.0]], vec![ReturnLaw::Discrete { atoms }]).unwrap();
        let (m, b) = (&model.moments().means[0], &model.moments().second[0]);
        // Non-diagonal second moment because of the means; the covariance is diagonal.
        let cov = b - m * m.transpose();
        assert_abs_diff_eq!(cov[(0, 1)], 0.0, epsilon = 1e-15);
        let step = rs_rho_gamma_step(model.moments(), &[1.0]).unwrap();
        let (a, bvec) = rs_ab(&step, &[1.0, 2.0], 0, 1.0).unwrap();
        assert_abs_diff_eq!(a[(0, 1)], 2.0 * b[(0, 1)], epsilon = 1e-15);
        assert_abs_diff_eq!(a[(1, 1)], 4.0 * b[(1, 1)], epsilon = 1e-15);
        assert_abs_diff_eq!(bvec[1], step.rho[0][1] / 2.0, epsilon = 1e-15);
    }

    #[test]
    fn value_alpha_binomial_call() {
        let model = binomial_model();
        let disc = model.discretize(0, 10).unwrap();
        let step = rs_rho_gamma_step(&disc.moments, &[1.0]).unwrap();
        let (c, a) = rs_value_alpha(&disc, &step, |s, _| (s[0] - 1.0).max(0.0), &[1.0], 0, (1.0, 1.0)).unwrap();
        assert_abs_diff_eq!(c, 0.05, epsilon = 1e-12);
        assert_abs_diff_eq!(a[0], 0.6, epsilon = 1e-12);
        let kernel = ScalarRegimeKernel::new(&disc, &step, 0);
        let (c1, a1) = kernel.value_alpha(1.0, (1.0, 1.0), |s, _| (s - 1.0).max(0.0));
        assert_abs_diff_eq!(c1, c, epsilon = 1e-14);
        assert_abs_diff_eq!(a1, a[0], epsilon = 1e-14);
    }

    #[test]
    fn value_alpha_constant_and_self_replication() {
        let model = RegimeSwitchingModel::new(
            vec![vec![0.7, 0.3], vec![0.2, 0.8]],
            vec![gaussian_discrete(0.03, 0.1), gaussian_discrete(-0.02, 0.2)],
        )
        .unwrap();
        let disc = model.discretize(0, 10).unwrap();
        let step = rs_rho_gamma_step(&disc.moments, &[0.9, 0.8]).unwrap();
        let kappa = 3.5;
        for i in 0..2 {
            let (c, a) = rs_value_alpha(&disc, &step, |_, _| kappa, &[2.0], i, (1.0, 1.0)).unwrap();
            assert_abs_diff_eq!(c, kappa, epsilon = 1e-12);
            let (_, b) = rs_ab(&step, &[2.0], i, 1.0).unwrap();
            assert_abs_diff_eq!(a[0], kappa * b[0], epsilon = 1e-12);
        }
        // Discounted: a constant cash amount at k is worth beta_k/beta_{k-1} of it at k-1.
        let (c, _) = rs_value_alpha(&disc, &step, |_, _| kappa, &[2.0], 0, (0.99, 0.98)).unwrap();
        assert_abs_diff_eq!(c, kappa * 0.98 / 0.99, epsilon = 1e-12);

        let mart = RegimeSwitchingModel::new(
            vec![vec![0.5, 0.5], vec![0.5, 0.5]],
            vec![gaussian_discrete(0.0, 0.1), gaussian_discrete(0.0, 0.3)],
        )
        .unwrap();
        let disc = mart.discretize(0, 10).unwrap();
        let step = rs_rho_gamma_step(&disc.moments, &[1.0, 1.0]).unwrap();
        let (c, a) = rs_value_alpha(&disc, &step, |s, _| s[0], &[1.7], 1, (1.0, 1.0)).unwrap();
        assert_abs_diff_eq!(c, 1.7, epsilon = 1e-12);
        assert_abs_diff_eq!(a[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn value_alpha_rejects_nan() {
        let model = binomial_model();
        let disc = model.discretize(0, 10).unwrap();
        let step = rs_rho_gamma_step(&disc.moments, &[1.0]).unwrap();
        let r = rs_value_alpha(&disc, &step, |_, _| f64::NAN, &[1.0], 0, (1.0, 1.0));
        assert!(r.is_err());
    }

    #[test]
    fn scale_equivariance() {
        let model = make_bs_model(10, 0.08, 0.2, 0.03, 1.0).unwrap();
        let disc = model.discretize(3, 2000).unwrap();
        let step = rs_rho_gamma_step(&disc.moments, &[1.0]).unwrap();
        let betas = (0.99, 0.98);
        let (c1, a1) = rs_value_alpha(&disc, &step, |s, _| (s[0] - 1.0).max(0.0), &[1.0], 0, betas).unwrap();
        let scale = 37.0;
        let (c2, a2) =
            rs_value_alpha(&disc, &step, |s, _| (s[0] - scale).max(0.0), &[scale], 0, betas).unwrap();
        assert_abs_diff_eq!(c2, scale * c1, epsilon = 1e-12 * scale);
        assert_abs_diff_eq!(a2[0], a1[0], epsilon = 1e-12);
    }

    #[test]
    fn transition_validation() {
        let bad = RegimeSwitchingModel::new(vec![vec![0.5]], vec![gaussian_discrete(0.0, 0.1)]);
        assert!(bad.is_err());
        let degenerate = RegimeSwitchingModel::new(
            vec![vec![1.0]],
            vec![ReturnLaw::Discrete {
                atoms: vec![
                    DiscreteReturn { prob: 0.5, xi: vec![0.1] },
                    DiscreteReturn { prob: 0.5, xi: vec![0.1] },
                ],
            }],
        );
        assert!(matches!(degenerate, Err(HedgeError::DegenerateModel(_))));
    }

    #[test]
    fn bs_and_vg_parameters() {
        let bs = make_bs_model(22, 0.09, 0.06, 0.05, 1.0).unwrap();
        match &bs.regimes()[0] {
            ReturnLaw::LogNormal { mean, cov, discount } => {
                assert_abs_diff_eq!(mean[0], 0.09 / 22.0, epsilon = 1e-18);
                assert_abs_diff_eq!(cov[0][0], 0.0036 / 22.0, epsilon = 1e-18);
                assert_abs_diff_eq!(*discount, 0.05 / 22.0, epsilon = 1e-18);
            }
            other => panic!("unexpected law {other:?}"),
        }
        let vg = make_vg_model(22, 0.09, 0.06, 0.05, 1.0).unwrap();
        match &vg.regimes()[0] {
            ReturnLaw::VarianceGamma { shape, scale, .. } => {
                assert_abs_diff_eq!(*scale, 0.042_426_406_871_192_85, epsilon = 1e-15);
                assert_abs_diff_eq!(*shape * 22.0, 1.0, epsilon = 1e-15);
            }
            other => panic!("unexpected law {other:?}"),
        }
        // Near-martingale when the drift equals the rate and the volatility is tiny.
        let near = make_bs_model(12, 0.05, 1e-6, 0.05, 1.0).unwrap();
        assert!(near.moments().means[0][0].abs() < 1e-10);
        assert!(make_bs_model(0, 0.1, 0.1, 0.0, 1.0).is_err());
    }
}
