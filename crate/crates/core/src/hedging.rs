//! Model-agnostic backward recursion for the variance-optimal hedge, portfolio
//! accounting and the martingale diagnostics attached to it.
//!
//! All quantities here live in discounted units: increments are
//! `beta_k S_k - beta_{k-1} S_{k-1}` and portfolio values are discounted.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{HedgeError, Result};
use crate::numerics::SpdMatrix;

/// Per-period, per-state coefficients of the recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct StepCoefficients {
    /// `E[Delta Delta^T gamma_{k+1} | F_{k-1}]`.
    pub a: DMatrix<f64>,
    /// `E[Delta gamma_{k+1} | F_{k-1}]`.
    pub mu: DVector<f64>,
    /// `A^{-1} mu`.
    pub b: DVector<f64>,
    pub gamma: f64,
}

/// Discount factors `beta_k = exp(-rate * k * dt)` for `k = 0..=n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscountCurve {
    rate: f64,
    dt: f64,
    beta: Vec<f64>,
}

impl DiscountCurve {
    pub fn new(rate: f64, dt: f64, n_periods: usize) -> Result<Self> {
        if !rate.is_finite() || !(dt > 0.0) || !dt.is_finite() {
            return Err(HedgeError::InvalidArgument(format!(
                "discount curve needs finite rate and positive dt (rate={rate}, dt={dt})"
            )));
        }
        let beta = (0..=n_periods).map(|k| (-rate * k as f64 * dt).exp()).collect();
        Ok(Self { rate, dt, beta })
    }

    /// A flat curve, `beta_k = 1`.
    pub fn flat(n_periods: usize) -> Self {
        Self {
            rate: 0.0,
            dt: 1.0,
            beta: vec![1.0; n_periods + 1],
        }
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_periods(&self) -> usize {
        self.beta.len() - 1
    }

    pub fn beta(&self, k: usize) -> f64 {
        self.beta[k]
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    /// One-period discount factor `beta_k / beta_{k-1}`.
    pub fn period_factor(&self) -> f64 {
        (-self.rate * self.dt).exp()
    }
}

/// One branch of an explicit conditional law of the increment.
#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub prob: f64,
    pub delta: DVector<f64>,
    pub next_state: usize,
}

/// Explicit conditional distribution of `Delta_k` given `F_{k-1}` as weighted atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteStep {
    atoms: Vec<Atom>,
}

impl DiscreteStep {
    pub fn new(atoms: Vec<Atom>) -> Result<Self> {
        let Some(first) = atoms.first() else {
            return Err(HedgeError::InvalidArgument("discrete step needs at least one atom".into()));
        };
        let d = first.delta.len();
        if d == 0 || atoms.iter().any(|a| a.delta.len() != d) {
            return Err(HedgeError::InvalidArgument("atoms must share a positive dimension".into()));
        }
        if atoms.iter().any(|a| !(a.prob > 0.0) || a.delta.iter().any(|v| !v.is_finite())) {
            return Err(HedgeError::InvalidArgument(
                "atom probabilities must be positive and increments finite".into(),
            ));
        }
        let total: f64 = atoms.iter().map(|a| a.prob).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(HedgeError::InvalidArgument(format!(
                "atom probabilities sum to {total}, expected 1"
            )));
        }
        Ok(Self { atoms })
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn dim(&self) -> usize {
        self.atoms[0].delta.len()
    }
}

/// Output of one backward step at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSolution {
    pub coeffs: StepCoefficients,
    /// Option value `C_{k-1}` in cash units of period `k-1`.
    pub c_prev: f64,
    pub alpha: DVector<f64>,
}

/// One backward step of the recursion on an explicit discrete law.
///
/// `gamma_next` and `c_next` are indexed by each atom's `next_state`;
/// `c_next` holds cash values `C_k`, and `betas = (beta_{k-1}, beta_k)`.
pub fn step_backward_discrete(
    step: &DiscreteStep,
    gamma_next: &[f64],
    c_next: &[f64],
    betas: (f64, f64),
) -> Result<StepSolution> {
    let (beta_prev, beta_next) = betas;
    let d = step.dim();
    let mut a = DMatrix::zeros(d, d);
    let mut mu = DVector::zeros(d);
    let mut payoff_moment = DVector::zeros(d);
    let mut mass = 0.0;
    for atom in step.atoms() {
        let g = *gamma_next.get(atom.next_state).ok_or_else(|| {
            HedgeError::InvalidArgument(format!("no gamma for next state {}", atom.next_state))
        })?;
        let c = *c_next.get(atom.next_state).ok_or_else(|| {
            HedgeError::InvalidArgument(format!("no value for next state {}", atom.next_state))
        })?;
        let w = atom.prob * g;
        a.ger(w, &atom.delta, &atom.delta, 1.0);
        mu.axpy(w, &atom.delta, 1.0);
        payoff_moment.axpy(w * beta_next * c, &atom.delta, 1.0);
        mass += w;
    }
    let factor = SpdMatrix::new(a.clone())?;
    let b = factor.solve(&mu);
    let gamma = mass - b.dot(&mu);
    if !(gamma > 0.0 && gamma <= 1.0 + 1e-12) {
        return Err(HedgeError::GammaOutOfRange {
            context: "discrete step".into(),
            gamma,
        });
    }
    let alpha = factor.solve(&payoff_moment);
    let mut weighted = 0.0;
    for atom in step.atoms() {
        let g = gamma_next[atom.next_state];
        let c = c_next[atom.next_state];
        weighted += atom.prob * g * beta_next * c * (1.0 - b.dot(&atom.delta));
    }
    let c_prev = weighted / (gamma * beta_prev);
    Ok(StepSolution {
        coeffs: StepCoefficients { a, mu, b, gamma },
        c_prev,
        alpha,
    })
}

/// `V_0 = E[beta_n C P_1] / gamma_1`.
pub fn initial_capital(expectation_cp1: f64, gamma_1: f64) -> Result<f64> {
    if !(gamma_1 > 0.0 && gamma_1 <= 1.0) {
        return Err(HedgeError::GammaOutOfRange {
            context: "initial capital".into(),
            gamma: gamma_1,
        });
    }
    Ok(expectation_cp1 / gamma_1)
}

/// Optimal position `phi_k = alpha_k - V_{k-1} b_k`.
pub fn hedge_ratio(alpha: &[f64], b: &[f64], v_prev: f64) -> Vec<f64> {
    alpha.iter().zip(b).map(|(a, bb)| a - v_prev * bb).collect()
}

/// Self-financing update `V_k = V_{k-1} + phi^T Delta`.
pub fn accrue_portfolio(v_prev: f64, phi: &[f64], delta: &[f64]) -> f64 {
    v_prev + phi.iter().zip(delta).map(|(p, d)| p * d).sum::<f64>()
}

/// Portfolio trajectory of one hedged path.
#[derive(Debug, Clone, PartialEq)]
pub struct HedgeRun {
    /// Discounted portfolio values `V_0..V_n`.
    pub values: Vec<f64>,
    /// Positions `phi_1..phi_n`.
    pub positions: Vec<Vec<f64>>,
    /// Discounted increments `Delta_1..Delta_n`.
    pub increments: Vec<Vec<f64>>,
    /// Terminal error `beta_n C - V_n`.
    pub error: f64,
}

impl HedgeRun {
    /// Builds a run by applying `position(k, v_prev)` at each period.
    pub fn accumulate(
        v0: f64,
        increments: Vec<Vec<f64>>,
        discounted_payoff: f64,
        mut position: impl FnMut(usize, f64) -> Vec<f64>,
    ) -> Self {
        let mut values = Vec::with_capacity(increments.len() + 1);
        let mut positions = Vec::with_capacity(increments.len());
        values.push(v0);
        let mut v = v0;
        for (k, delta) in increments.iter().enumerate() {
            let phi = position(k + 1, v);
            v = accrue_portfolio(v, &phi, delta);
            values.push(v);
            positions.push(phi);
        }
        Self {
            values,
            positions,
            increments,
            error: discounted_payoff - v,
        }
    }
}

/// Path realizations of `U_k`, `Z_k` and `P_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleDiagnostics {
    /// `U_1..U_n`.
    pub u: Vec<f64>,
    /// `Z_0..Z_n` with `Z_0 = 1`.
    pub z: Vec<f64>,
    /// `P_1..P_{n+1}` with `P_{n+1} = 1`.
    pub p: Vec<f64>,
}

/// Diagnostics along one path.
///
/// `gammas[k - 1]` is `gamma_k` evaluated at the path's state at `k - 1`, for
/// `k = 1..=n+1`; the last entry is `gamma_{n+1} = 1`.
pub fn diagnostics_along_path(
    b: &[Vec<f64>],
    deltas: &[Vec<f64>],
    gammas: &[f64],
) -> Result<MartingaleDiagnostics> {
    let n = b.len();
    if deltas.len() != n || gammas.len() != n + 1 {
        return Err(HedgeError::InvalidArgument(format!(
            "inconsistent path lengths: {} b, {} increments, {} gammas",
            n,
            deltas.len(),
            gammas.len()
        )));
    }
    let factors: Vec<f64> = b
        .iter()
        .zip(deltas)
        .map(|(bk, dk)| 1.0 - bk.iter().zip(dk).map(|(x, y)| x * y).sum::<f64>())
        .collect();
    let mut p = vec![1.0; n + 1];
    for k in (0..n).rev() {
        p[k] = p[k + 1] * factors[k];
    }
    let u: Vec<f64> = (0..n).map(|k| factors[k] * gammas[k + 1] / gammas[k]).collect();
    let mut z = Vec::with_capacity(n + 1);
    z.push(1.0);
    for uk in &u {
        let last = *z.last().unwrap();
        z.push(last * uk);
    }
    Ok(MartingaleDiagnostics { u, z, p })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn binomial() -> DiscreteStep {
        DiscreteStep::new(vec![
            Atom { prob: 0.6, delta: DVector::from_element(1, 0.1), next_state: 0 },
            Atom { prob: 0.4, delta: DVector::from_element(1, -0.1), next_state: 1 },
        ])
        .unwrap()
    }

    #[test]
    fn binomial_step_matches_hand_solution() {
        let sol = step_backward_discrete(&binomial(), &[1.0, 1.0], &[0.1, 0.0], (1.0, 1.0)).unwrap();
        assert_abs_diff_eq!(sol.coeffs.b[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.coeffs.gamma, 0.96, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.c_prev, 0.05, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.alpha[0], 0.6, epsilon = 1e-12);
        let phi = hedge_ratio(sol.alpha.as_slice(), sol.coeffs.b.as_slice(), sol.c_prev);
        assert_abs_diff_eq!(phi[0], 0.5, epsilon = 1e-12);
        // Both branches replicate.
        assert_abs_diff_eq!(accrue_portfolio(0.05, &phi, &[0.1]), 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(accrue_portfolio(0.05, &phi, &[-0.1]), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn martingale_step_has_zero_b() {
        let step = DiscreteStep::new(vec![
            Atom { prob: 0.25, delta: DVector::from_element(1, 0.3), next_state: 0 },
            Atom { prob: 0.5, delta: DVector::from_element(1, 0.0), next_state: 1 },
            Atom { prob: 0.25, delta: DVector::from_element(1, -0.3), next_state: 2 },
        ])
        .unwrap();
        let gn = [0.9, 0.9, 0.9];
        let c = [3.0, 1.0, 0.5];
        let sol = step_backward_discrete(&step, &gn, &c, (1.0, 1.0)).unwrap();
        assert_abs_diff_eq!(sol.coeffs.b[0], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(sol.coeffs.gamma, 0.9, epsilon = 1e-14);
        assert_abs_diff_eq!(sol.c_prev, 0.25 * 3.0 + 0.5 + 0.125, epsilon = 1e-14);
    }

    #[test]
    fn symmetric_step() {
        let u = 0.07;
        let step = DiscreteStep::new(vec![
            Atom { prob: 0.5, delta: DVector::from_element(1, u), next_state: 0 },
            Atom { prob: 0.5, delta: DVector::from_element(1, -u), next_state: 0 },
        ])
        .unwrap();
        let sol = step_backward_discrete(&step, &[1.0], &[2.0], (1.0, 1.0)).unwrap();
        assert_abs_diff_eq!(sol.coeffs.a[(0, 0)], u * u, epsilon = 1e-15);
        assert_abs_diff_eq!(sol.coeffs.mu[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(sol.coeffs.gamma, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn singular_step_is_degenerate() {
        let step = DiscreteStep::new(vec![
            Atom { prob: 0.5, delta: DVector::from_vec(vec![0.1, 0.2]), next_state: 0 },
            Atom { prob: 0.5, delta: DVector::from_vec(vec![-0.1, -0.2]), next_state: 0 },
        ])
        .unwrap();
        let err = step_backward_discrete(&step, &[1.0], &[1.0], (1.0, 1.0)).unwrap_err();
        assert!(matches!(err, HedgeError::DegenerateModel(_)));
    }

    #[test]
    fn discrete_step_validation() {
        assert!(DiscreteStep::new(vec![]).is_err());
        let bad = DiscreteStep::new(vec![Atom {
            prob: 0.9,
            delta: DVector::from_element(1, 0.1),
            next_state: 0,
        }]);
        assert!(bad.is_err());
    }

    #[test]
    fn initial_capital_examples() {
        assert_abs_diff_eq!(initial_capital(0.048, 0.96).unwrap(), 0.05, epsilon = 1e-15);
        assert_eq!(initial_capital(0.0, 0.3).unwrap(), 0.0);
        assert_eq!(initial_capital(1.7, 1.0).unwrap(), 1.7);
        assert!(matches!(initial_capital(1.0, 0.0), Err(HedgeError::GammaOutOfRange { .. })));
        assert!(initial_capital(1.0, 1.5).is_err());
    }

    #[test]
    fn hedge_ratio_examples() {
        assert_abs_diff_eq!(hedge_ratio(&[0.6], &[2.0], 0.05)[0], 0.5, epsilon = 1e-15);
        assert_eq!(hedge_ratio(&[0.3, -1.0], &[0.0, 0.0], 12.0), vec![0.3, -1.0]);
        assert_eq!(hedge_ratio(&[0.0], &[4.0], 0.0), vec![0.0]);
    }

    #[test]
    fn accrue_examples() {
        assert_eq!(accrue_portfolio(2.0, &[0.7], &[0.0]), 2.0);
        assert_eq!(accrue_portfolio(0.0, &[0.0, 0.0], &[0.4, 1.0]), 0.0);
    }

    #[test]
    fn diagnostics_martingale_and_binomial() {
        let d = diagnostics_along_path(&[vec![0.0], vec![0.0]], &[vec![0.1], vec![-0.2]], &[1.0, 1.0, 1.0])
            .unwrap();
        assert!(d.p.iter().chain(&d.u).chain(&d.z).all(|&x| x == 1.0));

        let d = diagnostics_along_path(&[vec![2.0]], &[vec![0.1]], &[0.96, 1.0]).unwrap();
        assert_abs_diff_eq!(d.p[0], 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(d.u[0], 0.8 / 0.96, epsilon = 1e-15);
        assert_abs_diff_eq!(d.z[1], 0.8 / 0.96, epsilon = 1e-15);
        assert!(diagnostics_along_path(&[vec![2.0]], &[vec![0.1]], &[0.96]).is_err());
    }

    #[test]
    fn discount_curve() {
        let c = DiscountCurve::new(0.05, 1.0 / 22.0, 22).unwrap();
        assert_eq!(c.beta(0), 1.0);
        assert_abs_diff_eq!(c.beta(22), (-0.05f64).exp(), epsilon = 1e-15);
        assert!(c.betas().windows(2).all(|w| w[1] <= w[0] && w[1] > 0.0));
    }

    #[test]
    fn self_financing_is_exact() {
        let run = HedgeRun::accumulate(1.0, vec![vec![0.3], vec![-0.1], vec![0.25]], 1.2, |k, v| {
            vec![0.1 * k as f64 - 0.5 * v]
        });
        for k in 1..run.values.len() {
            let expected = accrue_portfolio(run.values[k - 1], &run.positions[k - 1], &run.increments[k - 1]);
            assert_eq!(run.values[k], expected);
        }
        assert_eq!(run.error, 1.2 - run.values[3]);
    }

    proptest! {
        // Weights stay in (0, 1] and the normal equations hold for random nonsingular steps.
        #[test]
        fn random_steps_satisfy_weight_bounds(
            raw in proptest::collection::vec((0.05..1.0f64, -0.5..0.5f64, -0.5..0.5f64, 0.05..1.0f64, -2.0..2.0f64), 3..7)
        ) {
            let total: f64 = raw.iter().map(|r| r.0).sum();
            let atoms: Vec<Atom> = raw.iter().enumerate().map(|(i, r)| Atom {
                prob: r.0 / total,
                delta: DVector::from_vec(vec![r.1, r.2]),
                next_state: i,
            }).collect();
            let renorm: f64 = atoms.iter().map(|a| a.prob).sum();
            prop_assume!((renorm - 1.0).abs() <= 1e-12);
            let step = DiscreteStep::new(atoms).unwrap();
            let g: Vec<f64> = raw.iter().map(|r| r.3).collect();
            let c: Vec<f64> = raw.iter().map(|r| r.4).collect();
            match step_backward_discrete(&step, &g, &c, (1.0, 0.99)) {
                Ok(sol) => {
                    prop_assert!(sol.coeffs.gamma > 0.0 && sol.coeffs.gamma <= 1.0);
                    let resid = &sol.coeffs.a * &sol.coeffs.b - &sol.coeffs.mu;
                    prop_assert!(resid.amax() < 1e-10);
                }
                Err(HedgeError::DegenerateModel(_)) => {}
                Err(e) => prop_assert!(false, "unexpected error {e}"),
            }
        }
    }
}
