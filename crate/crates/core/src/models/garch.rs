//! GARCH-type dynamics `xi_k = pi1(h_{k-1}, eps_k)`, `h_k = pi2(h_{k-1}, eps_k)`
//! and the NGARCH(1,1) specialization.

use serde::{Deserialize, Serialize};

use crate::error::{HedgeError, Result};
use crate::numerics::QuadratureDraws;

/// One-asset GARCH-type dynamics driven by i.i.d. innovations.
pub trait GarchDynamics: Sync {
    /// Discounted one-period return `pi1(h, eps)`.
    fn excess_return(&self, h: f64, eps: f64) -> f64;
    /// Next conditional variance `pi2(h, eps)`.
    fn next_variance(&self, h: f64, eps: f64) -> f64;
}

/// Dynamics given by two closures, mostly for tests.
pub struct FnGarch<F, G> {
    pub pi1: F,
    pub pi2: G,
}

impl<F, G> GarchDynamics for FnGarch<F, G>
where
    F: Fn(f64, f64) -> f64 + Sync,
    G: Fn(f64, f64) -> f64 + Sync,
{
    fn excess_return(&self, h: f64, eps: f64) -> f64 {
        (self.pi1)(h, eps)
    }
    fn next_variance(&self, h: f64, eps: f64) -> f64 {
        (self.pi2)(h, eps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    Physical,
    /// Duan's risk-neutral measure: the innovation is recentred by `lambda`.
    Emm,
}

/// NGARCH(1,1) parameters; `r` is the per-period risk-free rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NgarchParams {
    pub alpha0: f64,
    pub alpha1: f64,
    pub beta1: f64,
    pub lambda: f64,
    pub r: f64,
}

impl NgarchParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha0 > 0.0
            && self.alpha1 >= 0.0
            && self.beta1 >= 0.0
            && self.alpha1 + self.beta1 < 1.0
            && self.lambda.is_finite()
            && self.r.is_finite();
        if ok {
            Ok(())
        } else {
            Err(HedgeError::InvalidArgument(format!(
                "NGARCH parameters need alpha0 > 0, alpha1, beta1 >= 0, alpha1 + beta1 < 1: {self:?}"
            )))
        }
    }

    /// Fixed point of the variance recursion, `alpha0 / (1 - alpha1 - beta1)`.
    pub fn stationary_variance(&self) -> f64 {
        self.alpha0 / (1.0 - self.alpha1 - self.beta1)
    }
}

/// One step of the NGARCH recursion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NgarchStep {
    /// Undiscounted log-return `log(S_k / S_{k-1})`.
    pub log_return: f64,
    pub h_next: f64,
}

/// `log(S_k/S_{k-1}) = r + lambda sqrt(h) - h/2 + sqrt(h) eps` and
/// `h' = alpha0 + alpha1 h eps^2 + beta1 h` under the physical measure;
/// `log(S_k/S_{k-1}) = r - h/2 + sqrt(h) eps` and
/// `h' = alpha0 + alpha1 h (eps - lambda)^2 + beta1 h` under the EMM.
pub fn ngarch_transition(params: &NgarchParams, h: f64, eps: f64, measure: Measure) -> Result<NgarchStep> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(HedgeError::InvalidState(format!("variance must be positive, got {h}")));
    }
    Ok(ngarch_step_unchecked(params, h, eps, measure))
}

#[inline]
fn ngarch_step_unchecked(p: &NgarchParams, h: f64, eps: f64, measure: Measure) -> NgarchStep {
    let sd = h.sqrt();
    match measure {
        Measure::Physical => NgarchStep {
            log_return: p.r + p.lambda * sd - 0.5 * h + sd * eps,
            h_next: p.alpha0 + p.alpha1 * h * eps * eps + p.beta1 * h,
        },
        Measure::Emm => {
            let shifted = eps - p.lambda;
            NgarchStep {
                log_return: p.r - 0.5 * h + sd * eps,
                h_next: p.alpha0 + p.alpha1 * h * shifted * shifted + p.beta1 * h,
            }
        }
    }
}

/// NGARCH model under a given measure with standard normal innovations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NgarchModel {
    pub params: NgarchParams,
    pub measure: Measure,
    /// Initial conditional variance `h_0`.
    pub h0: f64,
}

impl NgarchModel {
    /// Starts from the stationary variance.
    pub fn new(params: NgarchParams, measure: Measure) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params,
            measure,
            h0: params.stationary_variance(),
        })
    }

    pub fn with_h0(mut self, h0: f64) -> Result<Self> {
        if !(h0 > 0.0) {
            return Err(HedgeError::InvalidArgument(format!("h0 must be positive, got {h0}")));
        }
        self.h0 = h0;
        Ok(self)
    }

    pub fn under(self, measure: Measure) -> Self {
        Self { measure, ..self }
    }

    pub fn step(&self, h: f64, eps: f64) -> NgarchStep {
        ngarch_step_unchecked(&self.params, h, eps, self.measure)
    }

    /// Conditional variances implied by a realized price path, starting from `h0`.
    /// Assumes the path was generated under this model's measure.
    pub fn filter_variances(&self, prices: &[f64]) -> Vec<f64> {
        let p = &self.params;
        let mut h = Vec::with_capacity(prices.len());
        h.push(self.h0);
        for w in prices.windows(2) {
            let hk = *h.last().unwrap();
            let sd = hk.sqrt();
            let lr = (w[1] / w[0]).ln();
            let drift = match self.measure {
                Measure::Physical => p.r + p.lambda * sd - 0.5 * hk,
                Measure::Emm => p.r - 0.5 * hk,
            };
            let eps = (lr - drift) / sd;
            h.push(self.step(hk, eps).h_next);
        }
        h
    }
}

impl GarchDynamics for NgarchModel {
    #[inline]
    fn excess_return(&self, h: f64, eps: f64) -> f64 {
        (self.step(h, eps).log_return - self.params.r).exp() - 1.0
    }

    #[inline]
    fn next_variance(&self, h: f64, eps: f64) -> f64 {
        self.step(h, eps).h_next
    }
}

/// `B_k(h)`, `m_k(h)` and `gamma_k(h)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GarchMoments {
    pub second: f64,
    pub mean: f64,
    pub gamma: f64,
}

/// Per-variance-node quadrature with everything that does not depend on `s`.
#[derive(Debug, Clone)]
pub struct GarchNodeKernel {
    /// Quadrature weight of each innovation.
    weights: Vec<f64>,
    /// `pi1(h, eps)`.
    xi: Vec<f64>,
    /// `pi2(h, eps)`.
    h_next: Vec<f64>,
    /// `w gamma_{k+1}(pi2)`.
    gamma_weights: Vec<f64>,
    moments: GarchMoments,
}

impl GarchNodeKernel {
    pub fn new(
        model: &impl GarchDynamics,
        h: f64,
        gamma_next: impl Fn(f64) -> f64,
        quadrature: &QuadratureDraws,
    ) -> Result<Self> {
        if quadrature.dim() != 1 {
            return Err(HedgeError::InvalidArgument("GARCH innovations are scalar".into()));
        }
        if !(h > 0.0) {
            return Err(HedgeError::InvalidState(format!("variance must be positive, got {h}")));
        }
        let m = quadrature.len();
        let mut xi = Vec::with_capacity(m);
        let mut h_next = Vec::with_capacity(m);
        let mut gamma_weights = Vec::with_capacity(m);
        let (mut second, mut mean, mut mass) = (0.0, 0.0, 0.0);
        for (w, e) in quadrature.iter() {
            let x = model.excess_return(h, e[0]);
            let hn = model.next_variance(h, e[0]);
            let gw = w * gamma_next(hn);
            second += gw * x * x;
            mean += gw * x;
            mass += gw;
            xi.push(x);
            h_next.push(hn);
            gamma_weights.push(gw);
        }
        if !(second > 0.0) || !second.is_finite() {
            return Err(HedgeError::DegenerateModel(format!(
                "second moment B = {second:e} at h = {h:e}"
            )));
        }
        let gamma = mass - mean * mean / second;
        if !(gamma > 0.0 && gamma <= 1.0 + 1e-12) {
            return Err(HedgeError::GammaOutOfRange {
                context: format!("h = {h:e}"),
                gamma,
            });
        }
        Ok(Self {
            weights: quadrature.weights().to_vec(),
            xi,
            h_next,
            gamma_weights,
            moments: GarchMoments { second, mean, gamma: gamma.min(1.0) },
        })
    }

    pub fn moments(&self) -> GarchMoments {
        self.moments
    }

    pub fn h_next(&self) -> &[f64] {
        &self.h_next
    }

    /// `b_k(s, h) = m_k / (s beta_{k-1} B_k)`.
    pub fn b(&self, s: f64, beta_prev: f64) -> f64 {
        self.moments.mean / (s * beta_prev * self.moments.second)
    }

    /// `C_{k-1}(s, h)` and `alpha_k(s, h)`; `c_next(atom, s')` evaluates `C_k`
    /// at the atom's next state, and `period_factor = beta_k / beta_{k-1}`.
    #[inline]
    pub fn value_alpha(&self, s: f64, period_factor: f64, c_next: impl Fn(usize, f64) -> f64) -> (f64, f64) {
        let GarchMoments { second, mean, gamma } = self.moments;
        let slope = mean / second;
        let base = s / period_factor;
        let mut acc_c = 0.0;
        let mut acc_a = 0.0;
        for (i, (&x, &gw)) in self.xi.iter().zip(&self.gamma_weights).enumerate() {
            let c = gw * c_next(i, base * (1.0 + x));
            acc_c += c * (1.0 - slope * x);
            acc_a += c * x;
        }
        (period_factor * acc_c / gamma, period_factor * acc_a / (s * second))
    }

    /// Plain discounted expectation `beta_1 E[C_k(s', h')]` without the hedging weights.
    #[inline]
    pub fn expectation(&self, s: f64, period_factor: f64, c_next: impl Fn(usize, f64) -> f64) -> f64 {
        let base = s / period_factor;
        let acc: f64 = self
            .xi
            .iter()
            .zip(&self.weights)
            .enumerate()
            .map(|(i, (&x, &w))| w * c_next(i, base * (1.0 + x)))
            .sum();
        period_factor * acc
    }
}

/// `B_k(h)`, `m_k(h)` and `gamma_k(h)` by quadrature.
pub fn garch_step_coeffs(
    model: &impl GarchDynamics,
    h: f64,
    gamma_next: impl Fn(f64) -> f64,
    quadrature: &QuadratureDraws,
) -> Result<GarchMoments> {
    Ok(GarchNodeKernel::new(model, h, gamma_next, quadrature)?.moments())
}

/// `C_{k-1}(s, h)` and `alpha_k(s, h)`; `c_next(s', h')` is the period-`k` value.
pub fn garch_value_alpha(
    model: &impl GarchDynamics,
    c_next: impl Fn(f64, f64) -> f64,
    s: f64,
    h: f64,
    period_factor: f64,
    gamma_next: impl Fn(f64) -> f64,
    quadrature: &QuadratureDraws,
) -> Result<(f64, f64)> {
    if !(s > 0.0) {
        return Err(HedgeError::InvalidState(format!("asset price must be positive, got {s}")));
    }
    let kernel = GarchNodeKernel::new(model, h, gamma_next, quadrature)?;
    let h_next = kernel.h_next();
    let (c, a) = kernel.value_alpha(s, period_factor, |i, sn| c_next(sn, h_next[i]));
    if !c.is_finite() || !a.is_finite() {
        return Err(HedgeError::InvalidState(format!("non-finite value at s = {s}, h = {h:e}")));
    }
    Ok((c, a))
}
