//! Concrete market models and path simulation.

pub mod garch;
pub mod regime;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub use garch::{
    garch_step_coeffs, garch_value_alpha, ngarch_transition, FnGarch, GarchDynamics, GarchMoments,
    GarchNodeKernel, Measure, NgarchModel, NgarchParams, NgarchStep,
};
pub use regime::{
    make_bs_model, make_vg_model, rs_ab, rs_rho_gamma_step, rs_value_alpha, DiscreteReturn,
    DiscretizedRegimes, RegimeMoments, RegimeStep, RegimeSwitchingModel, ReturnLaw,
};

use crate::error::{HedgeError, Result};
use crate::hedging::DiscountCurve;

/// A model able to generate price paths, with the latent state needed to hedge.
#[derive(Debug, Clone, PartialEq)]
pub enum MarketModel {
    RegimeSwitching {
        model: RegimeSwitchingModel,
        initial_regime: usize,
    },
    Ngarch(NgarchModel),
}

impl MarketModel {
    pub fn dim(&self) -> usize {
        match self {
            MarketModel::RegimeSwitching { model, .. } => model.dim(),
            MarketModel::Ngarch(_) => 1,
        }
    }

    /// Simulates `n` periods from `s0`.
    pub fn sample_path<R: Rng + ?Sized>(
        &self,
        n: usize,
        s0: &[f64],
        discount: &DiscountCurve,
        rng: &mut R,
    ) -> Result<SimulatedPath> {
        if s0.len() != self.dim() || s0.iter().any(|x| !(*x > 0.0)) {
            return Err(HedgeError::InvalidArgument(format!(
                "initial prices must be positive with dimension {}",
                self.dim()
            )));
        }
        if discount.n_periods() < n {
            return Err(HedgeError::InvalidArgument("discount curve shorter than the path".into()));
        }
        let mut prices = Vec::with_capacity(n + 1);
        let mut xi = Vec::with_capacity(n);
        prices.push(s0.to_vec());
        let latent = match self {
            MarketModel::RegimeSwitching { model, initial_regime } => {
                if *initial_regime >= model.n_regimes() {
                    return Err(HedgeError::InvalidArgument(format!(
                        "initial regime {initial_regime} out of range"
                    )));
                }
                let mut regimes = Vec::with_capacity(n + 1);
                regimes.push(*initial_regime);
                for k in 1..=n {
                    let row = &model.transition()[regimes[k - 1]];
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    let mut next = row.len() - 1;
                    for (j, q) in row.iter().enumerate() {
                        acc += q;
                        if u < acc && *q > 0.0 {
                            next = j;
                            break;
                        }
                    }
                    regimes.push(next);
                    let y = model.regimes()[next].sample(rng);
                    let growth = discount.beta(k - 1) / discount.beta(k);
                    let s: Vec<f64> = prices[k - 1].iter().zip(&y).map(|(s, y)| s * (1.0 + y) * growth).collect();
                    prices.push(s);
                    xi.push(y);
                }
                Latent::Regimes(regimes)
            }
            MarketModel::Ngarch(model) => {
                let mut h = Vec::with_capacity(n + 1);
                h.push(model.h0);
                for k in 1..=n {
                    let eps: f64 = StandardNormal.sample(rng);
                    let y = model.excess_return(h[k - 1], eps);
                    h.push(model.next_variance(h[k - 1], eps));
                    let growth = discount.beta(k - 1) / discount.beta(k);
                    prices.push(vec![prices[k - 1][0] * (1.0 + y) * growth]);
                    xi.push(vec![y]);
                }
                Latent::Variances(h)
            }
        };
        Ok(SimulatedPath { prices, latent, xi })
    }
}

/// Hidden state along a path.
#[derive(Debug, Clone, PartialEq)]
pub enum Latent {
    Regimes(Vec<usize>),
    Variances(Vec<f64>),
}

/// Cash prices `S_0..S_n`, latent states and discounted returns `xi_1..xi_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedPath {
    pub prices: Vec<Vec<f64>>,
    pub latent: Latent,
    pub xi: Vec<Vec<f64>>,
}

impl SimulatedPath {
    pub fn n_periods(&self) -> usize {
        self.xi.len()
    }

    /// Discounted increments `Delta_k = beta_k S_k - beta_{k-1} S_{k-1}`.
    pub fn increments(&self, discount: &DiscountCurve) -> Vec<Vec<f64>> {
        (1..self.prices.len())
            .map(|k| {
                self.prices[k]
                    .iter()
                    .zip(&self.prices[k - 1])
                    .map(|(s, sp)| discount.beta(k) * s - discount.beta(k - 1) * sp)
                    .collect()
            })
            .collect()
    }

    /// Latent coordinate at period `k`: regime index or variance.
    pub fn latent_at(&self, k: usize) -> LatentValue {
        match &self.latent {
            Latent::Regimes(r) => LatentValue::Regime(r[k]),
            Latent::Variances(h) => LatentValue::Variance(h[k]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LatentValue {
    Regime(usize),
    Variance(f64),
}
