use serde::{Deserialize, Serialize};

/// Terminal payoff `C = C(S_n)` in cash units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payoff {
    Call { strike: f64 },
    Put { strike: f64 },
    /// The first asset itself.
    Forward,
    Constant { value: f64 },
    /// Call on a weighted sum of the assets.
    BasketCall { strike: f64, weights: Vec<f64> },
}

impl Payoff {
    pub fn eval(&self, s: &[f64]) -> f64 {
        match self {
            Payoff::BasketCall { strike, weights } => {
                let basket: f64 = weights.iter().zip(s).map(|(w, x)| w * x).sum();
                (basket - strike).max(0.0)
            }
            _ => self.eval_scalar(s[0]),
        }
    }

    /// Payoff as a function of the first asset only.
    #[inline]
    pub fn eval_scalar(&self, s: f64) -> f64 {
        match self {
            Payoff::Call { strike } => (s - strike).max(0.0),
            Payoff::Put { strike } => (strike - s).max(0.0),
            Payoff::Forward => s,
            Payoff::Constant { value } => *value,
            Payoff::BasketCall { strike, weights } => (weights[0] * s - strike).max(0.0),
        }
    }

    pub fn strike(&self) -> Option<f64> {
        match self {
            Payoff::Call { strike } | Payoff::Put { strike } | Payoff::BasketCall { strike, .. } => {
                Some(*strike)
            }
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn payoffs() {
        assert_eq!(Payoff::Call { strike: 100.0 }.eval_scalar(103.0), 3.0);
        assert_eq!(Payoff::Call { strike: 100.0 }.eval_scalar(97.0), 0.0);
        assert_eq!(Payoff::Put { strike: 100.0 }.eval_scalar(97.0), 3.0);
        assert_eq!(Payoff::Forward.eval(&[4.0, 1.0]), 4.0);
        assert_eq!(Payoff::Constant { value: 2.5 }.eval_scalar(1e9), 2.5);
        let basket = Payoff::BasketCall { strike: 1.0, weights: vec![0.5, 0.5] };
        assert!((basket.eval(&[1.2, 1.0]) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn serde_shape() {
        let p: Payoff = serde_json::from_str(r#"{"kind":"call","strike":100.0}"#).unwrap();
        assert_eq!(p, Payoff::Call { strike: 100.0 });
    }
}
