//! Experiment configuration: one JSON document per experiment.

use std::path::{Path, PathBuf};

use qhedge::hedging::DiscountCurve;
use qhedge::models::{
    make_bs_model, make_vg_model, LatentValue, MarketModel, Measure, NgarchModel, NgarchParams, RegimeSwitchingModel,
    ReturnLaw,
};
use qhedge::numerics::Grid1D;
use qhedge::payoff::Payoff;
use qhedge::simulator::{garch_equivalent_vol, StrategyKind};
use qhedge::solver::SolverSpec;
use qhedge::{HedgeError, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const CONFIG_VERSION: u32 = 1;

/// Rates are annualized and the maturity is in years.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub model: ModelConfig,
    pub payoff: Payoff,
    pub solver: SolverConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleConfig>,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Initial price, shared by every asset.
    pub s0: f64,
    pub rate: f64,
    pub maturity: f64,
    pub dynamics: Dynamics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Dynamics {
    /// Gaussian log-returns; `mean` and `vol` refer to the horizon.
    BlackScholes { mean: f64, vol: f64 },
    /// Variance-gamma log-returns with a Laplace law at the horizon.
    VarianceGamma { mean: f64, vol: f64 },
    /// NGARCH(1,1) under the physical measure; `h0` defaults to the stationary variance.
    Ngarch {
        alpha0: f64,
        alpha1: f64,
        beta1: f64,
        lambda: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        h0: Option<f64>,
    },
    /// Returns are discounted one-period returns per regime.
    RegimeSwitching {
        transition: Vec<Vec<f64>>,
        regimes: Vec<ReturnLaw>,
        #[serde(default)]
        initial_regime: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub lo: f64,
    pub hi: f64,
    pub nodes: usize,
}

impl GridConfig {
    pub fn build(&self) -> Result<Grid1D> {
        Grid1D::uniform(self.lo, self.hi, self.nodes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub n_periods: usize,
    pub asset_grid: GridConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance_grid: Option<GridConfig>,
    pub quadrature_size: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub n_paths: usize,
    pub seed: u64,
    pub strategies: Vec<StrategyKind>,
}

/// Tree sizes for the brute-force comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    pub n_periods: usize,
    pub atoms_per_regime: usize,
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| HedgeError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HedgeError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json_str(&text).map_err(|e| match e {
            HedgeError::Config(m) => HedgeError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HedgeError::Config(m));
        if self.version != CONFIG_VERSION {
            return bad(format!("unsupported version {}, expected {CONFIG_VERSION}", self.version));
        }
        let m = &self.model;
        if !(m.s0 > 0.0 && m.maturity > 0.0 && m.rate.is_finite()) {
            return bad("model needs s0 > 0, maturity > 0 and a finite rate".into());
        }
        let s = &self.solver;
        if s.n_periods == 0 || s.quadrature_size == 0 {
            return bad("solver needs n_periods >= 1 and quadrature_size >= 1".into());
        }
        s.asset_grid.build().map_err(|e| HedgeError::Config(format!("asset_grid: {e}")))?;
        if let Some(g) = &s.variance_grid {
            g.build().map_err(|e| HedgeError::Config(format!("variance_grid: {e}")))?;
        }
        let garch = matches!(m.dynamics, Dynamics::Ngarch { .. });
        if garch && s.variance_grid.is_none() {
            return bad("ngarch models need solver.variance_grid".into());
        }
        if let Some(sim) = &self.simulation {
            if sim.n_paths < 10 {
                return bad("simulation needs at least 10 paths".into());
            }
            if sim.strategies.is_empty() {
                return bad("simulation lists no strategies".into());
            }
            if sim.strategies.contains(&StrategyKind::DuanDelta) && !garch {
                return bad("duan_delta applies to ngarch models only".into());
            }
            if sim.strategies.contains(&StrategyKind::BsDelta) && self.reference_vol()?.is_none() {
                return bad("bs_delta needs a black_scholes, variance_gamma or ngarch model".into());
            }
        }
        self.market_model()?;
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.model.maturity / self.solver.n_periods as f64
    }

    pub fn discount(&self) -> Result<DiscountCurve> {
        DiscountCurve::new(self.model.rate, self.dt(), self.solver.n_periods)
    }

    pub fn solver_spec(&self) -> Result<SolverSpec> {
        Ok(SolverSpec {
            asset_grid: self.solver.asset_grid.build()?,
            variance_grid: self.solver.variance_grid.map(|g| g.build()).transpose()?,
            n_periods: self.solver.n_periods,
            quadrature_size: self.solver.quadrature_size,
            seed: self.solver.seed,
        })
    }

    fn ngarch(&self, n_periods: usize) -> Result<Option<NgarchModel>> {
        let Dynamics::Ngarch { alpha0, alpha1, beta1, lambda, h0 } = self.model.dynamics else {
            return Ok(None);
        };
        let r = self.model.rate * self.model.maturity / n_periods as f64;
        let model = NgarchModel::new(NgarchParams { alpha0, alpha1, beta1, lambda, r }, Measure::Physical)?;
        Ok(Some(match h0 {
            Some(h) => model.with_h0(h)?,
            None => model,
        }))
    }

    pub fn ngarch_model(&self) -> Result<Option<NgarchModel>> {
        self.ngarch(self.solver.n_periods)
    }

    /// Regime-switching form of the model with `n_periods` periods over the maturity.
    pub fn regime_model(&self, n_periods: usize) -> Result<Option<(RegimeSwitchingModel, usize)>> {
        let m = &self.model;
        Ok(match &m.dynamics {
            Dynamics::BlackScholes { mean, vol } => {
                Some((make_bs_model(n_periods, *mean, *vol, m.rate, m.maturity)?, 0))
            }
            Dynamics::VarianceGamma { mean, vol } => {
                Some((make_vg_model(n_periods, *mean, *vol, m.rate, m.maturity)?, 0))
            }
            Dynamics::RegimeSwitching { transition, regimes, initial_regime } => {
                let model = RegimeSwitchingModel::new(transition.clone(), regimes.clone())?;
                if *initial_regime >= model.n_regimes() {
                    return Err(HedgeError::Config(format!("initial_regime {initial_regime} out of range")));
                }
                Some((model, *initial_regime))
            }
            Dynamics::Ngarch { .. } => None,
        })
    }

    pub fn market_model(&self) -> Result<MarketModel> {
        if let Some(model) = self.ngarch_model()? {
            return Ok(MarketModel::Ngarch(model));
        }
        let (model, initial_regime) = self.regime_model(self.solver.n_periods)?.expect("non-GARCH family");
        Ok(MarketModel::RegimeSwitching { model, initial_regime })
    }

    pub fn n_assets(&self) -> Result<usize> {
        Ok(self.market_model()?.dim())
    }

    pub fn initial_prices(&self) -> Result<Vec<f64>> {
        Ok(vec![self.model.s0; self.n_assets()?])
    }

    pub fn initial_latent(&self) -> Result<LatentValue> {
        Ok(match self.market_model()? {
            MarketModel::Ngarch(m) => LatentValue::Variance(m.h0),
            MarketModel::RegimeSwitching { initial_regime, .. } => LatentValue::Regime(initial_regime),
        })
    }

    /// Annualized volatility of the lognormal reference used for delta hedging.
    pub fn reference_vol(&self) -> Result<Option<f64>> {
        Ok(match &self.model.dynamics {
            Dynamics::BlackScholes { vol, .. } | Dynamics::VarianceGamma { vol, .. } => {
                Some(*vol / self.model.maturity.sqrt())
            }
            Dynamics::Ngarch { .. } => self.ngarch_model()?.map(|m| garch_equivalent_vol(&m, self.dt())),
            Dynamics::RegimeSwitching { .. } => None,
        })
    }

    /// SHA-256 over the model, payoff and solver blocks.
    pub fn config_hash(&self) -> Result<String> {
        let bytes = serde_json::to_vec(&(&self.model, &self.payoff, &self.solver))?;
        Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
    }
}
