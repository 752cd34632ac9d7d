//! Experiment orchestration behind the `qhedge` command: solving policy
//! tables, hedging simulated paths and checking the recursion on trees.

pub mod config;

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use qhedge::hedging::DiscountCurve;
use qhedge::models::MarketModel;
use qhedge::oracle::{
    build_tree_from_rs, discounted_payoffs, gamma_submartingale_violation, martingale_residuals,
    normal_equation_residuals, recursion_vs_oracle, tree_recursion_targets, MartingaleResiduals, NormalResiduals,
    OracleReport,
};
use qhedge::simulator::{
    bs_call_price, bs_delta, compare_strategies, duan_delta_tables, sampled_optimality, BsParams, Comparison,
    DeltaTables, SampledOptimality, Strategy, StrategyKind,
};
use qhedge::solver::{policy_lookup, solve_garch, solve_rs, PolicyTables};
use qhedge::{HedgeError, Result};

pub use config::ExperimentConfig;

pub const POLICY_FILE: &str = "policy.qhpt";
pub const STATS_FILE: &str = "hedging_stats.csv";

/// Tolerance for `oracle-check`.
pub const ORACLE_TOLERANCE: f64 = 1e-9;

/// Solves the configured model and stamps the tables with the config hash.
pub fn solve_tables(cfg: &ExperimentConfig) -> Result<PolicyTables> {
    let spec = cfg.solver_spec()?;
    let discount = cfg.discount()?;
    let mut tables = match cfg.market_model()? {
        MarketModel::Ngarch(model) => solve_garch(&model, &cfg.payoff, &spec, &discount)?,
        MarketModel::RegimeSwitching { model, .. } => solve_rs(&model, &cfg.payoff, &spec, &discount)?,
    };
    tables.meta.model_hash = cfg.config_hash()?;
    Ok(tables)
}

pub fn write_tables(tables: &PolicyTables, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    tables.write_to(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_tables(path: &Path) -> Result<PolicyTables> {
    PolicyTables::read_from(BufReader::new(File::open(path)?))
}

/// `C_0(s0)` and `phi_1(s0)` at the initial latent state.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveSummary {
    pub policy_path: PathBuf,
    pub c0: f64,
    pub phi1: f64,
}

fn fmt_row(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

/// Writes the policy file and the `C_0` and `phi_1` profiles over the asset grid.
pub fn cmd_solve(cfg: &ExperimentConfig, out_dir: &Path) -> Result<SolveSummary> {
    let tables = solve_tables(cfg)?;
    fs::create_dir_all(out_dir)?;
    let policy_path = out_dir.join(POLICY_FILE);
    write_tables(&tables, &policy_path)?;

    let latent = cfg.initial_latent()?;
    let reference = cfg.reference_vol()?;
    let strike = cfg.payoff.strike();
    let closed_form = |s: f64| match (reference, strike) {
        (Some(vol), Some(k)) => Some((
            bs_call_price(s, k, vol, cfg.model.rate, cfg.model.maturity),
            bs_delta(s, k, vol, cfg.model.rate, cfg.model.maturity),
        )),
        _ => None,
    };
    let mut c0_csv = String::from("s,c0");
    let mut phi_csv = String::from("s,phi1");
    if reference.is_some() && strike.is_some() {
        c0_csv.push_str(",bs_price");
        phi_csv.push_str(",bs_delta");
    }
    c0_csv.push('\n');
    phi_csv.push('\n');
    for &s in tables.asset_grid.nodes() {
        let c0 = tables.value_at(0, s, latent)?;
        let phi = policy_lookup(&tables, 1, s, latent, c0)?.phi;
        match closed_form(s) {
            Some((p, d)) => {
                writeln!(c0_csv, "{}", fmt_row(&[s, c0, p])).expect("string write");
                writeln!(phi_csv, "{}", fmt_row(&[s, phi, d])).expect("string write");
            }
            None => {
                writeln!(c0_csv, "{}", fmt_row(&[s, c0])).expect("string write");
                writeln!(phi_csv, "{}", fmt_row(&[s, phi])).expect("string write");
            }
        }
    }
    fs::write(out_dir.join("c0_profile.csv"), c0_csv)?;
    fs::write(out_dir.join("phi1_profile.csv"), phi_csv)?;

    let s0 = cfg.model.s0;
    let c0 = tables.value_at(0, s0, latent)?;
    let phi1 = policy_lookup(&tables, 1, s0, latent, c0)?.phi;
    Ok(SolveSummary { policy_path, c0, phi1 })
}

/// Everything the configured strategies need, built once and reused across seeds.
pub struct StrategySet {
    pub tables: PolicyTables,
    pub duan: Option<DeltaTables>,
    pub bs: Option<BsParams>,
    pub kinds: Vec<StrategyKind>,
}

impl StrategySet {
    /// Checks the tables against the config hash and prepares the other strategies.
    pub fn prepare(cfg: &ExperimentConfig, tables: PolicyTables) -> Result<Self> {
        let expected = cfg.config_hash()?;
        if tables.meta.model_hash != expected {
            return Err(HedgeError::StaleTables { expected, found: tables.meta.model_hash.clone() });
        }
        let sim = cfg
            .simulation
            .as_ref()
            .ok_or_else(|| HedgeError::Config("hedging needs a simulation block".into()))?;
        let kinds = sim.strategies.clone();
        let duan = if kinds.contains(&StrategyKind::DuanDelta) {
            let model = cfg.ngarch_model()?.expect("validated ngarch model");
            Some(duan_delta_tables(&model, &cfg.payoff, &cfg.solver_spec()?, &cfg.discount()?)?)
        } else {
            None
        };
        let bs = if kinds.contains(&StrategyKind::BsDelta) {
            let strike = cfg
                .payoff
                .strike()
                .ok_or_else(|| HedgeError::Config("bs_delta needs a payoff with a strike".into()))?;
            let vol = cfg.reference_vol()?.expect("validated reference volatility");
            Some(BsParams { strike, vol, rate: cfg.model.rate, maturity: cfg.model.maturity })
        } else {
            None
        };
        Ok(Self { tables, duan, bs, kinds })
    }

    pub fn strategies(&self) -> Vec<Strategy<'_>> {
        self.kinds
            .iter()
            .map(|k| match k {
                StrategyKind::Optimal => Strategy::Optimal(&self.tables),
                StrategyKind::BsDelta => Strategy::BsDelta(self.bs.expect("prepared")),
                StrategyKind::DuanDelta => Strategy::DuanDelta(self.duan.as_ref().expect("prepared")),
            })
            .collect()
    }

    /// Paired comparison on `n_paths` paths simulated with `seed`.
    pub fn run(&self, cfg: &ExperimentConfig, n_paths: usize, seed: u64) -> Result<Comparison> {
        compare_strategies(
            &cfg.market_model()?,
            &self.strategies(),
            &cfg.payoff,
            &cfg.initial_prices()?,
            &cfg.discount()?,
            n_paths,
            seed,
        )
    }
}

/// Outcome of `hedge`: the comparison and, when the optimal strategy ran,
/// its sampled first-order conditions.
pub struct HedgeOutcome {
    pub comparison: Comparison,
    pub optimality: Option<SampledOptimality>,
}

pub fn hedge_with_tables(cfg: &ExperimentConfig, tables: PolicyTables) -> Result<HedgeOutcome> {
    let set = StrategySet::prepare(cfg, tables)?;
    let sim = cfg.simulation.as_ref().expect("checked by prepare");
    let comparison = set.run(cfg, sim.n_paths, sim.seed)?;
    let optimality = comparison
        .report(StrategyKind::Optimal)
        .map(|r| sampled_optimality(&r.errors, &comparison.increments))
        .transpose()?;
    Ok(HedgeOutcome { comparison, optimality })
}

pub fn stats_csv(comparison: &Comparison) -> String {
    let mut out = String::from("Stats");
    for r in &comparison.reports {
        out.push(',');
        out.push_str(r.kind.label());
    }
    out.push('\n');
    let rows: Vec<_> = comparison.reports.iter().map(|r| r.stats.rows()).collect();
    for i in 0..10 {
        out.push_str(rows.first().map_or("", |r| r[i].0));
        for r in &rows {
            write!(out, ",{}", r[i].1).expect("string write");
        }
        out.push('\n');
    }
    out
}

fn strategy_slug(kind: StrategyKind) -> &'static str {
    match kind {
        StrategyKind::Optimal => "optimal",
        StrategyKind::BsDelta => "bs_delta",
        StrategyKind::DuanDelta => "duan_delta",
    }
}

/// Writes the statistics table, one density file per strategy and the
/// sampled optimality conditions.
pub fn cmd_hedge(cfg: &ExperimentConfig, tables_path: &Path, out_dir: &Path) -> Result<HedgeOutcome> {
    let tables = read_tables(tables_path)?;
    let outcome = hedge_with_tables(cfg, tables)?;
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join(STATS_FILE), stats_csv(&outcome.comparison))?;
    for r in &outcome.comparison.reports {
        let mut csv = String::from("x,density\n");
        for (x, d) in r.density.grid.iter().zip(&r.density.values) {
            writeln!(csv, "{x},{d}").expect("string write");
        }
        fs::write(out_dir.join(format!("density_{}.csv", strategy_slug(r.kind))), csv)?;
    }
    if let Some(opt) = &outcome.optimality {
        let mut csv = String::from("moment,mean,std_error\n");
        writeln!(csv, "G,{},{}", opt.error.mean, opt.error.std_error).expect("string write");
        for (k, m) in opt.per_period.iter().enumerate() {
            writeln!(csv, "G*Delta_{},{},{}", k + 1, m.mean, m.std_error).expect("string write");
        }
        fs::write(out_dir.join("optimality.csv"), csv)?;
    }
    Ok(outcome)
}

/// Result of comparing the recursion with the brute-force solver on a tree.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleCheck {
    pub report: OracleReport,
    pub residuals: NormalResiduals,
    pub martingale: MartingaleResiduals,
    pub gamma_violation: f64,
}

impl OracleCheck {
    pub fn passed(&self) -> bool {
        self.report.max_deviation < ORACLE_TOLERANCE
            && self.residuals.mean_error.abs() < ORACLE_TOLERANCE
            && self.residuals.max_conditional < ORACLE_TOLERANCE
    }
}

/// Builds the tree described by the oracle block and compares both solvers.
pub fn cmd_oracle_check(cfg: &ExperimentConfig) -> Result<OracleCheck> {
    let oc = cfg
        .oracle
        .as_ref()
        .ok_or_else(|| HedgeError::Config("oracle-check needs an oracle block".into()))?;
    let (model, initial) = cfg
        .regime_model(oc.n_periods)?
        .ok_or_else(|| HedgeError::Config("oracle-check needs a regime-switching type model".into()))?;
    let s0 = vec![cfg.model.s0; model.dim()];
    let tree = build_tree_from_rs(&model, oc.n_periods, &s0, initial, oc.atoms_per_regime, oc.seed)?;
    let discount = DiscountCurve::new(cfg.model.rate, cfg.model.maturity / oc.n_periods as f64, oc.n_periods)?;
    let report = recursion_vs_oracle(&tree, &cfg.payoff, &discount)?;
    let targets = discounted_payoffs(&tree, &cfg.payoff, &discount)?;
    let rec = tree_recursion_targets(&tree, &targets)?;
    let residuals = normal_equation_residuals(&tree, &targets, rec.v0(), &rec.phi);
    Ok(OracleCheck {
        report,
        residuals,
        martingale: martingale_residuals(&tree, &rec),
        gamma_violation: gamma_submartingale_violation(&tree, &rec),
    })
}

/// Process exit code for an error: 1 for invalid input, 2 for numerical failures.
pub fn exit_code(err: &HedgeError) -> i32 {
    if err.is_numerical() {
        2
    } else {
        1
    }
}
