use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qhedge_cli::{cmd_hedge, cmd_oracle_check, cmd_solve, exit_code, ExperimentConfig, STATS_FILE};

/// Number of worker threads; defaults to all cores.
const WORKERS_ENV: &str = "QHEDGE_WORKERS";

#[derive(Parser)]
#[command(name = "qhedge", version, about = "Variance-optimal hedging experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the policy tables and write C_0 / phi_1 profiles.
    Solve {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to the config's output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Hedge simulated paths with every configured strategy.
    Hedge {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        tables: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the recursion with the brute-force solver on a small tree.
    OracleCheck {
        #[arg(long)]
        config: PathBuf,
    },
}

fn init_workers() -> Result<(), String> {
    let Ok(raw) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| format!("{WORKERS_ENV} must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn run(cli: Cli) -> qhedge::Result<i32> {
    match cli.command {
        Command::Solve { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = out.unwrap_or_else(|| cfg.output_dir.clone());
            let s = cmd_solve(&cfg, &out)?;
            println!("tables: {}", s.policy_path.display());
            println!("C_0({}) = {:.6}", cfg.model.s0, s.c0);
            println!("phi_1({}) = {:.6}", cfg.model.s0, s.phi1);
            Ok(0)
        }
        Command::Hedge { config, tables, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = out.unwrap_or_else(|| cfg.output_dir.clone());
            let outcome = cmd_hedge(&cfg, &tables, &out)?;
            print!("{}", qhedge_cli::stats_csv(&outcome.comparison));
            println!("written to {}", out.join(STATS_FILE).display());
            Ok(0)
        }
        Command::OracleCheck { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let check = cmd_oracle_check(&cfg)?;
            let r = &check.report;
            println!("nodes: {}", r.n_nodes);
            println!("V_0 recursion = {:.12}, oracle = {:.12}", r.v0_recursion, r.v0_oracle);
            println!("mse recursion = {:.6e}, oracle = {:.6e}", r.mse_recursion, r.mse_oracle);
            println!("max deviation (V_0, phi) = {:.3e}", r.max_deviation);
            println!(
                "normal equations: |E[G]| = {:.3e}, max |E[G Delta | node]| = {:.3e}",
                check.residuals.mean_error.abs(),
                check.residuals.max_conditional
            );
            let passed = check.passed();
            println!("{}", if passed { "PASS" } else { "FAIL" });
            Ok(if passed { 0 } else { 2 })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_workers() {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
