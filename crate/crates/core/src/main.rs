#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use stationary_mfg::analytic;
use stationary_mfg::cost::validate_assumptions;
use stationary_mfg::scenario::{load_config, run_scenario, run_sweep, ScenarioConfig, SweepParam};
use stationary_mfg::Error;

#[derive(Parser)]
#[command(
    name = "smfg",
    version,
    about = "Stationary BRS and MFG equilibria on a bounded interval"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario file and sample the cost assumptions.
    Validate { config: PathBuf },
    /// Solve a scenario and write its output files.
    Solve { config: PathBuf },
    /// Re-run a scenario over a list of parameter values.
    Sweep {
        config: PathBuf,
        /// beta, sigma2 or m_max
        #[arg(long)]
        param: String,
        /// Comma-separated values, e.g. 0.1,1,10
        #[arg(long, value_delimiter = ',', num_args = 1.., allow_negative_numbers = true)]
        values: Vec<f64>,
    },
    /// Print the closed-form whole-line solutions for h = βx² + log m.
    Oracle {
        #[arg(allow_negative_numbers = true)]
        beta: f64,
        #[arg(allow_negative_numbers = true)]
        sigma2: f64,
    },
}

fn exit_code(e: &Error) -> ExitCode {
    match e {
        Error::Config(_) => ExitCode::from(2),
        Error::Solver { .. } | Error::Contract(_) => ExitCode::from(3),
        Error::Io(_) | Error::Serialize(_) => ExitCode::from(1),
    }
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).unwrap_or_default());
}

fn validate(cfg: &ScenarioConfig) -> Result<(), Error> {
    let g = cfg.grid()?;
    let c = cfg.cost_model()?;
    let uniform = 1.0 / g.measure();
    let m_hi = if c.m_sup().is_finite() {
        uniform + (c.m_sup() - uniform) * (1.0 - 1e-9)
    } else {
        1e4 * uniform
    };
    let report = validate_assumptions(&c, &g, 1e-4 * uniform, m_hi, 64)?;
    print_json(&json!({
        "config": cfg,
        "cost": c.description(),
        "assumptions": report,
    }));
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Validate { config } => validate(&load_config(config)?),
        Command::Solve { config } => {
            let cfg = load_config(config)?;
            let out = run_scenario(&cfg)?;
            print_json(&json!({
                "files": out.files,
                "metrics": out.metrics,
                "warnings": out.metadata.warnings,
            }));
            Ok(())
        }
        Command::Sweep {
            config,
            param,
            values,
        } => {
            let cfg = load_config(config)?;
            let param: SweepParam = param.parse()?;
            let (rows, path) = run_sweep(&cfg, param, &values)?;
            print_json(&json!({ "table": path, "rows": rows }));
            if rows.iter().all(|r| r.error.is_some()) {
                return Err(Error::Solver {
                    stage: "sweep",
                    reason: "every row failed".into(),
                    residual: f64::NAN,
                    iterations: rows.len(),
                });
            }
            Ok(())
        }
        Command::Oracle { beta, sigma2 } => {
            if !(sigma2 >= 0.0) {
                return Err(Error::Config(format!(
                    "sigma2 must be non-negative (got {sigma2})"
                )));
            }
            let mfg = analytic::mfg_quadratic(beta, sigma2.sqrt())?;
            print_json(&json!({
                "beta": beta,
                "sigma2": sigma2,
                "mfg": mfg,
                "brs_variance": analytic::brs_quadratic(beta, sigma2.sqrt()).ok(),
                "ratio": analytic::variance_ratio(beta, sigma2).ok(),
                "limits": analytic::ratio_limits(beta, sigma2),
                "barrier": analytic::barrier_asymptotics(beta, sigma2).ok(),
            }));
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
