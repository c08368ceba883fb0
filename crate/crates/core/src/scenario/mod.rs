//! TOML-driven scenarios: configuration, single runs and parameter sweeps.

pub mod config;
pub mod run;
pub mod sweep;

pub use config::{
    load_config, parse_config, CostSpec, DomainSpec, ScenarioConfig, SolverChoice, Tolerances,
};
pub use run::{run_scenario, solve_scenario, Metadata, ScenarioOutcome, Status};
pub use sweep::{run_sweep, sweep, table_csv, SweepParam, SweepRow};
