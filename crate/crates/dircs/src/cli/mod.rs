//! Experiment driver: config parsing and the subcommand implementations
//! behind the `dircs` binary.

pub mod commands;
pub mod config;

pub use commands::{cmd_check, cmd_gen, cmd_node, cmd_run, cmd_serve, cmd_sweep, cmd_tune};
pub use config::{load_config, load_plan, ExperimentPlan, SweepKind};
