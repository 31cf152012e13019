//! Configuration-driven orchestration of the arm matrix.

pub mod cli;
pub mod config;
pub mod experiment;
pub mod metrics;

pub use cli::cli;
pub use config::{canonical_arms, ArmConfig, EvalConfig, ExperimentConfig, PolicyConfig, PoolConfig, VqaSource, HELDOUT_BASE};
pub use experiment::{run_arm, run_experiment, ArmOutcome, Summary, Workbench};
pub use metrics::{read_metrics, MetricsLog, MetricsRecord};
