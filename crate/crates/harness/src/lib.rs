//! Seeded drop generation, batch experiments and CSV output for the
//! cooperative satellite and cell-free uplink simulator.

pub mod config;
pub mod drop;
pub mod error;
pub mod experiments;
pub mod output;

pub use config::{ExperimentConfig, ExperimentKind, Profile, CONFIG_SCHEMA_VERSION};
pub use error::{HarnessError, Result};
pub use experiments::{run_experiment, AggregateResult};
