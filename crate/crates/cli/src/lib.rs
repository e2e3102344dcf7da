//! Configuration, orchestration and result files for UEP code experiments.

pub mod compare;
pub mod config;
pub mod output;
pub mod pipeline;

pub use compare::{compare_frontiers, DominanceReport};
pub use config::{load_config, parse_config, ExperimentConfig, Mode};
pub use output::{emit_csv, parse_csv, ResultRow};
pub use pipeline::{execute, run, RunOptions, RunOutput};
