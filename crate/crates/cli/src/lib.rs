//! Batch driver for segmented latent editing: config parsing, fixtures,
//! run manifests, output files and run comparison.

pub mod compare;
pub mod config;
pub mod error;
pub mod manifest;
pub mod run;

pub use compare::{compare_runs, Comparison, MetricRow};
pub use config::{
    parse_config, parse_config_str, FixtureKind, InputSpec, ModelSpec, Overrides, PromptSpec,
    RunConfig,
};
pub use error::{CliError, Result};
pub use manifest::RunManifest;
pub use run::{run_experiment, RunOutputs};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
