//! Twin-experiment driver, result output and self-checks behind the CLI.

pub mod config;
pub mod experiment;
pub mod output;
pub mod selftest;

pub use self::config::{
    ExperimentConfig, FilterSpec, LorenzSetup, ModelConfig, ObservationTemplate, SamplerChoice, ShallowWaterSetup,
};
pub use self::experiment::{
    generate_truth_and_data, init_lorenz_ensemble, init_shallow_water_ensemble, rmse, run_twin_experiment,
    shallow_water_background, ExperimentRecord,
};
pub use self::output::{emit_results, metadata, rmse_table, summary_text, OutputPaths};
