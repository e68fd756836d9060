//! Experiment orchestration: configuration, the replication loop, result
//! aggregation, and the command-line interface.

pub mod cli;
pub mod config;
pub mod runner;
pub mod summary;

use thiserror::Error;

pub use config::{
    load_config_file, ConfigFile, ExperimentSettings, InferenceSelection, PopulationMode,
    PopulationSource, ResolvedExperiment,
};
pub use runner::{run_experiment, write_artifacts, RunArtifacts};
pub use summary::{summarize_results, summary_to_csv, SummaryRow};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] crate::io::IoError),
    #[error("population generation: {0}")]
    Popgen(#[from] crate::popgen::PopgenError),
    #[error("sampling: {0}")]
    Sampling(#[from] crate::sampler::SampleError),
    #[error("weights: {0}")]
    Weights(#[from] crate::weights::WeightError),
    #[error("estimation: {0}")]
    Estimation(#[from] crate::design_est::EstError),
    #[error("model fit: {0}")]
    Fit(#[from] crate::model_est::FitError),
    #[error("summary: {0}")]
    Summary(String),
    #[error("worker pool: {0}")]
    Pool(String),
}
