//! Experiment runner: TOML configs, dataset generation, training sweeps over
//! seeds, patching, evaluation and report tables, plus the model file format.

pub mod commands;
pub mod config;
pub mod error;
pub mod model_file;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
pub use model_file::{load_model, save_model, ModelProvenance, MAGIC};
