//! Delayed evolutionary dynamics under the Smith protocol with online
//! revision-rate tuning.

pub mod analysis;
pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod games;
pub mod output;
pub mod revision;
pub mod tuner;

pub use error::{Error, Result};
pub use experiment::{run_experiment, ExperimentConfig, ResolvedExperiment, RunOutcome};
pub use games::{Game, GameSpec, PopulationState};
