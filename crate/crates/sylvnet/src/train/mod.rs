//! End-to-end training, evaluation and ablation for both model
//! instantiations.

mod ablation;
mod report;
mod trainer;

pub use ablation::{run_ablation, AblationReport, AblationVariant};
pub use report::{EpochRecord, RunReport};
pub use trainer::{evaluate_rmse, masked_rmse, predictions, train, DataBundle, TrainConfig};

use crate::data::DataError;
use crate::diff::DiffError;
use crate::model::ModelError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("evaluation mask is empty")]
    EmptyMask,
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
