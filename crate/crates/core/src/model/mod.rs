//! Per-feature GRU channels, channel self-attention, terminal attention
//! importance, and the training loop.

mod checkpoint;
mod forward;
mod params;
mod predict;
mod train;

pub use checkpoint::{Checkpoint, CheckpointMeta, MAGIC, VERSION};
pub use forward::{forward, forward_logits, loss, time_gap_feature, PerVisitOutputs};
pub use params::{init_model, ModelHyper, ModelParams, TrainingMeta, Weights, CHANNEL_INPUT, WEIGHT_NAMES};
pub use predict::{predict_trajectory, rank_features, RankedFeature, RiskAssessment, VisitAssessment};
pub use train::{labeled_logits, train, EpochLog, TrainedModel, CLIP_NORM};

use thiserror::Error;

use crate::analytics::AnalyticsError;
use crate::data::DataError;
use crate::numeric::{NumericError, Tape, Tensor, Var};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid hyperparameters: {0}")]
    Hyper(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("no labeled visits")]
    NoLabels,
    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    Diverged { epoch: usize, batch: usize, detail: String },
    #[error("schema mismatch: model expects {expected}, data has {found}")]
    SchemaMismatch { expected: String, found: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Data(String),
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
}

impl From<DataError> for ModelError {
    fn from(e: DataError) -> Self {
        ModelError::Data(e.to_string())
    }
}

/// The training loss of `patients` treated as one batch, built on `tape`
/// over weight leaves `vars`. Exposed for gradient checking.
pub fn batch_loss_on_tape(
    tape: &mut Tape,
    vars: &[Var],
    hyper: &ModelHyper,
    patients: &[crate::data::PatientTensor],
) -> Result<Var, ModelError> {
    let labeled: usize = patients.iter().map(|p| p.labels.iter().flatten().count()).sum();
    if labeled == 0 {
        return Err(ModelError::NoLabels);
    }
    let visits: usize = patients.iter().map(|p| p.n_visits()).sum();
    let w = forward::WeightVars::from_vars(vars.to_vec());
    let mut total: Option<Var> = None;
    for p in patients {
        let l = forward::patient_loss(tape, &w, hyper, p, labeled, visits)?;
        total = Some(match total {
            Some(t) => tape.add(t, l)?,
            None => l,
        });
    }
    Ok(total.expect("non-empty batch"))
}

/// Weight tensors in `WEIGHT_NAMES` order, for gradient checking.
pub fn weight_tensors(params: &ModelParams) -> Vec<Tensor> {
    params.weights.to_vec()
}
