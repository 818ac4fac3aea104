use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::forward::{forward_logits, patient_loss, WeightVars};
use super::params::{ModelParams, TrainingMeta, Weights, WEIGHT_NAMES};
use super::ModelError;
use crate::analytics::auprc;
use crate::data::PatientTensor;
use crate::numeric::{clip_gradients, AdamConfig, AdamState, Tape};

pub const CLIP_NORM: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auprc: f64,
}

#[derive(Clone, Debug)]
pub struct TrainedModel {
    /// Weights from the epoch with the best validation AUPRC.
    pub params: ModelParams,
    pub log: Vec<EpochLog>,
}

/// Labeled logits of every visit in `split`, flattened in order.
pub fn labeled_logits(params: &ModelParams, split: &[PatientTensor]) -> Result<(Vec<f64>, Vec<u8>), ModelError> {
    let per_patient: Vec<Vec<(f64, u8)>> = split
        .par_iter()
        .map(|p| {
            let p = p.truncated_to_labels();
            if p.n_visits() == 0 {
                return Ok(Vec::new());
            }
            let logits = forward_logits(params, &p)?;
            Ok(logits
                .into_iter()
                .zip(&p.labels)
                .filter_map(|(z, l)| l.map(|y| (z, y)))
                .collect())
        })
        .collect::<Result<_, ModelError>>()?;
    Ok(per_patient.into_iter().flatten().unzip())
}

fn batch_gradients(
    params: &ModelParams,
    batch: &[&PatientTensor],
) -> Result<(f64, Vec<Vec<f64>>), ModelError> {
    let labeled: usize = batch.iter().map(|p| p.labels.iter().flatten().count()).sum();
    let visits: usize = batch.iter().map(|p| p.n_visits()).sum();
    let h = &params.hyper;
    let per_patient: Vec<(f64, Vec<Vec<f64>>)> = batch
        .par_iter()
        .map(|p| {
            let mut tape = Tape::new();
            let w = WeightVars::register(&mut tape, &params.weights, true);
            let loss = patient_loss(&mut tape, &w, h, p, labeled.max(1), visits.max(1))?;
            let value = tape.value(loss).data()[0];
            let grads = tape.backward(loss)?;
            let g = w
                .all
                .iter()
                .zip(params.weights.tensors())
                .map(|(v, t)| grads.raw(*v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
                .collect();
            Ok((value, g))
        })
        .collect::<Result<_, ModelError>>()?;

    // summed in batch order so the result does not depend on scheduling
    let mut total = 0.0;
    let mut sum: Vec<Vec<f64>> = params.weights.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
    for (value, g) in per_patient {
        total += value;
        for (acc, gi) in sum.iter_mut().zip(g) {
            for (a, b) in acc.iter_mut().zip(gi) {
                *a += b;
            }
        }
    }
    Ok((total, sum))
}

/// Mini-batch Adam with global-norm clipping and early stopping on
/// validation AUPRC.
///
/// `train` should already be oversampled; patients are cut after their
/// last labeled visit. `on_epoch` sees each log line as it is produced.
pub fn train(
    init: ModelParams,
    train: &[PatientTensor],
    val: &[PatientTensor],
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainedModel, ModelError> {
    init.check()?;
    let h = init.hyper.clone();
    let train: Vec<PatientTensor> = train
        .iter()
        .map(PatientTensor::truncated_to_labels)
        .filter(|p| p.n_visits() > 0)
        .collect();
    if train.is_empty() {
        return Err(ModelError::NoLabels);
    }
    let (_, val_labels) = labeled_logits(&init, val)?;
    if !val_labels.contains(&1) {
        return Err(ModelError::Data("validation split has no positive visit".into()));
    }

    let mut params = init;
    let mut tensors = params.weights.to_vec();
    let mut adam = AdamState::new(AdamConfig::with_lr(h.lr), WEIGHT_NAMES.iter().copied().zip(tensors.iter()));
    let mut rng = ChaCha8Rng::seed_from_u64(h.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut best: Option<(f64, usize, Weights)> = None;
    let mut since_best = 0;
    let mut log = Vec::new();
    for epoch in 1..=h.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for (b, chunk) in order.chunks(h.batch_size).enumerate() {
            let batch: Vec<&PatientTensor> = chunk.iter().map(|&i| &train[i]).collect();
            let (loss, mut grads) = batch_gradients(&params, &batch).map_err(|e| at(epoch, b, e))?;
            if !loss.is_finite() {
                return Err(ModelError::Diverged {
                    epoch,
                    batch: b,
                    detail: format!("loss {loss}"),
                });
            }
            clip_gradients(&mut grads, CLIP_NORM).map_err(|e| at(epoch, b, e.into()))?;
            adam.update(&mut tensors, &grads).map_err(|e| at(epoch, b, e.into()))?;
            params.weights = Weights::from_vec(tensors.clone())?;
            epoch_loss += loss;
            batches += 1;
        }

        let (scores, labels) = labeled_logits(&params, val)?;
        let val_auprc = auprc(&scores, &labels)?;
        let entry = EpochLog {
            epoch,
            train_loss: epoch_loss / batches as f64,
            val_auprc,
        };
        on_epoch(&entry);
        log.push(entry);

        if best.as_ref().is_none_or(|(b, _, _)| val_auprc > *b) {
            best = Some((val_auprc, epoch, params.weights.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= h.patience {
                break;
            }
        }
    }

    let (best_val_auprc, best_epoch, weights) = best.expect("at least one epoch ran");
    params.weights = weights;
    params.training = Some(TrainingMeta {
        epochs_run: log.len(),
        best_epoch,
        best_val_auprc,
    });
    Ok(TrainedModel { params, log })
}

fn at(epoch: usize, batch: usize, e: ModelError) -> ModelError {
    match e {
        ModelError::Numeric(n) => ModelError::Diverged {
            epoch,
            batch,
            detail: n.to_string(),
        },
        other => other,
    }
}
