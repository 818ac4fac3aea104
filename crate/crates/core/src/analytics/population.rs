//! Cohort-level (value, importance, risk) triples for one feature, used to
//! place a single patient's indicator against the population.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::AnalyticsError;
use crate::data::LabeledCohort;
use crate::model::{predict_trajectory, Checkpoint, ModelError};

pub const DEFAULT_SAMPLE_SIZE: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationTriple {
    pub patient_id: String,
    pub visit: usize,
    /// Measured value in original units.
    pub value: f64,
    pub importance: f64,
    /// Calibrated when the checkpoint carries a calibration.
    pub risk: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationSummary {
    pub feature: String,
    pub sample_size: usize,
    pub seed: u64,
    /// Sampled patients, sorted by id.
    pub patients: Vec<String>,
    pub triples: Vec<PopulationTriple>,
}

impl PopulationSummary {
    /// Columnar `value,importance,risk` CSV.
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["value", "importance", "risk"])?;
        for t in &self.triples {
            w.write_record([t.value.to_string(), t.importance.to_string(), t.risk.to_string()])?;
        }
        w.flush()
    }
}

/// Seeded patient sample: ids sorted, shuffled, first `n` kept, re-sorted.
pub fn sample_patients(cohort: &LabeledCohort, n: usize, seed: u64) -> Vec<String> {
    let mut ids: Vec<String> = cohort.records.iter().map(|r| r.record.patient_id.clone()).collect();
    ids.sort();
    if n < ids.len() {
        ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        ids.truncate(n);
        ids.sort();
    } else if n > ids.len() {
        log::warn!("population sample of {n} requested from {} patients; using all", ids.len());
    }
    ids
}

/// Triples over every labeled visit of a seeded patient sample where
/// `feature` was observed (not imputed).
pub fn population_aggregate(
    ckpt: &Checkpoint,
    cohort: &LabeledCohort,
    feature: &str,
    n: usize,
    seed: u64,
) -> Result<PopulationSummary, ModelError> {
    if n == 0 {
        return Err(AnalyticsError::Invalid("sample size must be positive".into()).into());
    }
    let channel = ckpt
        .schema
        .channel_index(feature)
        .ok_or_else(|| ModelError::Invalid(format!("unknown feature `{feature}`")))?;
    let patients = sample_patients(cohort, n, seed);
    let per_patient: Vec<Vec<PopulationTriple>> = patients
        .par_iter()
        .map(|id| {
            let tensor = ckpt.prepare(cohort, id)?;
            let a = predict_trajectory(&ckpt.params, &tensor, ckpt.calibration.as_ref())?;
            Ok(a.visits
                .iter()
                .filter(|v| v.label.is_some() && v.observed[channel])
                .map(|v| PopulationTriple {
                    patient_id: id.clone(),
                    visit: v.index,
                    value: v.values[channel],
                    importance: v.importance[channel],
                    risk: v.risk(),
                })
                .collect())
        })
        .collect::<Result<_, ModelError>>()?;
    Ok(PopulationSummary {
        feature: feature.to_string(),
        sample_size: patients.len(),
        seed,
        patients,
        triples: per_patient.into_iter().flatten().collect(),
    })
}
