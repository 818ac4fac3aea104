use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cohort::PatientRecord;
use super::labels::{LabeledCohort, LabeledRecord};
use super::schema::FeatureSchema;
use super::DataError;

/// Imputation and normalization statistics from one training split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub fold: Option<usize>,
    pub dynamic_medians: Vec<f64>,
    pub dynamic_means: Vec<f64>,
    pub dynamic_stds: Vec<f64>,
    pub static_medians: Vec<f64>,
    pub static_means: Vec<f64>,
    pub static_stds: Vec<f64>,
    /// Features with no observed training value; their median is 0.
    pub never_observed: Vec<String>,
}

/// Model-ready view of one patient. `values` are z-scored; `filled` keeps
/// the imputed series in original units and `observed` the original mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientTensor {
    pub patient_id: String,
    pub times: Vec<f64>,
    pub n_dynamic: usize,
    /// `[visits, n_dynamic]`, row-major.
    pub values: Vec<f64>,
    pub filled: Vec<f64>,
    pub observed: Vec<bool>,
    pub static_values: Vec<f64>,
    pub static_filled: Vec<f64>,
    pub static_observed: Vec<bool>,
    pub labels: Vec<Option<u8>>,
    /// Set on copies made by oversampling.
    pub duplicate: bool,
}

impl PatientTensor {
    pub fn n_visits(&self) -> usize {
        self.times.len()
    }

    pub fn patient_label(&self) -> u8 {
        self.labels.iter().flatten().copied().max().unwrap_or(0)
    }

    /// Copy restricted to the first `len` visits.
    pub fn prefix(&self, len: usize) -> PatientTensor {
        let len = len.min(self.n_visits());
        let d = self.n_dynamic;
        PatientTensor {
            times: self.times[..len].to_vec(),
            values: self.values[..len * d].to_vec(),
            filled: self.filled[..len * d].to_vec(),
            observed: self.observed[..len * d].to_vec(),
            labels: self.labels[..len].to_vec(),
            ..self.clone()
        }
    }

    /// Copy cut after the last labeled visit; unlabeled trailing visits
    /// never influence a labeled output.
    pub fn truncated_to_labels(&self) -> PatientTensor {
        let len = self.labels.iter().rposition(Option::is_some).map_or(0, |i| i + 1);
        self.prefix(len)
    }
}

/// Last observation carried forward.
pub fn locf(series: &[Option<f64>]) -> Vec<Option<f64>> {
    let mut last = None;
    series
        .iter()
        .map(|v| {
            if v.is_some() {
                last = *v;
            }
            last
        })
        .collect()
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    })
}

/// Population mean and standard deviation; a zero spread becomes 1 so a
/// constant feature normalizes to 0 instead of dividing by zero.
fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 1.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean, if std > 1e-12 { std } else { 1.0 })
}

fn model_visits(r: &LabeledRecord) -> &[super::cohort::Visit] {
    &r.record.visits[..r.labeled_prefix_len()]
}

/// Training records in sorted-id order, so the statistics do not depend on
/// the order ids were listed in.
fn training_records<'a>(cohort: &'a LabeledCohort, train_ids: &[String]) -> Result<Vec<&'a LabeledRecord>, DataError> {
    let index: HashMap<&str, &LabeledRecord> = cohort
        .records
        .iter()
        .map(|r| (r.record.patient_id.as_str(), r))
        .collect();
    let mut ids: Vec<&String> = train_ids.iter().collect();
    ids.sort_unstable();
    ids.dedup();
    ids.into_iter()
        .map(|id| {
            index
                .get(id.as_str())
                .copied()
                .ok_or_else(|| DataError::Invalid(format!("training id `{id}` not in cohort")))
        })
        .collect()
}

pub fn fit_preprocessor(cohort: &LabeledCohort, train_ids: &[String], fold: Option<usize>) -> Result<Preprocessor, DataError> {
    let train = training_records(cohort, train_ids)?;
    if train.is_empty() {
        return Err(DataError::Invalid("empty training split".into()));
    }
    let schema = &cohort.schema;
    let (d, s) = (schema.n_dynamic(), schema.n_static());
    let mut never_observed = Vec::new();

    let dyn_names: Vec<&str> = schema.dynamic().map(|f| f.name.as_str()).collect();
    let mut dynamic_medians = Vec::with_capacity(d);
    for f in 0..d {
        let mut obs: Vec<f64> = train
            .iter()
            .flat_map(|r| model_visits(r).iter().filter_map(move |v| v.values[f]))
            .collect();
        dynamic_medians.push(median(&mut obs).unwrap_or_else(|| {
            log::warn!("feature `{}` never observed in training; median set to 0", dyn_names[f]);
            never_observed.push(dyn_names[f].to_string());
            0.0
        }));
    }
    let static_names: Vec<&str> = schema.static_features().map(|f| f.name.as_str()).collect();
    let mut static_medians = Vec::with_capacity(s);
    for j in 0..s {
        let mut obs: Vec<f64> = train.iter().filter_map(|r| r.record.static_values[j]).collect();
        static_medians.push(median(&mut obs).unwrap_or_else(|| {
            log::warn!("feature `{}` never observed in training; median set to 0", static_names[j]);
            never_observed.push(static_names[j].to_string());
            0.0
        }));
    }

    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); d];
    for r in &train {
        let visits = model_visits(r);
        for (f, col) in columns.iter_mut().enumerate() {
            let series: Vec<Option<f64>> = visits.iter().map(|v| v.values[f]).collect();
            col.extend(locf(&series).into_iter().map(|v| v.unwrap_or(dynamic_medians[f])));
        }
    }
    let (dynamic_means, dynamic_stds) = columns.iter().map(|c| mean_std(c)).unzip();
    let (static_means, static_stds) = (0..s)
        .map(|j| {
            let col: Vec<f64> = train
                .iter()
                .map(|r| r.record.static_values[j].unwrap_or(static_medians[j]))
                .collect();
            mean_std(&col)
        })
        .unzip();

    Ok(Preprocessor {
        fold,
        dynamic_medians,
        dynamic_means,
        dynamic_stds,
        static_medians,
        static_means,
        static_stds,
        never_observed,
    })
}

impl Preprocessor {
    pub fn check_schema(&self, schema: &FeatureSchema) -> Result<(), DataError> {
        if self.dynamic_medians.len() != schema.n_dynamic() || self.static_medians.len() != schema.n_static() {
            return Err(DataError::Invalid(format!(
                "preprocessor fitted for ({}, {}) features, schema has {:?}",
                self.static_medians.len(),
                self.dynamic_medians.len(),
                schema.counts()
            )));
        }
        Ok(())
    }

    /// LOCF, then training medians for leading gaps, then z-scores.
    pub fn apply(&self, record: &PatientRecord, labels: &[Option<u8>]) -> PatientTensor {
        let d = self.dynamic_medians.len();
        let t = record.visits.len();
        let mut filled = vec![0.0; t * d];
        let mut observed = vec![false; t * d];
        for f in 0..d {
            let series: Vec<Option<f64>> = record.visits.iter().map(|v| v.values[f]).collect();
            for (i, v) in locf(&series).into_iter().enumerate() {
                filled[i * d + f] = v.unwrap_or(self.dynamic_medians[f]);
                observed[i * d + f] = series[i].is_some();
            }
        }
        let values = filled
            .iter()
            .enumerate()
            .map(|(k, x)| (x - self.dynamic_means[k % d]) / self.dynamic_stds[k % d])
            .collect();
        let static_filled: Vec<f64> = record
            .static_values
            .iter()
            .zip(&self.static_medians)
            .map(|(v, m)| v.unwrap_or(*m))
            .collect();
        let static_values = static_filled
            .iter()
            .enumerate()
            .map(|(j, x)| (x - self.static_means[j]) / self.static_stds[j])
            .collect();
        PatientTensor {
            patient_id: record.patient_id.clone(),
            times: record.visits.iter().map(|v| v.time).collect(),
            n_dynamic: d,
            values,
            filled,
            observed,
            static_values,
            static_filled,
            static_observed: record.static_values.iter().map(Option::is_some).collect(),
            labels: labels.to_vec(),
            duplicate: false,
        }
    }

    /// Applies to the listed patients, in the given order.
    pub fn apply_split(&self, cohort: &LabeledCohort, ids: &[String]) -> Result<Vec<PatientTensor>, DataError> {
        self.check_schema(&cohort.schema)?;
        let index: HashMap<&str, &LabeledRecord> = cohort
            .records
            .iter()
            .map(|r| (r.record.patient_id.as_str(), r))
            .collect();
        ids.iter()
            .map(|id| {
                let r = index
                    .get(id.as_str())
                    .ok_or_else(|| DataError::Invalid(format!("patient `{id}` not in cohort")))?;
                Ok(self.apply(&r.record, &r.labels))
            })
            .collect()
    }
}

/// Duplicates randomly chosen minority-class patients until both classes
/// hold the same number of patients. Copies are marked `duplicate`.
pub fn oversample_minority(split: &[PatientTensor], seed: u64) -> Result<Vec<PatientTensor>, DataError> {
    let (pos, neg): (Vec<usize>, Vec<usize>) = (0..split.len()).partition(|&i| split[i].patient_label() == 1);
    if pos.is_empty() || neg.is_empty() {
        return Err(DataError::Invalid("oversampling needs both classes in the training split".into()));
    }
    let (minority, deficit) = if pos.len() < neg.len() {
        (&pos, neg.len() - pos.len())
    } else {
        (&neg, pos.len() - neg.len())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<PatientTensor> = split.to_vec();
    for _ in 0..deficit {
        let pick = minority[rng.random_range(0..minority.len())];
        let mut copy = split[pick].clone();
        copy.duplicate = true;
        out.push(copy);
    }
    Ok(out)
}
