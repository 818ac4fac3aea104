use serde::{Deserialize, Serialize};

use super::schema::FeatureSchema;
use super::DataError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Visit {
    /// Days since the patient's first visit, or gestational day.
    pub time: f64,
    /// Aligned to the schema's dynamic features; `None` is missing.
    pub values: Vec<Option<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub event: bool,
    /// Event time if `event`, otherwise last follow-up. For obstetric
    /// cohorts this is the delivery gestational day either way.
    pub time: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub patient_id: String,
    pub static_values: Vec<Option<f64>>,
    pub visits: Vec<Visit>,
    pub outcome: Outcome,
}

impl PatientRecord {
    pub fn validate(&self, schema: &FeatureSchema) -> Result<(), DataError> {
        let bad = |msg: String| DataError::Record {
            patient: self.patient_id.clone(),
            msg,
        };
        if self.visits.is_empty() {
            return Err(bad("no visits".into()));
        }
        if self.static_values.len() != schema.n_static() {
            return Err(bad(format!(
                "{} static values for {} static features",
                self.static_values.len(),
                schema.n_static()
            )));
        }
        for (i, v) in self.visits.iter().enumerate() {
            if !v.time.is_finite() {
                return Err(bad(format!("visit {i} has non-finite time")));
            }
            if v.values.len() != schema.n_dynamic() {
                return Err(bad(format!(
                    "visit {i} has {} values for {} dynamic features",
                    v.values.len(),
                    schema.n_dynamic()
                )));
            }
            if i > 0 && v.time <= self.visits[i - 1].time {
                return Err(bad(format!("visit times not strictly increasing at visit {i}")));
            }
        }
        let all = self.static_values.iter().chain(self.visits.iter().flat_map(|v| &v.values));
        if all.flatten().any(|x| !x.is_finite()) {
            return Err(bad("non-finite measurement".into()));
        }
        Ok(())
    }

    /// Groups of visit indices that fall on the same calendar day.
    pub fn same_day_groups(&self) -> Vec<Vec<usize>> {
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for (i, v) in self.visits.iter().enumerate() {
            match groups.last_mut() {
                Some(g) if day(self.visits[g[0]].time) == day(v.time) => g.push(i),
                _ => groups.push(vec![i]),
            }
        }
        groups
    }
}

fn day(t: f64) -> i64 {
    t.floor() as i64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    pub schema: FeatureSchema,
    pub records: Vec<PatientRecord>,
}

impl Cohort {
    pub fn new(schema: FeatureSchema, records: Vec<PatientRecord>) -> Result<Self, DataError> {
        let mut ids = std::collections::HashSet::new();
        for r in &records {
            r.validate(&schema)?;
            if !ids.insert(r.patient_id.as_str()) {
                return Err(DataError::Record {
                    patient: r.patient_id.clone(),
                    msg: "duplicate patient id".into(),
                });
            }
        }
        Ok(Self { schema, records })
    }

    pub fn n_visits(&self) -> usize {
        self.records.iter().map(|r| r.visits.len()).sum()
    }

    /// `(patient_id, day)` for every day holding more than one visit.
    pub fn same_day_duplicates(&self) -> Vec<(String, i64)> {
        self.records
            .iter()
            .flat_map(|r| {
                r.same_day_groups()
                    .into_iter()
                    .filter(|g| g.len() > 1)
                    .map(|g| (r.patient_id.clone(), day(r.visits[g[0]].time)))
                    .collect::<Vec<_>>()
            })
            .collect()
    }
}

/// Merges visits on the same day into one visit at the earliest time; each
/// feature becomes the mean of its observed values that day.
pub fn aggregate_same_day(cohort: &Cohort) -> Cohort {
    let d = cohort.schema.n_dynamic();
    let records = cohort
        .records
        .iter()
        .map(|r| {
            let visits = r
                .same_day_groups()
                .into_iter()
                .map(|g| {
                    let values = (0..d)
                        .map(|f| {
                            let obs: Vec<f64> = g.iter().filter_map(|&i| r.visits[i].values[f]).collect();
                            (!obs.is_empty()).then(|| obs.iter().sum::<f64>() / obs.len() as f64)
                        })
                        .collect();
                    Visit {
                        time: r.visits[g[0]].time,
                        values,
                    }
                })
                .collect();
            PatientRecord {
                visits,
                ..r.clone()
            }
        })
        .collect();
    Cohort {
        schema: cohort.schema.clone(),
        records,
    }
}

/// Drops dynamic features whose missing fraction over all visits is
/// strictly greater than `max_missing_rate`.
pub fn prune_sparse_features(cohort: &Cohort, max_missing_rate: f64) -> Result<(Cohort, Vec<String>), DataError> {
    if !(max_missing_rate > 0.0 && max_missing_rate <= 1.0) {
        return Err(DataError::Invalid(format!(
            "max_missing_rate must be in (0, 1], got {max_missing_rate}"
        )));
    }
    let total = cohort.n_visits();
    let names: Vec<String> = cohort.schema.dynamic().map(|f| f.name.clone()).collect();
    let mut keep = Vec::new();
    let mut removed = Vec::new();
    for (f, name) in names.iter().enumerate() {
        let missing = cohort
            .records
            .iter()
            .flat_map(|r| &r.visits)
            .filter(|v| v.values[f].is_none())
            .count();
        // compare counts, not floats, so a rate of exactly the limit is kept
        let over = total > 0 && (missing as f64) > max_missing_rate * total as f64 + 1e-9 * total as f64;
        if over {
            removed.push(name.clone());
        } else {
            keep.push(f);
        }
    }
    if keep.is_empty() {
        return Err(DataError::Invalid("pruning would remove every dynamic feature".into()));
    }
    let schema = cohort.schema.without(&removed)?;
    let records = cohort
        .records
        .iter()
        .map(|r| PatientRecord {
            visits: r
                .visits
                .iter()
                .map(|v| Visit {
                    time: v.time,
                    values: keep.iter().map(|&f| v.values[f]).collect(),
                })
                .collect(),
            ..r.clone()
        })
        .collect();
    Ok((Cohort { schema, records }, removed))
}
