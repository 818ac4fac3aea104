use serde::{Deserialize, Serialize};

use super::cohort::{Cohort, PatientRecord};
use super::schema::FeatureSchema;
use super::DataError;

/// A record with one entry per visit: `Some(0|1)` for an included, labeled
/// visit and `None` for a visit excluded from training and evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledRecord {
    pub record: PatientRecord,
    pub labels: Vec<Option<u8>>,
}

impl LabeledRecord {
    pub fn included(&self) -> impl Iterator<Item = bool> + '_ {
        self.labels.iter().map(Option::is_some)
    }

    pub fn n_labeled(&self) -> usize {
        self.labels.iter().flatten().count()
    }

    /// Patient-level stratum: 1 if any included visit is positive.
    pub fn patient_label(&self) -> u8 {
        self.labels.iter().flatten().copied().max().unwrap_or(0)
    }

    /// Index one past the last labeled visit.
    pub fn labeled_prefix_len(&self) -> usize {
        self.labels.iter().rposition(Option::is_some).map_or(0, |i| i + 1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledCohort {
    pub schema: FeatureSchema,
    pub records: Vec<LabeledRecord>,
    #[serde(default)]
    pub report: LabelReport,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelReport {
    pub excluded_visits: usize,
    pub dropped_visits: usize,
    /// Patients left with no labeled visit.
    pub dropped_patients: usize,
    /// Obstetric records without a delivery age.
    pub missing_outcome: usize,
}

impl LabeledCohort {
    pub fn n_labeled(&self) -> usize {
        self.records.iter().map(LabeledRecord::n_labeled).sum()
    }

    pub fn positive_rate(&self) -> f64 {
        let pos: usize = self
            .records
            .iter()
            .map(|r| r.labels.iter().flatten().filter(|&&l| l == 1).count())
            .sum();
        pos as f64 / self.n_labeled().max(1) as f64
    }

    pub fn find(&self, patient_id: &str) -> Option<&LabeledRecord> {
        self.records.iter().find(|r| r.record.patient_id == patient_id)
    }
}

/// One-year (configurable) mortality labels.
///
/// Deceased patients: a visit is positive iff the death falls within
/// `horizon_days` of it. Survivors: visits closer than `horizon_days` to the
/// last follow-up are excluded, the rest are negative.
pub fn assign_mortality_labels(cohort: &Cohort, horizon_days: f64) -> Result<LabeledCohort, DataError> {
    let mut report = LabelReport::default();
    let mut records = Vec::new();
    for r in &cohort.records {
        let bad = |msg: String| DataError::Record {
            patient: r.patient_id.clone(),
            msg,
        };
        let t_out = r.outcome.time.ok_or_else(|| bad("missing event/follow-up time".into()))?;
        let mut labels = Vec::with_capacity(r.visits.len());
        for v in &r.visits {
            if v.time > t_out {
                let what = if r.outcome.event { "event" } else { "last follow-up" };
                return Err(bad(format!("visit at day {} after {what} at day {t_out}", v.time)));
            }
            let gap = t_out - v.time;
            labels.push(if r.outcome.event {
                Some(u8::from(gap <= horizon_days))
            } else if gap < horizon_days {
                report.excluded_visits += 1;
                None
            } else {
                Some(0)
            });
        }
        push_if_labeled(&mut records, &mut report, r.clone(), labels);
    }
    Ok(LabeledCohort {
        schema: cohort.schema.clone(),
        records,
        report,
    })
}

/// Preterm-birth labels. The outcome time is the delivery gestational day;
/// visits outside the `window_days` before delivery are dropped, and every
/// kept visit is positive iff delivery came before `preterm_week` weeks.
pub fn assign_preterm_labels(cohort: &Cohort, preterm_week: f64, window_days: f64) -> Result<LabeledCohort, DataError> {
    let cutoff = preterm_week * 7.0;
    let mut report = LabelReport::default();
    let mut records = Vec::new();
    for r in &cohort.records {
        let Some(delivery) = r.outcome.time else {
            report.missing_outcome += 1;
            continue;
        };
        let label = u8::from(delivery < cutoff);
        let mut kept = r.clone();
        kept.visits.retain(|v| {
            let before = delivery - v.time;
            (0.0..=window_days).contains(&before)
        });
        report.dropped_visits += r.visits.len() - kept.visits.len();
        let labels = vec![Some(label); kept.visits.len()];
        push_if_labeled(&mut records, &mut report, kept, labels);
    }
    if report.missing_outcome > 0 {
        log::warn!("{} records without delivery age were dropped", report.missing_outcome);
    }
    Ok(LabeledCohort {
        schema: cohort.schema.clone(),
        records,
        report,
    })
}

fn push_if_labeled(out: &mut Vec<LabeledRecord>, report: &mut LabelReport, record: PatientRecord, labels: Vec<Option<u8>>) {
    if labels.iter().any(Option::is_some) {
        out.push(LabeledRecord { record, labels });
    } else {
        report.dropped_patients += 1;
    }
}
