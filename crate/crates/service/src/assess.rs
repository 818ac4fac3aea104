use aicare_advisory::{MORTALITY_TASK, PRETERM_TASK};
use aicare_core::data::LabeledCohort;
use aicare_core::model::{predict_trajectory, rank_features, Checkpoint, RankedFeature};
use serde::{Deserialize, Serialize};

use crate::ServiceError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisitEntry {
    pub index: usize,
    pub time: f64,
    pub raw_risk: f64,
    pub calibrated_risk: Option<f64>,
    pub label: Option<u8>,
    pub top_features: Vec<RankedFeature>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssessmentResponse {
    pub patient_id: String,
    pub model_hash: String,
    pub temperature: Option<f64>,
    pub threshold: Option<f64>,
    pub visits: Vec<VisitEntry>,
}

/// Trajectory prediction plus per-visit feature ranking for one patient.
pub fn assessment_response(
    ckpt: &Checkpoint,
    model_hash: &str,
    cohort: &LabeledCohort,
    patient_id: &str,
    top_k: usize,
) -> Result<AssessmentResponse, ServiceError> {
    if cohort.find(patient_id).is_none() {
        return Err(ServiceError::NotFound(format!("unknown patient `{patient_id}`")));
    }
    let tensor = ckpt.prepare(cohort, patient_id)?;
    let a = predict_trajectory(&ckpt.params, &tensor, ckpt.calibration.as_ref())?;
    let k = top_k.min(ckpt.schema.features().len());
    let visits = a
        .visits
        .iter()
        .map(|v| {
            Ok(VisitEntry {
                index: v.index,
                time: v.time,
                raw_risk: v.probability,
                calibrated_risk: v.calibrated,
                label: v.label,
                top_features: rank_features(&a, &ckpt.schema, v.index, k)?,
            })
        })
        .collect::<Result<_, ServiceError>>()?;
    Ok(AssessmentResponse {
        patient_id: a.patient_id,
        model_hash: model_hash.to_string(),
        temperature: a.temperature,
        threshold: a.threshold,
        visits,
    })
}

/// Prompt task definition for a checkpoint's task name.
pub fn task_definition(task: &str) -> String {
    match task {
        "mortality" => MORTALITY_TASK.into(),
        "preterm" => PRETERM_TASK.into(),
        other => format!("Predict the risk of the outcome `{other}` at the current visit, based on the longitudinal record of visits up to and including it."),
    }
}
