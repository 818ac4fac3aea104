use serde::{Deserialize, Serialize};

use super::forward::forward;
use super::params::ModelParams;
use super::ModelError;
use crate::analytics::CalibrationArtifact;
use crate::data::{FeatureSchema, PatientTensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisitAssessment {
    pub index: usize,
    pub time: f64,
    pub logit: f64,
    /// `sigmoid(logit)`.
    pub probability: f64,
    /// `sigmoid(logit / T)` when a calibration is attached.
    pub calibrated: Option<f64>,
    /// Channel order: dynamic features, then static.
    pub importance: Vec<f64>,
    /// Values in original units after imputation, channel order.
    pub values: Vec<f64>,
    pub observed: Vec<bool>,
    pub label: Option<u8>,
}

impl VisitAssessment {
    /// The probability shown to users: calibrated when available.
    pub fn risk(&self) -> f64 {
        self.calibrated.unwrap_or(self.probability)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskAssessment {
    pub patient_id: String,
    pub temperature: Option<f64>,
    pub threshold: Option<f64>,
    pub visits: Vec<VisitAssessment>,
}

pub fn predict_trajectory(
    params: &ModelParams,
    patient: &PatientTensor,
    calibration: Option<&CalibrationArtifact>,
) -> Result<RiskAssessment, ModelError> {
    let n = patient.n_visits();
    let out = forward(params, patient, n)?;
    let d = patient.n_dynamic;
    let visits = (0..n)
        .map(|t| {
            let mut values = patient.filled[t * d..(t + 1) * d].to_vec();
            values.extend_from_slice(&patient.static_filled);
            let mut observed = patient.observed[t * d..(t + 1) * d].to_vec();
            observed.extend_from_slice(&patient.static_observed);
            VisitAssessment {
                index: t,
                time: patient.times[t],
                logit: out.logits[t],
                probability: out.probabilities[t],
                calibrated: calibration.map(|c| c.probability(out.logits[t])),
                importance: out.importances[t].clone(),
                values,
                observed,
                label: patient.labels.get(t).copied().flatten(),
            }
        })
        .collect();
    Ok(RiskAssessment {
        patient_id: patient.patient_id.clone(),
        temperature: calibration.map(|c| c.temperature),
        threshold: calibration.map(|c| c.threshold),
        visits,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedFeature {
    pub name: String,
    pub value: f64,
    pub unit: String,
    pub importance: f64,
    /// The value was carried forward or filled with a training median.
    pub imputed: bool,
}

/// Features of one visit by descending importance; ties keep schema
/// channel order.
pub fn rank_features(
    assessment: &RiskAssessment,
    schema: &FeatureSchema,
    visit: usize,
    top_k: usize,
) -> Result<Vec<RankedFeature>, ModelError> {
    if top_k == 0 {
        return Err(ModelError::Invalid("top_k must be positive".into()));
    }
    let v = assessment
        .visits
        .get(visit)
        .ok_or_else(|| ModelError::Invalid(format!("visit {visit} out of range")))?;
    let channels = schema.channels();
    if channels.len() != v.importance.len() {
        return Err(ModelError::Shape(format!(
            "schema has {} channels, assessment {}",
            channels.len(),
            v.importance.len()
        )));
    }
    let mut order: Vec<usize> = (0..channels.len()).collect();
    // stable sort keeps channel order among equal importances
    order.sort_by(|&a, &b| v.importance[b].total_cmp(&v.importance[a]));
    Ok(order
        .into_iter()
        .take(top_k)
        .map(|i| RankedFeature {
            name: channels[i].name.clone(),
            value: v.values[i],
            unit: channels[i].unit.clone(),
            importance: v.importance[i],
            imputed: !v.observed[i],
        })
        .collect())
}
