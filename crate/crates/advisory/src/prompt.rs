use aicare_core::data::FeatureSchema;
use aicare_core::model::{rank_features, RiskAssessment};
use serde::{Deserialize, Serialize};

use crate::AdvisoryError;

pub const DEFAULT_TOP_K: usize = 10;

pub const MORTALITY_TASK: &str =
    "Predict whether the patient will die within one year of the current visit, based on the longitudinal record of visits up to and including it.";

pub const PRETERM_TASK: &str =
    "Predict whether the current pregnancy will end in preterm delivery, based on the longitudinal record of antenatal visits up to and including the current one.";

pub const SYSTEM_PROMPT: &str = "\
You are an experienced clinician with extensive medical knowledge and clinical diagnostic experience.

You will receive a patient's electronic health record (EHR) data, an AI model's risk prediction result, and feature importance weights. Based on this information, please conduct a clinical analysis and provide diagnostic and decision-making recommendations.

Analysis Requirements:

1. Focus on the examination values from the most recent visit and the features with high importance weights.

2. Use analytical reasoning to deduce the patient's physiological or biochemical pathophysiological state.

3. Systematically identify the appropriate clinical response.

4. Provide specific clinical advice without listing the patient's specific data (do not use concrete numerical values).

5. Ensure the response is detailed and substantial.

Output Format:

Organize the response under exactly these headings, each on its own line and in this order: Key Feature Identification, Risk Analysis, Personalized Advice.
";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptPair {
    pub system_text: String,
    pub user_text: String,
    pub task_definition: String,
    /// Calibrated risk as rendered, e.g. "87.3".
    pub risk_percent: String,
    /// (feature, importance) in rank order.
    pub top_features: Vec<(String, f64)>,
    pub visit: usize,
}

/// Risk probability as a percentage with one decimal.
pub fn format_percent(p: f64) -> String {
    format!("{:.1}", p * 100.0)
}

/// Up to two decimals, trailing zeros trimmed.
pub(crate) fn format_value(v: f64) -> String {
    let s = format!("{v:.2}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

/// Fills the clinician prompt for visit `visit_idx` of `assessment`.
/// `top_k` beyond the feature count is clamped.
pub fn build_prompt(
    task_def: &str,
    assessment: &RiskAssessment,
    schema: &FeatureSchema,
    visit_idx: usize,
    top_k: usize,
) -> Result<PromptPair, AdvisoryError> {
    let visit = assessment
        .visits
        .get(visit_idx)
        .ok_or_else(|| AdvisoryError::Invalid(format!("visit {visit_idx} out of range")))?;
    let channels = schema.channels();
    let k = if top_k > channels.len() {
        log::warn!("top_k {top_k} exceeds {} features; clamped", channels.len());
        channels.len()
    } else {
        top_k
    };
    let ranked = rank_features(assessment, schema, visit_idx, k)?;
    let risk_percent = format_percent(visit.risk());

    let key_features = ranked
        .iter()
        .map(|f| format!("- {}: {:.2}%", f.name, f.importance * 100.0))
        .collect::<Vec<_>>()
        .join("\n");
    let all_values = channels
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let mut line = format!("- {}: {}", f.name, format_value(visit.values[i]));
            if !f.unit.is_empty() {
                line.push(' ');
                line.push_str(&f.unit);
            }
            if !visit.observed[i] {
                line.push_str(" (imputed)");
            }
            line
        })
        .collect::<Vec<_>>()
        .join("\n");

    let user_text = format!(
        "**Clinical Prediction Task**

{task_def}

**Patient's Electronic Health Record Analysis**

AI Model Risk Prediction Result: {risk_percent}%

Feature Importance Weights (Key Factors Influencing Prediction):

{key_features}

Patient's Complete Examination Values from the Last Visit:

{all_values}

**Clinical Analysis Request**

Based on the AI model's analysis results and the patient's EHR data above, please use clinical reasoning to analyze the patient's pathophysiological state and provide specific diagnostic and decision-making recommendations.
"
    );
    Ok(PromptPair {
        system_text: SYSTEM_PROMPT.to_string(),
        user_text,
        task_definition: task_def.to_string(),
        risk_percent,
        top_features: ranked.into_iter().map(|f| (f.name, f.importance)).collect(),
        visit: visit_idx,
    })
}
