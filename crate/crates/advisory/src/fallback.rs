use aicare_core::data::{FeatureSchema, Preprocessor};
use aicare_core::model::{rank_features, RiskAssessment};

use crate::narrative::{Narrative, Sections, Source};
use crate::AdvisoryError;

pub const FALLBACK_MODEL: &str = "rule-based-fallback";

/// Changes in predicted risk smaller than this read as stable.
const TREND_BAND: f64 = 0.05;

/// Training means in channel order (dynamic, then static).
pub fn channel_means(pre: &Preprocessor) -> Vec<f64> {
    pre.dynamic_means.iter().chain(&pre.static_means).copied().collect()
}

/// Rule-based narrative for one visit: the top-k features with their
/// direction against the training mean, a qualitative risk band and
/// generic follow-up advice. Contains no numerals, so it passes the
/// validator by construction.
pub fn fallback_template(
    assessment: &RiskAssessment,
    schema: &FeatureSchema,
    pre: &Preprocessor,
    visit_idx: usize,
    top_k: usize,
) -> Result<Narrative, AdvisoryError> {
    let visit = assessment
        .visits
        .get(visit_idx)
        .ok_or_else(|| AdvisoryError::Invalid(format!("visit {visit_idx} out of range")))?;
    let channels = schema.channels();
    let means = channel_means(pre);
    let ranked = rank_features(assessment, schema, visit_idx, top_k.clamp(1, channels.len()))?;

    let mut key = String::from("The model placed the most weight on these indicators at this visit:");
    for f in &ranked {
        let i = schema.channel_index(&f.name).expect("ranked features come from the schema");
        let direction = if channels[i].categorical {
            if f.value >= 0.5 { "present" } else { "absent" }
        } else if f.value > means[i] {
            "above the training cohort average"
        } else if f.value < means[i] {
            "below the training cohort average"
        } else {
            "at the training cohort average"
        };
        key.push_str(&format!("\n- {}: {direction}", f.name));
        if f.imputed {
            key.push_str(", not measured at this visit so an earlier or typical value stands in");
        }
    }

    let risk = visit.risk();
    let threshold = assessment.threshold.unwrap_or(0.5);
    let elevated = risk >= threshold;
    let mut analysis = String::from(if elevated {
        "The model indicates an elevated risk at this visit, at or above the decision threshold."
    } else if risk >= threshold / 2.0 {
        "The model indicates a moderate risk at this visit, below the decision threshold."
    } else {
        "The model indicates a low risk at this visit, well below the decision threshold."
    });
    analysis.push(' ');
    analysis.push_str(match visit_idx.checked_sub(1).map(|p| risk - assessment.visits[p].risk()) {
        None => "This is the first recorded visit, so no trend is available yet.",
        Some(d) if d > TREND_BAND => "Compared with the previous visit the predicted risk has risen.",
        Some(d) if d < -TREND_BAND => "Compared with the previous visit the predicted risk has fallen.",
        Some(_) => "Compared with the previous visit the predicted risk is broadly stable.",
    });

    let lead = &ranked[0].name;
    let advice = if elevated {
        format!(
            "Arrange a prompt clinical review and confirm the leading indicators with repeat measurements.\n\
             Start with {lead} and reassess once new results are available."
        )
    } else {
        format!(
            "Continue routine follow-up and keep monitoring the leading indicators.\n\
             Recheck {lead} at the next scheduled visit and review again if the predicted risk rises."
        )
    } + "\nThis summary was generated by rules from the model outputs and should be read alongside the full clinical picture.";

    let sections = Sections { key_features: key, risk_analysis: analysis, advice };
    Ok(Narrative {
        text: sections.render(),
        source: Source::Fallback,
        model: FALLBACK_MODEL.to_string(),
        sections,
    })
}
