#![allow(dead_code)]

use aicare_core::data::{Feature, FeatureSchema, Preprocessor};
use aicare_core::model::{RiskAssessment, VisitAssessment};

pub fn schema() -> FeatureSchema {
    FeatureSchema::new(vec![
        Feature::static_("Height", "cm", false),
        Feature::static_("Polycystic Kidney", "", true),
        Feature::dynamic("Albumin", "g/L"),
        Feature::dynamic("Creatinine", "umol/L"),
        Feature::dynamic("WBC", "10^9/L"),
    ])
    .unwrap()
}

/// Channel order: Albumin, Creatinine, WBC, Height, Polycystic Kidney.
pub fn preprocessor() -> Preprocessor {
    Preprocessor {
        fold: None,
        dynamic_medians: vec![36.0, 700.0, 6.0],
        dynamic_means: vec![36.0, 700.0, 6.5],
        dynamic_stds: vec![4.0, 150.0, 2.0],
        static_medians: vec![165.0, 0.0],
        static_means: vec![165.0, 0.2],
        static_stds: vec![8.0, 0.4],
        never_observed: vec![],
    }
}

fn visit(index: usize, prob: f64, cal: f64, importance: Vec<f64>, values: Vec<f64>, observed: Vec<bool>) -> VisitAssessment {
    VisitAssessment {
        index,
        time: index as f64 * 90.0,
        logit: (prob / (1.0 - prob)).ln(),
        probability: prob,
        calibrated: Some(cal),
        importance,
        values,
        observed,
        label: Some(1),
    }
}

pub fn assessment() -> RiskAssessment {
    RiskAssessment {
        patient_id: "P001".into(),
        temperature: Some(1.4),
        threshold: Some(0.4),
        visits: vec![
            visit(0, 0.5, 0.46, vec![0.2; 5], vec![35.0, 650.0, 7.0, 168.0, 1.0], vec![true; 5]),
            visit(
                1,
                0.9,
                0.873,
                vec![0.40, 0.25, 0.15, 0.12, 0.08],
                vec![31.5, 812.0, 6.25, 168.0, 1.0],
                vec![true, true, false, true, true],
            ),
        ],
    }
}
