//! Ranking and threshold metrics, temperature scaling, decision-threshold
//! search and population-level aggregation.

mod calibration;
mod metrics;
mod population;

pub use calibration::{
    bce_at_temperature, calibrate, calibrated_probability, fit_temperature, select_threshold, threshold_grid,
    CalibrationArtifact, TemperatureFit, ThresholdChoice, T_MAX, T_MIN,
};
pub use metrics::{auprc, auroc, confusion_metrics, Counts, MetricReport};
pub use population::{population_aggregate, sample_patients, PopulationSummary, PopulationTriple, DEFAULT_SAMPLE_SIZE};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("{scores} scores but {labels} labels")]
    Length { scores: usize, labels: usize },
    #[error("non-finite score")]
    NonFinite,
    #[error("metric needs both classes present")]
    SingleClass,
    #[error("metric needs at least one positive")]
    NoPositives,
    #[error("{0}")]
    Invalid(String),
}
