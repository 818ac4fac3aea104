//! Cohort ingestion, outcome labeling, leakage-safe preprocessing,
//! patient-level splits and the synthetic cohort generator.

mod cohort;
mod io;
mod labels;
mod preprocess;
mod schema;
mod split;
mod synth;

use std::path::Path;

pub use cohort::{aggregate_same_day, prune_sparse_features, Cohort, Outcome, PatientRecord, Visit};
pub use io::{load_cohort, load_cohort_dir, load_cohort_with_schema, write_cohort, SCHEMA_FILE, STATIC_FILE, VISITS_FILE};
pub use labels::{assign_mortality_labels, assign_preterm_labels, LabelReport, LabeledCohort, LabeledRecord};
pub use preprocess::{fit_preprocessor, locf, oversample_minority, PatientTensor, Preprocessor};
pub use schema::{xy_schema, Feature, FeatureKind, FeatureSchema, XY_DYNAMIC, XY_STATIC};
pub use split::{split_stratified_kfold, Fold};
pub use synth::{generate_synthetic_cohort, SyntheticSpec};

pub(crate) use schema::hex;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("schema: {0}")]
    Schema(String),
    #[error("{file}, row {row}: {msg}")]
    Csv { file: String, row: usize, msg: String },
    #[error("patient `{patient}`: {msg}")]
    Record { patient: String, msg: String },
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
