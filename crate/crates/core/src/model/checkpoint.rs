//! Self-describing JSON checkpoints. Floats are written with round-trip
//! precision so a save/load cycle is bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ModelParams;
use super::ModelError;
use crate::analytics::CalibrationArtifact;
use crate::data::{FeatureSchema, LabeledCohort, PatientTensor, Preprocessor};

pub const MAGIC: &str = "AICARE-CKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub fold: Option<usize>,
    pub seed: u64,
    pub task: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub magic: String,
    pub version: u32,
    pub schema_hash: String,
    pub schema: FeatureSchema,
    pub preprocessor: Preprocessor,
    pub params: ModelParams,
    pub calibration: Option<CalibrationArtifact>,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    pub fn new(schema: FeatureSchema, preprocessor: Preprocessor, params: ModelParams, meta: CheckpointMeta) -> Self {
        Self {
            magic: MAGIC.into(),
            version: VERSION,
            schema_hash: schema.hash(),
            schema,
            preprocessor,
            params,
            calibration: None,
            meta,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.magic != MAGIC {
            return Err(ModelError::Checkpoint(format!("bad magic `{}`", self.magic)));
        }
        if self.version != VERSION {
            return Err(ModelError::Checkpoint(format!("unsupported version {}", self.version)));
        }
        let actual = self.schema.hash();
        if actual != self.schema_hash {
            return Err(ModelError::Checkpoint(format!(
                "schema hash {} does not match embedded schema ({actual})",
                self.schema_hash
            )));
        }
        self.params.check()?;
        if self.schema.counts() != (self.params.hyper.static_dim, self.params.hyper.dynamic_dim) {
            return Err(ModelError::Checkpoint("schema width does not match model".into()));
        }
        self.preprocessor.check_schema(&self.schema)?;
        Ok(())
    }

    /// Identifies the trained model; independent of calibration.
    pub fn model_hash(&self) -> String {
        self.params.hash()
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let json = serde_json::to_string(self).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| ModelError::Io(format!("{}: {e}", dir.display())))?;
        }
        std::fs::write(path, json).map_err(|e| ModelError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path).map_err(|e| ModelError::Io(format!("{}: {e}", path.display())))?;
        let ckpt: Checkpoint =
            serde_json::from_str(&text).map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))?;
        ckpt.validate()?;
        Ok(ckpt)
    }

    /// Preprocesses one labeled record with the stored statistics.
    pub fn prepare(&self, cohort: &LabeledCohort, patient_id: &str) -> Result<PatientTensor, ModelError> {
        if cohort.schema.hash() != self.schema_hash {
            return Err(ModelError::SchemaMismatch {
                expected: self.schema_hash.clone(),
                found: cohort.schema.hash(),
            });
        }
        let r = cohort
            .find(patient_id)
            .ok_or_else(|| ModelError::Invalid(format!("unknown patient `{patient_id}`")))?;
        Ok(self.preprocessor.apply(&r.record, &r.labels))
    }
}
