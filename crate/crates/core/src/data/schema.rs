use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::DataError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Static,
    Dynamic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    pub kind: FeatureKind,
    #[serde(default)]
    pub unit: String,
    #[serde(default)]
    pub categorical: bool,
}

impl Feature {
    pub fn dynamic(name: &str, unit: &str) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Dynamic,
            unit: unit.into(),
            categorical: false,
        }
    }

    pub fn static_(name: &str, unit: &str, categorical: bool) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Static,
            unit: unit.into(),
            categorical,
        }
    }
}

/// Ordered feature list. Static and dynamic features keep their relative
/// order from the file; model channels are dynamic features first, then
/// static ones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSchema", into = "RawSchema")]
pub struct FeatureSchema {
    features: Vec<Feature>,
}

#[derive(Serialize, Deserialize)]
struct RawSchema {
    features: Vec<Feature>,
}

impl TryFrom<RawSchema> for FeatureSchema {
    type Error = DataError;
    fn try_from(raw: RawSchema) -> Result<Self, DataError> {
        FeatureSchema::new(raw.features)
    }
}

impl From<FeatureSchema> for RawSchema {
    fn from(s: FeatureSchema) -> Self {
        RawSchema {
            features: s.features,
        }
    }
}

impl FeatureSchema {
    pub fn new(features: Vec<Feature>) -> Result<Self, DataError> {
        let mut seen = HashSet::new();
        for f in &features {
            if f.name.trim().is_empty() {
                return Err(DataError::Schema("empty feature name".into()));
            }
            if !seen.insert(f.name.as_str()) {
                return Err(DataError::Schema(format!("duplicate feature `{}`", f.name)));
            }
            if matches!(f.name.as_str(), "patient_id" | "time" | "event" | "event_time") {
                return Err(DataError::Schema(format!("`{}` is a reserved column name", f.name)));
            }
        }
        if !features.iter().any(|f| f.kind == FeatureKind::Dynamic) {
            return Err(DataError::Schema("schema needs at least one dynamic feature".into()));
        }
        Ok(Self { features })
    }

    pub fn from_json_file(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| DataError::Schema(format!("{}: {e}", path.display())))
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn dynamic(&self) -> impl Iterator<Item = &Feature> {
        self.features.iter().filter(|f| f.kind == FeatureKind::Dynamic)
    }

    pub fn static_features(&self) -> impl Iterator<Item = &Feature> {
        self.features.iter().filter(|f| f.kind == FeatureKind::Static)
    }

    pub fn n_dynamic(&self) -> usize {
        self.dynamic().count()
    }

    pub fn n_static(&self) -> usize {
        self.static_features().count()
    }

    /// `(static, dynamic)` feature counts.
    pub fn counts(&self) -> (usize, usize) {
        (self.n_static(), self.n_dynamic())
    }

    /// Features in model channel order: dynamic first, then static.
    pub fn channels(&self) -> Vec<&Feature> {
        self.dynamic().chain(self.static_features()).collect()
    }

    /// Channel index of a feature name, if present.
    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channels().iter().position(|f| f.name == name)
    }

    /// Hex SHA-256 over the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("schema serializes");
        hex(&Sha256::digest(&json))
    }

    /// Copy without the named dynamic features.
    pub(crate) fn without(&self, removed: &[String]) -> Result<Self, DataError> {
        Self::new(
            self.features
                .iter()
                .filter(|f| !removed.contains(&f.name))
                .cloned()
                .collect(),
        )
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Dynamic laboratory and comorbidity features of the peritoneal dialysis
/// cohort, with units.
pub const XY_DYNAMIC: [(&str, &str); 33] = [
    ("Real-time Age", "years"),
    ("Dialysis Vintage", "years"),
    ("Albumin", "g/L"),
    ("WBC", "10^9/L"),
    ("ALT", "U/L"),
    ("LDL-Cholesterol", "mmol/L"),
    ("Calcium", "mmol/L"),
    ("Triglycerides", "mmol/L"),
    ("HDL-Cholesterol", "mmol/L"),
    ("MCV", "fL"),
    ("Potassium", "mmol/L"),
    ("Sodium", "mmol/L"),
    ("Uric Acid", "umol/L"),
    ("Glucose", "mmol/L"),
    ("Prealbumin", "mg/L"),
    ("AST", "U/L"),
    ("Ferritin", "ng/mL"),
    ("Hemoglobin", "g/L"),
    ("iPTH", "pg/mL"),
    ("Platelets", "10^9/L"),
    ("ALP", "U/L"),
    ("Phosphorus", "mmol/L"),
    ("Total Protein", "g/L"),
    ("Total Cholesterol", "mmol/L"),
    ("TIBC", "umol/L"),
    ("Resp. Sys. Diseases", ""),
    ("PD-related Comp.", ""),
    ("Cardio-cereb. Comp.", ""),
    ("Digestive Sys. Dis.", ""),
    ("Acute Upper Resp.", ""),
    ("PD-related Perit.", ""),
    ("Creatinine", "umol/L"),
    ("Chloride", "mmol/L"),
];

pub const XY_STATIC: [(&str, &str, bool); 7] = [
    ("Height", "cm", false),
    ("Weight", "kg", false),
    ("BMI", "kg/m^2", false),
    ("Chronic Nephritis/IgA", "", true),
    ("Hypertensive Nephrop.", "", true),
    ("Polycystic Kidney", "", true),
    ("IgA Nephropathy", "", true),
];

/// The full-width peritoneal dialysis schema (7 static, 33 dynamic).
pub fn xy_schema() -> FeatureSchema {
    let mut features: Vec<Feature> = XY_STATIC
        .iter()
        .map(|(n, u, c)| Feature::static_(n, u, *c))
        .collect();
    features.extend(XY_DYNAMIC.iter().map(|(n, u)| Feature::dynamic(n, u)));
    FeatureSchema::new(features).expect("built-in schema is valid")
}
