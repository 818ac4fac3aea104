use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    ListPaging,
    CurveHover,
    CrossView,
    FeatureSelect,
}

impl EventKind {
    pub const ALL: [EventKind; 4] = [Self::ListPaging, Self::CurveHover, Self::CrossView, Self::FeatureSelect];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::ListPaging => "list_paging",
            Self::CurveHover => "curve_hover",
            Self::CrossView => "cross_view",
            Self::FeatureSelect => "feature_select",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

/// One dashboard interaction. `timestamp` is milliseconds since the epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub session_id: String,
    pub timestamp: i64,
    pub kind: EventKind,
    #[serde(default)]
    pub payload: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredEvent {
    pub id: i64,
    #[serde(flatten)]
    pub event: EventRecord,
}
