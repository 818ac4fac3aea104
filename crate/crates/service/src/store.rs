//! Single-file SQLite store.
//!
//! Tables:
//! - `meta(key, value)`: `schema` (feature schema JSON) and `schema_hash`.
//! - `patients(ordinal, patient_id, record)`: labeled records as JSON.
//! - `assessment_cache(patient_id, model_hash, temperature, threshold, top_k, body)`.
//! - `population_cache(feature, n, seed, model_hash, temperature, body)`.
//! - `events(id, session_id, timestamp, kind, payload)`.

use std::collections::BTreeMap;
use std::path::Path;

use aicare_core::data::{FeatureSchema, LabelReport, LabeledCohort, LabeledRecord};
use rusqlite::{params, Connection, OptionalExtension};

use crate::events::{EventKind, EventRecord, StoredEvent};
use crate::ServiceError;

const SCHEMA_SQL: &str = "
CREATE TABLE IF NOT EXISTS meta (key TEXT PRIMARY KEY, value TEXT NOT NULL);
CREATE TABLE IF NOT EXISTS patients (
    ordinal INTEGER NOT NULL,
    patient_id TEXT PRIMARY KEY,
    record TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS assessment_cache (
    patient_id TEXT NOT NULL,
    model_hash TEXT NOT NULL,
    temperature TEXT NOT NULL,
    threshold TEXT NOT NULL,
    top_k INTEGER NOT NULL,
    body TEXT NOT NULL,
    PRIMARY KEY (patient_id, model_hash, temperature, threshold, top_k)
);
CREATE TABLE IF NOT EXISTS population_cache (
    feature TEXT NOT NULL,
    n INTEGER NOT NULL,
    seed INTEGER NOT NULL,
    model_hash TEXT NOT NULL,
    temperature TEXT NOT NULL,
    body TEXT NOT NULL,
    PRIMARY KEY (feature, n, seed, model_hash, temperature)
);
CREATE TABLE IF NOT EXISTS events (
    id INTEGER PRIMARY KEY AUTOINCREMENT,
    session_id TEXT NOT NULL,
    timestamp INTEGER NOT NULL,
    kind TEXT NOT NULL,
    payload TEXT NOT NULL
);
CREATE INDEX IF NOT EXISTS events_session ON events (session_id, timestamp);
";

/// Calibration identity for cache keys; uncalibrated is "none".
pub fn calibration_key(value: Option<f64>) -> String {
    value.map_or_else(|| "none".into(), |v| format!("{:016x}", v.to_bits()))
}

pub struct Store {
    conn: Connection,
}

impl Store {
    pub fn open(path: &Path) -> Result<Self, ServiceError> {
        Self::init(Connection::open(path)?)
    }

    pub fn open_in_memory() -> Result<Self, ServiceError> {
        Self::init(Connection::open_in_memory()?)
    }

    fn init(conn: Connection) -> Result<Self, ServiceError> {
        conn.execute_batch(SCHEMA_SQL)?;
        Ok(Self { conn })
    }

    /// Replaces the stored cohort and clears both response caches.
    pub fn import_cohort(&mut self, cohort: &LabeledCohort) -> Result<(), ServiceError> {
        let tx = self.conn.transaction()?;
        tx.execute_batch("DELETE FROM patients; DELETE FROM assessment_cache; DELETE FROM population_cache;")?;
        tx.execute(
            "INSERT OR REPLACE INTO meta (key, value) VALUES ('schema', ?1), ('schema_hash', ?2)",
            params![cohort.schema.to_json_pretty(), cohort.schema.hash()],
        )?;
        {
            let mut stmt = tx.prepare("INSERT INTO patients (ordinal, patient_id, record) VALUES (?1, ?2, ?3)")?;
            for (i, r) in cohort.records.iter().enumerate() {
                stmt.execute(params![i as i64, r.record.patient_id, serde_json::to_string(r)?])?;
            }
        }
        tx.commit()?;
        Ok(())
    }

    pub fn schema_hash(&self) -> Result<Option<String>, ServiceError> {
        Ok(self
            .conn
            .query_row("SELECT value FROM meta WHERE key = 'schema_hash'", [], |r| r.get(0))
            .optional()?)
    }

    /// The stored cohort in import order.
    pub fn load_cohort(&self) -> Result<LabeledCohort, ServiceError> {
        let schema_json: String = self
            .conn
            .query_row("SELECT value FROM meta WHERE key = 'schema'", [], |r| r.get(0))
            .optional()?
            .ok_or_else(|| ServiceError::Startup("store holds no cohort".into()))?;
        let schema: FeatureSchema = serde_json::from_str(&schema_json)?;
        let mut stmt = self.conn.prepare("SELECT record FROM patients ORDER BY ordinal")?;
        let records = stmt
            .query_map([], |r| r.get::<_, String>(0))?
            .map(|row| Ok(serde_json::from_str::<LabeledRecord>(&row?)?))
            .collect::<Result<Vec<_>, ServiceError>>()?;
        Ok(LabeledCohort { schema, records, report: LabelReport::default() })
    }

    pub fn cached_assessment(&self, key: &AssessmentKey) -> Result<Option<String>, ServiceError> {
        Ok(self
            .conn
            .query_row(
                "SELECT body FROM assessment_cache WHERE patient_id = ?1 AND model_hash = ?2
                 AND temperature = ?3 AND threshold = ?4 AND top_k = ?5",
                params![key.patient_id, key.model_hash, key.temperature, key.threshold, key.top_k as i64],
                |r| r.get(0),
            )
            .optional()?)
    }

    pub fn put_assessment(&self, key: &AssessmentKey, body: &str) -> Result<(), ServiceError> {
        self.conn.execute(
            "INSERT OR REPLACE INTO assessment_cache VALUES (?1, ?2, ?3, ?4, ?5, ?6)",
            params![key.patient_id, key.model_hash, key.temperature, key.threshold, key.top_k as i64, body],
        )?;
        Ok(())
    }

    pub fn cached_population(&self, key: &PopulationKey) -> Result<Option<String>, ServiceError> {
        Ok(self
            .conn
            .query_row(
                "SELECT body FROM population_cache WHERE feature = ?1 AND n = ?2 AND seed = ?3
                 AND model_hash = ?4 AND temperature = ?5",
                params![key.feature, key.n as i64, key.seed as i64, key.model_hash, key.temperature],
                |r| r.get(0),
            )
            .optional()?)
    }

    pub fn put_population(&self, key: &PopulationKey, body: &str) -> Result<(), ServiceError> {
        self.conn.execute(
            "INSERT OR REPLACE INTO population_cache VALUES (?1, ?2, ?3, ?4, ?5, ?6)",
            params![key.feature, key.n as i64, key.seed as i64, key.model_hash, key.temperature, body],
        )?;
        Ok(())
    }

    pub fn cache_sizes(&self) -> Result<(usize, usize), ServiceError> {
        let count = |table: &str| -> Result<usize, ServiceError> {
            Ok(self.conn.query_row(&format!("SELECT COUNT(*) FROM {table}"), [], |r| r.get::<_, i64>(0))? as usize)
        };
        Ok((count("assessment_cache")?, count("population_cache")?))
    }

    /// Appends an event. Timestamps must not go backwards within a session.
    pub fn append_event(&mut self, e: &EventRecord) -> Result<i64, ServiceError> {
        let tx = self.conn.transaction()?;
        let last: Option<i64> = tx.query_row(
            "SELECT MAX(timestamp) FROM events WHERE session_id = ?1",
            params![e.session_id],
            |r| r.get(0),
        )?;
        if let Some(last) = last.filter(|&l| e.timestamp < l) {
            return Err(ServiceError::Unprocessable(format!(
                "timestamp {} precedes the session's last event at {last}",
                e.timestamp
            )));
        }
        tx.execute(
            "INSERT INTO events (session_id, timestamp, kind, payload) VALUES (?1, ?2, ?3, ?4)",
            params![e.session_id, e.timestamp, e.kind.as_str(), serde_json::to_string(&e.payload)?],
        )?;
        let id = tx.last_insert_rowid();
        tx.commit()?;
        Ok(id)
    }

    /// Events ordered by timestamp, then arrival.
    pub fn events(&self, session: Option<&str>) -> Result<Vec<StoredEvent>, ServiceError> {
        let mut stmt = self.conn.prepare(
            "SELECT id, session_id, timestamp, kind, payload FROM events
             WHERE ?1 IS NULL OR session_id = ?1 ORDER BY timestamp, id",
        )?;
        let rows = stmt.query_map(params![session], |r| {
            Ok((r.get::<_, i64>(0)?, r.get::<_, String>(1)?, r.get::<_, i64>(2)?, r.get::<_, String>(3)?, r.get::<_, String>(4)?))
        })?;
        rows.map(|row| {
            let (id, session_id, timestamp, kind, payload) = row?;
            let kind = EventKind::parse(&kind).ok_or_else(|| ServiceError::Internal(format!("stored event kind `{kind}`")))?;
            Ok(StoredEvent {
                id,
                event: EventRecord { session_id, timestamp, kind, payload: serde_json::from_str(&payload)? },
            })
        })
        .collect()
    }

    /// Event counts by kind, optionally for one session.
    pub fn event_counts(&self, session: Option<&str>) -> Result<BTreeMap<String, u64>, ServiceError> {
        let mut stmt = self.conn.prepare(
            "SELECT kind, COUNT(*) FROM events WHERE ?1 IS NULL OR session_id = ?1 GROUP BY kind ORDER BY kind",
        )?;
        let rows = stmt.query_map(params![session], |r| Ok((r.get::<_, String>(0)?, r.get::<_, i64>(1)? as u64)))?;
        Ok(rows.collect::<Result<_, _>>()?)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AssessmentKey {
    pub patient_id: String,
    pub model_hash: String,
    pub temperature: String,
    pub threshold: String,
    pub top_k: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PopulationKey {
    pub feature: String,
    pub n: usize,
    pub seed: u64,
    pub model_hash: String,
    pub temperature: String,
}
