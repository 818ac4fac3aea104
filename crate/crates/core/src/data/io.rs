//! CSV ingestion and export.
//!
//! Visits: `patient_id,time,<dynamic...>`; statics:
//! `patient_id,<static...>,event,event_time`; empty cells are missing.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use super::cohort::{Cohort, Outcome, PatientRecord, Visit};
use super::schema::FeatureSchema;
use super::DataError;

pub const VISITS_FILE: &str = "visits.csv";
pub const STATIC_FILE: &str = "static.csv";
pub const SCHEMA_FILE: &str = "schema.json";

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>, DataError> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| DataError::Csv {
            file: path.display().to_string(),
            row: 0,
            msg: e.to_string(),
        })
}

/// Maps each expected column name to its position in `header`.
fn column_map(path: &Path, header: &csv::StringRecord, expected: &[&str]) -> Result<Vec<usize>, DataError> {
    let err = |msg: String| DataError::Csv {
        file: path.display().to_string(),
        row: 1,
        msg,
    };
    let pos: HashMap<&str, usize> = header.iter().enumerate().map(|(i, h)| (h, i)).collect();
    if pos.len() != header.len() {
        return Err(err("duplicate column in header".into()));
    }
    for h in header.iter() {
        if !expected.contains(&h) {
            return Err(err(format!("unknown column `{h}`")));
        }
    }
    expected
        .iter()
        .map(|name| pos.get(name).copied().ok_or_else(|| err(format!("missing column `{name}`"))))
        .collect()
}

fn parse_cell(cell: &str) -> Result<Option<f64>, String> {
    if cell.is_empty() {
        return Ok(None);
    }
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(format!("cannot parse `{cell}` as a number")),
    }
}

fn parse_event(cell: &str) -> Result<bool, String> {
    match cell.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" => Ok(true),
        "0" | "false" | "no" => Ok(false),
        other => Err(format!("cannot parse event flag `{other}`")),
    }
}

pub fn load_cohort(visits_file: &Path, static_file: &Path, schema_file: &Path) -> Result<Cohort, DataError> {
    let schema = FeatureSchema::from_json_file(schema_file)?;
    load_cohort_with_schema(visits_file, static_file, schema)
}

pub fn load_cohort_with_schema(visits_file: &Path, static_file: &Path, schema: FeatureSchema) -> Result<Cohort, DataError> {
    let dyn_names: Vec<&str> = schema.dynamic().map(|f| f.name.as_str()).collect();
    let static_names: Vec<&str> = schema.static_features().map(|f| f.name.as_str()).collect();

    // visits, grouped per patient in first-seen order
    let mut order: Vec<String> = Vec::new();
    let mut visits: HashMap<String, BTreeMap<u64, (usize, Visit)>> = HashMap::new();
    let mut rdr = reader(visits_file)?;
    let header = rdr.headers().map_err(|e| csv_err(visits_file, 1, e))?.clone();
    let mut expected = vec!["patient_id", "time"];
    expected.extend(&dyn_names);
    let cols = column_map(visits_file, &header, &expected)?;
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| csv_err(visits_file, line, e))?;
        let bad = |msg: String| DataError::Csv {
            file: visits_file.display().to_string(),
            row: line,
            msg,
        };
        let pid = row[cols[0]].to_string();
        if pid.is_empty() {
            return Err(bad("empty patient_id".into()));
        }
        let time = parse_cell(&row[cols[1]])
            .map_err(|m| bad(format!("time: {m}")))?
            .ok_or_else(|| bad("missing time".into()))?;
        let values = cols[2..]
            .iter()
            .zip(&dyn_names)
            .map(|(&c, name)| parse_cell(&row[c]).map_err(|m| bad(format!("{name}: {m}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let entry = visits.entry(pid.clone()).or_insert_with(|| {
            order.push(pid.clone());
            BTreeMap::new()
        });
        // order-preserving key for f64 times (finite, so total order via bits)
        let key = ordered_key(time);
        if let Some((first, _)) = entry.get(&key) {
            return Err(bad(format!("duplicate visit for patient `{pid}` at time {time} (first at row {first})")));
        }
        entry.insert(key, (line, Visit { time, values }));
    }

    // statics and outcomes
    let mut statics: HashMap<String, (Vec<Option<f64>>, Outcome)> = HashMap::new();
    let mut rdr = reader(static_file)?;
    let header = rdr.headers().map_err(|e| csv_err(static_file, 1, e))?.clone();
    let mut expected = vec!["patient_id"];
    expected.extend(&static_names);
    expected.extend(["event", "event_time"]);
    let cols = column_map(static_file, &header, &expected)?;
    let n_s = static_names.len();
    for (i, row) in rdr.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| csv_err(static_file, line, e))?;
        let bad = |msg: String| DataError::Csv {
            file: static_file.display().to_string(),
            row: line,
            msg,
        };
        let pid = row[cols[0]].to_string();
        let values = cols[1..=n_s]
            .iter()
            .zip(&static_names)
            .map(|(&c, name)| parse_cell(&row[c]).map_err(|m| bad(format!("{name}: {m}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let event = parse_event(&row[cols[n_s + 1]]).map_err(bad)?;
        let time = parse_cell(&row[cols[n_s + 2]]).map_err(|m| bad(format!("event_time: {m}")))?;
        if statics.insert(pid.clone(), (values, Outcome { event, time })).is_some() {
            return Err(bad(format!("duplicate patient `{pid}`")));
        }
    }

    let mut records = Vec::with_capacity(order.len());
    for pid in order {
        let (static_values, outcome) = statics.remove(&pid).ok_or_else(|| DataError::Record {
            patient: pid.clone(),
            msg: format!("no row in {}", static_file.display()),
        })?;
        let v = visits.remove(&pid).unwrap_or_default();
        records.push(PatientRecord {
            patient_id: pid,
            static_values,
            visits: v.into_values().map(|(_, v)| v).collect(),
            outcome,
        });
    }
    if let Some(pid) = statics.keys().min() {
        return Err(DataError::Record {
            patient: pid.clone(),
            msg: "has static data but no visits".into(),
        });
    }
    let cohort = Cohort::new(schema, records)?;
    let dups = cohort.same_day_duplicates();
    if !dups.is_empty() {
        log::warn!("{} patient-days hold more than one visit; aggregate before training", dups.len());
    }
    Ok(cohort)
}

fn ordered_key(t: f64) -> u64 {
    let bits = (t + 0.0).to_bits();
    if bits >> 63 == 1 {
        !bits
    } else {
        bits | (1 << 63)
    }
}

fn csv_err(path: &Path, row: usize, e: csv::Error) -> DataError {
    DataError::Csv {
        file: path.display().to_string(),
        row,
        msg: e.to_string(),
    }
}

fn fmt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes `visits.csv`, `static.csv` and `schema.json` into `dir`.
/// Output is a pure function of the cohort.
pub fn write_cohort(cohort: &Cohort, dir: &Path) -> Result<(), DataError> {
    std::fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    let schema_path = dir.join(SCHEMA_FILE);
    std::fs::write(&schema_path, cohort.schema.to_json_pretty() + "\n").map_err(|e| DataError::io(&schema_path, e))?;

    let path = dir.join(VISITS_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, 0, e))?;
    let mut header = vec!["patient_id".to_string(), "time".to_string()];
    header.extend(cohort.schema.dynamic().map(|f| f.name.clone()));
    w.write_record(&header).map_err(|e| csv_err(&path, 1, e))?;
    for r in &cohort.records {
        for v in &r.visits {
            let mut row = vec![r.patient_id.clone(), v.time.to_string()];
            row.extend(v.values.iter().map(|x| fmt_cell(*x)));
            w.write_record(&row).map_err(|e| csv_err(&path, 0, e))?;
        }
    }
    w.flush().map_err(|e| DataError::io(&path, e))?;

    let path = dir.join(STATIC_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, 0, e))?;
    let mut header = vec!["patient_id".to_string()];
    header.extend(cohort.schema.static_features().map(|f| f.name.clone()));
    header.extend(["event".to_string(), "event_time".to_string()]);
    w.write_record(&header).map_err(|e| csv_err(&path, 1, e))?;
    for r in &cohort.records {
        let mut row = vec![r.patient_id.clone()];
        row.extend(r.static_values.iter().map(|x| fmt_cell(*x)));
        row.push(if r.outcome.event { "1" } else { "0" }.to_string());
        row.push(fmt_cell(r.outcome.time));
        w.write_record(&row).map_err(|e| csv_err(&path, 0, e))?;
    }
    w.flush().map_err(|e| DataError::io(&path, e))?;
    Ok(())
}

/// Loads a directory written by [`write_cohort`].
pub fn load_cohort_dir(dir: &Path) -> Result<Cohort, DataError> {
    load_cohort(&dir.join(VISITS_FILE), &dir.join(STATIC_FILE), &dir.join(SCHEMA_FILE))
}
