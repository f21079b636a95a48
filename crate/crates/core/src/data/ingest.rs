//! CSV ingestion of irregular event streams.
//!
//! Events: `subject_id,feature_name,time_hours,value`.
//! Schema: `name,kind,obs_cost` with `kind` one of `static`/`dynamic`.

use std::collections::BTreeMap;
use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FeatureKind, FeatureSpec};
use crate::{Error, Result};

/// Timestamped observations of one subject, one stream per schema feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSubject {
    pub subject_id: String,
    /// `streams[k]` holds `(time_hours, value)` sorted by time.
    pub streams: Vec<Vec<(f64, f64)>>,
    /// Label stream, when a label feature was named at ingestion.
    pub label: Vec<(f64, f64)>,
}

impl RawSubject {
    /// Earliest and latest event time over every stream, label included.
    pub fn time_span(&self) -> Option<(f64, f64)> {
        self.streams
            .iter()
            .chain(std::iter::once(&self.label))
            .flatten()
            .map(|&(t, _)| t)
            .fold(None, |acc, t| match acc {
                None => Some((t, t)),
                Some((lo, hi)) => Some((f64::min(lo, t), f64::max(hi, t))),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawCohort {
    pub specs: Vec<FeatureSpec>,
    pub subjects: Vec<RawSubject>,
}

#[derive(Debug, Deserialize)]
struct SchemaRow {
    name: String,
    kind: FeatureKind,
    obs_cost: f64,
}

#[derive(Debug, Deserialize)]
struct EventRow {
    subject_id: String,
    feature_name: String,
    time_hours: f64,
    value: f64,
}

fn open_with_columns(path: &Path, required: &[&str]) -> Result<csv::Reader<File>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    for column in required {
        if !headers.iter().any(|h| h == *column) {
            return Err(Error::MissingColumn {
                path: path.to_path_buf(),
                column: column.to_string(),
            });
        }
    }
    Ok(reader)
}

fn parse_error(path: &Path, e: csv::Error) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

pub fn read_schema(schema_path: &Path) -> Result<Vec<FeatureSpec>> {
    let mut reader = open_with_columns(schema_path, &["name", "kind", "obs_cost"])?;
    let mut specs = Vec::new();
    for row in reader.deserialize::<SchemaRow>() {
        let row = row.map_err(|e| parse_error(schema_path, e))?;
        if specs.iter().any(|s: &FeatureSpec| s.name == row.name) {
            return Err(Error::Data(format!(
                "duplicate schema entry `{}`",
                row.name
            )));
        }
        specs.push(FeatureSpec::new(row.name, row.kind, row.obs_cost)?);
    }
    Ok(specs)
}

/// Reads events and groups them per subject and schema feature. Events of
/// `label_feature` (which must not appear in the schema) become the label
/// stream. Subjects are returned in lexicographic id order.
pub fn ingest_csv(
    events_path: &Path,
    schema_path: &Path,
    label_feature: Option<&str>,
) -> Result<RawCohort> {
    let specs = read_schema(schema_path)?;
    let index: BTreeMap<&str, usize> = specs
        .iter()
        .enumerate()
        .map(|(k, s)| (s.name.as_str(), k))
        .collect();

    let mut reader = open_with_columns(
        events_path,
        &["subject_id", "feature_name", "time_hours", "value"],
    )?;
    let mut subjects: BTreeMap<String, RawSubject> = BTreeMap::new();
    for row in reader.deserialize::<EventRow>() {
        let row = row.map_err(|e| parse_error(events_path, e))?;
        if !row.time_hours.is_finite() || !row.value.is_finite() {
            return Err(Error::Parse {
                path: events_path.to_path_buf(),
                message: format!("non-finite event for subject {}", row.subject_id),
            });
        }
        let subject = subjects
            .entry(row.subject_id.clone())
            .or_insert_with(|| RawSubject {
                subject_id: row.subject_id.clone(),
                streams: vec![Vec::new(); specs.len()],
                label: Vec::new(),
            });
        if Some(row.feature_name.as_str()) == label_feature {
            subject.label.push((row.time_hours, row.value));
            continue;
        }
        let k = *index
            .get(row.feature_name.as_str())
            .ok_or_else(|| Error::UnknownFeature(row.feature_name.clone()))?;
        subject.streams[k].push((row.time_hours, row.value));
    }

    let mut subjects: Vec<RawSubject> = subjects.into_values().collect();
    for s in &mut subjects {
        for stream in s.streams.iter_mut().chain(std::iter::once(&mut s.label)) {
            stream.sort_by(|a, b| a.0.total_cmp(&b.0));
        }
    }
    Ok(RawCohort { specs, subjects })
}
