use std::fs::File;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Cohort, Recording, REQUIRED_ELECTRODE, TEN_TWENTY};
use crate::error::{Error, Result};

/// One line of a dataset manifest. `path` is relative to the manifest's
/// directory unless absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub subject_id: String,
    pub cohort: Cohort,
    pub path: String,
    pub sample_rate_hz: f64,
}

fn ingestion(path: &Path, message: impl Into<String>) -> Error {
    Error::Ingestion {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Reads a `t,<electrodes...>,label` CSV and z-scores every channel.
pub fn load_recording(path: &Path, entry: &ManifestEntry) -> Result<Recording> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| ingestion(path, format!("unreadable header: {e}")))?
        .clone();
    let t_col = headers.iter().position(|h| h == "t");
    let label_col = headers
        .iter()
        .position(|h| h == "label")
        .ok_or_else(|| ingestion(path, "missing label column"))?;
    let mut names = Vec::new();
    let mut cols = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        if Some(i) == t_col || i == label_col {
            continue;
        }
        if !TEN_TWENTY.contains(&h) {
            return Err(ingestion(
                path,
                format!("column {h:?} is not a 10-20 electrode"),
            ));
        }
        if names.iter().any(|n| n == h) {
            return Err(ingestion(path, format!("duplicate electrode column {h}")));
        }
        names.push(h.to_string());
        cols.push(i);
    }
    if !names.iter().any(|n| n == REQUIRED_ELECTRODE) {
        return Err(ingestion(
            path,
            format!("missing required electrode column {REQUIRED_ELECTRODE}"),
        ));
    }

    let mut channels = vec![Vec::new(); names.len()];
    let mut labels = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        // Line 1 is the header.
        let row = idx + 2;
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            row,
            message,
        };
        let record = record.map_err(|e| parse_err(e.to_string()))?;
        if record.len() != headers.len() {
            return Err(parse_err(format!(
                "{} fields, header has {}",
                record.len(),
                headers.len()
            )));
        }
        for (ch, &c) in channels.iter_mut().zip(&cols) {
            let cell = record[c].trim();
            let v: f64 = cell.parse().map_err(|_| {
                parse_err(format!(
                    "non-numeric value {cell:?} in column {}",
                    &headers[c]
                ))
            })?;
            if !v.is_finite() {
                return Err(parse_err(format!(
                    "non-finite value in column {}",
                    &headers[c]
                )));
            }
            ch.push(v);
        }
        labels.push(match record[label_col].trim() {
            "0" => 0,
            "1" => 1,
            other => return Err(parse_err(format!("label {other:?} outside {{0,1}}"))),
        });
    }
    if labels.is_empty() {
        return Err(ingestion(path, "no samples"));
    }
    let raw = Recording::new(
        entry.subject_id.clone(),
        entry.cohort,
        entry.sample_rate_hz,
        names,
        channels,
        labels,
    )
    .map_err(|e| ingestion(path, e.to_string()))?;
    Ok(raw.normalized())
}

/// Writes the recording in original units.
pub fn write_recording_csv(path: &Path, r: &Recording) -> Result<()> {
    let raw = r.denormalized();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    let mut header = vec!["t".to_string()];
    header.extend(raw.channel_names.iter().cloned());
    header.push("label".into());
    w.write_record(&header).map_err(|e| csv_io(path, e))?;
    let mut row = Vec::with_capacity(header.len());
    for t in 0..raw.len() {
        row.clear();
        row.push(t.to_string());
        row.extend(raw.channels.iter().map(|c| c[t].to_string()));
        row.push(raw.labels[t].to_string());
        w.write_record(&row).map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => ingestion(path, format!("{other:?}")),
    }
}

pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let entries: Vec<ManifestEntry> =
        serde_json::from_str(&text).map_err(|e| ingestion(path, format!("bad manifest: {e}")))?;
    let mut seen = std::collections::BTreeSet::new();
    for e in &entries {
        if !seen.insert(e.subject_id.as_str()) {
            return Err(ingestion(
                path,
                format!("duplicate subject {}", e.subject_id),
            ));
        }
    }
    Ok(entries)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let text = serde_json::to_string_pretty(entries)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn resolve(manifest: &Path, entry: &ManifestEntry) -> PathBuf {
    let p = PathBuf::from(&entry.path);
    if p.is_absolute() {
        p
    } else {
        manifest.parent().unwrap_or(Path::new(".")).join(p)
    }
}

/// Loads every recording of a manifest, in manifest order.
pub fn load_dataset(manifest: &Path) -> Result<Vec<Recording>> {
    let entries = load_manifest(manifest)?;
    entries
        .par_iter()
        .map(|e| load_recording(&resolve(manifest, e), e))
        .collect()
}
