//! Training metrics and their CSV / JSON-lines encodings.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bumped whenever the CSV columns change.
pub const METRICS_SCHEMA_VERSION: u32 = 1;

pub const CSV_HEADER: [&str; 7] = ["run", "epoch", "step", "loss", "accuracy", "elapsed_ms", "rate"];

/// One observation of a training run.
///
/// `epoch` counts completed epochs and `step` counts optimizer steps taken
/// when the record was made, so record 0 of every run is the starting point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub run: u32,
    pub epoch: u32,
    pub step: u64,
    pub loss: f64,
    pub accuracy: Option<f64>,
    pub elapsed_ms: u64,
    pub rate: f64,
}

pub fn write_csv<W: Write>(writer: W, records: &[MetricsRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record([
            r.run.to_string(),
            r.epoch.to_string(),
            r.step.to_string(),
            format_float(r.loss),
            r.accuracy.map(format_float).unwrap_or_default(),
            r.elapsed_ms.to_string(),
            format_float(r.rate),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Shortest representation that parses back to the same `f64`.
fn format_float(v: f64) -> String {
    format!("{v:?}")
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<MetricsRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != CSV_HEADER {
        return Err(Error::config(format!(
            "{} does not have the metrics header `{}`",
            path.display(),
            CSV_HEADER.join(",")
        )));
    }
    let mut out = Vec::new();
    for row in r.deserialize() {
        out.push(row?);
    }
    Ok(out)
}

pub fn write_jsonl<W: Write>(mut writer: W, records: &[MetricsRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut writer, r)?;
        writer.write_all(b"\n").map_err(|e| Error::io("<jsonl>", e))?;
    }
    Ok(())
}
