//! Trace rows and their CSV/JSON serialization.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// One metric observation; column order is the CSV header.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub experiment: String,
    pub method: String,
    pub seed: u64,
    pub iteration: u64,
    pub metric: String,
    pub value: f64,
    pub wall_time_s: f64,
}

/// Metric name used for rows marking a cell that stopped on a numerical failure.
pub const FAILURE_METRIC: &str = "failure";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum TraceFormat {
    #[default]
    Csv,
    Json,
}

/// Sidecar describing how a trace file was produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub experiment: String,
    pub kind: String,
    pub spec_hash: String,
    pub seeds: Vec<u64>,
    pub scalar_width: u32,
    pub rng: String,
    /// SHA-256 of each seed's shared gradient stream, where one exists.
    pub stream_hashes: BTreeMap<u64, String>,
    pub failed_cells: Vec<(String, u64)>,
}

pub const RNG_NAME: &str = "ChaCha20";

/// Path of the metadata sidecar for a trace file.
pub fn metadata_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(".meta.json");
    path.with_file_name(name)
}

fn format_err(path: &Path, e: impl ToString) -> HarnessError {
    HarnessError::Format { path: path.to_path_buf(), message: e.to_string() }
}

/// Serialize `records` to bytes; the output is a pure function of its inputs.
pub fn encode_traces(records: &[TraceRecord], format: TraceFormat) -> std::result::Result<Vec<u8>, String> {
    match format {
        TraceFormat::Csv => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
            w.write_record(["experiment", "method", "seed", "iteration", "metric", "value", "wall_time_s"])
                .map_err(|e| e.to_string())?;
            for r in records {
                w.serialize(r).map_err(|e| e.to_string())?;
            }
            w.into_inner().map_err(|e| e.to_string())
        }
        TraceFormat::Json => {
            let mut out = serde_json::to_vec_pretty(records).map_err(|e| e.to_string())?;
            out.push(b'\n');
            Ok(out)
        }
    }
}

pub fn decode_traces(bytes: &[u8], format: TraceFormat) -> std::result::Result<Vec<TraceRecord>, String> {
    match format {
        TraceFormat::Csv => {
            let mut r = csv::Reader::from_reader(bytes);
            r.deserialize().collect::<std::result::Result<_, _>>().map_err(|e| e.to_string())
        }
        TraceFormat::Json => serde_json::from_slice(bytes).map_err(|e| e.to_string()),
    }
}

/// Write `records` to `path` and, when given, the metadata sidecar next to it.
pub fn emit_traces(records: &[TraceRecord], meta: Option<&RunMetadata>, path: &Path, format: TraceFormat) -> Result<()> {
    let bytes = encode_traces(records, format).map_err(|e| format_err(path, e))?;
    fs::write(path, bytes).map_err(|e| HarnessError::io(path, e))?;
    if let Some(meta) = meta {
        let side = metadata_path(path);
        let mut text = serde_json::to_vec_pretty(meta).map_err(|e| format_err(&side, e))?;
        text.push(b'\n');
        fs::write(&side, text).map_err(|e| HarnessError::io(&side, e))?;
    }
    Ok(())
}

pub fn parse_traces(path: &Path, format: TraceFormat) -> Result<Vec<TraceRecord>> {
    let bytes = fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    decode_traces(&bytes, format).map_err(|e| format_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<TraceRecord> {
        vec![
            TraceRecord {
                experiment: "fp,\"quoted\"".into(),
                method: "spectral".into(),
                seed: 3,
                iteration: 10,
                metric: "rel_frobenius".into(),
                value: 0.1 + 0.2,
                wall_time_s: 1.5e-7,
            },
            TraceRecord {
                experiment: "fp".into(),
                method: "default_ema".into(),
                seed: u64::MAX,
                iteration: 0,
                metric: "wasserstein2".into(),
                value: -1e-300,
                wall_time_s: 0.0,
            },
        ]
    }

    #[test]
    fn empty_csv_is_header_only() {
        let bytes = encode_traces(&[], TraceFormat::Csv).unwrap();
        assert_eq!(String::from_utf8(bytes).unwrap(), "experiment,method,seed,iteration,metric,value,wall_time_s\n");
    }

    #[test]
    fn round_trips_and_is_deterministic() {
        for format in [TraceFormat::Csv, TraceFormat::Json] {
            let a = encode_traces(&sample(), format).unwrap();
            let b = encode_traces(&sample(), format).unwrap();
            assert_eq!(a, b);
            assert_eq!(decode_traces(&a, format).unwrap(), sample());
        }
    }

    #[test]
    fn sidecar_name() {
        assert_eq!(metadata_path(Path::new("/tmp/out.csv")), PathBuf::from("/tmp/out.csv.meta.json"));
    }
}
