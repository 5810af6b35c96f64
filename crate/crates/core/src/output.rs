//! CSV and JSON result files.
//!
//! CSV header (exact): `round,sim_time_s,vehicle_id,upload_weight,train_weight,accuracy_pct,loss`.
//! `vehicle_id` is empty for multi-seed rows where seeds disagree. JSON holds
//! the same rows under `rounds` next to `scheme`, `seeds` and
//! `config_fingerprint`.

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::experiment::{ExperimentResult, SweepRow};

pub const RESULT_HEADER: [&str; 7] = [
    "round",
    "sim_time_s",
    "vehicle_id",
    "upload_weight",
    "train_weight",
    "accuracy_pct",
    "loss",
];
pub const SWEEP_HEADER: [&str; 3] = ["beta", "accuracy_pct", "loss"];

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(format!("unknown format `{other}` (csv|json)")),
        }
    }
}

impl fmt::Display for OutputFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        })
    }
}

impl OutputFormat {
    /// `json` for a `.json` extension, CSV otherwise.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => OutputFormat::Json,
            _ => OutputFormat::Csv,
        }
    }
}

fn csv_bytes<const N: usize>(header: [&str; N], rows: impl Iterator<Item = [String; N]>) -> Vec<u8> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(header).expect("in-memory write");
    for row in rows {
        writer.write_record(&row).expect("in-memory write");
    }
    writer.into_inner().expect("in-memory flush")
}

/// Serialized result in the given format.
pub fn render_results(result: &ExperimentResult, format: OutputFormat) -> Vec<u8> {
    match format {
        OutputFormat::Csv => csv_bytes(
            RESULT_HEADER,
            result.rounds.iter().map(|r| {
                [
                    r.round.to_string(),
                    r.sim_time_s.to_string(),
                    r.vehicle_id.map(|v| v.to_string()).unwrap_or_default(),
                    r.upload_weight.to_string(),
                    r.train_weight.to_string(),
                    r.accuracy_pct.to_string(),
                    r.loss.to_string(),
                ]
            }),
        ),
        OutputFormat::Json => {
            let mut bytes = serde_json::to_vec_pretty(result).expect("plain data serializes");
            bytes.push(b'\n');
            bytes
        }
    }
}

pub fn render_sweep(rows: &[SweepRow], format: OutputFormat) -> Vec<u8> {
    match format {
        OutputFormat::Csv => csv_bytes(
            SWEEP_HEADER,
            rows.iter()
                .map(|r| [r.beta.to_string(), r.accuracy_pct.to_string(), r.loss.to_string()]),
        ),
        OutputFormat::Json => {
            let mut bytes = serde_json::to_vec_pretty(rows).expect("plain data serializes");
            bytes.push(b'\n');
            bytes
        }
    }
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), OutputError> {
    let io_err = |e: io::Error| OutputError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err)?;
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(bytes))
        .map_err(io_err)
}

pub fn write_results(result: &ExperimentResult, path: &Path, format: OutputFormat) -> Result<(), OutputError> {
    write_bytes(path, &render_results(result, format))
}

pub fn write_sweep(rows: &[SweepRow], path: &Path, format: OutputFormat) -> Result<(), OutputError> {
    write_bytes(path, &render_sweep(rows, format))
}

pub fn read_results_json(path: &Path) -> Result<ExperimentResult, OutputError> {
    let text = fs::read_to_string(path).map_err(|e| OutputError::Io {
        path: path.into(),
        message: e.to_string(),
    })?;
    serde_json::from_str(&text).map_err(|e| OutputError::Parse {
        path: path.into(),
        message: e.to_string(),
    })
}
