//! Input loading, output writing and the metadata block embedded in every JSON result.

use std::fs;
use std::path::{Path, PathBuf};

use pyeb::partition::{read_occupancy_csv, read_sample_csv};
use pyeb::PartitionStats;
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Meta {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    /// Every resolved setting of the invocation, defaults included.
    pub config: Value,
    pub seed: Option<u64>,
    pub inputs: Vec<InputDigest>,
}

impl Meta {
    pub fn new(command: &'static str, config: Value, seed: Option<u64>) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            config,
            seed,
            inputs: Vec::new(),
        }
    }
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    meta: &'a Meta,
    result: &'a T,
}

pub fn read_bytes(path: &Path, meta: &mut Meta) -> Result<Vec<u8>, CliError> {
    let bytes = fs::read(path)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
    meta.inputs.push(InputDigest {
        path: path.display().to_string(),
        sha256: format!("{:x}", Sha256::digest(&bytes)),
    });
    Ok(bytes)
}

/// Species labels from a sample CSV (`species`) or an occupancy CSV (`species,count`).
pub fn read_labels(path: &Path, meta: &mut Meta) -> Result<Vec<String>, CliError> {
    let bytes = read_bytes(path, meta)?;
    let header = bytes.split(|&b| b == b'\n').next().unwrap_or_default();
    let header = String::from_utf8_lossy(header);
    if header.split(',').any(|h| h.trim() == "count") {
        let rows = read_occupancy_csv(bytes.as_slice()).map_err(runtime)?;
        let mut out = Vec::new();
        for (s, c) in rows {
            out.extend(std::iter::repeat_n(s, c as usize));
        }
        Ok(out)
    } else {
        read_sample_csv(bytes.as_slice()).map_err(runtime)
    }
}

/// Stats from a stats JSON (bare, or wrapped as written by `simulate`), a
/// sample CSV or an occupancy CSV, chosen by extension and header.
pub fn read_stats(path: &Path, meta: &mut Meta) -> Result<PartitionStats, CliError> {
    let is_json = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if !is_json {
        let labels = read_labels(path, meta)?;
        return PartitionStats::from_observations(&labels).map_err(runtime);
    }
    let bytes = read_bytes(path, meta)?;
    let mut v: Value = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::Runtime(format!("{}: malformed JSON: {e}", path.display())))?;
    if let Some(inner) = v.get_mut("result").map(Value::take) {
        v = inner;
    }
    serde_json::from_value(v)
        .map_err(|e| CliError::Runtime(format!("{}: not a stats document: {e}", path.display())))
}

pub fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

pub fn check_writable(path: &Path, force: bool) -> Result<(), CliError> {
    if path.exists() && !force {
        return Err(CliError::Runtime(format!(
            "{} exists; pass --force to overwrite",
            path.display()
        )));
    }
    Ok(())
}

pub fn write_file(path: &Path, bytes: &[u8], force: bool) -> Result<(), CliError> {
    check_writable(path, force)?;
    fs::write(path, bytes)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

/// Pretty JSON of `{meta, result}`, newline-terminated.
pub fn envelope<T: Serialize>(meta: &Meta, result: &T) -> String {
    let mut s =
        serde_json::to_string_pretty(&Envelope { meta, result }).expect("result serializes");
    s.push('\n');
    s
}

/// Writes to `out` when given, otherwise to stdout.
pub fn emit(out: Option<&PathBuf>, text: &str, force: bool) -> Result<(), CliError> {
    match out {
        Some(p) => write_file(p, text.as_bytes(), force),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// `s.csv` → `s.stats.json`.
pub fn stats_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    out.with_file_name(format!("{stem}.stats.json"))
}
