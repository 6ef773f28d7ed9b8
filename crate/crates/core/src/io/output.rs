//! Deterministic CSV/JSON writers and run metadata.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;

/// 17 significant digits in scientific notation; `NaN`, `inf`, `-inf` otherwise.
pub fn fmt17(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt17).unwrap_or_default()
}

/// Writes a header and rows to `path`.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

/// Hex SHA-256 of the compact JSON form of `config`.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    let bytes = serde_json::to_vec(config)?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct RunMetadata<'a, T: Serialize> {
    pub command: &'a str,
    pub version: &'a str,
    pub seed: u64,
    pub config_hash: String,
    pub config: &'a T,
    pub outputs: Vec<String>,
    pub notes: Vec<String>,
}

/// Writes `metadata.json` next to the outputs.
pub fn write_metadata<T: Serialize>(
    dir: &Path,
    command: &str,
    seed: u64,
    config: &T,
    outputs: &[PathBuf],
    notes: Vec<String>,
) -> Result<()> {
    let meta = RunMetadata {
        command,
        version: env!("CARGO_PKG_VERSION"),
        seed,
        config_hash: config_hash(config)?,
        config,
        outputs: outputs
            .iter()
            .map(|p| p.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default())
            .collect(),
        notes,
    };
    write_json(&dir.join("metadata.json"), &meta)
}
