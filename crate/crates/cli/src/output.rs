//! CSV artifacts. Every file starts with a `# config_hash=...,seed=...`
//! comment line followed by an ordinary CSV table.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::CliError;

#[derive(Debug, Clone)]
pub struct Stamp {
    pub config_hash: String,
    pub seed: u64,
}

impl Stamp {
    pub fn header(&self) -> String {
        format!("# config_hash={},seed={}\n", self.config_hash, self.seed)
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn write_bytes(path: &Path, stamp: &Stamp, body: Vec<u8>) -> Result<PathBuf, CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let mut bytes = stamp.header().into_bytes();
    bytes.extend(body);
    fs::write(path, bytes).map_err(|e| io_err(path, e))?;
    Ok(path.to_path_buf())
}

/// Writes serde rows; the header comes from the row struct's field names.
pub fn write_rows<T: Serialize>(path: &Path, stamp: &Stamp, rows: &[T]) -> Result<PathBuf, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| io_err(path, e))?;
    }
    let body = w.into_inner().map_err(|e| io_err(path, e))?;
    write_bytes(path, stamp, body)
}

/// Writes a table with an explicit header row.
pub fn write_table(path: &Path, stamp: &Stamp, header: &[String], rows: &[Vec<String>]) -> Result<PathBuf, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| io_err(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| io_err(path, e))?;
    }
    let body = w.into_inner().map_err(|e| io_err(path, e))?;
    write_bytes(path, stamp, body)
}

pub fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| CliError::Stage(format!("missing input {}: {e}", path.display())))?;
    r.deserialize().collect::<Result<_, _>>().map_err(|e| io_err(path, e))
}

/// The stamp line of an existing artifact.
pub fn read_stamp(path: &Path) -> Result<String, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    Ok(text.lines().next().unwrap_or_default().to_string())
}
