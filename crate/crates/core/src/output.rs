//! CSV and JSON writers. Every CSV starts with the schema line
//! [`CSV_HEADER`], followed by a column header row.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "# dividend-barrier v1";

fn out_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Output(format!("{}: {e}", path.display()))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| out_err(dir, e))?;
        }
    }
    Ok(())
}

/// Renders rows as CSV text, schema line included.
pub fn csv_string<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(|e| Error::Output(e.to_string()))?;
    }
    let body = w.into_inner().map_err(|e| Error::Output(e.to_string()))?;
    let body = String::from_utf8(body).map_err(|e| Error::Output(e.to_string()))?;
    Ok(format!("{CSV_HEADER}\n{body}"))
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, csv_string(rows)?).map_err(|e| out_err(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let mut text = serde_json::to_string_pretty(value).map_err(|e| out_err(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| out_err(path, e))
}

/// Reads a CSV written by [`write_csv`], skipping the schema line.
pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| out_err(path, e))?;
    let body = text
        .strip_prefix(CSV_HEADER)
        .ok_or_else(|| out_err(path, "missing schema line"))?;
    csv::ReaderBuilder::new()
        .from_reader(body.trim_start_matches('\n').as_bytes())
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| out_err(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierRow {
    pub x: f64,
    pub b: f64,
    #[serde(rename = "F")]
    pub f: f64,
    pub classification: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DRow {
    pub x: f64,
    pub d: f64,
    pub d_over_x: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceRow {
    pub x: f64,
    pub y: f64,
    pub v: f64,
    pub v_x: f64,
    pub region: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualCsvRow {
    pub x: f64,
    pub y: f64,
    pub region: String,
    pub v: f64,
    pub v_x: f64,
    pub lv: f64,
    pub stopped_identity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRow {
    pub t: f64,
    #[serde(rename = "Y")]
    pub y: f64,
    #[serde(rename = "X")]
    pub x: f64,
    #[serde(rename = "D")]
    pub d: f64,
    pub absorbed: bool,
}
