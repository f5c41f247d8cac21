//! JSON-lines records: tag assignments, ground-truth labels, search results
//! and the optional id → name sidecar of embedding files.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{HsqError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagAssignment {
    pub image: u32,
    pub tags: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub image: u32,
    pub labels: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub query: u32,
    pub results: Vec<(u32, f64)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NameRecord {
    pub id: u32,
    pub name: String,
}

/// Reads one JSON object per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| HsqError::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| HsqError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| {
            HsqError::format(path, format!("line {}: {}", lineno + 1, e))
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| HsqError::io(parent, e))?;
        }
    }
    let file = fs::File::create(path).map_err(|e| HsqError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for rec in records {
        let line = serde_json::to_string(rec)
            .map_err(|e| HsqError::format(path, e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| HsqError::io(path, e))?;
    }
    w.flush().map_err(|e| HsqError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| HsqError::io(parent, e))?;
        }
    }
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| HsqError::format(path, e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| HsqError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| HsqError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| HsqError::format(path, e.to_string()))
}

/// Sidecar path for an embeddings file: `<path>.names.jsonl`.
pub fn names_sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".names.jsonl");
    PathBuf::from(s)
}

/// Loads the name sidecar if present. Ids must cover `0..count` exactly once.
pub fn read_names(path: &Path, count: usize) -> Result<Option<Vec<String>>> {
    let side = names_sidecar(path);
    if !side.exists() {
        return Ok(None);
    }
    let recs: Vec<NameRecord> = read_jsonl(&side)?;
    let mut names: Vec<Option<String>> = vec![None; count];
    for rec in recs {
        let slot = names.get_mut(rec.id as usize).ok_or_else(|| {
            HsqError::format(&side, format!("id {} out of range 0..{}", rec.id, count))
        })?;
        if slot.replace(rec.name).is_some() {
            return Err(HsqError::format(&side, format!("duplicate id {}", rec.id)));
        }
    }
    names
        .into_iter()
        .enumerate()
        .map(|(i, n)| n.ok_or_else(|| HsqError::format(&side, format!("missing id {i}"))))
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

pub fn write_names(path: &Path, names: &[String]) -> Result<()> {
    let recs: Vec<NameRecord> = names
        .iter()
        .enumerate()
        .map(|(i, n)| NameRecord { id: i as u32, name: n.clone() })
        .collect();
    write_jsonl(&names_sidecar(path), &recs)
}
