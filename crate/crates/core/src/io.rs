//! JSONL and JSON persistence.
//!
//! Records are written one compact JSON object per line with keys in struct
//! field order; floats use the shortest representation that round-trips.
//! Pipeline artifacts start with a header line `{"header": {...}}` carrying
//! the config hash and iteration; readers accept files with or without one.
//! Files are written to a temporary sibling and renamed into place, so a
//! failed write never clobbers an existing artifact.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::backends::PromptStyle;
use crate::consistency::Problem;
use crate::error::{Error, Result};
use crate::pairs::PreferencePair;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArtifactHeader {
    pub config_hash: String,
    pub iteration: usize,
    /// Artifact kind, e.g. `"samples"` or `"pairs"`.
    pub kind: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HeaderLine {
    header: ArtifactHeader,
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}

/// Write `bytes` to `path` atomically, creating parent directories.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tmp = tmp_path(path);
    let mut file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    file.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    file.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Serialize records (and an optional header) as JSONL text.
pub fn to_jsonl<T: Serialize>(header: Option<&ArtifactHeader>, records: &[T]) -> Result<String> {
    let mut out = String::new();
    if let Some(h) = header {
        out.push_str(&serde_json::to_string(&HeaderLine { header: h.clone() })?);
        out.push('\n');
    }
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

/// Parse JSONL text; `path` is only used in error messages.
pub fn from_jsonl<T: DeserializeOwned>(text: &str, path: &Path) -> Result<(Option<ArtifactHeader>, Vec<T>)> {
    let mut header = None;
    let mut records = Vec::new();
    for (i, line) in text.split('\n').enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if i == 0 && line.trim_start().starts_with("{\"header\"") {
            let parsed: HeaderLine = serde_json::from_str(line).map_err(|e| Error::Schema {
                path: path.to_path_buf(),
                line: 1,
                message: e.to_string(),
            })?;
            header = Some(parsed.header);
            continue;
        }
        let record = serde_json::from_str(line).map_err(|e| Error::Schema {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok((header, records))
}

pub fn write_jsonl<T: Serialize>(path: &Path, header: Option<&ArtifactHeader>, records: &[T]) -> Result<()> {
    write_atomic(path, to_jsonl(header, records)?.as_bytes())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<(Option<ArtifactHeader>, Vec<T>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_jsonl(&text, path)
}

/// Read problems and reject duplicate ids and labeled generated problems.
pub fn read_problems(path: &Path) -> Result<Vec<Problem>> {
    let (_, problems): (_, Vec<Problem>) = read_jsonl(path)?;
    let mut seen = std::collections::BTreeSet::new();
    for (i, p) in problems.iter().enumerate() {
        if !seen.insert(p.id.as_str()) {
            return Err(Error::Schema {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("duplicate problem id {:?}", p.id),
            });
        }
        if p.origin == crate::consistency::Origin::Generated && p.gold_answer.is_some() {
            return Err(Error::Schema {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("generated problem {:?} carries a gold answer", p.id),
            });
        }
    }
    Ok(problems)
}

/// Pretty JSON document with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Schema {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// A pair in the shape generic DPO trainers consume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpoRecord {
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
    pub weight: f64,
}

/// Convert pairs to DPO records; the prompt is the response-generation
/// prompt of `style` applied to the problem text.
pub fn to_dpo_records(
    pairs: &[PreferencePair],
    problems: &BTreeMap<String, Problem>,
    style: PromptStyle,
) -> Result<Vec<DpoRecord>> {
    pairs
        .iter()
        .map(|p| {
            let problem = problems
                .get(&p.problem_id)
                .ok_or_else(|| Error::UnknownProblem(p.problem_id.clone()))?;
            Ok(DpoRecord {
                prompt: style.render_response(&problem.text)?,
                chosen: p.chosen_text.clone(),
                rejected: p.rejected_text.clone(),
                weight: p.weight,
            })
        })
        .collect()
}
