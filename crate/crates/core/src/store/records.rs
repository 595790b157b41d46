use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::backends::is_refusal;
use crate::error::{Error, Result};
use crate::geometry::AspectId;

/// Summaries a document needs for an aspect to contribute contrastive pairs.
pub const MIN_SUMMARIES_FOR_PAIRS: usize = 2;
/// Summaries a document needs for an aspect to get a distillation target.
pub const MIN_SUMMARIES_FOR_TARGET: usize = 1;
pub const MAX_SUMMARIES: usize = 4;

const _: () = assert!(MIN_SUMMARIES_FOR_PAIRS == 2);
const _: () = assert!(MIN_SUMMARIES_FOR_TARGET == 1);
const _: () = assert!(MIN_SUMMARIES_FOR_TARGET <= MIN_SUMMARIES_FOR_PAIRS && MIN_SUMMARIES_FOR_PAIRS <= MAX_SUMMARIES);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    #[default]
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbstractRecord {
    pub id: String,
    #[serde(default)]
    pub title: String,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
    #[serde(default)]
    pub split: Split,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub labels: BTreeMap<String, String>,
}

impl AbstractRecord {
    pub fn validate(&self) -> Result<()> {
        if self.id.trim().is_empty() {
            return Err(Error::Degenerate("empty document id".into()));
        }
        if self.abstract_text.trim().is_empty() {
            return Err(Error::Degenerate(format!("document {} has an empty abstract", self.id)));
        }
        Ok(())
    }
}

/// Valid summaries of one document under one aspect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub doc_id: String,
    pub aspect: AspectId,
    pub summaries: Vec<String>,
}

impl SummaryRecord {
    /// Rejects refusals, blanks and more than [`MAX_SUMMARIES`] items.
    pub fn new(doc_id: impl Into<String>, aspect: AspectId, summaries: Vec<String>) -> Result<Self> {
        let r = SummaryRecord { doc_id: doc_id.into(), aspect, summaries };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if self.summaries.is_empty() || self.summaries.len() > MAX_SUMMARIES {
            return Err(Error::Degenerate(format!(
                "{}/{}: {} summaries, expected 1..={MAX_SUMMARIES}",
                self.doc_id,
                self.aspect,
                self.summaries.len()
            )));
        }
        if let Some(s) = self.summaries.iter().find(|s| s.trim().is_empty() || is_refusal(s)) {
            return Err(Error::Degenerate(format!("{}/{}: invalid summary {s:?}", self.doc_id, self.aspect)));
        }
        Ok(())
    }

    pub fn usable_for_pairs(&self) -> bool {
        self.summaries.len() >= MIN_SUMMARIES_FOR_PAIRS
    }

    pub fn usable_for_target(&self) -> bool {
        self.summaries.len() >= MIN_SUMMARIES_FOR_TARGET
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IngestMode {
    /// The first malformed line aborts.
    #[default]
    Strict,
    /// Malformed lines are reported and skipped.
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Ingested<T> {
    pub records: Vec<T>,
    pub warnings: Vec<String>,
    /// `(1-based line, reason)` of skipped lines in lenient mode.
    pub rejected: Vec<(usize, String)>,
}

/// Parses line-delimited JSON. Blank lines are ignored.
pub fn parse_jsonl<T, F>(text: &str, mode: IngestMode, mut check: F) -> Result<Ingested<T>>
where
    T: DeserializeOwned,
    F: FnMut(&T) -> Result<()>,
{
    let mut out = Ingested { records: Vec::new(), warnings: Vec::new(), rejected: Vec::new() };
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<T>(line)
            .map_err(|e| e.to_string())
            .and_then(|r| check(&r).map(|_| r).map_err(|e| e.to_string()));
        match parsed {
            Ok(r) => out.records.push(r),
            Err(reason) => match mode {
                IngestMode::Strict => return Err(Error::MalformedLine { line: i + 1, reason }),
                IngestMode::Lenient => {
                    tracing::warn!(line = i + 1, %reason, "skipping malformed line");
                    out.rejected.push((i + 1, reason));
                }
            },
        }
    }
    Ok(out)
}

/// Abstracts from a JSON-lines file, deduplicated by id with the later
/// record winning in the earlier one's position.
pub fn ingest_corpus(path: &Path, mode: IngestMode) -> Result<Ingested<AbstractRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text, mode)
}

pub fn parse_corpus(text: &str, mode: IngestMode) -> Result<Ingested<AbstractRecord>> {
    let mut parsed = parse_jsonl(text, mode, AbstractRecord::validate)?;
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut records: Vec<AbstractRecord> = Vec::with_capacity(parsed.records.len());
    for r in parsed.records {
        match index.get(&r.id) {
            Some(&at) => {
                let msg = format!("duplicate document id {}; keeping the later record", r.id);
                tracing::warn!("{msg}");
                parsed.warnings.push(msg);
                records[at] = r;
            }
            None => {
                index.insert(r.id.clone(), records.len());
                records.push(r);
            }
        }
    }
    parsed.records = records;
    Ok(parsed)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::MalformedLine { line: i + 1, reason: e.to_string() })?);
    }
    Ok(out)
}

pub fn to_jsonl<T: Serialize>(records: &[T]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

/// Writes `bytes` to a temporary file beside `path`, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}
