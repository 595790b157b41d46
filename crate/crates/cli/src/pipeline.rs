//! Pieces shared by several commands: feature extraction, checkpoints and
//! file helpers.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use atlas_core::backends::{mock_encode, MOCK_DIMENSION};
use atlas_core::geometry::{AspectId, EmbeddingVector, Normalization};
use atlas_core::store::{read_jsonl, write_atomic, SummaryRecord};
use atlas_core::train::{build_target_embedding, AspectTrainConfig, DistillConfig, FeatureEncoder, UnifiedEncoder};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Identity of the text featurizer feeding every trained model.
pub fn input_encoder() -> String {
    format!("mock-trigram-{MOCK_DIMENSION}")
}

/// Feature vector of one summary under its aspect.
pub fn summary_features(text: &str, aspect: &AspectId) -> atlas_core::Result<Vec<f64>> {
    Ok(mock_encode(text, aspect)?.into_inner())
}

/// Feature vector of a whole abstract, shared by every aspect head.
pub fn abstract_features(text: &str) -> atlas_core::Result<Vec<f64>> {
    Ok(mock_encode(text, &AspectId::from("abstract"))?.into_inner())
}

pub type Summaries = BTreeMap<AspectId, BTreeMap<String, Vec<String>>>;

/// `aspect -> doc -> summaries` from a summaries JSONL file. Later lines for
/// the same pair replace earlier ones.
pub fn load_summaries(path: &Path) -> anyhow::Result<Summaries> {
    let records: Vec<SummaryRecord> = read_jsonl(path)?;
    let mut out = Summaries::new();
    for r in records {
        r.validate()?;
        out.entry(r.aspect).or_default().insert(r.doc_id, r.summaries);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AspectCheckpoint {
    pub aspect: AspectId,
    pub seed: u64,
    pub input_encoder: String,
    pub config: AspectTrainConfig,
    pub best_step: usize,
    pub best_mean_rank: f64,
    pub best_mrr: f64,
    pub encoder: FeatureEncoder,
}

impl AspectCheckpoint {
    pub fn file_name(aspect: &AspectId) -> String {
        format!("encoder-{aspect}.json")
    }

    /// Embedding of one summary text.
    pub fn embed(&self, text: &str) -> atlas_core::Result<EmbeddingVector> {
        self.encoder.encode(&summary_features(text, &self.aspect)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnifiedCheckpoint {
    pub seed: u64,
    pub input_encoder: String,
    pub config: DistillConfig,
    pub best_step: usize,
    pub best_mean_rank: f64,
    pub encoder: UnifiedEncoder,
}

/// Every `encoder-<aspect>.json` in `dir`, keyed by aspect.
pub fn load_encoders(dir: &Path) -> anyhow::Result<BTreeMap<AspectId, AspectCheckpoint>> {
    let mut out = BTreeMap::new();
    let entries = fs::read_dir(dir).with_context(|| format!("reading encoder directory {}", dir.display()))?;
    let mut paths: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
    paths.sort();
    for p in paths {
        let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if !(name.starts_with("encoder-") && name.ends_with(".json")) {
            continue;
        }
        let ckpt: AspectCheckpoint = read_json(&p)?;
        if ckpt.input_encoder != input_encoder() {
            bail!(atlas_core::Error::InvalidConfig(format!(
                "{} was trained on {} features, this build produces {}",
                p.display(),
                ckpt.input_encoder,
                input_encoder()
            )));
        }
        out.insert(ckpt.aspect.clone(), ckpt);
    }
    if out.is_empty() {
        bail!(atlas_core::Error::NotFound(format!("no encoder-*.json in {}", dir.display())));
    }
    Ok(out)
}

/// `doc -> aspect -> target`: the mean encoded summary of every document
/// that has summaries for an aspect with a trained encoder.
pub fn build_targets(
    summaries: &Summaries,
    encoders: &BTreeMap<AspectId, AspectCheckpoint>,
    normalization: Normalization,
) -> anyhow::Result<BTreeMap<String, BTreeMap<AspectId, EmbeddingVector>>> {
    let mut out: BTreeMap<String, BTreeMap<AspectId, EmbeddingVector>> = BTreeMap::new();
    for (aspect, ckpt) in encoders {
        let Some(per_doc) = summaries.get(aspect) else {
            tracing::warn!(%aspect, "encoder has no summaries");
            continue;
        };
        for (doc, texts) in per_doc {
            let encoded: Vec<EmbeddingVector> = texts.iter().map(|t| ckpt.embed(t)).collect::<Result<_, _>>()?;
            let target = build_target_embedding(doc, aspect, &encoded, normalization)?;
            out.entry(doc.clone()).or_default().insert(aspect.clone(), target);
        }
    }
    Ok(out)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).map_err(|e| atlas_core::Error::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| atlas_core::Error::InvalidConfig(format!("{}: {e}", path.display())))
        .map_err(Into::into)
}

/// Pretty JSON with a trailing newline, written atomically.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)?;
    Ok(())
}

/// Refuses to let a command overwrite its own input.
pub fn ensure_distinct(input: &Path, output: &Path) -> anyhow::Result<()> {
    let same = match (fs::canonicalize(input), fs::canonicalize(output)) {
        (Ok(a), Ok(b)) => a == b,
        _ => input == output,
    };
    if same {
        bail!(atlas_core::Error::InvalidConfig(format!(
            "output {} would overwrite the input atlas; choose another path",
            output.display()
        )));
    }
    Ok(())
}

pub fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).map_err(|e| atlas_core::Error::io(dir, e))?;
    Ok(())
}
