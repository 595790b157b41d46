use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backends::DecoderBackend;
use crate::error::{Error, Result};
use crate::geometry::{AspectId, EmbeddingVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodingMode {
    /// Each document's embedding scores its own reference summaries.
    Matching,
    /// Each document's references are scored under another document's embedding.
    Shuffled,
    /// References are scored with no embedding at all.
    Unconditioned,
}

/// A document's embedding for one aspect and the summaries it should decode to.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodingDoc {
    pub doc_id: String,
    pub embedding: EmbeddingVector,
    pub references: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AspectPerplexity {
    pub mean_perplexity: f64,
    /// `(doc id, mean perplexity over that document's references)`.
    pub per_doc: Vec<(String, f64)>,
    /// Document whose embedding conditioned each row, in shuffled mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub permutation: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodingControlReport {
    pub mode: DecodingMode,
    pub seed: u64,
    pub decoder: String,
    pub aspects: BTreeMap<AspectId, AspectPerplexity>,
}

/// A uniformly random cyclic permutation (Sattolo), so no index maps to itself.
pub fn derangement(n: usize, seed: u64) -> Result<Vec<usize>> {
    if n < 2 {
        return Err(Error::Degenerate(format!("no derangement of {n} items")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..i);
        perm.swap(i, j);
    }
    Ok(perm)
}

/// Mean reference perplexity per aspect under the chosen conditioning.
pub fn decoding_control_report(
    decoder: &dyn DecoderBackend,
    docs: &BTreeMap<AspectId, Vec<DecodingDoc>>,
    mode: DecodingMode,
    seed: u64,
) -> Result<DecodingControlReport> {
    if !decoder.supports_scoring() {
        return Err(Error::Capability(format!("decoder {} cannot score text", decoder.identity())));
    }
    let mut aspects = BTreeMap::new();
    for (aspect, list) in docs {
        if list.is_empty() {
            continue;
        }
        let permutation = match mode {
            DecodingMode::Shuffled => Some(derangement(list.len(), seed)?),
            _ => None,
        };
        let mut per_doc = Vec::with_capacity(list.len());
        for (i, doc) in list.iter().enumerate() {
            if doc.references.is_empty() {
                return Err(Error::NoValidSummaries { doc: doc.doc_id.clone(), aspect: aspect.to_string() });
            }
            let conditioning = match (&permutation, mode) {
                (_, DecodingMode::Unconditioned) => None,
                (Some(p), _) => Some(&list[p[i]].embedding),
                (None, _) => Some(&doc.embedding),
            };
            let mut total = 0.0;
            for r in &doc.references {
                total += decoder.score(conditioning, aspect, r)?;
            }
            per_doc.push((doc.doc_id.clone(), total / doc.references.len() as f64));
        }
        let mean_perplexity = per_doc.iter().map(|d| d.1).sum::<f64>() / per_doc.len() as f64;
        aspects.insert(aspect.clone(), AspectPerplexity { mean_perplexity, per_doc, permutation });
    }
    Ok(DecodingControlReport { mode, seed, decoder: decoder.identity(), aspects })
}
