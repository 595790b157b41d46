//! Pluggable text encoding, summarization and decoding.
//!
//! Every capability is a trait so the geometry and training code never depends
//! on where vectors or sentences come from. The mock implementations are
//! deterministic and platform independent; [`remote`] talks to a
//! chat-completion HTTP endpoint.

mod mock;
mod prompts;
pub mod remote;

pub use mock::{
    mock_encode, tokenize, MixtureLmDecoder, MockEncoder, MockSummarizer, NearestNeighborDecoder, MOCK_DIMENSION,
};
pub use prompts::PromptTemplates;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{AspectId, EmbeddingVector};

/// The exact text a summarizer returns when an aspect is absent.
pub const REFUSAL: &str = "Not applicable.";

pub fn is_refusal(text: &str) -> bool {
    let t = text.trim();
    t == REFUSAL || t == REFUSAL.trim_end_matches('.')
}

/// Drops refusals and blank strings.
pub fn filter_refusals(texts: Vec<String>) -> Vec<String> {
    texts.into_iter().filter(|t| !t.trim().is_empty() && !is_refusal(t)).collect()
}

pub trait EncoderBackend: Send + Sync {
    fn identity(&self) -> String;
    fn dimension(&self) -> usize;
    fn encode(&self, text: &str, aspect: &AspectId) -> Result<EmbeddingVector>;
}

pub trait SummarizerBackend: Send + Sync {
    fn identity(&self) -> String;
    /// Up to `n` summaries of `abstract_text` under `aspect`. Items may be the
    /// refusal sentinel; callers filter.
    fn summarize(&self, abstract_text: &str, aspect: &AspectId, n: usize) -> Result<Vec<String>>;
}

/// Text produced for an embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decoded {
    pub text: String,
    /// Document whose summary was returned, for retrieval-style decoders.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_doc: Option<String>,
    /// Cosine similarity to the source, or the backend's own score.
    pub confidence: f64,
    pub low_confidence: bool,
}

pub trait DecoderBackend: Send + Sync {
    fn identity(&self) -> String;

    fn decode(&self, embedding: &EmbeddingVector, aspect: &AspectId) -> Result<Decoded>;

    fn supports_scoring(&self) -> bool {
        false
    }

    /// Perplexity of `reference` conditioned on `embedding`, or unconditioned
    /// when `embedding` is `None`.
    fn score(&self, _embedding: Option<&EmbeddingVector>, _aspect: &AspectId, _reference: &str) -> Result<f64> {
        Err(Error::Capability(format!("decoder {} cannot score text", self.identity())))
    }
}
