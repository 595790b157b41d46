use std::collections::{BTreeMap, HashMap};

use super::{Decoded, DecoderBackend, EncoderBackend, SummarizerBackend, REFUSAL};
use crate::error::{Error, Result};
use crate::geometry::{dot, AspectId, EmbeddingVector};

/// Output dimension of [`mock_encode`].
pub const MOCK_DIMENSION: usize = 150;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(state: u64, bytes: &[u8]) -> u64 {
    bytes.iter().fold(state, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Lowercased alphanumeric word tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).map(str::to_lowercase).collect()
}

/// Hashes character trigrams of the normalized text, salted by the aspect,
/// and accumulates a pseudo-random projection row per trigram. Only integer
/// hashing and exact `u64 -> f64` conversions are involved, so the output is
/// identical on every platform.
pub fn encode_with_dim(text: &str, aspect: &AspectId, dim: usize) -> Result<EmbeddingVector> {
    let words = tokenize(text);
    if words.is_empty() {
        return Err(Error::Degenerate("cannot encode empty text".into()));
    }
    let normalized: Vec<char> = format!(" {} ", words.join(" ")).chars().collect();
    let salt = fnv1a(fnv1a(FNV_OFFSET, aspect.as_str().as_bytes()), &[0xff]);
    let mut out = vec![0.0; dim];
    let mut buf = [0u8; 12];
    for tri in normalized.windows(3) {
        let mut len = 0;
        for c in tri {
            len += c.encode_utf8(&mut buf[len..]).len();
        }
        let h = fnv1a(salt, &buf[..len]);
        for (k, o) in out.iter_mut().enumerate() {
            let r = splitmix64(h ^ (k as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            // uniform in [-1, 1) from the top 53 bits
            *o += (r >> 11) as f64 / (1u64 << 52) as f64 - 1.0;
        }
    }
    EmbeddingVector::new(out)
}

pub fn mock_encode(text: &str, aspect: &AspectId) -> Result<EmbeddingVector> {
    encode_with_dim(text, aspect, MOCK_DIMENSION)
}

#[derive(Debug, Clone)]
pub struct MockEncoder {
    dim: usize,
}

impl MockEncoder {
    pub fn new(dim: usize) -> Self {
        MockEncoder { dim }
    }
}

impl Default for MockEncoder {
    fn default() -> Self {
        MockEncoder::new(MOCK_DIMENSION)
    }
}

impl EncoderBackend for MockEncoder {
    fn identity(&self) -> String {
        format!("mock-trigram-{}", self.dim)
    }

    fn dimension(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str, aspect: &AspectId) -> Result<EmbeddingVector> {
        encode_with_dim(text, aspect, self.dim)
    }
}

/// Extracts sentences containing an aspect's cue phrases. Returns the refusal
/// sentinel when no sentence matches.
#[derive(Debug, Clone, Default)]
pub struct MockSummarizer {
    cues: BTreeMap<AspectId, Vec<String>>,
}

impl MockSummarizer {
    pub fn new(cues: BTreeMap<AspectId, Vec<String>>) -> Self {
        let cues = cues.into_iter().map(|(a, c)| (a, c.into_iter().map(|s| s.to_lowercase()).collect())).collect();
        MockSummarizer { cues }
    }
}

fn sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let chars: Vec<char> = text.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        cur.push(c);
        let end = matches!(c, '.' | '!' | '?') && chars.get(i + 1).is_none_or(|n| n.is_whitespace());
        if end {
            let s = cur.trim();
            if !s.is_empty() {
                out.push(s.to_string());
            }
            cur.clear();
        }
    }
    let s = cur.trim();
    if !s.is_empty() {
        out.push(s.to_string());
    }
    out
}

impl SummarizerBackend for MockSummarizer {
    fn identity(&self) -> String {
        "mock-cue-extractor".into()
    }

    fn summarize(&self, abstract_text: &str, aspect: &AspectId, n: usize) -> Result<Vec<String>> {
        let cues = self.cues.get(aspect).ok_or_else(|| Error::UnknownAspect(aspect.to_string()))?;
        let hits: Vec<String> = sentences(abstract_text)
            .into_iter()
            .filter(|s| {
                let lower = s.to_lowercase();
                cues.iter().any(|c| lower.contains(c.as_str()))
            })
            .take(n)
            .collect();
        if hits.is_empty() {
            return Ok(vec![REFUSAL.to_string(); n.min(1)]);
        }
        Ok(hits)
    }
}

#[derive(Debug, Clone)]
struct StoredDoc {
    unit: Vec<f64>,
    summaries: Vec<String>,
}

/// Cosine at or below this means the input says nothing about any stored document.
const LOW_CONFIDENCE_COSINE: f64 = 1e-9;

/// Decodes an embedding to a stored summary of the closest document.
#[derive(Debug, Clone, Default)]
pub struct NearestNeighborDecoder {
    docs: BTreeMap<AspectId, BTreeMap<String, StoredDoc>>,
}

impl NearestNeighborDecoder {
    pub fn new() -> Self {
        NearestNeighborDecoder::default()
    }

    pub fn insert(
        &mut self,
        aspect: AspectId,
        doc_id: impl Into<String>,
        embedding: &EmbeddingVector,
        summaries: Vec<String>,
    ) -> Result<()> {
        let l = embedding.norm();
        if l <= 0.0 {
            return Err(Error::ZeroNorm { index: 0 });
        }
        if summaries.is_empty() {
            return Err(Error::Degenerate("a stored document needs at least one summary".into()));
        }
        let unit = embedding.as_slice().iter().map(|x| x / l).collect();
        self.docs.entry(aspect).or_default().insert(doc_id.into(), StoredDoc { unit, summaries });
        Ok(())
    }

    fn store(&self, aspect: &AspectId) -> Result<&BTreeMap<String, StoredDoc>> {
        let store = self.docs.get(aspect).ok_or_else(|| Error::UnknownAspect(aspect.to_string()))?;
        if store.is_empty() {
            return Err(Error::Degenerate(format!("no stored summaries for aspect {aspect}")));
        }
        Ok(store)
    }

    /// Cosine similarity of `embedding` to every stored document, in id order.
    fn similarities<'a>(&'a self, embedding: &EmbeddingVector, aspect: &AspectId) -> Result<Vec<(&'a str, &'a StoredDoc, f64)>> {
        let store = self.store(aspect)?;
        let l = embedding.norm();
        if l <= 0.0 {
            return Err(Error::ZeroNorm { index: 0 });
        }
        let mut out = Vec::with_capacity(store.len());
        for (id, doc) in store {
            if doc.unit.len() != embedding.dim() {
                return Err(Error::DimensionMismatch { expected: doc.unit.len(), got: embedding.dim() });
            }
            out.push((id.as_str(), doc, dot(&doc.unit, embedding.as_slice()) / l));
        }
        Ok(out)
    }
}

impl DecoderBackend for NearestNeighborDecoder {
    fn identity(&self) -> String {
        "mock-nearest-neighbor".into()
    }

    fn decode(&self, embedding: &EmbeddingVector, aspect: &AspectId) -> Result<Decoded> {
        let sims = self.similarities(embedding, aspect)?;
        let mut best = 0;
        for (i, s) in sims.iter().enumerate() {
            if s.2 > sims[best].2 {
                best = i;
            }
        }
        let low_confidence = sims[best].2 <= LOW_CONFIDENCE_COSINE;
        if low_confidence {
            best = 0;
        }
        let (id, doc, cos) = &sims[best];
        Ok(Decoded {
            text: doc.summaries[0].clone(),
            source_doc: Some(id.to_string()),
            confidence: *cos,
            low_confidence,
        })
    }
}

/// Scoring stub: a unigram language model mixed over stored documents with
/// weights `softmax(cos(e, e_d) / temperature)`, interpolated with a uniform
/// distribution over the vocabulary. Decoding defers to the nearest neighbor.
#[derive(Debug, Clone)]
pub struct MixtureLmDecoder {
    nn: NearestNeighborDecoder,
    unigrams: BTreeMap<AspectId, Vec<HashMap<String, f64>>>,
    vocab_size: usize,
    pub temperature: f64,
    pub lambda: f64,
}

impl MixtureLmDecoder {
    pub fn new(nn: NearestNeighborDecoder) -> Self {
        let mut vocab = std::collections::BTreeSet::new();
        let mut unigrams = BTreeMap::new();
        for (aspect, store) in &nn.docs {
            let mut per_doc = Vec::new();
            for doc in store.values() {
                let mut counts: HashMap<String, f64> = HashMap::new();
                let tokens: Vec<String> = doc.summaries.iter().flat_map(|s| tokenize(s)).collect();
                let total = tokens.len().max(1) as f64;
                for t in tokens {
                    vocab.insert(t.clone());
                    *counts.entry(t).or_default() += 1.0;
                }
                counts.values_mut().for_each(|c| *c /= total);
                per_doc.push(counts);
            }
            unigrams.insert(aspect.clone(), per_doc);
        }
        // one extra slot for unseen tokens
        MixtureLmDecoder { nn, unigrams, vocab_size: vocab.len() + 1, temperature: 0.05, lambda: 0.9 }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }
}

impl DecoderBackend for MixtureLmDecoder {
    fn identity(&self) -> String {
        "mock-unigram-mixture".into()
    }

    fn decode(&self, embedding: &EmbeddingVector, aspect: &AspectId) -> Result<Decoded> {
        self.nn.decode(embedding, aspect)
    }

    fn supports_scoring(&self) -> bool {
        true
    }

    fn score(&self, embedding: Option<&EmbeddingVector>, aspect: &AspectId, reference: &str) -> Result<f64> {
        let tokens = tokenize(reference);
        if tokens.is_empty() {
            return Err(Error::Degenerate("cannot score empty reference".into()));
        }
        let models = self.unigrams.get(aspect).ok_or_else(|| Error::UnknownAspect(aspect.to_string()))?;
        let weights: Vec<f64> = match embedding {
            None => vec![1.0 / models.len() as f64; models.len()],
            Some(e) => {
                let logits: Vec<f64> =
                    self.nn.similarities(e, aspect)?.iter().map(|s| s.2 / self.temperature).collect();
                let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
                let z: f64 = exp.iter().sum();
                exp.into_iter().map(|x| x / z).collect()
            }
        };
        let uniform = (1.0 - self.lambda) / self.vocab_size as f64;
        let mut log_lik = 0.0;
        for t in &tokens {
            let mixed: f64 = models.iter().zip(&weights).map(|(m, w)| w * m.get(t).copied().unwrap_or(0.0)).sum();
            log_lik += (self.lambda * mixed + uniform).ln();
        }
        Ok((-log_lik / tokens.len() as f64).exp())
    }
}
