//! Seeded synthetic corpora with known latent structure.
//!
//! [`FeatureCorpus`] produces per-aspect summary feature vectors directly:
//! each document draws a latent cluster and a document-specific offset per
//! aspect, and each summary "view" embeds that latent in an aspect-specific
//! block of feature space, plus a large per-view style component and
//! isotropic noise. Raw cosine retrieval is dominated by style; an encoder
//! has to learn which block carries the aspect.
//!
//! [`TextCorpus`] produces templated abstracts whose sentences carry
//! aspect cue phrases, for the text pipeline with the mock backends.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{derangement, SimilarityAssessment};
use crate::geometry::AspectId;
use crate::store::{AbstractRecord, Split};
use crate::train::DistillExample;

/// Generators draw from their own ChaCha stream so that a corpus and a model
/// initialized from the same seed are independent.
const SYNTH_STREAM: u64 = 0x5359_4e54;

fn synth_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SYNTH_STREAM);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureSynthConfig {
    pub aspects: Vec<AspectId>,
    pub clusters: usize,
    pub feature_dim: usize,
    /// Dimensions of each aspect's latent and of its block in feature space.
    pub content_dim: usize,
    /// Spread of cluster centers per latent dimension.
    pub center_scale: f64,
    /// Spread of a document around its cluster center.
    pub doc_scale: f64,
    /// Per-view nuisance scale in the style block.
    pub style_scale: f64,
    /// Isotropic per-feature noise on every view.
    pub noise: f64,
    pub train_docs: usize,
    pub validation_docs: usize,
    pub seed: u64,
}

impl Default for FeatureSynthConfig {
    fn default() -> Self {
        FeatureSynthConfig {
            aspects: ["hypothesis", "species", "method", "habitat"].map(AspectId::from).to_vec(),
            clusters: 16,
            feature_dim: 64,
            content_dim: 8,
            center_scale: 1.0,
            doc_scale: 0.5,
            style_scale: 1.5,
            noise: 0.1,
            train_docs: 800,
            validation_docs: 200,
            seed: 0,
        }
    }
}

/// One synthetic document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDoc {
    pub id: String,
    pub split: Split,
    pub clusters: BTreeMap<AspectId, usize>,
    pub latents: BTreeMap<AspectId, Vec<f64>>,
    /// Two summary views per aspect.
    pub views: BTreeMap<AspectId, [Vec<f64>; 2]>,
    /// Features of the whole abstract: every aspect's latent in its block.
    pub abstract_features: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureCorpus {
    pub config: FeatureSynthConfig,
    pub docs: Vec<FeatureDoc>,
}

pub type FeaturePair = (Vec<f64>, Vec<f64>);

impl FeatureCorpus {
    pub fn generate(cfg: &FeatureSynthConfig) -> Result<Self> {
        let blocks = cfg.aspects.len() * cfg.content_dim;
        if cfg.aspects.is_empty() || cfg.content_dim == 0 || blocks >= cfg.feature_dim {
            return Err(Error::InvalidConfig(format!(
                "{} aspects x {} content dims must leave room in {} features",
                cfg.aspects.len(),
                cfg.content_dim,
                cfg.feature_dim
            )));
        }
        if cfg.clusters == 0 {
            return Err(Error::InvalidConfig("need at least one cluster".into()));
        }
        let mut rng = synth_rng(cfg.seed);
        let d = cfg.feature_dim;
        // random orthonormal basis; columns are split into aspect blocks then style
        let raw = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let q = raw.qr().q();
        let column = |c: usize| -> Vec<f64> { q.column(c).iter().copied().collect() };
        let aspect_basis: Vec<Vec<Vec<f64>>> = (0..cfg.aspects.len())
            .map(|a| (0..cfg.content_dim).map(|k| column(a * cfg.content_dim + k)).collect())
            .collect();
        let style_basis: Vec<Vec<f64>> = (blocks..d).map(column).collect();
        let centers: Vec<Vec<Vec<f64>>> = (0..cfg.aspects.len())
            .map(|_| {
                (0..cfg.clusters)
                    .map(|_| (0..cfg.content_dim).map(|_| cfg.center_scale * rng.sample::<f64, _>(StandardNormal)).collect())
                    .collect()
            })
            .collect();

        let embed = |out: &mut [f64], basis: &[Vec<f64>], coeffs: &[f64]| {
            for (b, c) in basis.iter().zip(coeffs) {
                out.iter_mut().zip(b).for_each(|(o, v)| *o += c * v);
            }
        };
        let total = cfg.train_docs + cfg.validation_docs;
        let mut docs = Vec::with_capacity(total);
        for i in 0..total {
            let mut clusters = BTreeMap::new();
            let mut latents = BTreeMap::new();
            let mut views = BTreeMap::new();
            let mut abstract_features = vec![0.0; d];
            for (a, aspect) in cfg.aspects.iter().enumerate() {
                let c = rng.random_range(0..cfg.clusters);
                let z: Vec<f64> = centers[a][c]
                    .iter()
                    .map(|m| m + cfg.doc_scale * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let view = |rng: &mut ChaCha8Rng| {
                    let mut x: Vec<f64> = (0..d).map(|_| cfg.noise * rng.sample::<f64, _>(StandardNormal)).collect();
                    embed(&mut x, &aspect_basis[a], &z);
                    let style: Vec<f64> =
                        (0..style_basis.len()).map(|_| cfg.style_scale * rng.sample::<f64, _>(StandardNormal)).collect();
                    embed(&mut x, &style_basis, &style);
                    x
                };
                let pair = [view(&mut rng), view(&mut rng)];
                embed(&mut abstract_features, &aspect_basis[a], &z);
                clusters.insert(aspect.clone(), c);
                latents.insert(aspect.clone(), z);
                views.insert(aspect.clone(), pair);
            }
            abstract_features.iter_mut().for_each(|x| *x += cfg.noise * rng.sample::<f64, _>(StandardNormal));
            docs.push(FeatureDoc {
                id: format!("syn{i:04}"),
                split: if i < cfg.train_docs { Split::Train } else { Split::Validation },
                clusters,
                latents,
                views,
                abstract_features,
            });
        }
        Ok(FeatureCorpus { config: cfg.clone(), docs })
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &FeatureDoc> {
        self.docs.iter().filter(move |d| d.split == split)
    }

    /// The two views of every document in `split` under `aspect`.
    pub fn pairs(&self, aspect: &AspectId, split: Split) -> Result<Vec<FeaturePair>> {
        self.split(split)
            .map(|d| {
                let v = d.views.get(aspect).ok_or_else(|| Error::UnknownAspect(aspect.to_string()))?;
                Ok((v[0].clone(), v[1].clone()))
            })
            .collect()
    }

    /// Like [`pairs`](Self::pairs) but every first view is matched with a
    /// different document's second view.
    pub fn shuffled_pairs(&self, aspect: &AspectId, split: Split, seed: u64) -> Result<Vec<FeaturePair>> {
        let pairs = self.pairs(aspect, split)?;
        let perm = derangement(pairs.len(), seed)?;
        Ok(pairs.iter().enumerate().map(|(i, p)| (p.0.clone(), pairs[perm[i]].1.clone())).collect())
    }
}

/// Distillation examples from abstract features and per-aspect targets.
pub fn distill_examples(
    docs: &[&FeatureDoc],
    targets: &BTreeMap<AspectId, BTreeMap<String, crate::geometry::EmbeddingVector>>,
) -> Vec<DistillExample> {
    docs.iter()
        .map(|d| DistillExample {
            doc_id: d.id.clone(),
            features: d.abstract_features.clone(),
            targets: targets.iter().filter_map(|(a, m)| m.get(&d.id).map(|e| (a.clone(), e.clone()))).collect(),
        })
        .collect()
}

/// Cue phrases the mock summarizer uses to find each aspect's sentences.
pub fn cue_phrases() -> BTreeMap<AspectId, Vec<String>> {
    TEXT_ASPECTS
        .iter()
        .map(|a| (AspectId::from(a.name), a.cues.iter().map(|c| c.to_string()).collect()))
        .collect()
}

struct TextAspect {
    name: &'static str,
    cues: &'static [&'static str],
    /// Sentence frames; `{topic}` is the cluster phrase and `{detail}` a
    /// document-specific modifier.
    frames: &'static [&'static str],
    topics: &'static [&'static str],
    details: &'static [&'static str],
}

const TEXT_ASPECTS: &[TextAspect] = &[
    TextAspect {
        name: "hypothesis",
        cues: &["hypothesis", "support the idea", "predicted that"],
        frames: &[
            "We tested the hypothesis that {topic}, focusing on {detail}.",
            "Our results support the idea that {topic} when {detail}.",
            "We predicted that {topic}, particularly {detail}.",
        ],
        topics: &[
            "escape from specialist enemies boosts invader growth",
            "novel chemical weapons suppress resident plants",
            "high propagule pressure drives establishment",
            "diverse native communities resist invasion",
            "invaders fill vacant ecological niches",
            "established invaders facilitate further invasions",
        ],
        details: &[
            "early life stages",
            "dry years",
            "nutrient rich soils",
            "the invasion front",
            "repeated introductions",
            "long term monitoring",
            "disturbed edges",
            "cold winters",
        ],
    },
    TextAspect {
        name: "species",
        cues: &["study organism", "populations of", "individuals of"],
        frames: &[
            "The study organism was {topic} from {detail}.",
            "Populations of {topic} were sampled across {detail}.",
            "Individuals of {topic} were marked in {detail}.",
        ],
        topics: &[
            "the cane toad",
            "Japanese knotweed",
            "the zebra mussel",
            "the red imported fire ant",
            "cheatgrass",
            "the signal crayfish",
            "the grey squirrel",
            "garlic mustard",
        ],
        details: &[
            "introduced ranges",
            "native ranges",
            "urban parks",
            "island populations",
            "river catchments",
            "mountain slopes",
            "agricultural margins",
            "protected reserves",
        ],
    },
    TextAspect {
        name: "method",
        cues: &["data were collected", "we applied", "analysis used"],
        frames: &[
            "Data were collected with {topic} over {detail}.",
            "We applied {topic} to records from {detail}.",
            "The analysis used {topic} spanning {detail}.",
        ],
        topics: &[
            "a common garden experiment",
            "species distribution models",
            "a meta analysis",
            "stable isotope tracing",
            "population genetic markers",
        ],
        details: &["three seasons", "two decades", "forty sites", "a single year", "paired plots", "herbarium archives"],
    },
    TextAspect {
        name: "habitat",
        cues: &["field sites", "surveyed landscape", "habitat type"],
        frames: &[
            "Field sites were located in {topic} near {detail}.",
            "The surveyed landscape consisted of {topic} bordering {detail}.",
            "The habitat type was {topic} adjacent to {detail}.",
        ],
        topics: &[
            "temperate grassland",
            "freshwater streams",
            "coastal dunes",
            "tropical rainforest",
            "boreal forest",
            "arid shrubland",
        ],
        details: &["roads", "farmland", "settlements", "wetlands", "rocky outcrops", "managed forest"],
    },
];

const FILLER: &[&str] = &[
    "Biological invasions threaten ecosystems worldwide.",
    "Understanding invasion success remains a central question.",
    "These findings inform management of invasive species.",
    "Further work should examine long term outcomes.",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TextSynthConfig {
    pub docs: usize,
    pub validation_fraction: f64,
    pub test_fraction: f64,
    /// Chance that a document omits an aspect entirely.
    pub omit_rate: f64,
    /// Chance that a document mentions an aspect only once.
    pub single_rate: f64,
    pub seed: u64,
}

impl Default for TextSynthConfig {
    fn default() -> Self {
        TextSynthConfig { docs: 200, validation_fraction: 0.15, test_fraction: 0.1, omit_rate: 0.05, single_rate: 0.05, seed: 0 }
    }
}

/// Latent assignment of one text document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextTruth {
    pub doc_id: String,
    /// `aspect -> (topic index, detail index)`, absent when omitted.
    pub aspects: BTreeMap<AspectId, (usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextCorpus {
    pub records: Vec<AbstractRecord>,
    pub truth: Vec<TextTruth>,
}

impl TextCorpus {
    pub fn generate(cfg: &TextSynthConfig) -> Result<Self> {
        if cfg.docs < 4 {
            return Err(Error::InvalidConfig("need at least 4 documents".into()));
        }
        let mut rng = synth_rng(cfg.seed);
        let n_val = (cfg.docs as f64 * cfg.validation_fraction).round() as usize;
        let n_test = (cfg.docs as f64 * cfg.test_fraction).round() as usize;
        let mut records = Vec::with_capacity(cfg.docs);
        let mut truth = Vec::with_capacity(cfg.docs);
        for i in 0..cfg.docs {
            let id = format!("doc{i:04}");
            let mut sentences = vec![FILLER[rng.random_range(0..FILLER.len())].to_string()];
            let mut assigned = BTreeMap::new();
            let mut labels = BTreeMap::new();
            for aspect in TEXT_ASPECTS {
                // hypothesis is always present so every document has a label
                if aspect.name != "hypothesis" && rng.random_bool(cfg.omit_rate) {
                    continue;
                }
                let topic = rng.random_range(0..aspect.topics.len());
                let detail = rng.random_range(0..aspect.details.len());
                let count = if rng.random_bool(cfg.single_rate) { 1 } else { 2 };
                let mut frames: Vec<&str> = aspect.frames.to_vec();
                frames.shuffle(&mut rng);
                for frame in frames.iter().take(count) {
                    sentences.push(
                        frame.replace("{topic}", aspect.topics[topic]).replace("{detail}", aspect.details[detail]),
                    );
                }
                assigned.insert(AspectId::from(aspect.name), (topic, detail));
                if aspect.name == "hypothesis" {
                    labels.insert("hypothesis".to_string(), aspect.topics[topic].to_string());
                }
            }
            let filler = FILLER.choose(&mut rng).expect("nonempty").to_string();
            sentences[1..].shuffle(&mut rng);
            sentences.push(filler);
            let split = if i < n_val {
                Split::Validation
            } else if i < n_val + n_test {
                Split::Test
            } else {
                Split::Train
            };
            let title_topic = assigned
                .get(&AspectId::from("species"))
                .map(|(t, _)| TEXT_ASPECTS[1].topics[*t])
                .unwrap_or("an invasive species");
            records.push(AbstractRecord {
                id: id.clone(),
                title: format!("Invasion dynamics of {title_topic} ({i})"),
                abstract_text: sentences.join(" "),
                split,
                labels,
            });
            truth.push(TextTruth { doc_id: id, aspects: assigned });
        }
        Ok(TextCorpus { records, truth })
    }

    /// Graded 1..=5 similarity for every pair of `doc_ids` under each aspect
    /// both documents mention: 5 for the same topic and detail, 4 for the
    /// same topic, 2 for the same detail, otherwise 1. Pairs where either
    /// document omits the aspect score 1.
    pub fn assessments(&self, doc_ids: &[String]) -> Result<Vec<SimilarityAssessment>> {
        let by_id: BTreeMap<&str, &TextTruth> = self.truth.iter().map(|t| (t.doc_id.as_str(), t)).collect();
        let mut out = Vec::new();
        for aspect in TEXT_ASPECTS {
            let a = AspectId::from(aspect.name);
            for (i, x) in doc_ids.iter().enumerate() {
                for y in &doc_ids[i + 1..] {
                    let tx = by_id.get(x.as_str()).ok_or_else(|| Error::NotFound(x.clone()))?;
                    let ty = by_id.get(y.as_str()).ok_or_else(|| Error::NotFound(y.clone()))?;
                    let score = match (tx.aspects.get(&a), ty.aspects.get(&a)) {
                        (Some(p), Some(q)) if p == q => 5,
                        (Some(p), Some(q)) if p.0 == q.0 => 4,
                        (Some(p), Some(q)) if p.1 == q.1 => 2,
                        _ => 1,
                    };
                    out.push(SimilarityAssessment {
                        doc_a: x.clone(),
                        doc_b: y.clone(),
                        aspect: a.clone(),
                        score,
                        reasoning: None,
                    });
                }
            }
        }
        Ok(out)
    }
}
