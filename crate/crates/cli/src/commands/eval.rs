use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use atlas_core::backends::{MixtureLmDecoder, NearestNeighborDecoder};
use atlas_core::eval::{
    aspect_correlation_matrix, config_hash, decoding_control_report, mean_rank, mrr, retrieval_ranks, top_k_overlap,
    DecodingDoc, DecodingMode, EvalReport, SimilarityAssessment, SimilarityTable,
};
use atlas_core::geometry::{cosine_similarity, AspectId, EmbeddingVector};
use atlas_core::store::{atlas_fingerprint, load_atlas, read_jsonl, write_atomic, Atlas, Split, MIN_SUMMARIES_FOR_PAIRS};
use serde::Serialize;
use serde_json::json;

use super::SplitArg;
use crate::pipeline::{create_dir, load_encoders, load_summaries, write_json};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    /// MRR of retrieving a document's second summary from its first, per aspect encoder.
    Retrieval,
    /// Spearman correlation of embedding similarity with graded assessments, every aspect pair.
    Correlation,
    /// Top-k neighbor overlap between embedding cosine and graded assessments.
    Overlap,
    /// Reference perplexity under matching, shuffled and absent conditioning.
    Decoding,
}

impl Suite {
    fn name(self) -> &'static str {
        match self {
            Suite::Retrieval => "retrieval",
            Suite::Correlation => "correlation",
            Suite::Overlap => "overlap",
            Suite::Decoding => "decoding",
        }
    }
}

#[derive(Debug, clap::Args)]
pub struct Args {
    #[arg(long, value_enum)]
    pub suite: Suite,

    #[arg(long)]
    pub atlas: PathBuf,

    /// Receives `<suite>.json` and `<suite>.txt`.
    #[arg(long)]
    pub out_dir: PathBuf,

    /// Graded pairwise assessments JSONL (correlation, overlap).
    #[arg(long)]
    pub assessments: Option<PathBuf>,

    /// Summaries JSONL (retrieval).
    #[arg(long)]
    pub summaries: Option<PathBuf>,

    /// Directory of aspect encoders (retrieval).
    #[arg(long)]
    pub encoders: Option<PathBuf>,

    #[arg(long, value_enum, default_value = "validation")]
    pub split: SplitArg,

    #[arg(long, default_value_t = 10)]
    pub k: usize,

    #[arg(long, default_value_t = 0, env = "ATLAS_SEED")]
    pub seed: u64,

    /// Top of the assessment scale.
    #[arg(long, default_value_t = 5)]
    pub max_score: i64,

    /// Evaluate at most this many documents of the split.
    #[arg(long)]
    pub max_docs: Option<usize>,
}

#[derive(Serialize)]
struct HashedConfig<'a> {
    suite: Suite,
    atlas: String,
    split: &'a str,
    k: usize,
    seed: u64,
    max_score: i64,
    max_docs: Option<usize>,
}

fn required<'a>(path: &'a Option<PathBuf>, flag: &str, suite: Suite) -> anyhow::Result<&'a Path> {
    match path {
        Some(p) => Ok(p),
        None => bail!(atlas_core::Error::InvalidConfig(format!("the {} suite needs --{flag}", suite.name()))),
    }
}

/// Documents of the split, in atlas order, that pass `keep`.
fn split_docs(atlas: &Atlas, split: Split, max: Option<usize>, keep: impl Fn(&str) -> bool) -> Vec<String> {
    atlas
        .documents
        .iter()
        .filter(|d| d.split == split && keep(&d.id))
        .take(max.unwrap_or(usize::MAX))
        .map(|d| d.id.clone())
        .collect()
}

fn embedded_everywhere(atlas: &Atlas, doc: &str) -> bool {
    atlas.aspects.values().all(|s| s.embedding(doc).is_some())
}

struct Graded {
    docs: Vec<String>,
    tables: BTreeMap<AspectId, SimilarityTable>,
}

fn graded(atlas: &Atlas, args: &Args) -> anyhow::Result<Graded> {
    let path = required(&args.assessments, "assessments", args.suite)?;
    let records: Vec<SimilarityAssessment> = read_jsonl(path)?;
    let assessed: BTreeSet<&str> = records.iter().flat_map(|r| [r.doc_a.as_str(), r.doc_b.as_str()]).collect();
    let docs = split_docs(atlas, args.split.into(), args.max_docs, |d| {
        assessed.contains(d) && embedded_everywhere(atlas, d)
    });
    let aspects: BTreeSet<&AspectId> = records.iter().map(|r| &r.aspect).collect();
    let mut tables = BTreeMap::new();
    for a in aspects {
        tables.insert(a.clone(), SimilarityTable::from_assessments(&docs, &records, a, args.max_score)?);
    }
    Ok(Graded { docs, tables })
}

fn embeddings_of(atlas: &Atlas, aspect: &AspectId, docs: &[String]) -> anyhow::Result<Vec<EmbeddingVector>> {
    let store = atlas.aspect(aspect)?;
    docs.iter()
        .map(|d| store.embedding(d).cloned().ok_or_else(|| atlas_core::Error::NotFound(format!("{d} has no {aspect} embedding")).into()))
        .collect()
}

fn correlation(atlas: &Atlas, args: &Args) -> anyhow::Result<(EvalReport, String)> {
    let g = graded(atlas, args)?;
    let mut predictions = BTreeMap::new();
    for aspect in atlas.aspects.keys() {
        predictions.insert(aspect.clone(), embeddings_of(atlas, aspect, &g.docs)?);
    }
    let matrix = aspect_correlation_matrix(&predictions, &g.tables)?;
    let mut per_aspect = BTreeMap::new();
    for p in &matrix.predictors {
        if let Some(v) = matrix.get(p, p) {
            per_aspect.insert(p.to_string(), v);
        }
    }
    let counts = per_aspect.keys().map(|a| (a.clone(), g.docs.len())).collect();
    let text = matrix.to_text_table();
    let report = EvalReport {
        suite: "correlation".into(),
        metric: "mean per-query spearman (diagonal)".into(),
        per_aspect,
        counts,
        config_hash: String::new(),
        details: serde_json::to_value(&matrix)?,
    };
    Ok((report, text))
}

fn overlap(atlas: &Atlas, args: &Args) -> anyhow::Result<(EvalReport, String)> {
    let g = graded(atlas, args)?;
    let n = g.docs.len();
    if n <= args.k {
        bail!(atlas_core::Error::Degenerate(format!("top-{} overlap needs more than {} documents, got {n}", args.k, args.k)));
    }
    let mut per_aspect = BTreeMap::new();
    let mut counts = BTreeMap::new();
    for (aspect, table) in &g.tables {
        if !atlas.aspects.contains_key(aspect) {
            continue;
        }
        let vectors = embeddings_of(atlas, aspect, &g.docs)?;
        let (mut pred, mut truth) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for q in 0..n {
            let (mut p, mut t) = (Vec::new(), Vec::new());
            for j in (0..n).filter(|&j| j != q) {
                let Some(score) = table.get(q, j) else { continue };
                p.push((j, cosine_similarity(&vectors[q], &vectors[j])?));
                t.push((j, score));
            }
            pred.push(p);
            truth.push(t);
        }
        per_aspect.insert(aspect.to_string(), top_k_overlap(&pred, &truth, args.k)?);
        counts.insert(aspect.to_string(), n);
    }
    let report = EvalReport {
        suite: "overlap".into(),
        metric: format!("mean top-{} overlap", args.k),
        per_aspect,
        counts,
        config_hash: String::new(),
        details: json!({ "k": args.k }),
    };
    let text = report.to_text();
    Ok((report, text))
}

fn retrieval(atlas: &Atlas, args: &Args) -> anyhow::Result<(EvalReport, String)> {
    let summaries = load_summaries(required(&args.summaries, "summaries", args.suite)?)?;
    let encoders = load_encoders(required(&args.encoders, "encoders", args.suite)?)?;
    let mut per_aspect = BTreeMap::new();
    let mut counts = BTreeMap::new();
    let mut ranks_detail = BTreeMap::new();
    for (aspect, ckpt) in &encoders {
        let Some(per_doc) = summaries.get(aspect) else { continue };
        let docs = split_docs(atlas, args.split.into(), args.max_docs, |d| {
            per_doc.get(d).is_some_and(|s| s.len() >= MIN_SUMMARIES_FOR_PAIRS)
        });
        if docs.is_empty() {
            continue;
        }
        let (mut queries, mut candidates) = (Vec::new(), Vec::new());
        for d in &docs {
            let s = &per_doc[d];
            queries.push(ckpt.embed(&s[0])?);
            candidates.push(ckpt.embed(&s[1])?);
        }
        let truth: Vec<usize> = (0..docs.len()).collect();
        let ranks = retrieval_ranks(&queries, &candidates, &truth)?;
        per_aspect.insert(aspect.to_string(), mrr(&ranks)?);
        counts.insert(aspect.to_string(), docs.len());
        ranks_detail.insert(aspect.to_string(), mean_rank(&ranks)?);
    }
    if per_aspect.is_empty() {
        bail!(atlas_core::Error::Degenerate("no aspect has summary pairs in the chosen split".into()));
    }
    let report = EvalReport {
        suite: "retrieval".into(),
        metric: "mrr".into(),
        per_aspect,
        counts,
        config_hash: String::new(),
        details: json!({ "mean_rank": ranks_detail }),
    };
    let text = report.to_text();
    Ok((report, text))
}

fn decoding(atlas: &Atlas, args: &Args) -> anyhow::Result<(EvalReport, String)> {
    let mut nn = NearestNeighborDecoder::new();
    let mut docs: BTreeMap<AspectId, Vec<DecodingDoc>> = BTreeMap::new();
    let wanted: BTreeSet<String> = split_docs(atlas, args.split.into(), args.max_docs, |_| true).into_iter().collect();
    for (aspect, store) in &atlas.aspects {
        for ((id, e), summaries) in store.doc_ids().iter().zip(store.embeddings()).zip(store.summaries()) {
            if summaries.is_empty() || e.norm() <= 0.0 {
                continue;
            }
            nn.insert(aspect.clone(), id.clone(), e, summaries.clone())?;
            if wanted.contains(id) {
                docs.entry(aspect.clone()).or_default().push(DecodingDoc {
                    doc_id: id.clone(),
                    embedding: e.clone(),
                    references: summaries.clone(),
                });
            }
        }
    }
    docs.retain(|_, v| v.len() >= 2);
    if docs.is_empty() {
        bail!(atlas_core::Error::Degenerate("no aspect has two summarized documents in the chosen split".into()));
    }
    let decoder = MixtureLmDecoder::new(nn);
    let matching = decoding_control_report(&decoder, &docs, DecodingMode::Matching, args.seed)?;
    let shuffled = decoding_control_report(&decoder, &docs, DecodingMode::Shuffled, args.seed)?;
    let unconditioned = decoding_control_report(&decoder, &docs, DecodingMode::Unconditioned, args.seed)?;

    let mut per_aspect = BTreeMap::new();
    let mut counts = BTreeMap::new();
    let mut rows = BTreeMap::new();
    let mut text = String::from("decoding (mean reference perplexity)\n");
    text.push_str(&format!("  {:<20} {:>12} {:>12} {:>14} {:>10}\n", "aspect", "matching", "shuffled", "unconditioned", "m<s"));
    for (aspect, m) in &matching.aspects {
        let s = &shuffled.aspects[aspect];
        let u = &unconditioned.aspects[aspect];
        let below = m.per_doc.iter().zip(&s.per_doc).filter(|(a, b)| a.1 < b.1).count() as f64 / m.per_doc.len() as f64;
        per_aspect.insert(aspect.to_string(), m.mean_perplexity);
        counts.insert(aspect.to_string(), m.per_doc.len());
        rows.insert(
            aspect.to_string(),
            json!({
                "matching": m.mean_perplexity,
                "shuffled": s.mean_perplexity,
                "unconditioned": u.mean_perplexity,
                "matching_below_shuffled": below,
            }),
        );
        text.push_str(&format!(
            "  {:<20} {:>12.3} {:>12.3} {:>14.3} {:>10.3}\n",
            aspect.as_str(),
            m.mean_perplexity,
            s.mean_perplexity,
            u.mean_perplexity,
            below
        ));
    }
    let report = EvalReport {
        suite: "decoding".into(),
        metric: "matching perplexity".into(),
        per_aspect,
        counts,
        config_hash: String::new(),
        details: json!({ "decoder": matching.decoder, "aspects": rows, "permutations": shuffled.aspects.iter().map(|(a, r)| (a.to_string(), r.permutation.clone())).collect::<BTreeMap<_, _>>() }),
    };
    Ok((report, text))
}

pub fn run(args: Args) -> anyhow::Result<()> {
    let atlas = load_atlas(&args.atlas)?;
    let split_name = match args.split {
        SplitArg::Train => "train",
        SplitArg::Validation => "validation",
        SplitArg::Test => "test",
    };
    let hashed = HashedConfig {
        suite: args.suite,
        atlas: atlas_fingerprint(&atlas)?,
        split: split_name,
        k: args.k,
        seed: args.seed,
        max_score: args.max_score,
        max_docs: args.max_docs,
    };
    let (mut report, text) = match args.suite {
        Suite::Retrieval => retrieval(&atlas, &args),
        Suite::Correlation => correlation(&atlas, &args),
        Suite::Overlap => overlap(&atlas, &args),
        Suite::Decoding => decoding(&atlas, &args),
    }
    .with_context(|| format!("{} suite", args.suite.name()))?;
    report.config_hash = config_hash(&hashed)?;

    create_dir(&args.out_dir)?;
    let name = args.suite.name();
    write_json(&args.out_dir.join(format!("{name}.json")), &report)?;
    write_atomic(&args.out_dir.join(format!("{name}.txt")), text.as_bytes())?;
    print!("{text}");
    Ok(())
}
