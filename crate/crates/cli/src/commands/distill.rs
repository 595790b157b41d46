use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::bail;
use atlas_core::geometry::{AspectId, EmbeddingVector};
use atlas_core::store::{load_atlas, save_atlas, write_atomic, AspectStore, Atlas, Split};
use atlas_core::train::{metrics_jsonl, train_unified, DistillConfig, DistillExample};
use serde_json::json;

use super::print_summary;
use crate::pipeline::{
    abstract_features, build_targets, ensure_distinct, input_encoder, load_encoders, load_summaries, write_json,
    UnifiedCheckpoint,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Embed {
    /// Every document gets the unified model's prediction for every aspect.
    Unified,
    /// Documents keep their summary-mean targets; those without one are left out.
    Targets,
}

#[derive(Debug, clap::Args)]
pub struct Args {
    #[arg(long)]
    pub atlas: PathBuf,

    #[arg(long)]
    pub summaries: PathBuf,

    /// Directory holding `encoder-<aspect>.json` files.
    #[arg(long)]
    pub encoders: PathBuf,

    /// New atlas with per-aspect embeddings and PCA bases. Layouts of the
    /// input atlas are not carried over.
    #[arg(long)]
    pub out: PathBuf,

    /// Unified model checkpoint; its metrics go beside it as `.metrics.jsonl`.
    #[arg(long)]
    pub model_out: PathBuf,

    #[arg(long, default_value_t = 0, env = "ATLAS_SEED")]
    pub seed: u64,

    #[arg(long, value_enum, default_value = "unified")]
    pub embed: Embed,

    /// PCA components kept per aspect for reconstruction.
    #[arg(long, default_value_t = 20)]
    pub pca_k: usize,

    #[arg(long)]
    pub epochs: Option<usize>,

    #[arg(long)]
    pub hidden: Option<usize>,
}

pub fn run(args: Args) -> anyhow::Result<()> {
    ensure_distinct(&args.atlas, &args.out)?;
    let input = load_atlas(&args.atlas)?;
    let summaries = load_summaries(&args.summaries)?;
    let encoders = load_encoders(&args.encoders)?;
    let targets = build_targets(&summaries, &encoders, input.normalization)?;

    let mut features = BTreeMap::new();
    for d in &input.documents {
        features.insert(d.id.clone(), abstract_features(&d.abstract_text)?);
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for d in &input.documents {
        let Some(t) = targets.get(&d.id) else { continue };
        let ex = DistillExample { doc_id: d.id.clone(), features: features[&d.id].clone(), targets: t.clone() };
        match d.split {
            Split::Train => train.push(ex),
            Split::Validation => val.push(ex),
            Split::Test => {}
        }
    }
    if train.is_empty() || val.is_empty() {
        bail!(atlas_core::Error::Degenerate(format!(
            "distillation needs targets in both splits (train {}, validation {})",
            train.len(),
            val.len()
        )));
    }

    let mut cfg = DistillConfig { seed: args.seed, ..DistillConfig::desk() };
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.hidden {
        cfg.hidden = v;
    }
    let trained = train_unified(&train, &val, &cfg)?;

    let mut atlas = Atlas::new(input.documents.clone(), input.normalization)?;
    for aspect in encoders.keys() {
        let mut entries: Vec<(String, EmbeddingVector, Vec<String>)> = Vec::new();
        for d in &input.documents {
            let texts = summaries.get(aspect).and_then(|m| m.get(&d.id)).cloned().unwrap_or_default();
            let e = match args.embed {
                Embed::Unified => trained.encoder.predict(&features[&d.id], aspect)?.apply(input.normalization)?,
                Embed::Targets => match targets.get(&d.id).and_then(|t| t.get(aspect)) {
                    Some(t) => t.clone(),
                    None => continue,
                },
            };
            entries.push((d.id.clone(), e, texts));
        }
        atlas.insert_aspect(aspect.clone(), AspectStore::new(entries)?)?;
    }
    atlas.fit_pca(args.pca_k)?;
    save_atlas(&args.out, &atlas)?;

    let ckpt = UnifiedCheckpoint {
        seed: args.seed,
        input_encoder: input_encoder(),
        config: cfg,
        best_step: trained.best_step,
        best_mean_rank: trained.best.mean_rank,
        encoder: trained.encoder,
    };
    write_json(&args.model_out, &ckpt)?;
    write_atomic(&args.model_out.with_extension("metrics.jsonl"), metrics_jsonl(&trained.log)?.as_bytes())?;

    let aspects: Vec<&AspectId> = atlas.aspects.keys().collect();
    print_summary(&json!({
        "aspects": aspects,
        "documents": atlas.documents.len(),
        "train_documents": train.len(),
        "validation_documents": val.len(),
        "best_step": ckpt.best_step,
        "best_mean_rank": ckpt.best_mean_rank,
        "per_aspect_mrr": trained.best.per_aspect_mrr,
    }));
    Ok(())
}
