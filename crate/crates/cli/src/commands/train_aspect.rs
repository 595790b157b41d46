use std::path::PathBuf;

use anyhow::bail;
use atlas_core::geometry::AspectId;
use atlas_core::store::{load_atlas, write_atomic, Split, MIN_SUMMARIES_FOR_PAIRS};
use atlas_core::train::{metrics_jsonl, train_aspect_encoder, AspectTrainConfig};
use serde_json::json;

use super::print_summary;
use crate::pipeline::{create_dir, input_encoder, load_summaries, summary_features, write_json, AspectCheckpoint};

#[derive(Debug, clap::Args)]
pub struct Args {
    #[arg(long)]
    pub atlas: PathBuf,

    #[arg(long)]
    pub summaries: PathBuf,

    #[arg(long)]
    pub aspect: String,

    #[arg(long, default_value_t = 0, env = "ATLAS_SEED")]
    pub seed: u64,

    /// Receives `encoder-<aspect>.json` and `metrics-<aspect>.jsonl`.
    #[arg(long)]
    pub out_dir: PathBuf,

    #[arg(long)]
    pub epochs: Option<usize>,

    #[arg(long)]
    pub learning_rate: Option<f64>,

    #[arg(long)]
    pub temperature: Option<f64>,

    #[arg(long)]
    pub batch_size: Option<usize>,

    #[arg(long)]
    pub output_dim: Option<usize>,
}

pub fn run(args: Args) -> anyhow::Result<()> {
    let atlas = load_atlas(&args.atlas)?;
    let aspect = AspectId::new(&args.aspect);
    let summaries = load_summaries(&args.summaries)?;
    let Some(per_doc) = summaries.get(&aspect) else {
        bail!(atlas_core::Error::UnknownAspect(format!("{aspect} has no summaries in {}", args.summaries.display())));
    };

    // one pair per document keeps documents with many summaries from dominating
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for doc in &atlas.documents {
        let Some(texts) = per_doc.get(&doc.id).filter(|t| t.len() >= MIN_SUMMARIES_FOR_PAIRS) else { continue };
        let pair = (summary_features(&texts[0], &aspect)?, summary_features(&texts[1], &aspect)?);
        match doc.split {
            Split::Train => train.push(pair),
            Split::Validation => val.push(pair),
            Split::Test => {}
        }
    }

    let mut cfg = AspectTrainConfig { seed: args.seed, ..AspectTrainConfig::desk() };
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(v) = args.temperature {
        cfg.temperature = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.output_dim {
        cfg.output_dim = v;
    }
    let trained = train_aspect_encoder(&train, &val, &cfg)?;

    create_dir(&args.out_dir)?;
    let ckpt = AspectCheckpoint {
        aspect: aspect.clone(),
        seed: args.seed,
        input_encoder: input_encoder(),
        config: cfg,
        best_step: trained.best_step,
        best_mean_rank: trained.best_mean_rank,
        best_mrr: trained.best_mrr,
        encoder: trained.encoder,
    };
    write_json(&args.out_dir.join(AspectCheckpoint::file_name(&aspect)), &ckpt)?;
    write_atomic(&args.out_dir.join(format!("metrics-{aspect}.jsonl")), metrics_jsonl(&trained.log)?.as_bytes())?;

    print_summary(&json!({
        "aspect": aspect,
        "train_pairs": train.len(),
        "validation_pairs": val.len(),
        "best_step": ckpt.best_step,
        "best_mean_rank": ckpt.best_mean_rank,
        "best_mrr": ckpt.best_mrr,
    }));
    Ok(())
}
