use std::path::PathBuf;

use atlas_core::eval::config_hash;
use atlas_core::geometry::AspectWeights;
use atlas_core::store::{load_atlas, save_atlas, write_atomic};
use atlas_core::tsne::TsneConfig;
use serde_json::json;

use super::print_summary;
use crate::pipeline::{ensure_distinct, write_json};
use crate::svg;

#[derive(Debug, clap::Args)]
pub struct Args {
    #[arg(long)]
    pub atlas: PathBuf,

    /// Aspect weights summing to 1, e.g. `hypothesis=0.7,species=0.3`.
    #[arg(long)]
    pub weights: String,

    /// Write a copy of the atlas with this layout stored in it.
    #[arg(long)]
    pub out: Option<PathBuf>,

    #[arg(long)]
    pub out_svg: Option<PathBuf>,

    /// JSON array of `{id, title, label, coords}`.
    #[arg(long)]
    pub coords_out: Option<PathBuf>,

    /// Layout id; derived from the weights and settings when omitted.
    #[arg(long)]
    pub id: Option<String>,

    #[arg(long)]
    pub perplexity: Option<f64>,

    #[arg(long)]
    pub iterations: Option<usize>,

    #[arg(long, default_value_t = 0, env = "ATLAS_SEED")]
    pub seed: u64,

    /// Document label used to color the SVG.
    #[arg(long, default_value = "hypothesis")]
    pub color_by: String,
}

pub fn run(args: Args) -> anyhow::Result<()> {
    let weights = AspectWeights::parse(&args.weights)?;
    let mut cfg = TsneConfig { seed: args.seed, ..TsneConfig::default() };
    if let Some(p) = args.perplexity {
        cfg.perplexity = p;
    }
    if let Some(i) = args.iterations {
        cfg.max_iterations = i;
    }
    cfg.validate()?;
    if let Some(out) = &args.out {
        ensure_distinct(&args.atlas, out)?;
    }
    let atlas = load_atlas(&args.atlas)?;
    let id = match &args.id {
        Some(id) => id.clone(),
        None => format!("layout-{}", &config_hash(&(&weights, &cfg))?[..12]),
    };
    let (stored, _) = atlas.compute_layout(id.clone(), &weights, &cfg)?;

    let points: Vec<serde_json::Value> = stored
        .doc_ids
        .iter()
        .enumerate()
        .map(|(i, doc)| {
            let rec = atlas.document(doc);
            json!({
                "id": doc,
                "title": rec.map(|r| r.title.as_str()).unwrap_or(""),
                "label": rec.and_then(|r| r.labels.get(&args.color_by)),
                "coords": stored.coords.point(i),
            })
        })
        .collect();
    if let Some(path) = &args.coords_out {
        write_json(path, &points)?;
    }
    if let Some(path) = &args.out_svg {
        let pts: Vec<svg::Point<'_>> = stored
            .doc_ids
            .iter()
            .enumerate()
            .map(|(i, doc)| {
                let rec = atlas.document(doc);
                let p = stored.coords.point(i);
                svg::Point {
                    id: doc,
                    title: rec.map(|r| r.title.as_str()).unwrap_or(""),
                    x: p[0],
                    y: p[1],
                    label: rec.and_then(|r| r.labels.get(&args.color_by)).map(String::as_str),
                }
            })
            .collect();
        let title = format!("{id}: {}", args.weights);
        write_atomic(path, svg::scatter(&title, &pts).as_bytes())?;
    }

    let summary = json!({
        "id": id,
        "documents": stored.doc_ids.len(),
        "final_kl": stored.final_kl,
        "converged": stored.converged,
        "iterations": stored.iterations_run,
    });
    if let Some(out) = &args.out {
        save_atlas(out, &atlas.with_layout(stored)?)?;
    }
    print_summary(&summary);
    Ok(())
}
