use std::path::PathBuf;

use atlas_core::geometry::Normalization;
use atlas_core::store::{ingest_corpus, save_atlas, Atlas, IngestMode};
use serde_json::json;

use super::print_summary;

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum NormalizationArg {
    Raw,
    Unit,
}

#[derive(Debug, clap::Args)]
pub struct Args {
    /// JSON-lines file of `{id, title, abstract, split?, labels?}`.
    #[arg(long)]
    pub corpus: PathBuf,

    #[arg(long)]
    pub out: PathBuf,

    /// Skip malformed lines instead of failing on the first one.
    #[arg(long)]
    pub lenient: bool,

    /// Whether stored embeddings and targets are rescaled to unit length.
    #[arg(long, value_enum, default_value = "raw")]
    pub normalization: NormalizationArg,
}

pub fn run(args: Args) -> anyhow::Result<()> {
    let mode = if args.lenient { IngestMode::Lenient } else { IngestMode::Strict };
    let ingested = ingest_corpus(&args.corpus, mode)?;
    let normalization = match args.normalization {
        NormalizationArg::Raw => Normalization::Raw,
        NormalizationArg::Unit => Normalization::Unit,
    };
    let atlas = Atlas::new(ingested.records, normalization)?;
    save_atlas(&args.out, &atlas)?;
    print_summary(&json!({
        "documents": atlas.documents.len(),
        "rejected_lines": ingested.rejected.iter().map(|(l, r)| json!({"line": l, "reason": r})).collect::<Vec<_>>(),
        "warnings": ingested.warnings,
    }));
    Ok(())
}
