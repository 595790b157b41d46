use std::path::PathBuf;

use atlas_core::store::{to_jsonl, write_atomic, Split};
use atlas_core::synth::{cue_phrases, TextCorpus, TextSynthConfig};
use serde_json::json;

use super::print_summary;
use crate::pipeline::{create_dir, write_json};

#[derive(Debug, clap::Args)]
pub struct Args {
    /// Directory for corpus.jsonl, assessments.jsonl, truth.jsonl and cues.json.
    #[arg(long)]
    pub out_dir: PathBuf,

    #[arg(long, default_value_t = 200)]
    pub docs: usize,

    #[arg(long, default_value_t = 0, env = "ATLAS_SEED")]
    pub seed: u64,

    /// Validation documents covered by the pairwise assessments.
    #[arg(long, default_value_t = 50)]
    pub eval_docs: usize,
}

pub fn run(args: Args) -> anyhow::Result<()> {
    let corpus = TextCorpus::generate(&TextSynthConfig { docs: args.docs, seed: args.seed, ..TextSynthConfig::default() })?;
    let eval_ids: Vec<String> = corpus
        .records
        .iter()
        .filter(|r| r.split == Split::Validation)
        .take(args.eval_docs)
        .map(|r| r.id.clone())
        .collect();
    let assessments = corpus.assessments(&eval_ids)?;

    create_dir(&args.out_dir)?;
    write_atomic(&args.out_dir.join("corpus.jsonl"), to_jsonl(&corpus.records)?.as_bytes())?;
    write_atomic(&args.out_dir.join("assessments.jsonl"), to_jsonl(&assessments)?.as_bytes())?;
    write_atomic(&args.out_dir.join("truth.jsonl"), to_jsonl(&corpus.truth)?.as_bytes())?;
    write_json(&args.out_dir.join("cues.json"), &cue_phrases())?;

    print_summary(&json!({
        "documents": corpus.records.len(),
        "assessed_documents": eval_ids.len(),
        "assessments": assessments.len(),
    }));
    Ok(())
}
