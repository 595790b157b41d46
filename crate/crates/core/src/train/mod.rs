//! Contrastive training of per-aspect encoders and distillation of a unified
//! multi-head encoder, over plain feature vectors.

mod contrastive;
mod distill;
mod encoder;

use serde::{Deserialize, Serialize};

pub use contrastive::{
    evaluate_pairs, infonce_loss, train_aspect_encoder, AspectTrainConfig, AspectTraining, SummaryPairBatch,
};
pub use distill::{
    build_target_embedding, evaluate_unified, train_unified, DistillConfig, DistillEval, DistillExample,
    DistillTraining,
};
pub use encoder::{Activation, FeatureEncoder, LinearEncoder, UnifiedEncoder};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine decay from the base rate to zero over the run.
    Cosine,
}

impl LrSchedule {
    pub fn rate(self, base: f64, step: usize, total: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine => {
                let t = step as f64 / total.max(1) as f64;
                0.5 * base * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

/// One validation checkpoint of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub step: usize,
    pub epoch: usize,
    /// Mean training loss since the previous record; absent before training.
    pub train_loss: Option<f64>,
    pub val_loss: f64,
    pub val_mean_rank: f64,
    pub val_mrr: f64,
    pub learning_rate: f64,
}

impl TrainingRecord {
    pub(crate) fn new(
        step: usize,
        epoch: usize,
        train_loss: Option<f64>,
        val_loss: f64,
        val_mean_rank: f64,
        val_mrr: f64,
        learning_rate: f64,
    ) -> Self {
        TrainingRecord { step, epoch, train_loss, val_loss, val_mean_rank, val_mrr, learning_rate }
    }
}

/// One JSON object per line.
pub fn metrics_jsonl(records: &[TrainingRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}
