use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encoder::{Activation, UnifiedEncoder};
use super::{LrSchedule, TrainingRecord};
use crate::error::{Error, Result};
use crate::eval::{mean_rank, mrr, retrieval_ranks};
use crate::geometry::{AspectId, EmbeddingVector, Normalization};
use crate::optim::AdamW;

/// Mean of a document's summary embeddings for one aspect, optionally
/// rescaled to unit length. A zero mean is returned with a warning under
/// [`Normalization::Raw`]; cosine geometry will reject it downstream.
pub fn build_target_embedding(
    doc: &str,
    aspect: &AspectId,
    summaries: &[EmbeddingVector],
    normalization: Normalization,
) -> Result<EmbeddingVector> {
    let first = summaries
        .first()
        .ok_or_else(|| Error::NoValidSummaries { doc: doc.to_string(), aspect: aspect.to_string() })?;
    let dim = first.dim();
    let mut mean = vec![0.0; dim];
    for s in summaries {
        if s.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: s.dim() });
        }
        mean.iter_mut().zip(s.as_slice()).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= summaries.len() as f64);
    let mean = EmbeddingVector::new(mean)?;
    if mean.norm() == 0.0 {
        tracing::warn!(doc, %aspect, "target embedding averages to the zero vector");
        if normalization == Normalization::Unit {
            return Err(Error::Degenerate(format!("target for {doc}/{aspect} has zero norm")));
        }
    }
    mean.apply(normalization)
}

/// Input features of one document and its targets for the aspects it has.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillExample {
    pub doc_id: String,
    pub features: Vec<f64>,
    pub targets: BTreeMap<AspectId, EmbeddingVector>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub eval_every: usize,
    pub hidden: usize,
    pub activation: Activation,
    pub schedule: LrSchedule,
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            batch_size: 16,
            learning_rate: 1e-4,
            weight_decay: 1e-4,
            epochs: 10,
            eval_every: 250,
            hidden: 256,
            activation: Activation::Identity,
            schedule: LrSchedule::Constant,
            seed: 0,
        }
    }
}

impl DistillConfig {
    /// Settings that converge in seconds on small corpora.
    pub fn desk() -> Self {
        DistillConfig {
            learning_rate: 3e-3,
            epochs: 150,
            eval_every: 250,
            hidden: 64,
            schedule: LrSchedule::Cosine,
            ..DistillConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.eval_every == 0 || self.hidden == 0 {
            return Err(Error::InvalidConfig("batch_size, eval_every and hidden must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::InvalidConfig("learning rate must be > 0 and weight decay >= 0".into()));
        }
        Ok(())
    }
}

/// Validation summary of a unified encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillEval {
    /// Mean squared error per dimension, averaged over present (doc, aspect) cells.
    pub mse: f64,
    /// Mean over aspects of the mean rank of each document's own target when
    /// its prediction queries all targets of that aspect.
    pub mean_rank: f64,
    pub per_aspect_mrr: BTreeMap<AspectId, f64>,
    pub per_aspect_mean_rank: BTreeMap<AspectId, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillTraining {
    pub encoder: UnifiedEncoder,
    pub best_step: usize,
    pub best: DistillEval,
    pub log: Vec<TrainingRecord>,
}

pub fn evaluate_unified(model: &UnifiedEncoder, examples: &[DistillExample]) -> Result<DistillEval> {
    let mut sq = 0.0;
    let mut cells = 0usize;
    let mut per_aspect_mrr = BTreeMap::new();
    let mut per_aspect_mean_rank = BTreeMap::new();
    let preds: Vec<BTreeMap<AspectId, EmbeddingVector>> =
        examples.iter().map(|e| model.predict_all(&e.features)).collect::<Result<_>>()?;
    for aspect in model.aspects() {
        let mut queries = Vec::new();
        let mut candidates = Vec::new();
        for (e, p) in examples.iter().zip(&preds) {
            if let Some(t) = e.targets.get(aspect) {
                let q = &p[aspect];
                if q.dim() != t.dim() {
                    return Err(Error::DimensionMismatch { expected: q.dim(), got: t.dim() });
                }
                sq += q.as_slice().iter().zip(t.as_slice()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / t.dim() as f64;
                cells += 1;
                queries.push(q.clone());
                candidates.push(t.clone());
            }
        }
        if queries.is_empty() {
            continue;
        }
        let truth: Vec<usize> = (0..queries.len()).collect();
        let ranks = retrieval_ranks(&queries, &candidates, &truth)?;
        per_aspect_mrr.insert(aspect.clone(), mrr(&ranks)?);
        per_aspect_mean_rank.insert(aspect.clone(), mean_rank(&ranks)?);
    }
    if cells == 0 {
        return Err(Error::Degenerate("no validation targets".into()));
    }
    let mean_rank = per_aspect_mean_rank.values().sum::<f64>() / per_aspect_mean_rank.len() as f64;
    Ok(DistillEval { mse: sq / cells as f64, mean_rank, per_aspect_mrr, per_aspect_mean_rank })
}

/// Parameter gradient of one batch, split by owner.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct DistillGradient {
    pub trunk: Vec<f64>,
    pub heads: BTreeMap<AspectId, Vec<f64>>,
    /// Gradient of the batch loss w.r.t. each document's prediction per
    /// aspect; absent targets contribute exact zeros.
    pub cells: Vec<BTreeMap<AspectId, Vec<f64>>>,
}

/// Batch loss: per document, squared error averaged over dimensions and
/// summed over the aspects it has targets for; then averaged over documents.
pub(crate) fn distill_loss_grad(model: &UnifiedEncoder, batch: &[&DistillExample]) -> Result<(f64, DistillGradient)> {
    let mut grad = DistillGradient {
        trunk: vec![0.0; model.trunk.param_count()],
        heads: model.heads.iter().map(|(a, h)| (a.clone(), vec![0.0; h.param_count()])).collect(),
        cells: Vec::with_capacity(batch.len()),
    };
    let b = batch.len() as f64;
    let mut loss = 0.0;
    for ex in batch {
        let h = model.hidden(&ex.features);
        let mut grad_h = vec![0.0; h.len()];
        let mut cells = BTreeMap::new();
        for (aspect, head) in &model.heads {
            let pred = head.forward(&h);
            let mut g = vec![0.0; pred.len()];
            if let Some(t) = ex.targets.get(aspect) {
                if t.dim() != pred.len() {
                    return Err(Error::DimensionMismatch { expected: pred.len(), got: t.dim() });
                }
                let d = pred.len() as f64;
                for ((gk, p), tk) in g.iter_mut().zip(&pred).zip(t.as_slice()) {
                    loss += (p - tk).powi(2) / (d * b);
                    *gk = 2.0 * (p - tk) / (d * b);
                }
                let gin = head.backward(&h, &g, grad.heads.get_mut(aspect).expect("head grad"));
                grad_h.iter_mut().zip(gin).for_each(|(a, v)| *a += v);
            }
            cells.insert(aspect.clone(), g);
        }
        model.backprop_hidden(&h, &mut grad_h);
        model.trunk.backward(&ex.features, &grad_h, &mut grad.trunk);
        grad.cells.push(cells);
    }
    Ok((loss, grad))
}

fn flatten(model: &UnifiedEncoder) -> Vec<f64> {
    let mut p = model.trunk.params();
    for h in model.heads.values() {
        p.extend(h.params());
    }
    p
}

fn unflatten(model: &mut UnifiedEncoder, flat: &[f64]) {
    let n = model.trunk.param_count();
    model.trunk.set_params(&flat[..n]);
    let mut at = n;
    for h in model.heads.values_mut() {
        let k = h.param_count();
        h.set_params(&flat[at..at + k]);
        at += k;
    }
}

/// Regresses every aspect's target from document features through a shared
/// trunk. Cells without a target are masked out of the loss. The returned
/// checkpoint has the lowest validation mean rank, ties going to the lower
/// validation MSE and then the earlier step.
pub fn train_unified(
    train: &[DistillExample],
    validation: &[DistillExample],
    cfg: &DistillConfig,
) -> Result<DistillTraining> {
    cfg.validate()?;
    let first = train.first().ok_or_else(|| Error::Degenerate("no training documents".into()))?;
    if validation.is_empty() {
        return Err(Error::Degenerate("empty validation split".into()));
    }
    let d_in = first.features.len();
    let mut outputs: BTreeMap<AspectId, usize> = BTreeMap::new();
    for ex in train {
        if ex.features.len() != d_in {
            return Err(Error::DimensionMismatch { expected: d_in, got: ex.features.len() });
        }
        for (a, t) in &ex.targets {
            let d = *outputs.entry(a.clone()).or_insert(t.dim());
            if d != t.dim() {
                return Err(Error::DimensionMismatch { expected: d, got: t.dim() });
            }
        }
    }
    if outputs.is_empty() {
        return Err(Error::Degenerate("no aspect has any training target".into()));
    }
    if let Some(ex) = validation.iter().find(|e| e.features.len() != d_in) {
        return Err(Error::DimensionMismatch { expected: d_in, got: ex.features.len() });
    }
    if let Some(a) = validation.iter().flat_map(|e| e.targets.keys()).find(|a| !outputs.contains_key(*a)) {
        return Err(Error::Degenerate(format!("aspect {a} has validation targets but no training targets")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = UnifiedEncoder::random(d_in, cfg.hidden, &outputs, cfg.activation, &mut rng);
    let mut params = flatten(&model);
    let mut mask = model.trunk.decay_mask();
    for h in model.heads.values() {
        mask.extend(h.decay_mask());
    }
    let mut opt = AdamW::new(params.len(), cfg.learning_rate, cfg.weight_decay);

    let batch = cfg.batch_size.min(train.len());
    let per_epoch = train.len().div_ceil(batch);
    let total = per_epoch * cfg.epochs;

    let mut log = Vec::new();
    let e0 = evaluate_unified(&model, validation)?;
    log.push(TrainingRecord::new(0, 0, None, e0.mse, e0.mean_rank, mean_mrr(&e0), cfg.learning_rate));
    let mut best = (e0.mean_rank, e0.mse, 0usize, e0, model.clone());

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0usize;
    let mut running = (0.0, 0usize);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let examples: Vec<&DistillExample> = chunk.iter().map(|&i| &train[i]).collect();
            let (loss, grad) = distill_loss_grad(&model, &examples)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { batch: step });
            }
            let mut flat = grad.trunk;
            for g in grad.heads.into_values() {
                flat.extend(g);
            }
            opt.learning_rate = cfg.schedule.rate(cfg.learning_rate, step, total);
            opt.step(&mut params, &flat, &mask);
            unflatten(&mut model, &params);
            step += 1;
            running.0 += loss;
            running.1 += 1;

            if step % cfg.eval_every == 0 || step == total {
                let e = evaluate_unified(&model, validation)?;
                let train_loss = running.0 / running.1 as f64;
                running = (0.0, 0);
                log.push(TrainingRecord::new(step, epoch, Some(train_loss), e.mse, e.mean_rank, mean_mrr(&e), opt.learning_rate));
                tracing::debug!(step, epoch, train_loss, val_mse = e.mse, val_mean_rank = e.mean_rank, "validation");
                if (e.mean_rank, e.mse) < (best.0, best.1) {
                    best = (e.mean_rank, e.mse, step, e, model.clone());
                }
            }
        }
    }
    let (_, _, best_step, best_eval, encoder) = best;
    Ok(DistillTraining { encoder, best_step, best: best_eval, log })
}

fn mean_mrr(e: &DistillEval) -> f64 {
    e.per_aspect_mrr.values().sum::<f64>() / e.per_aspect_mrr.len().max(1) as f64
}
