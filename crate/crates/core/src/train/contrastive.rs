use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encoder::FeatureEncoder;
use super::{LrSchedule, TrainingRecord};
use crate::error::{Error, Result};
use crate::eval::{mean_rank, mrr, retrieval_ranks};
use crate::geometry::{dot, norm, EmbeddingVector};
use crate::optim::AdamW;

/// Anchors and their positives; row `i` of each forms a pair and every other
/// positive in the batch serves as a negative for anchor `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryPairBatch {
    anchors: Vec<EmbeddingVector>,
    positives: Vec<EmbeddingVector>,
    temperature: f64,
}

impl SummaryPairBatch {
    pub fn new(anchors: Vec<EmbeddingVector>, positives: Vec<EmbeddingVector>, temperature: f64) -> Result<Self> {
        if anchors.is_empty() {
            return Err(Error::Degenerate("empty batch".into()));
        }
        if anchors.len() != positives.len() {
            return Err(Error::DimensionMismatch { expected: anchors.len(), got: positives.len() });
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::InvalidConfig(format!("temperature {temperature} must be > 0")));
        }
        let dim = anchors[0].dim();
        if let Some(v) = anchors.iter().chain(&positives).find(|v| v.dim() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, got: v.dim() });
        }
        Ok(SummaryPairBatch { anchors, positives, temperature })
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }
}

/// In-batch InfoNCE with cosine similarity.
pub fn infonce_loss(batch: &SummaryPairBatch) -> Result<f64> {
    let a: Vec<&[f64]> = batch.anchors.iter().map(EmbeddingVector::as_slice).collect();
    let p: Vec<&[f64]> = batch.positives.iter().map(EmbeddingVector::as_slice).collect();
    Ok(infonce_with_grad(&a, &p, batch.temperature)?.0)
}

/// Loss plus its gradient with respect to every anchor and positive.
pub(crate) fn infonce_with_grad(
    anchors: &[&[f64]],
    positives: &[&[f64]],
    temperature: f64,
) -> Result<(f64, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let b = anchors.len();
    let unit = |vs: &[&[f64]], offset: usize| -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        let mut units = Vec::with_capacity(vs.len());
        let mut norms = Vec::with_capacity(vs.len());
        for (i, v) in vs.iter().enumerate() {
            let l = norm(v);
            if l <= 0.0 {
                return Err(Error::ZeroNorm { index: offset + i });
            }
            units.push(v.iter().map(|x| x / l).collect());
            norms.push(l);
        }
        Ok((units, norms))
    };
    let (ua, na) = unit(anchors, 0)?;
    let (up, np) = unit(positives, b)?;

    // g[i][j] = dLoss / dsim(i, j)
    let mut loss = 0.0;
    let mut g = vec![vec![0.0; b]; b];
    for i in 0..b {
        let logits: Vec<f64> = (0..b).map(|j| dot(&ua[i], &up[j]) / temperature).collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        let lse = max + z.ln();
        loss += lse - logits[i];
        for j in 0..b {
            let soft = (logits[j] - lse).exp();
            g[i][j] = (soft - if i == j { 1.0 } else { 0.0 }) / (b as f64 * temperature);
        }
    }
    loss /= b as f64;

    let dim = ua[0].len();
    let mut du = vec![vec![0.0; dim]; b];
    let mut dv = vec![vec![0.0; dim]; b];
    for i in 0..b {
        for j in 0..b {
            let gij = g[i][j];
            for k in 0..dim {
                du[i][k] += gij * up[j][k];
                dv[j][k] += gij * ua[i][k];
            }
        }
    }
    // back through x / |x|
    let through_norm = |d: &mut Vec<f64>, u: &[f64], l: f64| {
        let proj = dot(d, u);
        d.iter_mut().zip(u).for_each(|(di, ui)| *di = (*di - proj * ui) / l);
    };
    for i in 0..b {
        through_norm(&mut du[i], &ua[i], na[i]);
        through_norm(&mut dv[i], &up[i], np[i]);
    }
    Ok((loss, du, dv))
}

/// Hyperparameters for [`train_aspect_encoder`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AspectTrainConfig {
    /// Softmax temperature. No reference value exists; 0.05 is this crate's choice.
    pub temperature: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    /// Validation cadence in optimizer updates. Training end is always evaluated.
    pub eval_every: usize,
    pub output_dim: usize,
    /// Width of an optional tanh hidden layer.
    pub hidden: Option<usize>,
    pub schedule: LrSchedule,
    pub seed: u64,
}

impl Default for AspectTrainConfig {
    fn default() -> Self {
        AspectTrainConfig {
            temperature: 0.05,
            batch_size: 32,
            learning_rate: 1e-5,
            weight_decay: 1e-4,
            epochs: 10,
            eval_every: 1000,
            output_dim: 150,
            hidden: None,
            schedule: LrSchedule::Constant,
            seed: 0,
        }
    }
}

impl AspectTrainConfig {
    /// Settings that converge in seconds for a linear encoder on small corpora.
    pub fn desk() -> Self {
        AspectTrainConfig {
            learning_rate: 3e-3,
            epochs: 60,
            eval_every: 50,
            output_dim: 32,
            schedule: LrSchedule::Cosine,
            ..AspectTrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig("batch size must be at least 2".into()));
        }
        if !(self.temperature > 0.0) || !(self.learning_rate > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::InvalidConfig("temperature and learning rate must be > 0, weight decay >= 0".into()));
        }
        if self.eval_every == 0 || self.output_dim < 2 {
            return Err(Error::InvalidConfig("eval_every must be >= 1 and output_dim >= 2".into()));
        }
        Ok(())
    }
}

/// A trained encoder with its selection history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AspectTraining {
    pub encoder: FeatureEncoder,
    pub best_step: usize,
    pub best_mean_rank: f64,
    pub best_mrr: f64,
    pub log: Vec<TrainingRecord>,
}

/// Validation loss (whole split as one batch), mean rank and MRR of
/// retrieving each positive from all validation positives.
pub fn evaluate_pairs(encoder: &FeatureEncoder, pairs: &[(Vec<f64>, Vec<f64>)], temperature: f64) -> Result<(f64, f64, f64)> {
    let a: Vec<EmbeddingVector> = pairs.iter().map(|p| encoder.encode(&p.0)).collect::<Result<_>>()?;
    let p: Vec<EmbeddingVector> = pairs.iter().map(|p| encoder.encode(&p.1)).collect::<Result<_>>()?;
    let truth: Vec<usize> = (0..pairs.len()).collect();
    let ranks = retrieval_ranks(&a, &p, &truth)?;
    let loss = infonce_loss(&SummaryPairBatch::new(a, p, temperature)?)?;
    Ok((loss, mean_rank(&ranks)?, mrr(&ranks)?))
}

/// Minimizes in-batch InfoNCE over `train` pairs of feature vectors. The
/// returned encoder is the checkpoint with the lowest validation mean rank
/// (ties go to the lower validation loss, then the earlier step); the
/// untrained initialization counts as step 0.
pub fn train_aspect_encoder(
    train: &[(Vec<f64>, Vec<f64>)],
    validation: &[(Vec<f64>, Vec<f64>)],
    cfg: &AspectTrainConfig,
) -> Result<AspectTraining> {
    cfg.validate()?;
    if train.len() < 2 {
        return Err(Error::Degenerate(format!("need at least 2 training pairs, got {}", train.len())));
    }
    if validation.is_empty() {
        return Err(Error::Degenerate("empty validation split".into()));
    }
    let d_in = train[0].0.len();
    if let Some(p) = train.iter().chain(validation).find(|p| p.0.len() != d_in || p.1.len() != d_in) {
        return Err(Error::DimensionMismatch { expected: d_in, got: if p.0.len() != d_in { p.0.len() } else { p.1.len() } });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut encoder = FeatureEncoder::random(d_in, cfg.output_dim, cfg.hidden, &mut rng);
    let mut params = encoder.params();
    let mask = encoder.decay_mask();
    let mut opt = AdamW::new(params.len(), cfg.learning_rate, cfg.weight_decay);

    let batch = cfg.batch_size.min(train.len());
    let per_epoch = train.len() / batch;
    let total = per_epoch * cfg.epochs;

    let mut log = Vec::new();
    let (loss0, rank0, mrr0) = evaluate_pairs(&encoder, validation, cfg.temperature)?;
    log.push(TrainingRecord::new(0, 0, None, loss0, rank0, mrr0, cfg.learning_rate));
    let mut best = (rank0, loss0, 0usize, mrr0, encoder.clone());

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0usize;
    let mut running = (0.0, 0usize);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks_exact(batch) {
            let traces_a: Vec<_> = chunk.iter().map(|&i| encoder.forward_cached(&train[i].0)).collect();
            let traces_p: Vec<_> = chunk.iter().map(|&i| encoder.forward_cached(&train[i].1)).collect();
            let out_a: Vec<&[f64]> = traces_a.iter().map(|t| t.last().expect("output").as_slice()).collect();
            let out_p: Vec<&[f64]> = traces_p.iter().map(|t| t.last().expect("output").as_slice()).collect();
            let (loss, ga, gp) = infonce_with_grad(&out_a, &out_p, cfg.temperature)
                .map_err(|_| Error::NonFiniteLoss { batch: step })?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { batch: step });
            }
            let mut grad = vec![0.0; params.len()];
            for (t, g) in traces_a.iter().zip(&ga).chain(traces_p.iter().zip(&gp)) {
                encoder.backward(t, g, &mut grad);
            }
            opt.learning_rate = cfg.schedule.rate(cfg.learning_rate, step, total);
            opt.step(&mut params, &grad, &mask);
            encoder.set_params(&params);
            step += 1;
            running.0 += loss;
            running.1 += 1;

            if step % cfg.eval_every == 0 || step == total {
                let (vl, vr, vm) = evaluate_pairs(&encoder, validation, cfg.temperature)?;
                let train_loss = running.0 / running.1 as f64;
                running = (0.0, 0);
                log.push(TrainingRecord::new(step, epoch, Some(train_loss), vl, vr, vm, opt.learning_rate));
                tracing::debug!(step, epoch, train_loss, val_mean_rank = vr, val_mrr = vm, "validation");
                if (vr, vl) < (best.0, best.1) {
                    best = (vr, vl, step, vm, encoder.clone());
                }
            }
        }
    }
    let (best_mean_rank, _, best_step, best_mrr, encoder) = best;
    Ok(AspectTraining { encoder, best_step, best_mean_rank, best_mrr, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn ev(v: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(v.to_vec()).unwrap()
    }

    /// Direct evaluation of the loss with explicit normalization.
    fn oracle(a: &[Vec<f64>], p: &[Vec<f64>], tau: f64) -> f64 {
        let cos = |x: &[f64], y: &[f64]| {
            let d: f64 = x.iter().zip(y).map(|(u, v)| u * v).sum();
            d / (x.iter().map(|u| u * u).sum::<f64>().sqrt() * y.iter().map(|u| u * u).sum::<f64>().sqrt())
        };
        let mut total = 0.0;
        for i in 0..a.len() {
            let num = (cos(&a[i], &p[i]) / tau).exp();
            let den: f64 = (0..a.len()).map(|j| (cos(&a[i], &p[j]) / tau).exp()).sum();
            total += -(num / den).ln();
        }
        total / a.len() as f64
    }

    fn batch(a: &[Vec<f64>], p: &[Vec<f64>], tau: f64) -> SummaryPairBatch {
        SummaryPairBatch::new(a.iter().map(|v| ev(v)).collect(), p.iter().map(|v| ev(v)).collect(), tau).unwrap()
    }

    #[test]
    fn single_pair_has_zero_loss() {
        let b = batch(&[vec![1.0, 2.0]], &[vec![-3.0, 0.5]], 0.1);
        assert_eq!(infonce_loss(&b).unwrap(), 0.0);
    }

    #[test]
    fn orthogonal_pairs_at_unit_temperature() {
        let b = batch(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[vec![1.0, 0.0], vec![0.0, 1.0]], 1.0);
        let want = -(std::f64::consts::E / (std::f64::consts::E + 1.0)).ln();
        assert!((infonce_loss(&b).unwrap() - want).abs() < 1e-12);
        assert!((want - 0.3133).abs() < 1e-4);
    }

    #[test]
    fn temperature_fixtures_match_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a: Vec<Vec<f64>> = (0..6).map(|_| (0..5).map(|_| rng.sample(StandardNormal)).collect()).collect();
        let p: Vec<Vec<f64>> = (0..6).map(|_| (0..5).map(|_| rng.sample(StandardNormal)).collect()).collect();
        let mut seen = Vec::new();
        for tau in [0.05, 0.1, 0.5, 1.0, 2.0] {
            let got = infonce_loss(&batch(&a, &p, tau)).unwrap();
            assert!((got - oracle(&a, &p, tau)).abs() < 1e-10);
            assert!(got >= 0.0);
            seen.push(got);
        }
        seen.dedup();
        assert_eq!(seen.len(), 5);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut a: Vec<Vec<f64>> = (0..4).map(|_| (0..3).map(|_| rng.sample(StandardNormal)).collect()).collect();
        let mut p: Vec<Vec<f64>> = (0..4).map(|_| (0..3).map(|_| rng.sample(StandardNormal)).collect()).collect();
        let tau = 0.3;
        let refs = |v: &[Vec<f64>]| v.iter().map(|x| x.clone()).collect::<Vec<_>>();
        let eval = |a: &[Vec<f64>], p: &[Vec<f64>]| {
            let ar: Vec<&[f64]> = a.iter().map(Vec::as_slice).collect();
            let pr: Vec<&[f64]> = p.iter().map(Vec::as_slice).collect();
            infonce_with_grad(&ar, &pr, tau).unwrap()
        };
        let (_, ga, gp) = eval(&a, &p);
        let h = 1e-6;
        for side in 0..2 {
            for i in 0..4 {
                for k in 0..3 {
                    let target = if side == 0 { &mut a } else { &mut p };
                    let orig = target[i][k];
                    target[i][k] = orig + h;
                    let (a1, p1) = (refs(&a), refs(&p));
                    let up = eval(&a1, &p1).0;
                    let target = if side == 0 { &mut a } else { &mut p };
                    target[i][k] = orig - h;
                    let (a2, p2) = (refs(&a), refs(&p));
                    let down = eval(&a2, &p2).0;
                    let target = if side == 0 { &mut a } else { &mut p };
                    target[i][k] = orig;
                    let fd = (up - down) / (2.0 * h);
                    let an = if side == 0 { ga[i][k] } else { gp[i][k] };
                    assert!((fd - an).abs() < 1e-7, "side {side} ({i},{k}): {fd} vs {an}");
                }
            }
        }
    }

    #[test]
    fn rescaling_one_embedding_is_invisible() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a: Vec<Vec<f64>> = (0..5).map(|_| (0..4).map(|_| rng.sample(StandardNormal)).collect()).collect();
        let p: Vec<Vec<f64>> = (0..5).map(|_| (0..4).map(|_| rng.sample(StandardNormal)).collect()).collect();
        let base = infonce_loss(&batch(&a, &p, 0.2)).unwrap();
        for c in [1e-3, 0.5, 7.0, 1e4] {
            let mut a2 = a.clone();
            a2[2].iter_mut().for_each(|x| *x *= c);
            assert!((infonce_loss(&batch(&a2, &p, 0.2)).unwrap() - base).abs() < 1e-9);
        }
    }

    #[test]
    fn closer_positive_lowers_loss() {
        let a = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        let mut prev = f64::INFINITY;
        for t in [0.0, 0.3, 0.6, 0.9, 1.2] {
            let p = vec![vec![1.0, 1.5 - t, 0.4], vec![0.2, 1.0, 0.5], vec![0.3, 0.1, 1.0]];
            let l = infonce_loss(&batch(&a, &p, 0.5)).unwrap();
            assert!(l < prev, "{l} !< {prev}");
            prev = l;
        }
    }

    #[test]
    fn zero_norm_rejected() {
        let b = batch(&[vec![0.0, 0.0], vec![1.0, 0.0]], &[vec![1.0, 0.0], vec![0.0, 1.0]], 1.0);
        assert!(matches!(infonce_loss(&b), Err(Error::ZeroNorm { index: 0 })));
    }

    fn two_view_data(n: usize, noise: f64, seed: u64) -> Vec<(Vec<f64>, Vec<f64>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let base: Vec<f64> = (0..8).map(|_| rng.sample(StandardNormal)).collect();
                let mut view = || base.iter().map(|b| b + noise * rng.sample::<f64, _>(StandardNormal)).collect();
                (view(), view())
            })
            .collect()
    }

    #[test]
    fn separable_pairs_reach_the_floor() {
        let data = two_view_data(64, 0.0, 1);
        let cfg = AspectTrainConfig { output_dim: 8, epochs: 50, batch_size: 16, ..AspectTrainConfig::desk() };
        let out = train_aspect_encoder(&data, &data, &cfg).unwrap();
        assert_eq!(out.best_mrr, 1.0);
        let last = out.log.last().unwrap().train_loss.unwrap();
        // a collapsed encoder scores ln(batch size)
        assert!(last < 0.01 * 16f64.ln(), "{last}");
    }

    #[test]
    fn training_is_deterministic() {
        let data = two_view_data(40, 0.1, 2);
        let cfg = AspectTrainConfig { output_dim: 4, epochs: 3, batch_size: 8, hidden: Some(6), ..AspectTrainConfig::desk() };
        let a = train_aspect_encoder(&data[..30], &data[30..], &cfg).unwrap();
        let b = train_aspect_encoder(&data[..30], &data[30..], &cfg).unwrap();
        let bits = |t: &AspectTraining| t.encoder.params().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(a.log, b.log);
    }

    #[test]
    fn too_few_pairs_rejected() {
        let data = two_view_data(3, 0.1, 2);
        assert!(train_aspect_encoder(&data[..1], &data[1..], &AspectTrainConfig::desk()).is_err());
    }
}
