//! Exact O(n^2) t-SNE.
//!
//! High-dimensional affinities come from perplexity-calibrated Gaussian
//! conditionals over squared distances, symmetrized by `1 / 2n`. The layout
//! minimizes `KL(P || Q)` with Student-t `Q` by gradient descent with
//! momentum, per-coordinate gains and an early-exaggeration phase.

mod affinity;
mod objective;

pub use affinity::{calibrate_affinities, conditional_rows, AffinityMatrix, RowKernel, PERPLEXITY_TOLERANCE};
pub(crate) use affinity::{fit_row, RowFit};
pub use objective::{kl_divergence, kl_gradient, layout_kl, low_dim_affinities, Coordinates};
pub(crate) use objective::{kernel_normalizer, sq_dist, student_t};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Optimizer settings. None of these values come from a reference result;
/// they are the widely used exact t-SNE defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub max_iterations: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch_iter: usize,
    pub early_exaggeration_factor: f64,
    pub early_exaggeration_iters: usize,
    pub seed: u64,
    pub d: usize,
    pub init_scale: f64,
    pub min_grad_norm: f64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 30.0,
            max_iterations: 1000,
            learning_rate: 200.0,
            momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch_iter: 250,
            early_exaggeration_factor: 12.0,
            early_exaggeration_iters: 250,
            seed: 0,
            d: 2,
            init_scale: 1e-4,
            min_grad_norm: 1e-7,
        }
    }
}

impl TsneConfig {
    /// Configured perplexity clamped to `(n - 1) / 3`, never below 2.
    pub fn effective_perplexity(&self, n: usize) -> f64 {
        let cap = (n as f64 - 1.0) / 3.0;
        self.perplexity.min(cap).max(2.0).min(n as f64 - 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate {} must be > 0", self.learning_rate)));
        }
        if !matches!(self.d, 2 | 3) {
            return Err(Error::InvalidConfig(format!("output dimension {} must be 2 or 3", self.d)));
        }
        for (name, m) in [("momentum", self.momentum), ("final_momentum", self.final_momentum)] {
            if !(0.0..1.0).contains(&m) {
                return Err(Error::InvalidConfig(format!("{name} {m} outside [0, 1)")));
            }
        }
        if self.early_exaggeration_factor < 1.0 {
            return Err(Error::InvalidConfig("early exaggeration factor must be >= 1".into()));
        }
        if self.perplexity < 2.0 {
            return Err(Error::InvalidConfig(format!("perplexity {} below 2", self.perplexity)));
        }
        Ok(())
    }
}

/// A fitted low-dimensional layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub coords: Coordinates,
    pub converged: bool,
    pub final_kl: f64,
    pub iterations_run: usize,
    /// `(iteration, KL)` sampled every 50 iterations once exaggeration is off.
    pub kl_trace: Vec<(usize, f64)>,
}

impl Layout {
    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Largest pairwise distance between layout points.
    pub fn diameter(&self) -> f64 {
        let n = self.len();
        let mut best = 0.0f64;
        for i in 0..n {
            for j in i + 1..n {
                best = best.max(sq_dist(self.coords.point(i), self.coords.point(j)));
            }
        }
        best.sqrt()
    }
}

const KL_TRACE_EVERY: usize = 50;

pub fn fit_layout(p: &AffinityMatrix, cfg: &TsneConfig) -> Result<Layout> {
    cfg.validate()?;
    let n = p.len();
    if n < 2 {
        return Err(Error::Degenerate(format!("need at least 2 points, got {n}")));
    }
    let d = cfg.d;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, cfg.init_scale).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut y = Coordinates::new(d, (0..n * d).map(|_| normal.sample(&mut rng)).collect())?;

    let mut grad = vec![0.0; n * d];
    let mut update = vec![0.0; n * d];
    let mut gains = vec![1.0f64; n * d];
    let mut kl_trace = Vec::new();
    let mut converged = false;
    let mut iterations_run = 0;
    // Last accepted post-exaggeration iterate, its KL and gradient.
    let mut accepted: Option<(Vec<f64>, f64, Vec<f64>)> = None;
    let mut step_scale = 1.0f64;
    let plogp = objective::p_log_p(p);

    for it in 0..cfg.max_iterations {
        let exaggerating = it < cfg.early_exaggeration_iters;
        let ex = if exaggerating { cfg.early_exaggeration_factor } else { 1.0 };
        let momentum = if it < cfg.momentum_switch_iter { cfg.momentum } else { cfg.final_momentum };
        let mut kl = objective::gradient_into(p, &y, ex, &mut grad, plogp);
        if !kl.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { iteration: it });
        }
        if !exaggerating {
            // Descent safeguard: a step that raised KL is undone, momentum and
            // gains are reset and the step is shortened.
            match &accepted {
                Some((prev_y, prev_kl, prev_grad)) if kl > *prev_kl => {
                    y.as_mut_slice().copy_from_slice(prev_y);
                    grad.copy_from_slice(prev_grad);
                    kl = *prev_kl;
                    update.iter_mut().for_each(|u| *u = 0.0);
                    gains.iter_mut().for_each(|g| *g = 1.0);
                    step_scale *= 0.5;
                }
                _ => {
                    step_scale = (step_scale * 1.05).min(1.0);
                    accepted = Some((y.as_slice().to_vec(), kl, grad.clone()));
                }
            }
            if (it - cfg.early_exaggeration_iters) % KL_TRACE_EVERY == 0 {
                kl_trace.push((it, kl));
            }
        }
        let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !exaggerating && (grad_norm < cfg.min_grad_norm || step_scale < 1e-12) {
            converged = true;
            iterations_run = it;
            break;
        }

        let coords = y.as_mut_slice();
        let lr = cfg.learning_rate * step_scale;
        for k in 0..n * d {
            // gains grow when the gradient opposes the running update
            gains[k] = if (grad[k] > 0.0) != (update[k] > 0.0) {
                gains[k] + 0.2
            } else {
                (gains[k] * 0.8).max(0.01)
            };
            update[k] = momentum * update[k] - lr * gains[k] * grad[k];
            coords[k] += update[k];
        }
        for k in 0..d {
            let mean = (0..n).map(|i| coords[i * d + k]).sum::<f64>() / n as f64;
            (0..n).for_each(|i| coords[i * d + k] -= mean);
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::Diverged { iteration: it });
        }
        iterations_run = it + 1;
    }

    if let Some((prev_y, prev_kl, _)) = &accepted {
        // the final step has not been checked yet
        if layout_kl(p, &y)? > *prev_kl {
            y.as_mut_slice().copy_from_slice(prev_y);
        }
    }
    let final_kl = layout_kl(p, &y)?;
    if !converged {
        if let [.., (_, a), (_, b)] = kl_trace.as_slice() {
            converged = (a - b).abs() <= 1e-4 * a.abs().max(1e-12);
        }
    }
    Ok(Layout { coords: y, converged, final_kl, iterations_run, kl_trace })
}
