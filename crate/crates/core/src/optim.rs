//! First-order adaptive-moment optimizers.
//!
//! [`minimize`] drives a small dense objective to a local minimum and returns
//! the best iterate seen. [`AdamW`] is the stateful per-step form used by the
//! training loops, with decoupled weight decay.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Settings for [`minimize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_iterations: usize,
    /// Stop once the best objective improved by less than this...
    pub tolerance: f64,
    /// ...over this many iterations.
    pub patience: usize,
    /// Neighbors averaged for the initial guess.
    pub init_neighbors: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::insertion()
    }
}

impl OptimizerConfig {
    /// Defaults for placing a new low-dimensional coordinate.
    pub fn insertion() -> Self {
        OptimizerConfig {
            learning_rate: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_iterations: 500,
            tolerance: 1e-9,
            patience: 25,
            init_neighbors: 5,
        }
    }

    /// Defaults for optimizing PCA coefficients.
    pub fn reconstruction() -> Self {
        OptimizerConfig { learning_rate: 0.1, ..OptimizerConfig::insertion() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate {} must be > 0", self.learning_rate)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::InvalidConfig(format!("{name} {b} outside [0, 1)")));
            }
        }
        if self.init_neighbors == 0 {
            return Err(Error::InvalidConfig("init_neighbors must be at least 1".into()));
        }
        Ok(())
    }
}

/// Outcome of [`minimize`].
#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub initial_value: f64,
    pub iterations: usize,
}

/// Adam over `objective`, which writes the gradient into its second argument
/// and returns the objective value. The returned point is the best iterate,
/// so `value <= initial_value` always holds.
pub fn minimize<F>(x0: Vec<f64>, cfg: &OptimizerConfig, mut objective: F) -> Result<Minimum>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<f64>,
{
    cfg.validate()?;
    let dim = x0.len();
    let mut x = x0;
    let mut grad = vec![0.0; dim];
    let mut m = vec![0.0; dim];
    let mut v = vec![0.0; dim];

    let initial_value = objective(&x, &mut grad)?;
    check_state(initial_value, &grad, 0)?;
    let mut best_x = x.clone();
    let mut best = initial_value;
    let mut history = vec![best];
    let mut iterations = 0;

    for t in 1..=cfg.max_iterations {
        let bc1 = 1.0 - cfg.beta1.powi(t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(t as i32);
        for k in 0..dim {
            m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * grad[k];
            v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * grad[k] * grad[k];
            x[k] -= cfg.learning_rate * (m[k] / bc1) / ((v[k] / bc2).sqrt() + cfg.epsilon);
        }
        if x.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite(format!("optimizer state at iteration {t}")));
        }
        let value = objective(&x, &mut grad)?;
        check_state(value, &grad, t)?;
        iterations = t;
        if value < best {
            best = value;
            best_x.copy_from_slice(&x);
        }
        history.push(best);
        if t >= cfg.patience && history[t - cfg.patience] - best < cfg.tolerance {
            break;
        }
    }
    Ok(Minimum { x: best_x, value: best, initial_value, iterations })
}

fn check_state(value: f64, grad: &[f64], iteration: usize) -> Result<()> {
    if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("objective or gradient at iteration {iteration}")));
    }
    Ok(())
}

/// Adam with decoupled weight decay over one flat parameter vector.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub learning_rate: f64,
    pub weight_decay: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamW {
    pub fn new(len: usize, learning_rate: f64, weight_decay: f64) -> Self {
        AdamW {
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    /// One update. `decay_mask[k]` false exempts parameter `k` from decay.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], decay_mask: &[bool]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for k in 0..params.len() {
            let g = grads[k];
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g;
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g;
            if decay_mask[k] {
                params[k] -= self.learning_rate * self.weight_decay * params[k];
            }
            params[k] -= self.learning_rate * (self.m[k] / bc1) / ((self.v[k] / bc2).sqrt() + self.epsilon);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(x: &[f64], g: &mut [f64]) -> Result<f64> {
        g[0] = 2.0 * (x[0] - 3.0);
        g[1] = 8.0 * (x[1] + 1.0);
        Ok((x[0] - 3.0).powi(2) + 4.0 * (x[1] + 1.0).powi(2))
    }

    #[test]
    fn finds_quadratic_minimum() {
        let cfg = OptimizerConfig { learning_rate: 0.01, max_iterations: 5000, tolerance: 0.0, ..OptimizerConfig::insertion() };
        let r = minimize(vec![0.0, 0.0], &cfg, quadratic).unwrap();
        assert!((r.x[0] - 3.0).abs() < 1e-3 && (r.x[1] + 1.0).abs() < 1e-3, "{:?}", r.x);
        assert!(r.value <= r.initial_value);
    }

    #[test]
    fn best_iterate_never_worse_than_start() {
        // start at the minimum; any step makes things worse
        let r = minimize(vec![3.0, -1.0], &OptimizerConfig::insertion(), quadratic).unwrap();
        assert_eq!(r.value, 0.0);
        assert_eq!(r.x, vec![3.0, -1.0]);
    }

    #[test]
    fn non_finite_objective_aborts() {
        let r = minimize(vec![1.0], &OptimizerConfig::insertion(), |_, g| {
            g[0] = f64::NAN;
            Ok(1.0)
        });
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }

    #[test]
    fn adamw_decay_respects_mask() {
        let mut opt = AdamW::new(2, 0.1, 0.5);
        let mut p = vec![1.0, 1.0];
        opt.step(&mut p, &[0.0, 0.0], &[true, false]);
        assert!((p[0] - 0.95).abs() < 1e-12);
        assert_eq!(p[1], 1.0);
    }
}
