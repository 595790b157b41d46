use serde::{Deserialize, Serialize};

use super::extension::{calibration, check_distances, extend, nearest};
use crate::error::{Error, Result};
use crate::optim::{minimize, OptimizerConfig};
use crate::tsne::{kernel_normalizer, student_t, AffinityMatrix, Coordinates, Layout};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InsertResult {
    pub coordinate: Vec<f64>,
    pub kl_after: f64,
    pub kl_init: f64,
    pub iterations: usize,
    pub init_coordinate: Vec<f64>,
    /// The initial guess used the mean of all points (too few neighbors).
    pub init_fallback: bool,
    /// The new row's perplexity could not be matched exactly.
    pub perplexity_unreached: bool,
}

/// KL of the extended system as a function of the new coordinate only.
pub(crate) struct InsertObjective<'a> {
    y: &'a Coordinates,
    /// Normalized joint affinities between the new point and each existing one.
    v_hat: Vec<f64>,
    /// Contribution of the frozen pairs, independent of the new coordinate.
    c_old: f64,
    z_old: f64,
}

impl<'a> InsertObjective<'a> {
    pub(crate) fn new(y: &'a Coordinates, p_base: &AffinityMatrix, dist: &[f64]) -> Result<(Self, bool)> {
        let n = y.len();
        if p_base.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: p_base.len() });
        }
        check_distances(dist, n)?;
        let (kernels, perplexity) = calibration(p_base)?;
        let sq: Vec<f64> = dist.iter().map(|a| a * a).collect();
        let ext = extend(kernels, perplexity, &sq);
        let unreached = !ext.row.reached(perplexity.min(n as f64));
        if unreached {
            tracing::warn!(
                target = perplexity,
                achieved = ext.row.entropy.exp(),
                "new point's perplexity is unreachable; using the closest calibrated row"
            );
        }
        let scale = n as f64 / (n as f64 + 1.0) / ext.total;
        let mut c_old = 0.0;
        for i in 0..n {
            for j in 0..n {
                let pij = p_base.get(i, j) * scale;
                if i != j && pij > 0.0 {
                    c_old += pij * (pij.ln() - student_t(y.point(i), y.point(j)).ln());
                }
            }
        }
        let v_hat = ext.v.iter().map(|v| v / ext.total).collect();
        Ok((InsertObjective { y, v_hat, c_old, z_old: kernel_normalizer(y) }, unreached))
    }

    pub(crate) fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let w: Vec<f64> = (0..self.y.len()).map(|j| student_t(x, self.y.point(j))).collect();
        let z = self.z_old + 2.0 * w.iter().sum::<f64>();
        let mut cross = 0.0;
        grad.iter_mut().for_each(|g| *g = 0.0);
        for (j, (&v, &wj)) in self.v_hat.iter().zip(&w).enumerate() {
            if v > 0.0 {
                cross += 2.0 * v * (v.ln() - wj.ln());
            }
            let coeff = 4.0 * (v - wj / z) * wj;
            for (k, g) in grad.iter_mut().enumerate() {
                *g += coeff * (x[k] - self.y.point(j)[k]);
            }
        }
        self.c_old + cross + z.ln()
    }
}

/// Places a new sample into a frozen layout by minimizing KL over its
/// coordinate alone. `dist_to_existing[j]` is the new sample's distance to
/// layout point `j` under the same weighting that built `p_base`.
pub fn insert_sample(
    layout: &Layout,
    p_base: &AffinityMatrix,
    dist_to_existing: &[f64],
    cfg: &OptimizerConfig,
) -> Result<InsertResult> {
    let y = &layout.coords;
    let (objective, perplexity_unreached) = InsertObjective::new(y, p_base, dist_to_existing)?;
    let n = y.len();
    let init_fallback = n <= cfg.init_neighbors;
    let init_coordinate = if init_fallback {
        tracing::warn!(n, "too few points for neighbor initialization; starting at the layout mean");
        y.centroid()
    } else {
        let idx = nearest(dist_to_existing, cfg.init_neighbors);
        (0..y.dim())
            .map(|k| idx.iter().map(|&j| y.point(j)[k]).sum::<f64>() / idx.len() as f64)
            .collect()
    };
    let best = minimize(init_coordinate.clone(), cfg, |x, g| Ok(objective.value_grad(x, g)))?;
    Ok(InsertResult {
        coordinate: best.x,
        kl_after: best.value,
        kl_init: best.initial_value,
        iterations: best.iterations,
        init_coordinate,
        init_fallback,
        perplexity_unreached,
    })
}
