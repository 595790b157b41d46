use serde::{Deserialize, Serialize};

use super::extension::{calibration, extend, nearest};
use crate::error::{Error, Result};
use crate::geometry::{dot, norm, pca_project, pca_reconstruct, EmbeddingVector, PcaBasis};
use crate::optim::{minimize, OptimizerConfig};
use crate::tsne::{kernel_normalizer, sq_dist, student_t, AffinityMatrix, Layout, RowKernel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionResult {
    pub embedding: EmbeddingVector,
    pub pca_coefficients: Vec<f64>,
    pub kl_after: f64,
    pub kl_init: f64,
    pub iterations: usize,
    pub init_coefficients: Vec<f64>,
}

/// KL of the extended system as a function of PCA coefficients, with the new
/// point's low-dimensional position held fixed.
pub(crate) struct ReconstructObjective<'a> {
    kernels: &'a [RowKernel],
    perplexity: f64,
    basis: &'a PcaBasis,
    /// Atlas embeddings scaled to unit length.
    units: Vec<Vec<f64>>,
    /// `Q` between the fixed target and each layout point.
    q_new: Vec<f64>,
    /// Unnormalized frozen-pair term `sum p' ln(p' / q)`.
    f_old: f64,
}

impl<'a> ReconstructObjective<'a> {
    pub(crate) fn new(
        layout: &Layout,
        p_base: &'a AffinityMatrix,
        target: &[f64],
        embeddings: &[EmbeddingVector],
        basis: &'a PcaBasis,
    ) -> Result<Self> {
        let y = &layout.coords;
        let n = y.len();
        if p_base.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: p_base.len() });
        }
        if embeddings.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: embeddings.len() });
        }
        if target.len() != y.dim() {
            return Err(Error::DimensionMismatch { expected: y.dim(), got: target.len() });
        }
        if target.iter().any(|t| !t.is_finite()) {
            return Err(Error::NonFinite("target point".into()));
        }
        if basis.k() == 0 {
            return Err(Error::Degenerate("PCA basis has no components".into()));
        }
        let (kernels, perplexity) = calibration(p_base)?;
        let mut units = Vec::with_capacity(n);
        for (index, e) in embeddings.iter().enumerate() {
            if e.dim() != basis.dim() {
                return Err(Error::DimensionMismatch { expected: basis.dim(), got: e.dim() });
            }
            let l = e.norm();
            if l <= 0.0 {
                return Err(Error::ZeroNorm { index });
            }
            units.push(e.as_slice().iter().map(|x| x / l).collect());
        }

        let w_new: Vec<f64> = (0..n).map(|j| student_t(target, y.point(j))).collect();
        let z = kernel_normalizer(y) + 2.0 * w_new.iter().sum::<f64>();
        let q_new = w_new.iter().map(|w| w / z).collect();
        let scale = n as f64 / (n as f64 + 1.0);
        let mut f_old = 0.0;
        for i in 0..n {
            for j in 0..n {
                let pij = p_base.get(i, j) * scale;
                if i != j && pij > 0.0 {
                    f_old += pij * (pij / (student_t(y.point(i), y.point(j)) / z)).ln();
                }
            }
        }
        Ok(ReconstructObjective { kernels, perplexity, basis, units, q_new, f_old })
    }

    fn embedding(&self, z: &[f64]) -> Vec<f64> {
        let mut e = self.basis.mean().as_slice().to_vec();
        for (i, zi) in z.iter().enumerate() {
            for (x, c) in e.iter_mut().zip(self.basis.component(i)) {
                *x += zi * c;
            }
        }
        e
    }

    pub(crate) fn value_grad(&self, z: &[f64], grad: &mut [f64]) -> Result<f64> {
        let e = self.embedding(z);
        let len = norm(&e);
        if len <= 0.0 || !len.is_finite() {
            return Err(Error::Degenerate("reconstructed embedding has zero norm".into()));
        }
        let n = self.units.len();
        let cos: Vec<f64> = self.units.iter().map(|u| (dot(&e, u) / len).clamp(-1.0, 1.0)).collect();
        let a: Vec<f64> = cos.iter().map(|c| 1.0 - c).collect();
        let sq: Vec<f64> = a.iter().map(|x| x * x).collect();
        let ext = extend(self.kernels, self.perplexity, &sq);
        let t = ext.total;

        let mut g_term = 0.0;
        let log_ratio: Vec<f64> = ext
            .v
            .iter()
            .zip(&self.q_new)
            .map(|(&v, &q)| v.max(f64::MIN_POSITIVE).ln() - q.ln())
            .collect();
        for (v, lr) in ext.v.iter().zip(&log_ratio) {
            if *v > 0.0 {
                g_term += 2.0 * v * lr;
            }
        }
        let fg = (self.f_old + g_term) / t;
        let value = fg - t.ln();

        // dKL/dp(j|m) = dKL/dp(m|j) = g_j
        let denom = 2.0 * (n as f64 + 1.0);
        let g: Vec<f64> = log_ratio.iter().map(|lr| 2.0 / t * (lr - fg) / denom).collect();
        let probs = &ext.row.probs;
        let beta = ext.row.kernel.beta;
        let g_mean: f64 = probs.iter().zip(&g).map(|(p, g)| p * g).sum();
        let d_mean: f64 = probs.iter().zip(&sq).map(|(p, d)| p * d).sum();
        let var: f64 = probs.iter().zip(&sq).map(|(p, d)| p * (d - d_mean).powi(2)).sum();
        let cov: f64 = probs.iter().zip(&sq).zip(&g).map(|((p, d), g)| p * g * (d - d_mean)).sum();
        // The bandwidth follows the distances only while the entropy constraint binds.
        let implicit = ext.row.reached(self.perplexity.min(n as f64)) && var > 1e-300;

        let mut de = vec![0.0; e.len()];
        for k in 0..n {
            let mut dd = -beta * probs[k] * (g[k] - g_mean);
            if implicit {
                dd += beta * probs[k] * (sq[k] - d_mean) * cov / var;
            }
            let b = ext.reverse[k];
            dd -= g[k] * self.kernels[k].beta * b * (1.0 - b);
            // D = A^2, A = 1 - cos
            let dcos = -2.0 * a[k] * dd;
            let u = &self.units[k];
            for (x, (ui, ei)) in de.iter_mut().zip(u.iter().zip(&e)) {
                *x += dcos * (ui / len - cos[k] * ei / (len * len));
            }
        }
        for (i, gi) in grad.iter_mut().enumerate() {
            *gi = dot(self.basis.component(i), &de);
        }
        Ok(value)
    }
}

/// Finds the embedding, constrained to the PCA span of `basis`, that the
/// frozen layout would place at `target_point`.
pub fn reconstruct_embedding(
    layout: &Layout,
    p_base: &AffinityMatrix,
    target_point: &[f64],
    atlas_embeddings: &[EmbeddingVector],
    basis: &PcaBasis,
    cfg: &OptimizerConfig,
) -> Result<ReconstructionResult> {
    let objective = ReconstructObjective::new(layout, p_base, target_point, atlas_embeddings, basis)?;
    let y = &layout.coords;
    let d2: Vec<f64> = (0..y.len()).map(|j| sq_dist(target_point, y.point(j))).collect();
    let idx = nearest(&d2, cfg.init_neighbors);
    let dim = basis.dim();
    let mean: Vec<f64> = (0..dim)
        .map(|k| idx.iter().map(|&j| atlas_embeddings[j].as_slice()[k]).sum::<f64>() / idx.len() as f64)
        .collect();
    let init_coefficients = pca_project(basis, &EmbeddingVector::new(mean)?)?;
    let best = minimize(init_coefficients.clone(), cfg, |z, g| objective.value_grad(z, g))?;
    let embedding = pca_reconstruct(basis, &best.x)?;
    Ok(ReconstructionResult {
        embedding,
        pca_coefficients: best.x,
        kl_after: best.value,
        kl_init: best.initial_value,
        iterations: best.iterations,
        init_coefficients,
    })
}
