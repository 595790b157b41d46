use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{dot, EmbeddingVector};
use crate::error::{Error, Result};

/// Mean plus `k` orthonormal principal directions, ordered by explained variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaBasis {
    mean: EmbeddingVector,
    /// Row-major `k x dim`.
    components: Vec<f64>,
    explained_variance: Vec<f64>,
    requested_k: usize,
}

impl PcaBasis {
    /// Rebuilds a basis from stored parts, checking orthonormality at 1e-8.
    pub fn from_parts(
        mean: EmbeddingVector,
        components: Vec<f64>,
        explained_variance: Vec<f64>,
        requested_k: usize,
    ) -> Result<Self> {
        let dim = mean.dim();
        let k = explained_variance.len();
        if components.len() != k * dim {
            return Err(Error::DimensionMismatch { expected: k * dim, got: components.len() });
        }
        let basis = PcaBasis { mean, components, explained_variance, requested_k };
        for i in 0..k {
            for j in i..k {
                let d = dot(basis.component(i), basis.component(j));
                let expected = if i == j { 1.0 } else { 0.0 };
                if (d - expected).abs() > 1e-8 {
                    return Err(Error::Degenerate(format!("components {i},{j} not orthonormal ({d})")));
                }
            }
        }
        Ok(basis)
    }

    pub fn dim(&self) -> usize {
        self.mean.dim()
    }

    pub fn k(&self) -> usize {
        self.explained_variance.len()
    }

    pub fn requested_k(&self) -> usize {
        self.requested_k
    }

    /// True when the data had lower rank than the requested `k`.
    pub fn is_rank_deficient(&self) -> bool {
        self.k() < self.requested_k
    }

    pub fn mean(&self) -> &EmbeddingVector {
        &self.mean
    }

    pub fn component(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.components[i * d..(i + 1) * d]
    }

    pub fn components(&self) -> &[f64] {
        &self.components
    }

    pub fn explained_variance(&self) -> &[f64] {
        &self.explained_variance
    }
}

/// Fits a rank-`k` PCA basis on mean-centered data.
///
/// Component signs are fixed so the largest-magnitude entry is positive.
/// If the data has rank below `k`, the returned basis has the achievable rank
/// and [`PcaBasis::is_rank_deficient`] is set.
pub fn pca_fit(data: &[EmbeddingVector], k: usize) -> Result<PcaBasis> {
    let n = data.len();
    if n < 2 {
        return Err(Error::Degenerate(format!("PCA needs at least 2 points, got {n}")));
    }
    let dim = data[0].dim();
    if let Some(bad) = data.iter().find(|v| v.dim() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, got: bad.dim() });
    }
    if k == 0 || k > (n - 1).min(dim) {
        return Err(Error::InvalidConfig(format!(
            "k = {k} out of range 1..={} for n = {n}, dim = {dim}",
            (n - 1).min(dim)
        )));
    }

    let mut mean = vec![0.0; dim];
    for v in data {
        for (m, x) in mean.iter_mut().zip(v.as_slice()) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let centered = DMatrix::from_fn(n, dim, |i, j| data[i].as_slice()[j] - mean[j]);
    let cov = (centered.transpose() * &centered) / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let top = eig.eigenvalues[order[0]].max(0.0);
    let rank_floor = top * 1e-12 + f64::MIN_POSITIVE;
    let mut components = Vec::with_capacity(k * dim);
    let mut explained = Vec::with_capacity(k);
    for &idx in order.iter().take(k) {
        let lambda = eig.eigenvalues[idx];
        if lambda <= rank_floor {
            break;
        }
        let col = eig.eigenvectors.column(idx);
        let mut c: Vec<f64> = col.iter().copied().collect();
        let (mut best, mut best_abs) = (0, -1.0);
        for (i, x) in c.iter().enumerate() {
            if x.abs() > best_abs + 1e-12 {
                best = i;
                best_abs = x.abs();
            }
        }
        if c[best] < 0.0 {
            c.iter_mut().for_each(|x| *x = -*x);
        }
        let nc = dot(&c, &c).sqrt();
        c.iter_mut().for_each(|x| *x /= nc);
        components.extend(c);
        explained.push(lambda);
    }
    if explained.is_empty() {
        return Err(Error::Degenerate("data has zero variance".into()));
    }
    if explained.len() < k {
        tracing::warn!(requested = k, achieved = explained.len(), "PCA data is rank deficient");
    }
    Ok(PcaBasis {
        mean: EmbeddingVector::new(mean)?,
        components,
        explained_variance: explained,
        requested_k: k,
    })
}

/// Coefficients `z = U (e - mean)`.
pub fn pca_project(basis: &PcaBasis, e: &EmbeddingVector) -> Result<Vec<f64>> {
    if e.dim() != basis.dim() {
        return Err(Error::DimensionMismatch { expected: basis.dim(), got: e.dim() });
    }
    let centered: Vec<f64> = e.as_slice().iter().zip(basis.mean.as_slice()).map(|(x, m)| x - m).collect();
    Ok((0..basis.k()).map(|i| dot(basis.component(i), &centered)).collect())
}

/// `mean + sum_i z_i * component_i`.
pub fn pca_reconstruct(basis: &PcaBasis, z: &[f64]) -> Result<EmbeddingVector> {
    if z.len() != basis.k() {
        return Err(Error::DimensionMismatch { expected: basis.k(), got: z.len() });
    }
    let mut out = basis.mean.as_slice().to_vec();
    for (i, zi) in z.iter().enumerate() {
        for (o, c) in out.iter_mut().zip(basis.component(i)) {
            *o += zi * c;
        }
    }
    EmbeddingVector::new(out)
}
