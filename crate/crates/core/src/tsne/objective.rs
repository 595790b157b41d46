use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::AffinityMatrix;
use crate::error::{Error, Result};

/// Low-dimensional point coordinates, row-major `n x dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coordinates {
    dim: usize,
    values: Vec<f64>,
}

impl Coordinates {
    pub fn new(dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || values.len() % dim != 0 {
            return Err(Error::DimensionMismatch { expected: dim, got: values.len() });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("coordinate {i}")));
        }
        Ok(Coordinates { dim, values })
    }

    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let dim = points.first().map(Vec::len).unwrap_or(2);
        if let Some(p) = points.iter().find(|p| p.len() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, got: p.len() });
        }
        Coordinates::new(dim, points.concat())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Copy with `point` appended as the last row.
    pub fn with_point(&self, point: &[f64]) -> Result<Coordinates> {
        if point.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: point.len() });
        }
        let mut values = self.values.clone();
        values.extend_from_slice(point);
        Coordinates::new(self.dim, values)
    }

    /// Copy with row `i` removed.
    pub fn without_point(&self, i: usize) -> Coordinates {
        let mut values = self.values.clone();
        values.drain(i * self.dim..(i + 1) * self.dim);
        Coordinates { dim: self.dim, values }
    }

    pub fn centroid(&self) -> Vec<f64> {
        let n = self.len() as f64;
        (0..self.dim).map(|k| (0..self.len()).map(|i| self.point(i)[k]).sum::<f64>() / n).collect()
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Student-t kernel `(1 + |y_i - y_j|^2)^-1`.
pub(crate) fn student_t(a: &[f64], b: &[f64]) -> f64 {
    1.0 / (1.0 + sq_dist(a, b))
}

/// Sum over ordered pairs `i != j` of the Student-t kernel.
pub(crate) fn kernel_normalizer(y: &Coordinates) -> f64 {
    let n = y.len();
    let row_sums: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let yi = y.point(i);
            (0..n).filter(|&j| j != i).map(|j| student_t(yi, y.point(j))).sum()
        })
        .collect();
    row_sums.iter().sum()
}

/// Heavy-tailed low-dimensional affinities `q_ij`.
pub fn low_dim_affinities(y: &Coordinates) -> Result<AffinityMatrix> {
    let n = y.len();
    if n < 2 {
        return Err(Error::Degenerate(format!("need at least 2 points, got {n}")));
    }
    let z = kernel_normalizer(y);
    let mut q = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                q[i * n + j] = student_t(y.point(i), y.point(j)) / z;
            }
        }
    }
    Ok(AffinityMatrix::from_parts_unchecked(n, q))
}

/// `KL(P || Q) = sum_{i != j} p_ij ln(p_ij / q_ij)`, with `0 ln 0 = 0`.
pub fn kl_divergence(p: &AffinityMatrix, q: &AffinityMatrix) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch { expected: p.len(), got: q.len() });
    }
    let n = p.len();
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            let pij = p.get(i, j);
            if i == j || pij <= 0.0 {
                continue;
            }
            let qij = q.get(i, j);
            if qij <= 0.0 {
                return Err(Error::InfiniteDivergence { i, j });
            }
            kl += pij * (pij / qij).ln();
        }
    }
    Ok(kl.max(0.0))
}

/// `sum_{i != j} p_ij ln p_ij`, the part of the KL that does not move with `y`.
pub(crate) fn p_log_p(p: &AffinityMatrix) -> f64 {
    let n = p.len();
    (0..n)
        .map(|i| p.row(i).iter().enumerate().filter(|&(j, &v)| j != i && v > 0.0).map(|(_, &v)| v * v.ln()).sum::<f64>())
        .sum()
}

/// Exact gradient of `KL(exaggeration * P || Q)` w.r.t. every coordinate,
/// written into `grad`. Returns the (unexaggerated) `KL(P || Q)` at `y`;
/// `plogp` must be [`p_log_p`] of `p`.
pub(crate) fn gradient_into(p: &AffinityMatrix, y: &Coordinates, exaggeration: f64, grad: &mut [f64], plogp: f64) -> f64 {
    let n = y.len();
    let d = y.dim();
    // One pass per row: the attractive part goes straight into `g`, the
    // repulsive part waits in `rep` until the normalizer Z is known.
    let mut rep = vec![0.0; n * d];
    // per row: (sum_j w_ij, sum over j > i of p_ij ln w_ij, sum over j != i of p_ij)
    let rows: Vec<(f64, f64, f64)> = grad
        .par_chunks_mut(d)
        .zip(rep.par_chunks_mut(d))
        .enumerate()
        .map(|(i, (g, r))| {
            g.iter_mut().for_each(|x| *x = 0.0);
            let yi = y.point(i);
            let prow = p.row(i);
            let (mut wsum, mut cross, mut mass) = (0.0, 0.0, 0.0);
            for j in 0..n {
                if j == i {
                    continue;
                }
                let yj = y.point(j);
                let w = student_t(yi, yj);
                let pij = prow[j];
                wsum += w;
                mass += pij;
                // P and W are symmetric, so the upper triangle gives half the sum
                if j > i && pij > 0.0 {
                    cross += pij * w.ln();
                }
                let att = 4.0 * exaggeration * pij * w;
                let ww = 4.0 * w * w;
                for k in 0..d {
                    let diff = yi[k] - yj[k];
                    g[k] += att * diff;
                    r[k] += ww * diff;
                }
            }
            (wsum, cross, mass)
        })
        .collect();
    let z: f64 = rows.iter().map(|r| r.0).sum();
    let cross: f64 = rows.iter().map(|r| r.1).sum();
    let mass: f64 = rows.iter().map(|r| r.2).sum();
    grad.iter_mut().zip(&rep).for_each(|(g, r)| *g -= r / z);
    plogp - 2.0 * cross + z.ln() * mass
}

/// Analytic gradient of `KL(P || Q(y))`, row-major like `y`.
pub fn kl_gradient(p: &AffinityMatrix, y: &Coordinates) -> Result<Vec<f64>> {
    if p.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: p.len(), got: y.len() });
    }
    let mut g = vec![0.0; y.as_slice().len()];
    gradient_into(p, y, 1.0, &mut g, p_log_p(p));
    Ok(g)
}

/// `KL(P || Q(y))` evaluated directly from coordinates.
pub fn layout_kl(p: &AffinityMatrix, y: &Coordinates) -> Result<f64> {
    kl_divergence(p, &low_dim_affinities(y)?)
}
