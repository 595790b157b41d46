use crate::error::{Error, Result};
use crate::tsne::{fit_row, AffinityMatrix, RowFit, RowKernel};

/// Affinities linking one new point `m` to the `n` existing points, with the
/// existing rows' kernels frozen.
pub(crate) struct Extension {
    /// Calibrated conditional row `p(j|m)` of the new point.
    pub row: RowFit,
    /// `p(m|j)` under each existing row's frozen kernel.
    pub reverse: Vec<f64>,
    /// Unnormalized joint entries `(p(j|m) + p(m|j)) / (2(n + 1))`.
    pub v: Vec<f64>,
    /// Mass of the whole `(n + 1) x (n + 1)` matrix before renormalization.
    pub total: f64,
}

pub(crate) fn calibration(p: &AffinityMatrix) -> Result<(&[RowKernel], f64)> {
    match (p.kernels(), p.perplexity()) {
        (Some(k), Some(perp)) => Ok((k, perp)),
        _ => Err(Error::InvalidConfig(
            "affinity matrix carries no calibration state; build it with calibrate_affinities".into(),
        )),
    }
}

pub(crate) fn extend(kernels: &[RowKernel], perplexity: f64, sq: &[f64]) -> Extension {
    let n = sq.len();
    let row = fit_row(sq, None, perplexity.min(n as f64));
    let reverse: Vec<f64> = kernels.iter().zip(sq).map(|(k, &d)| k.conditional_of_new(d)).collect();
    let denom = 2.0 * (n as f64 + 1.0);
    let v: Vec<f64> = (0..n).map(|j| (row.probs[j] + reverse[j]) / denom).collect();
    let total = n as f64 / (n as f64 + 1.0) + 2.0 * v.iter().sum::<f64>();
    Extension { row, reverse, v, total }
}

/// Joint affinities over the existing points plus one new point (last index),
/// given the new point's distances to each existing point. Existing rows keep
/// their calibrated kernels; only the new row is calibrated. The result is
/// renormalized to unit mass.
pub fn extended_affinities(p_base: &AffinityMatrix, dist_to_new: &[f64]) -> Result<AffinityMatrix> {
    let n = p_base.len();
    check_distances(dist_to_new, n)?;
    let (kernels, perplexity) = calibration(p_base)?;
    let sq: Vec<f64> = dist_to_new.iter().map(|a| a * a).collect();
    let ext = extend(kernels, perplexity, &sq);
    let m = n + 1;
    let scale = n as f64 / (n as f64 + 1.0) / ext.total;
    let mut p = vec![0.0; m * m];
    for i in 0..n {
        for j in 0..n {
            p[i * m + j] = p_base.get(i, j) * scale;
        }
        let v = ext.v[i] / ext.total;
        p[i * m + n] = v;
        p[n * m + i] = v;
    }
    AffinityMatrix::from_entries(m, p)
}

pub(crate) fn check_distances(dist: &[f64], n: usize) -> Result<()> {
    if dist.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: dist.len() });
    }
    if let Some(j) = dist.iter().position(|d| !d.is_finite() || *d < 0.0) {
        return Err(Error::NonFinite(format!("distance to existing point {j}")));
    }
    Ok(())
}

/// Indices of the `k` smallest values, ties to the lower index.
pub(crate) fn nearest(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}
