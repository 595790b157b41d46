use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::DistanceMatrix;

/// Log-space bounds on the Gaussian precision `beta = 1 / (2 sigma^2)`,
/// equivalent to `sigma in [1e-20, 1e20]`.
const LN_BETA_MIN: f64 = -92.80; // ln(1 / (2e40))
const LN_BETA_MAX: f64 = 91.41; // ln(1 / (2e-40))
const MAX_BISECTION_STEPS: usize = 200;
/// A row counts as calibrated when its perplexity is within this of the target.
pub const PERPLEXITY_TOLERANCE: f64 = 1e-4;

/// Per-row Gaussian kernel: `p(j|i) = exp(-beta * A_ij^2 - log_normalizer)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RowKernel {
    pub beta: f64,
    pub log_normalizer: f64,
}

impl RowKernel {
    /// Conditional weight this row would give a new point at squared distance
    /// `sq` once that point joins the row's normalizer.
    pub fn conditional_of_new(&self, sq: f64) -> f64 {
        let u = -self.beta * sq - self.log_normalizer;
        // logistic(u) = e^u / (1 + e^u)
        if u >= 0.0 {
            1.0 / (1.0 + (-u).exp())
        } else {
            let e = u.exp();
            e / (1.0 + e)
        }
    }
}

/// Symmetric joint probabilities with zero diagonal summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    n: usize,
    p: Vec<f64>,
    perplexity: Option<f64>,
    kernels: Option<Vec<RowKernel>>,
}

impl AffinityMatrix {
    /// Wraps raw entries after checking symmetry, zero diagonal, sign and unit mass.
    pub fn from_entries(n: usize, p: Vec<f64>) -> Result<Self> {
        if p.len() != n * n {
            return Err(Error::DimensionMismatch { expected: n * n, got: p.len() });
        }
        let mut total = 0.0;
        for i in 0..n {
            if p[i * n + i] != 0.0 {
                return Err(Error::Degenerate(format!("nonzero diagonal at {i}")));
            }
            for j in 0..n {
                let v = p[i * n + j];
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::Degenerate(format!("invalid affinity {v} at ({i}, {j})")));
                }
                if (v - p[j * n + i]).abs() > 1e-15 {
                    return Err(Error::Degenerate(format!("asymmetric affinity at ({i}, {j})")));
                }
                total += v;
            }
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Degenerate(format!("affinities sum to {total}")));
        }
        Ok(AffinityMatrix { n, p, perplexity: None, kernels: None })
    }

    pub(crate) fn from_parts_unchecked(n: usize, p: Vec<f64>) -> Self {
        AffinityMatrix { n, p, perplexity: None, kernels: None }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.p[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.p[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.p
    }

    /// Target perplexity the rows were calibrated to, if built by calibration.
    pub fn perplexity(&self) -> Option<f64> {
        self.perplexity
    }

    pub fn kernels(&self) -> Option<&[RowKernel]> {
        self.kernels.as_deref()
    }
}

/// Result of calibrating one conditional row.
#[derive(Debug, Clone)]
pub(crate) struct RowFit {
    pub kernel: RowKernel,
    /// Conditional probabilities, zero at the skipped index.
    pub probs: Vec<f64>,
    pub entropy: f64,
}

impl RowFit {
    pub fn reached(&self, target_perplexity: f64) -> bool {
        (self.entropy.exp() - target_perplexity).abs() <= PERPLEXITY_TOLERANCE
    }
}

fn evaluate_row(sq: &[f64], skip: Option<usize>, beta: f64, dmin: f64, probs: &mut [f64]) -> (f64, f64) {
    let mut sum = 0.0;
    let mut weighted = 0.0;
    for (j, (&d, p)) in sq.iter().zip(probs.iter_mut()).enumerate() {
        if Some(j) == skip {
            *p = 0.0;
            continue;
        }
        let shifted = d - dmin;
        let w = (-beta * shifted).exp();
        *p = w;
        sum += w;
        weighted += w * shifted;
    }
    let entropy = sum.ln() + beta * weighted / sum;
    (entropy, sum)
}

/// Bisects `ln beta` until the row's Shannon entropy (nats) matches
/// `ln(perplexity)`. Returns the closest row found even when the target is
/// not reachable; callers decide whether that is an error.
pub(crate) fn fit_row(sq: &[f64], skip: Option<usize>, perplexity: f64) -> RowFit {
    let target = perplexity.ln();
    let dmin = sq
        .iter()
        .enumerate()
        .filter(|(j, _)| Some(*j) != skip)
        .map(|(_, d)| *d)
        .fold(f64::INFINITY, f64::min);
    let mut probs = vec![0.0; sq.len()];
    let (mut lo, mut hi) = (LN_BETA_MIN, LN_BETA_MAX);
    let mut ln_beta: f64 = 0.0;
    let mut best: Option<(f64, f64, f64)> = None; // (gap, ln_beta, entropy)
    for _ in 0..MAX_BISECTION_STEPS {
        let (h, _) = evaluate_row(sq, skip, ln_beta.exp(), dmin, &mut probs);
        let gap = (h - target).abs();
        if best.is_none_or(|(g, _, _)| gap < g) {
            best = Some((gap, ln_beta, h));
        }
        if gap < 1e-13 || hi - lo < 1e-14 {
            break;
        }
        if h > target {
            lo = ln_beta;
        } else {
            hi = ln_beta;
        }
        ln_beta = 0.5 * (lo + hi);
    }
    let (_, ln_beta, entropy) = best.expect("at least one bisection step");
    let beta = ln_beta.exp();
    let (_, sum) = evaluate_row(sq, skip, beta, dmin, &mut probs);
    probs.iter_mut().for_each(|p| *p /= sum);
    RowFit {
        kernel: RowKernel { beta, log_normalizer: sum.ln() - beta * dmin },
        probs,
        entropy,
    }
}

/// Calibrates per-row bandwidths to `perplexity` and symmetrizes:
/// `p_ij = (p(j|i) + p(i|j)) / (2n)`. Conditionals use squared distances.
pub fn calibrate_affinities(dist: &DistanceMatrix, perplexity: f64) -> Result<AffinityMatrix> {
    let n = dist.len();
    if n < 3 {
        return Err(Error::InvalidConfig(format!("need at least 3 points, got {n}")));
    }
    if !(2.0..=(n as f64 - 1.0)).contains(&perplexity) {
        return Err(Error::InvalidConfig(format!(
            "perplexity {perplexity} outside [2, {}]",
            n - 1
        )));
    }
    let rows: Vec<RowFit> = (0..n)
        .into_par_iter()
        .map(|i| {
            let sq: Vec<f64> = dist.row(i).iter().map(|a| a * a).collect();
            fit_row(&sq, Some(i), perplexity)
        })
        .collect();
    if let Some((row, fit)) = rows.iter().enumerate().find(|(_, f)| !f.reached(perplexity)) {
        return Err(Error::UnreachablePerplexity { row, target: perplexity, achieved: fit.entropy.exp() });
    }
    let denom = 2.0 * n as f64;
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p[i * n + j] = (rows[i].probs[j] + rows[j].probs[i]) / denom;
            }
        }
    }
    Ok(AffinityMatrix {
        n,
        p,
        perplexity: Some(perplexity),
        kernels: Some(rows.into_iter().map(|r| r.kernel).collect()),
    })
}

/// Conditional rows `p(j|i)` as calibrated, for inspection and tests.
pub fn conditional_rows(dist: &DistanceMatrix, perplexity: f64) -> Vec<Vec<f64>> {
    (0..dist.len())
        .map(|i| {
            let sq: Vec<f64> = dist.row(i).iter().map(|a| a * a).collect();
            fit_row(&sq, Some(i), perplexity).probs
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{aspect_distance_matrix, EmbeddingVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dist(n: usize, seed: u64) -> DistanceMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let vs: Vec<_> = (0..n)
            .map(|_| EmbeddingVector::new((0..8).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap())
            .collect();
        aspect_distance_matrix(&vs).unwrap()
    }

    /// Shannon perplexity of a distribution, computed directly in bits.
    fn perplexity_of(row: &[f64]) -> f64 {
        let h: f64 = row.iter().filter(|p| **p > 0.0).map(|p| -p * p.log2()).sum();
        2f64.powf(h)
    }

    #[test]
    fn equidistant_triangle_is_uniform() {
        let d = DistanceMatrix::new(3, vec![0.0, 0.5, 0.5, 0.5, 0.0, 0.5, 0.5, 0.5, 0.0]).unwrap();
        let rows = conditional_rows(&d, 2.0);
        for (i, row) in rows.iter().enumerate() {
            for (j, p) in row.iter().enumerate() {
                let expected = if i == j { 0.0 } else { 0.5 };
                assert!((p - expected).abs() < 1e-12);
            }
        }
        let p = calibrate_affinities(&d, 2.0).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { 0.0 } else { 1.0 / 6.0 };
                assert!((p.get(i, j) - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn duplicate_point_gets_row_maximum() {
        let base = random_dist(6, 1);
        let mut e = base.as_slice().to_vec();
        // make 0 and 1 exact duplicates: copy row/col 0 into 1
        for k in 0..6 {
            e[6 + k] = e[k];
            e[k * 6 + 1] = e[k * 6];
        }
        e[1] = 0.0;
        e[6] = 0.0;
        e[7] = 0.0;
        let d = DistanceMatrix::new(6, e).unwrap();
        let rows = conditional_rows(&d, 3.0);
        let max = rows[0].iter().copied().fold(0.0, f64::max);
        assert_eq!(rows[0][1], max);
    }

    #[test]
    fn row_perplexity_matches_entropy_oracle() {
        let d = random_dist(10, 7);
        for row in conditional_rows(&d, 5.0) {
            assert!((perplexity_of(&row) - 5.0).abs() < 1e-3);
        }
    }

    #[test]
    fn joint_invariants_hold() {
        let d = random_dist(40, 3);
        let p = calibrate_affinities(&d, 10.0).unwrap();
        let total: f64 = p.as_slice().iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
        for i in 0..40 {
            assert_eq!(p.get(i, i), 0.0);
            for j in 0..40 {
                assert_eq!(p.get(i, j), p.get(j, i));
                assert!(p.get(i, j) >= 0.0);
            }
        }
        assert!(AffinityMatrix::from_entries(40, p.as_slice().to_vec()).is_ok());
    }

    #[test]
    fn kernel_reproduces_conditionals() {
        let d = random_dist(12, 5);
        let p = calibrate_affinities(&d, 4.0).unwrap();
        let rows = conditional_rows(&d, 4.0);
        let k = p.kernels().unwrap()[3];
        for j in 0..12 {
            if j != 3 {
                let a = d.get(3, j);
                let expected = (-k.beta * a * a - k.log_normalizer).exp();
                assert!((rows[3][j] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn unreachable_perplexity_reports_row() {
        // four equidistant points: every row has entropy ln 3 regardless of sigma
        let mut e = vec![0.7; 16];
        for i in 0..4 {
            e[i * 4 + i] = 0.0;
        }
        let d = DistanceMatrix::new(4, e).unwrap();
        match calibrate_affinities(&d, 2.0) {
            Err(Error::UnreachablePerplexity { row: 0, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invalid_perplexity_rejected() {
        let d = random_dist(5, 1);
        assert!(matches!(calibrate_affinities(&d, 1.5), Err(Error::InvalidConfig(_))));
        assert!(matches!(calibrate_affinities(&d, 4.5), Err(Error::InvalidConfig(_))));
    }
}
