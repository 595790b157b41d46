//! Cosine geometry over aspect embeddings.
//!
//! Every distance in the atlas is `1 - cos(a, b)`. Per-aspect distance
//! matrices are combined under user weights into the single matrix that the
//! t-SNE affinities are calibrated against.

mod pca;

pub use pca::{pca_fit, pca_project, pca_reconstruct, PcaBasis};

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Identifier of an aspect such as `hypothesis` or `species`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AspectId(String);

impl AspectId {
    pub fn new(id: impl Into<String>) -> Self {
        AspectId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AspectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for AspectId {
    fn from(s: &str) -> Self {
        AspectId(s.to_string())
    }
}

impl From<String> for AspectId {
    fn from(s: String) -> Self {
        AspectId(s)
    }
}

/// Whether vectors are L2-normalized before they are stored or averaged.
///
/// Cosine distances are scale invariant, so the flag only matters where
/// vectors are averaged (target construction) or regressed (distillation).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    Raw,
    Unit,
}

/// A fixed-dimension real vector with finite entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Degenerate(format!(
                "embedding dimension must be at least 2, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("embedding entry {i}")));
        }
        Ok(EmbeddingVector(values))
    }

    pub fn zeros(dim: usize) -> Self {
        EmbeddingVector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn dot(&self, other: &EmbeddingVector) -> Result<f64> {
        check_dim(self.dim(), other.dim())?;
        Ok(dot(&self.0, &other.0))
    }

    /// Unit-length copy. Fails on a zero vector.
    pub fn normalized(&self) -> Result<EmbeddingVector> {
        let n = self.norm();
        if n <= 0.0 {
            return Err(Error::ZeroNorm { index: 0 });
        }
        Ok(EmbeddingVector(self.0.iter().map(|v| v / n).collect()))
    }

    pub fn apply(&self, normalization: Normalization) -> Result<EmbeddingVector> {
        match normalization {
            Normalization::Raw => Ok(self.clone()),
            Normalization::Unit => self.normalized(),
        }
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        EmbeddingVector::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    check_dim(a.dim(), b.dim())?;
    let na = a.norm();
    if na <= 0.0 {
        return Err(Error::ZeroNorm { index: 0 });
    }
    let nb = b.norm();
    if nb <= 0.0 {
        return Err(Error::ZeroNorm { index: 1 });
    }
    if a == b {
        return Ok(1.0);
    }
    Ok((dot(a.as_slice(), b.as_slice()) / (na * nb)).clamp(-1.0, 1.0))
}

/// `1 - cos(a, b)`, in `[0, 2]`.
pub fn embedding_distance(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    Ok(1.0 - cosine_similarity(a, b)?)
}

/// Dense symmetric `n x n` distance matrix with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl DistanceMatrix {
    /// Validates symmetry, zero diagonal and finiteness (tolerance 1e-12).
    pub fn new(n: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != n * n {
            return Err(Error::DimensionMismatch { expected: n * n, got: entries.len() });
        }
        for i in 0..n {
            if entries[i * n + i].abs() > 1e-12 {
                return Err(Error::Degenerate(format!("nonzero diagonal at {i}")));
            }
            for j in 0..n {
                let v = entries[i * n + j];
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!("distance ({i}, {j})")));
                }
                if v < 0.0 {
                    return Err(Error::Degenerate(format!("negative distance at ({i}, {j})")));
                }
                if (v - entries[j * n + i]).abs() > 1e-12 {
                    return Err(Error::Degenerate(format!("asymmetric at ({i}, {j})")));
                }
            }
        }
        Ok(DistanceMatrix { n, entries })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.entries
    }
}

/// Pairwise cosine distances. Reports the first zero-norm vector by index.
pub fn aspect_distance_matrix(vectors: &[EmbeddingVector]) -> Result<DistanceMatrix> {
    let n = vectors.len();
    if n < 2 {
        return Err(Error::Degenerate(format!("need at least 2 vectors, got {n}")));
    }
    let dim = vectors[0].dim();
    let mut units = Vec::with_capacity(n);
    for (index, v) in vectors.iter().enumerate() {
        check_dim(dim, v.dim())?;
        let nv = v.norm();
        if nv <= 0.0 {
            return Err(Error::ZeroNorm { index });
        }
        units.push(v.as_slice().iter().map(|x| x / nv).collect::<Vec<_>>());
    }
    let mut entries = vec![0.0; n * n];
    entries.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        for j in 0..n {
            if i != j {
                // Symmetric by construction: dot is evaluated in the same order for (i,j) and (j,i).
                let (a, b) = if i < j { (i, j) } else { (j, i) };
                row[j] = if vectors[a] == vectors[b] {
                    0.0
                } else {
                    1.0 - dot(&units[a], &units[b]).clamp(-1.0, 1.0)
                };
            }
        }
    });
    Ok(DistanceMatrix { n, entries })
}

/// Nonnegative per-aspect weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<AspectId, f64>", into = "BTreeMap<AspectId, f64>")]
pub struct AspectWeights(BTreeMap<AspectId, f64>);

pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

impl AspectWeights {
    pub fn new(weights: BTreeMap<AspectId, f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidWeights("no aspects given".into()));
        }
        for (a, w) in &weights {
            if !w.is_finite() || *w < 0.0 {
                return Err(Error::InvalidWeights(format!("weight for {a} is {w}")));
            }
        }
        let sum: f64 = weights.values().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(Error::InvalidWeights(format!("weights sum to {sum}, expected 1")));
        }
        Ok(AspectWeights(weights))
    }

    pub fn single(aspect: impl Into<AspectId>) -> Self {
        AspectWeights(BTreeMap::from([(aspect.into(), 1.0)]))
    }

    /// Parses `"hypothesis=0.7,species=0.3"`.
    pub fn parse(spec: &str) -> Result<Self> {
        let mut weights = BTreeMap::new();
        for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (name, value) = part
                .split_once('=')
                .ok_or_else(|| Error::InvalidWeights(format!("expected aspect=weight, got {part:?}")))?;
            let value: f64 = value
                .trim()
                .parse()
                .map_err(|_| Error::InvalidWeights(format!("bad weight {value:?} for {name}")))?;
            if weights.insert(AspectId::new(name.trim()), value).is_some() {
                return Err(Error::InvalidWeights(format!("aspect {name} given twice")));
            }
        }
        AspectWeights::new(weights)
    }

    pub fn get(&self, aspect: &AspectId) -> f64 {
        self.0.get(aspect).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&AspectId, f64)> {
        self.0.iter().map(|(a, w)| (a, *w))
    }

    /// Aspects with strictly positive weight.
    pub fn active(&self) -> impl Iterator<Item = (&AspectId, f64)> {
        self.iter().filter(|(_, w)| *w > 0.0)
    }

    pub fn as_map(&self) -> &BTreeMap<AspectId, f64> {
        &self.0
    }
}

impl TryFrom<BTreeMap<AspectId, f64>> for AspectWeights {
    type Error = Error;

    fn try_from(m: BTreeMap<AspectId, f64>) -> Result<Self> {
        AspectWeights::new(m)
    }
}

impl From<AspectWeights> for BTreeMap<AspectId, f64> {
    fn from(w: AspectWeights) -> Self {
        w.0
    }
}

impl fmt::Display for AspectWeights {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|(a, w)| format!("{a}={w}")).collect();
        f.write_str(&parts.join(","))
    }
}

/// Entry-wise `sum_a w_a * d_a`. Zero-weight aspects may be missing from `per_aspect`.
pub fn combined_distance_matrix(
    per_aspect: &BTreeMap<AspectId, DistanceMatrix>,
    weights: &AspectWeights,
) -> Result<DistanceMatrix> {
    let mut n = None;
    for (aspect, w) in weights.active() {
        let m = per_aspect
            .get(aspect)
            .ok_or_else(|| Error::InvalidWeights(format!("weight {w} on absent aspect {aspect}")))?;
        match n {
            None => n = Some(m.len()),
            Some(n) if n != m.len() => {
                return Err(Error::DimensionMismatch { expected: n, got: m.len() })
            }
            _ => {}
        }
    }
    let n = n.ok_or_else(|| Error::InvalidWeights("all weights are zero".into()))?;
    let mut entries = vec![0.0; n * n];
    for (aspect, w) in weights.active() {
        let m = &per_aspect[aspect];
        for (e, d) in entries.iter_mut().zip(m.as_slice()) {
            *e += w * d;
        }
    }
    Ok(DistanceMatrix { n, entries })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(x: &[f64]) -> EmbeddingVector {
        EmbeddingVector::new(x.to_vec()).unwrap()
    }

    fn random_vectors(n: usize, dim: usize, seed: u64) -> Vec<EmbeddingVector> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| v(&(0..dim).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>()))
            .collect()
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&v(&[1.0, 0.0]), &v(&[1.0, 0.0])).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        let c = cosine_similarity(&v(&[1.0, 1.0]), &v(&[1.0, 0.0])).unwrap();
        assert!((c - 0.7071).abs() < 1e-4 && (c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn zero_norm_is_an_error_not_nan() {
        let err = cosine_similarity(&v(&[0.0, 0.0]), &v(&[1.0, 0.0])).unwrap_err();
        assert!(matches!(err, Error::ZeroNorm { index: 0 }));
        assert!(embedding_distance(&v(&[1.0, 0.0]), &v(&[0.0, 0.0])).is_err());
    }

    #[test]
    fn distance_examples() {
        let a = v(&[0.3, -0.2]);
        assert_eq!(embedding_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(embedding_distance(&v(&[1.0, 0.0]), &v(&[-1.0, 0.0])).unwrap(), 2.0);
        assert_eq!(embedding_distance(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 1.0);
    }

    #[test]
    fn dimension_mismatch() {
        let err = cosine_similarity(&v(&[1.0, 0.0]), &v(&[1.0, 0.0, 0.0])).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 2, got: 3 }));
    }

    #[test]
    fn distance_matrix_small_cases() {
        let m = aspect_distance_matrix(&[v(&[1.0, 2.0]), v(&[1.0, 2.0])]).unwrap();
        assert_eq!(m.as_slice(), &[0.0, 0.0, 0.0, 0.0]);
        let m = aspect_distance_matrix(&[v(&[1.0, 0.0]), v(&[0.0, 3.0])]).unwrap();
        assert_eq!(m.get(0, 1), 1.0);
        assert_eq!(m.get(1, 0), 1.0);
    }

    #[test]
    fn distance_matrix_reports_zero_norm_index() {
        let err = aspect_distance_matrix(&[v(&[1.0, 0.0]), v(&[1.0, 1.0]), v(&[0.0, 0.0])]).unwrap_err();
        assert!(matches!(err, Error::ZeroNorm { index: 2 }));
    }

    #[test]
    fn distance_matrix_matches_double_loop_oracle() {
        let vs = random_vectors(5, 7, 11);
        let m = aspect_distance_matrix(&vs).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let a = vs[i].as_slice();
                let b = vs[j].as_slice();
                let mut ab = 0.0;
                let mut aa = 0.0;
                let mut bb = 0.0;
                for k in 0..7 {
                    ab += a[k] * b[k];
                    aa += a[k] * a[k];
                    bb += b[k] * b[k];
                }
                let expected = if i == j { 0.0 } else { 1.0 - ab / (aa.sqrt() * bb.sqrt()) };
                assert!((m.get(i, j) - expected).abs() < 1e-12, "({i},{j})");
            }
        }
    }

    fn aspect(name: &str) -> AspectId {
        AspectId::new(name)
    }

    #[test]
    fn combined_single_weight_is_identity() {
        let m = aspect_distance_matrix(&random_vectors(4, 3, 1)).unwrap();
        let per = BTreeMap::from([(aspect("a"), m.clone())]);
        let out = combined_distance_matrix(&per, &AspectWeights::single("a")).unwrap();
        assert_eq!(out, m);
    }

    #[test]
    fn combined_half_half_arithmetic() {
        let da = DistanceMatrix::new(2, vec![0.0, 0.2, 0.2, 0.0]).unwrap();
        let db = DistanceMatrix::new(2, vec![0.0, 0.4, 0.4, 0.0]).unwrap();
        let per = BTreeMap::from([(aspect("a"), da), (aspect("b"), db)]);
        let w = AspectWeights::parse("a=0.5,b=0.5").unwrap();
        let out = combined_distance_matrix(&per, &w).unwrap();
        assert!((out.get(0, 1) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn combined_three_aspects_matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let names = ["a", "b", "c"];
        let per: BTreeMap<_, _> = names
            .iter()
            .enumerate()
            .map(|(k, n)| (aspect(n), aspect_distance_matrix(&random_vectors(6, 4, 100 + k as u64)).unwrap()))
            .collect();
        let raw: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let w = AspectWeights::new(names.iter().zip(&raw).map(|(n, r)| (aspect(n), r / total)).collect()).unwrap();
        let out = combined_distance_matrix(&per, &w).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let mut expected = 0.0;
                for n in names {
                    expected += w.get(&aspect(n)) * per[&aspect(n)].get(i, j);
                }
                assert!((out.get(i, j) - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn combined_rejects_weight_on_absent_aspect_and_size_mismatch() {
        let m = aspect_distance_matrix(&random_vectors(3, 3, 2)).unwrap();
        let per = BTreeMap::from([(aspect("a"), m.clone())]);
        let w = AspectWeights::parse("a=0.5,b=0.5").unwrap();
        assert!(matches!(combined_distance_matrix(&per, &w), Err(Error::InvalidWeights(_))));
        // zero weight on an absent aspect is fine
        let w = AspectWeights::parse("a=1,b=0").unwrap();
        assert!(combined_distance_matrix(&per, &w).is_ok());

        let other = aspect_distance_matrix(&random_vectors(4, 3, 3)).unwrap();
        let per = BTreeMap::from([(aspect("a"), m), (aspect("b"), other)]);
        let w = AspectWeights::parse("a=0.5,b=0.5").unwrap();
        assert!(matches!(combined_distance_matrix(&per, &w), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn weight_parsing() {
        let w = AspectWeights::parse("a=0.5,b=0.5").unwrap();
        assert_eq!(w.get(&aspect("a")), 0.5);
        let err = AspectWeights::parse("a=2").unwrap_err().to_string();
        assert!(err.contains("sum to 2"), "{err}");
        assert!(AspectWeights::parse("a=-0.5,b=1.5").is_err());
        assert!(AspectWeights::parse("a").is_err());
    }

    fn vec_strategy(dim: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-10.0f64..10.0, dim).prop_filter("nonzero", |v| norm(v) > 1e-3)
    }

    proptest! {
        #[test]
        fn distance_symmetric_nonnegative(a in vec_strategy(5), b in vec_strategy(5)) {
            let (a, b) = (v(&a), v(&b));
            let dab = embedding_distance(&a, &b).unwrap();
            let dba = embedding_distance(&b, &a).unwrap();
            prop_assert!(dab >= 0.0 && dab <= 2.0);
            prop_assert!((dab - dba).abs() < 1e-15);
            prop_assert!(embedding_distance(&a, &a).unwrap().abs() < 1e-12);
        }

        #[test]
        fn cosine_scale_invariant(a in vec_strategy(6), b in vec_strategy(6), c in 1e-3f64..1e3) {
            let scaled = v(&a.iter().map(|x| x * c).collect::<Vec<_>>());
            let (a, b) = (v(&a), v(&b));
            prop_assert!((cosine_similarity(&a, &b).unwrap() - cosine_similarity(&scaled, &b).unwrap()).abs() < 1e-9);
            prop_assert!((embedding_distance(&a, &b).unwrap() - embedding_distance(&scaled, &b).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn combination_is_linear_in_weights(alpha in 0.0f64..1.0, seed in 0u64..1000) {
            let per = BTreeMap::from([
                (aspect("a"), aspect_distance_matrix(&random_vectors(5, 4, seed)).unwrap()),
                (aspect("b"), aspect_distance_matrix(&random_vectors(5, 4, seed + 7)).unwrap()),
            ]);
            let da = combined_distance_matrix(&per, &AspectWeights::single("a")).unwrap();
            let db = combined_distance_matrix(&per, &AspectWeights::single("b")).unwrap();
            let w = AspectWeights::new(BTreeMap::from([(aspect("a"), alpha), (aspect("b"), 1.0 - alpha)])).unwrap();
            let mixed = combined_distance_matrix(&per, &w).unwrap();
            for k in 0..25 {
                let expected = alpha * da.as_slice()[k] + (1.0 - alpha) * db.as_slice()[k];
                prop_assert!((mixed.as_slice()[k] - expected).abs() < 1e-12);
            }
        }
    }
}
