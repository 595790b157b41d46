use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::geometry::{dot, EmbeddingVector};

/// Mean reciprocal rank. Ranks are 1-based.
pub fn mrr(ranks: &[usize]) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::Degenerate("mrr of an empty rank list".into()));
    }
    if ranks.contains(&0) {
        return Err(Error::Degenerate("ranks are 1-based".into()));
    }
    Ok(ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64)
}

pub fn mean_rank(ranks: &[usize]) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::Degenerate("mean rank of an empty rank list".into()));
    }
    Ok(ranks.iter().sum::<usize>() as f64 / ranks.len() as f64)
}

fn unit_rows(vectors: &[EmbeddingVector], offset: usize) -> Result<Vec<Vec<f64>>> {
    vectors
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let n = v.norm();
            if n <= 0.0 {
                return Err(Error::ZeroNorm { index: offset + i });
            }
            Ok(v.as_slice().iter().map(|x| x / n).collect())
        })
        .collect()
}

/// Rank of each query's true candidate under descending cosine similarity.
/// A candidate with equal similarity outranks the truth only if its index is
/// lower. Zero-norm errors index queries first, then candidates after them.
pub fn retrieval_ranks(
    queries: &[EmbeddingVector],
    candidates: &[EmbeddingVector],
    truth: &[usize],
) -> Result<Vec<usize>> {
    if truth.len() != queries.len() {
        return Err(Error::MissingTruth { query: truth.len().min(queries.len()) });
    }
    if let Some(q) = truth.iter().position(|&t| t >= candidates.len()) {
        return Err(Error::MissingTruth { query: q });
    }
    let dim = queries.first().or(candidates.first()).map(|v| v.dim()).unwrap_or(0);
    if let Some(v) = queries.iter().chain(candidates).find(|v| v.dim() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, got: v.dim() });
    }
    let q = unit_rows(queries, 0)?;
    let c = unit_rows(candidates, queries.len())?;
    Ok(q
        .iter()
        .zip(truth)
        .map(|(qv, &t)| {
            let sims: Vec<f64> = c.iter().map(|cv| dot(qv, cv)).collect();
            let st = sims[t];
            1 + sims.iter().enumerate().filter(|&(j, &s)| s > st || (s == st && j < t)).count()
        })
        .collect())
}

/// Average ranks (1-based), ties share the mean of their positions.
pub(crate) fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman correlation: Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), got: y.len() });
    }
    if x.len() < 2 {
        return Err(Error::UndefinedCorrelation(format!("need at least 2 observations, got {}", x.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("spearman input".into()));
    }
    pearson(&average_ranks(x), &average_ranks(y))
        .ok_or_else(|| Error::UndefinedCorrelation("zero rank variance".into()))
}

/// Pairwise indicator of label equality, row-major `n x n`.
pub fn binary_label_similarity<S: AsRef<str>>(labels: &[S]) -> Vec<Vec<u8>> {
    labels
        .iter()
        .map(|a| labels.iter().map(|b| u8::from(a.as_ref() == b.as_ref())).collect())
        .collect()
}

/// Ids of the `k` best-scored candidates; ties go to the lower id.
fn top_k(list: &[(usize, f64)], k: usize) -> BTreeSet<usize> {
    let mut sorted = list.to_vec();
    sorted.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    sorted.into_iter().take(k).map(|(id, _)| id).collect()
}

/// Mean over queries of `|top_k(pred) ∩ top_k(truth)| / k`. Each query's two
/// lists hold `(candidate id, similarity)` over the same candidate set.
pub fn top_k_overlap(pred: &[Vec<(usize, f64)>], truth: &[Vec<(usize, f64)>], k: usize) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch { expected: pred.len(), got: truth.len() });
    }
    if pred.is_empty() {
        return Err(Error::Degenerate("top-k overlap over zero queries".into()));
    }
    let mut total = 0.0;
    for (q, (p, t)) in pred.iter().zip(truth).enumerate() {
        let pc: BTreeSet<usize> = p.iter().map(|x| x.0).collect();
        let tc: BTreeSet<usize> = t.iter().map(|x| x.0).collect();
        if pc != tc || pc.len() != p.len() {
            return Err(Error::Degenerate(format!("query {q}: prediction and truth cover different candidates")));
        }
        if k == 0 || k > p.len() {
            return Err(Error::InvalidConfig(format!("k = {k} outside 1..={}", p.len())));
        }
        total += top_k(p, k).intersection(&top_k(t, k)).count() as f64 / k as f64;
    }
    Ok(total / pred.len() as f64)
}
