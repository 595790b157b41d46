use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::metrics::spearman;
use crate::error::{Error, Result};
use crate::geometry::{dot, AspectId, EmbeddingVector};

/// One graded judgement of how similar two documents are under an aspect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityAssessment {
    pub doc_a: String,
    pub doc_b: String,
    pub aspect: AspectId,
    pub score: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning: Option<String>,
}

/// Symmetric pairwise ground-truth scores over an ordered document subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTable {
    n: usize,
    scores: Vec<Option<f64>>,
}

impl SimilarityTable {
    pub fn new(n: usize) -> Self {
        SimilarityTable { n, scores: vec![None; n * n] }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn set(&mut self, a: usize, b: usize, score: f64) {
        self.scores[a * self.n + b] = Some(score);
        self.scores[b * self.n + a] = Some(score);
    }

    pub fn get(&self, a: usize, b: usize) -> Option<f64> {
        self.scores[a * self.n + b]
    }

    /// Unordered off-diagonal pairs with no score.
    pub fn missing_pairs(&self) -> usize {
        (0..self.n).map(|a| (a + 1..self.n).filter(|&b| self.get(a, b).is_none()).count()).sum()
    }

    /// Table from assessment records for one aspect. `doc_ids` fixes the order;
    /// records for other aspects or unknown documents are ignored. Scores must
    /// lie in `1..=max_score`.
    pub fn from_assessments(
        doc_ids: &[String],
        records: &[SimilarityAssessment],
        aspect: &AspectId,
        max_score: i64,
    ) -> Result<Self> {
        let index: HashMap<&str, usize> = doc_ids.iter().enumerate().map(|(i, d)| (d.as_str(), i)).collect();
        let mut table = SimilarityTable::new(doc_ids.len());
        for r in records.iter().filter(|r| &r.aspect == aspect) {
            if !(1..=max_score).contains(&r.score) {
                return Err(Error::InvalidConfig(format!(
                    "score {} for ({}, {}) outside 1..={max_score}",
                    r.score, r.doc_a, r.doc_b
                )));
            }
            if let (Some(&a), Some(&b)) = (index.get(r.doc_a.as_str()), index.get(r.doc_b.as_str())) {
                if a != b {
                    table.set(a, b, r.score as f64);
                }
            }
        }
        Ok(table)
    }

    pub fn from_binary(matrix: &[Vec<u8>]) -> Self {
        let mut t = SimilarityTable::new(matrix.len());
        for (a, row) in matrix.iter().enumerate() {
            for (b, &v) in row.iter().enumerate() {
                if a != b {
                    t.scores[a * t.n + b] = Some(v as f64);
                }
            }
        }
        t
    }
}

/// Predictor-aspect by truth-aspect matrix of mean per-query Spearman correlations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub predictors: Vec<AspectId>,
    pub truths: Vec<AspectId>,
    /// `None` when every query was undefined.
    pub values: Vec<Vec<Option<f64>>>,
    /// Queries skipped per cell because the correlation was undefined.
    pub skipped: Vec<Vec<usize>>,
    pub queries: usize,
}

impl CorrelationMatrix {
    pub fn get(&self, predictor: &AspectId, truth: &AspectId) -> Option<f64> {
        let r = self.predictors.iter().position(|a| a == predictor)?;
        let c = self.truths.iter().position(|a| a == truth)?;
        self.values[r][c]
    }

    /// Fixed-width text table, values scaled by 100, one predictor per row.
    pub fn to_text_table(&self) -> String {
        let width = self.truths.iter().map(|t| t.as_str().len()).max().unwrap_or(0).max(8);
        let label = self.predictors.iter().map(|p| p.as_str().len()).max().unwrap_or(0).max(9);
        let mut out = format!("{:label$}", "predictor");
        for t in &self.truths {
            let _ = write!(out, "  {:>width$}", t.as_str());
        }
        out.push('\n');
        for (p, row) in self.predictors.iter().zip(&self.values) {
            let _ = write!(out, "{:label$}", p.as_str());
            for v in row {
                match v {
                    Some(v) => {
                        let _ = write!(out, "  {:>width$.1}", v * 100.0);
                    }
                    None => {
                        let _ = write!(out, "  {:>width$}", "n/a");
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}

/// For every predictor aspect `p` and truth aspect `t`: the mean over query
/// documents of the Spearman correlation between the query's cosine
/// similarities to all other documents under `p` and its ground-truth scores
/// under `t`. Queries whose correlation is undefined are skipped and counted.
pub fn aspect_correlation_matrix(
    predictions: &BTreeMap<AspectId, Vec<EmbeddingVector>>,
    truths: &BTreeMap<AspectId, SimilarityTable>,
) -> Result<CorrelationMatrix> {
    let n = predictions
        .values()
        .next()
        .map(Vec::len)
        .ok_or_else(|| Error::Degenerate("no predictor aspects".into()))?;
    if n < 3 {
        return Err(Error::Degenerate(format!("need at least 3 documents, got {n}")));
    }
    for (aspect, t) in truths {
        if t.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: t.len() });
        }
        let missing = t.missing_pairs();
        if missing > 0 {
            return Err(Error::IncompleteCoverage {
                aspect: aspect.to_string(),
                missing,
                expected: n * (n - 1) / 2,
            });
        }
    }
    let mut sims = Vec::new();
    for (aspect, vectors) in predictions {
        if vectors.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: vectors.len() });
        }
        let units: Vec<Vec<f64>> = vectors
            .iter()
            .enumerate()
            .map(|(index, v)| {
                let l = v.norm();
                if l <= 0.0 {
                    return Err(Error::ZeroNorm { index });
                }
                Ok(v.as_slice().iter().map(|x| x / l).collect())
            })
            .collect::<Result<_>>()
            .map_err(|e| match e {
                Error::ZeroNorm { index } => Error::Degenerate(format!("aspect {aspect}: vector {index} has zero norm")),
                other => other,
            })?;
        sims.push(units);
    }

    let mut values = Vec::new();
    let mut skipped = Vec::new();
    for units in &sims {
        let mut vrow = Vec::new();
        let mut srow = Vec::new();
        for table in truths.values() {
            let mut total = 0.0;
            let mut used = 0usize;
            for q in 0..n {
                let others = (0..n).filter(|&j| j != q);
                let x: Vec<f64> = others.clone().map(|j| dot(&units[q], &units[j])).collect();
                let y: Vec<f64> = others.map(|j| table.get(q, j).expect("coverage checked")).collect();
                match spearman(&x, &y) {
                    Ok(r) => {
                        total += r;
                        used += 1;
                    }
                    Err(Error::UndefinedCorrelation(_)) => {}
                    Err(e) => return Err(e),
                }
            }
            vrow.push((used > 0).then(|| total / used as f64));
            srow.push(n - used);
        }
        values.push(vrow);
        skipped.push(srow);
    }
    Ok(CorrelationMatrix {
        predictors: predictions.keys().cloned().collect(),
        truths: truths.keys().cloned().collect(),
        values,
        skipped,
        queries: n,
    })
}
