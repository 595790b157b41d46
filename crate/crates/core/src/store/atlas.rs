use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::records::AbstractRecord;
use crate::error::{Error, Result};
use crate::geometry::{
    aspect_distance_matrix, combined_distance_matrix, embedding_distance, pca_fit, AspectId, AspectWeights,
    DistanceMatrix, EmbeddingVector, Normalization, PcaBasis,
};
use crate::tsne::{calibrate_affinities, fit_layout, AffinityMatrix, Coordinates, Layout, TsneConfig};

/// One aspect's embeddings, with the summaries each was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct AspectStore {
    doc_ids: Vec<String>,
    embeddings: Vec<EmbeddingVector>,
    summaries: Vec<Vec<String>>,
    index: HashMap<String, usize>,
}

impl AspectStore {
    /// Entries are `(doc id, embedding, summaries)`. Ids must be unique and
    /// dimensions uniform.
    pub fn new(entries: Vec<(String, EmbeddingVector, Vec<String>)>) -> Result<Self> {
        let mut store = AspectStore { doc_ids: Vec::new(), embeddings: Vec::new(), summaries: Vec::new(), index: HashMap::new() };
        for (id, e, s) in entries {
            if let Some(first) = store.embeddings.first() {
                if first.dim() != e.dim() {
                    return Err(Error::DimensionMismatch { expected: first.dim(), got: e.dim() });
                }
            }
            if store.index.insert(id.clone(), store.doc_ids.len()).is_some() {
                return Err(Error::Degenerate(format!("document {id} appears twice in one aspect")));
            }
            store.doc_ids.push(id);
            store.embeddings.push(e);
            store.summaries.push(s);
        }
        Ok(store)
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    /// Zero for an empty store.
    pub fn dim(&self) -> usize {
        self.embeddings.first().map_or(0, EmbeddingVector::dim)
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn embeddings(&self) -> &[EmbeddingVector] {
        &self.embeddings
    }

    pub fn summaries(&self) -> &[Vec<String>] {
        &self.summaries
    }

    pub fn position(&self, doc_id: &str) -> Option<usize> {
        self.index.get(doc_id).copied()
    }

    pub fn embedding(&self, doc_id: &str) -> Option<&EmbeddingVector> {
        self.position(doc_id).map(|i| &self.embeddings[i])
    }

    pub fn summaries_of(&self, doc_id: &str) -> Option<&[String]> {
        self.position(doc_id).map(|i| self.summaries[i].as_slice())
    }
}

/// A fitted layout as persisted: the affinities are recomputed from the
/// embeddings, weights and config when needed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredLayout {
    pub id: String,
    pub weights: AspectWeights,
    pub config: TsneConfig,
    pub doc_ids: Vec<String>,
    pub coords: Coordinates,
    pub final_kl: f64,
    pub converged: bool,
    pub iterations_run: usize,
}

impl StoredLayout {
    pub fn to_layout(&self) -> Layout {
        Layout {
            coords: self.coords.clone(),
            converged: self.converged,
            final_kl: self.final_kl,
            iterations_run: self.iterations_run,
            kl_trace: Vec::new(),
        }
    }
}

/// Documents, per-aspect embeddings, PCA bases and layouts.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Atlas {
    pub normalization: Normalization,
    pub documents: Vec<AbstractRecord>,
    pub aspects: BTreeMap<AspectId, AspectStore>,
    pub pca: BTreeMap<AspectId, PcaBasis>,
    pub layouts: Vec<StoredLayout>,
}

impl Atlas {
    pub fn new(documents: Vec<AbstractRecord>, normalization: Normalization) -> Result<Self> {
        let mut seen = HashSet::new();
        for d in &documents {
            d.validate()?;
            if !seen.insert(d.id.as_str()) {
                return Err(Error::Degenerate(format!("duplicate document id {}", d.id)));
            }
        }
        Ok(Atlas { normalization, documents, ..Atlas::default() })
    }

    pub fn document(&self, id: &str) -> Option<&AbstractRecord> {
        self.documents.iter().find(|d| d.id == id)
    }

    pub fn aspect(&self, aspect: &AspectId) -> Result<&AspectStore> {
        self.aspects.get(aspect).ok_or_else(|| Error::UnknownAspect(aspect.to_string()))
    }

    pub fn layout(&self, id: &str) -> Option<&StoredLayout> {
        self.layouts.iter().find(|l| l.id == id)
    }

    /// Adds or replaces an aspect. Every document must be known to the atlas.
    pub fn insert_aspect(&mut self, aspect: AspectId, store: AspectStore) -> Result<()> {
        let known: HashSet<&str> = self.documents.iter().map(|d| d.id.as_str()).collect();
        if let Some(id) = store.doc_ids.iter().find(|id| !known.contains(id.as_str())) {
            return Err(Error::NotFound(format!("aspect {aspect} references unknown document {id}")));
        }
        self.pca.remove(&aspect);
        self.aspects.insert(aspect, store);
        Ok(())
    }

    /// Fits a PCA basis per aspect with `k` capped at `min(n - 1, dim)`.
    pub fn fit_pca(&mut self, k: usize) -> Result<()> {
        for (aspect, store) in &self.aspects {
            if store.len() < 2 {
                continue;
            }
            let k = k.min(store.len() - 1).min(store.dim());
            self.pca.insert(aspect.clone(), pca_fit(store.embeddings(), k)?);
        }
        Ok(())
    }

    /// Documents that have an embedding under every aspect `weights` uses, in
    /// corpus order.
    pub fn layout_docs(&self, weights: &AspectWeights) -> Result<Vec<String>> {
        let stores: Vec<&AspectStore> = weights.active().map(|(a, _)| self.aspect(a)).collect::<Result<_>>()?;
        Ok(self
            .documents
            .iter()
            .filter(|d| stores.iter().all(|s| s.position(&d.id).is_some()))
            .map(|d| d.id.clone())
            .collect())
    }

    pub fn combined_distances(&self, weights: &AspectWeights, doc_ids: &[String]) -> Result<DistanceMatrix> {
        let mut per_aspect = BTreeMap::new();
        for (aspect, _) in weights.active() {
            let store = self.aspect(aspect)?;
            let vectors = doc_ids
                .iter()
                .map(|id| {
                    store
                        .embedding(id)
                        .cloned()
                        .ok_or_else(|| Error::NotFound(format!("document {id} has no {aspect} embedding")))
                })
                .collect::<Result<Vec<_>>>()?;
            per_aspect.insert(aspect.clone(), aspect_distance_matrix(&vectors)?);
        }
        combined_distance_matrix(&per_aspect, weights)
    }

    /// Combined distance from a new sample, given per-aspect embeddings, to
    /// each of `doc_ids`.
    pub fn distances_to(
        &self,
        weights: &AspectWeights,
        doc_ids: &[String],
        sample: &BTreeMap<AspectId, EmbeddingVector>,
    ) -> Result<Vec<f64>> {
        let mut out = vec![0.0; doc_ids.len()];
        for (aspect, w) in weights.active() {
            let e = sample
                .get(aspect)
                .ok_or_else(|| Error::InvalidWeights(format!("sample has no embedding for weighted aspect {aspect}")))?;
            let store = self.aspect(aspect)?;
            for (o, id) in out.iter_mut().zip(doc_ids) {
                let other = store
                    .embedding(id)
                    .ok_or_else(|| Error::NotFound(format!("document {id} has no {aspect} embedding")))?;
                *o += w * embedding_distance(e, other)?;
            }
        }
        Ok(out)
    }

    pub fn affinities(&self, weights: &AspectWeights, doc_ids: &[String], cfg: &TsneConfig) -> Result<AffinityMatrix> {
        let dist = self.combined_distances(weights, doc_ids)?;
        calibrate_affinities(&dist, cfg.effective_perplexity(doc_ids.len()))
    }

    /// The affinities a stored layout was fitted to.
    pub fn layout_affinities(&self, layout: &StoredLayout) -> Result<AffinityMatrix> {
        self.affinities(&layout.weights, &layout.doc_ids, &layout.config)
    }

    /// Fits a layout over every document that has all weighted aspects.
    pub fn compute_layout(&self, id: impl Into<String>, weights: &AspectWeights, cfg: &TsneConfig) -> Result<(StoredLayout, AffinityMatrix)> {
        let doc_ids = self.layout_docs(weights)?;
        if doc_ids.len() < 3 {
            return Err(Error::Degenerate(format!("only {} documents have every weighted aspect", doc_ids.len())));
        }
        let p = self.affinities(weights, &doc_ids, cfg)?;
        let fitted = fit_layout(&p, cfg)?;
        let stored = StoredLayout {
            id: id.into(),
            weights: weights.clone(),
            config: cfg.clone(),
            doc_ids,
            coords: fitted.coords,
            final_kl: fitted.final_kl,
            converged: fitted.converged,
            iterations_run: fitted.iterations_run,
        };
        Ok((stored, p))
    }

    /// A copy with `layout` added, replacing any layout with the same id.
    pub fn with_layout(&self, layout: StoredLayout) -> Result<Atlas> {
        let mut next = self.clone();
        next.layouts.retain(|l| l.id != layout.id);
        next.layouts.push(layout);
        next.validate()?;
        Ok(next)
    }

    /// Structural checks: summaries align with embeddings, aspects reference
    /// known documents, PCA bases match their aspect, and no layout refers to
    /// a missing embedding.
    pub fn validate(&self) -> Result<()> {
        let known: HashSet<&str> = self.documents.iter().map(|d| d.id.as_str()).collect();
        if known.len() != self.documents.len() {
            return Err(Error::Corrupt("duplicate document ids".into()));
        }
        for (aspect, store) in &self.aspects {
            if store.embeddings.len() != store.doc_ids.len() || store.summaries.len() != store.doc_ids.len() {
                return Err(Error::Corrupt(format!("aspect {aspect}: ragged store")));
            }
            if let Some(id) = store.doc_ids.iter().find(|id| !known.contains(id.as_str())) {
                return Err(Error::Corrupt(format!("aspect {aspect} references unknown document {id}")));
            }
        }
        for (aspect, basis) in &self.pca {
            let store = self.aspect(aspect).map_err(|_| Error::Corrupt(format!("PCA basis for unknown aspect {aspect}")))?;
            if basis.dim() != store.dim() {
                return Err(Error::Corrupt(format!("PCA basis for {aspect} has dimension {}", basis.dim())));
            }
        }
        for layout in &self.layouts {
            if layout.coords.len() != layout.doc_ids.len() {
                return Err(Error::Corrupt(format!("layout {}: {} points for {} documents", layout.id, layout.coords.len(), layout.doc_ids.len())));
            }
            for (aspect, _) in layout.weights.active() {
                let store = self.aspects.get(aspect).ok_or_else(|| Error::Corrupt(format!("layout {} uses unknown aspect {aspect}", layout.id)))?;
                if let Some(id) = layout.doc_ids.iter().find(|id| store.position(id).is_none()) {
                    return Err(Error::Corrupt(format!("layout {} references {id}, which has no {aspect} embedding", layout.id)));
                }
            }
        }
        Ok(())
    }
}
