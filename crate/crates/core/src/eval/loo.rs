use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::{aspect_distance_matrix, cosine_similarity, embedding_distance, pca_fit, EmbeddingVector};
use crate::interact::{insert_sample, reconstruct_embedding};
use crate::optim::OptimizerConfig;
use crate::tsne::{calibrate_affinities, fit_layout, TsneConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooConfig {
    pub tsne: TsneConfig,
    pub insert: OptimizerConfig,
    pub reconstruct: OptimizerConfig,
    /// Requested PCA components; capped by what the reduced atlas supports.
    pub pca_k: usize,
}

impl Default for LooConfig {
    fn default() -> Self {
        LooConfig {
            tsne: TsneConfig::default(),
            insert: OptimizerConfig::insertion(),
            reconstruct: OptimizerConfig::reconstruction(),
            pca_k: 20,
        }
    }
}

/// What happened to one held-out document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooOutcome {
    pub index: usize,
    /// Where the held-out embedding was inserted into the reduced layout.
    pub coordinate: Vec<f64>,
    pub reconstructed: EmbeddingVector,
    /// Cosine between the held-out embedding and its reconstruction.
    pub cosine: f64,
    pub insert_kl: f64,
    pub reconstruct_kl: f64,
    pub reconstruct_kl_init: f64,
    pub pca_residual: f64,
}

/// For each index: drop that document, refit the layout on the rest, insert
/// the dropped embedding, then reconstruct an embedding at the inserted
/// position from the remaining documents alone.
pub fn leave_one_out_reconstruction(
    embeddings: &[EmbeddingVector],
    indices: &[usize],
    cfg: &LooConfig,
) -> Result<Vec<LooOutcome>> {
    indices
        .par_iter()
        .map(|&i| {
            let mut rest = embeddings.to_vec();
            let held = rest.remove(i);
            let n = rest.len();
            let p = calibrate_affinities(&aspect_distance_matrix(&rest)?, cfg.tsne.effective_perplexity(n))?;
            let layout = fit_layout(&p, &cfg.tsne)?;
            let dist: Vec<f64> = rest.iter().map(|e| embedding_distance(&held, e)).collect::<Result<_>>()?;
            let ins = insert_sample(&layout, &p, &dist, &cfg.insert)?;
            let k = cfg.pca_k.min(n - 1).min(held.dim());
            let basis = pca_fit(&rest, k)?;
            let rec = reconstruct_embedding(&layout, &p, &ins.coordinate, &rest, &basis, &cfg.reconstruct)?;
            let back = crate::geometry::pca_reconstruct(&basis, &crate::geometry::pca_project(&basis, &rec.embedding)?)?;
            let pca_residual = back
                .as_slice()
                .iter()
                .zip(rec.embedding.as_slice())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            Ok(LooOutcome {
                index: i,
                coordinate: ins.coordinate,
                cosine: cosine_similarity(&held, &rec.embedding)?,
                reconstructed: rec.embedding,
                insert_kl: ins.kl_after,
                reconstruct_kl: rec.kl_after,
                reconstruct_kl_init: rec.kl_init,
                pca_residual,
            })
        })
        .collect()
}
