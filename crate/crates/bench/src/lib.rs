//! Fixtures shared by the benchmarks.

use atlas_core::geometry::EmbeddingVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// `n` vectors in `dim` dimensions drawn around `n / 10` Gaussian centers.
pub fn clustered(n: usize, dim: usize, seed: u64) -> Vec<EmbeddingVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clusters = (n / 10).max(1);
    let centers: Vec<Vec<f64>> =
        (0..clusters).map(|_| (0..dim).map(|_| 3.0 * rng.sample::<f64, _>(StandardNormal)).collect()).collect();
    (0..n)
        .map(|i| {
            let c = &centers[i % clusters];
            EmbeddingVector::new(c.iter().map(|x| x + rng.sample::<f64, _>(StandardNormal)).collect()).expect("finite")
        })
        .collect()
}
