use std::hint::black_box;

use atlas_bench::clustered;
use atlas_core::geometry::{aspect_distance_matrix, embedding_distance, pca_fit};
use atlas_core::interact::{insert_sample, reconstruct_embedding, OptimizerConfig};
use atlas_core::tsne::{calibrate_affinities, fit_layout, TsneConfig};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn affinities(c: &mut Criterion) {
    let mut group = c.benchmark_group("calibrate_affinities");
    for n in [100, 500] {
        let dist = aspect_distance_matrix(&clustered(n, 64, 1)).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &dist, |b, dist| {
            b.iter(|| calibrate_affinities(black_box(dist), 30.0).unwrap())
        });
    }
    group.finish();
}

fn tsne_fit(c: &mut Criterion) {
    let mut group = c.benchmark_group("fit_layout");
    group.sample_size(10);
    for n in [100, 300] {
        let p = calibrate_affinities(&aspect_distance_matrix(&clustered(n, 64, 2)).unwrap(), 30.0).unwrap();
        let cfg = TsneConfig { perplexity: 30.0, max_iterations: 500, ..TsneConfig::default() };
        group.bench_with_input(BenchmarkId::from_parameter(n), &p, |b, p| b.iter(|| fit_layout(black_box(p), &cfg).unwrap()));
    }
    group.finish();
}

fn interaction(c: &mut Criterion) {
    let data = clustered(200, 64, 3);
    let p = calibrate_affinities(&aspect_distance_matrix(&data).unwrap(), 30.0).unwrap();
    let layout = fit_layout(&p, &TsneConfig { perplexity: 30.0, ..TsneConfig::default() }).unwrap();
    let probe = clustered(201, 64, 3).pop().unwrap();
    let dist: Vec<f64> = data.iter().map(|e| embedding_distance(&probe, e).unwrap()).collect();
    c.bench_function("insert_sample/200", |b| {
        b.iter(|| insert_sample(&layout, &p, black_box(&dist), &OptimizerConfig::insertion()).unwrap())
    });

    let basis = pca_fit(&data, 20).unwrap();
    let target = layout.coords.point(17).to_vec();
    c.bench_function("reconstruct_embedding/200", |b| {
        b.iter(|| {
            reconstruct_embedding(&layout, &p, black_box(&target), &data, &basis, &OptimizerConfig::reconstruction()).unwrap()
        })
    });
}

criterion_group!(benches, affinities, tsne_fit, interaction);
criterion_main!(benches);
