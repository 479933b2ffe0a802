use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use topomod::dataset::{fig2_preset, synth_density_variation};
use topomod::hierarchy::{build_dendrogram, pairwise_distances};
use topomod::knn::{knn_decide, ReferenceSet, VoteMode};
use topomod::mlp::{init_network, train, Layout, TrainParams};
use topomod::multicut::{multilevel_cut, CutConfig};
use topomod::{Dataset, Linkage};

fn cloud(n: usize, dim: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let features = (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let labels = (0..n).map(|i| i % 10).collect();
    Dataset::new(features, labels, (0..10).map(|c| c.to_string()).collect()).unwrap()
}

fn dendrogram(c: &mut Criterion) {
    let mut group = c.benchmark_group("dendrogram");
    for n in [200, 800] {
        let dist = pairwise_distances(&cloud(n, 16, 1)).unwrap();
        for linkage in [Linkage::Single, Linkage::Average] {
            group.bench_with_input(BenchmarkId::new(format!("{linkage:?}"), n), &dist, |b, d| {
                b.iter(|| build_dendrogram(black_box(d), linkage).unwrap())
            });
        }
    }
    group.finish();
}

fn multicut(c: &mut Criterion) {
    let data = synth_density_variation(&fig2_preset(), 0).unwrap();
    let d = build_dendrogram(&pairwise_distances(&data).unwrap(), Linkage::Single).unwrap();
    c.bench_function("multilevel_cut/fig2", |b| {
        b.iter(|| multilevel_cut(black_box(&d), &CutConfig::default()).unwrap())
    });
}

fn knn(c: &mut Criterion) {
    let refset = ReferenceSet::from_dataset(&cloud(2000, 85, 2));
    let query = vec![0.1; 85];
    c.bench_function("knn_decide/2000x85/k5", |b| {
        b.iter(|| knn_decide(&refset, black_box(&query), 5, VoteMode::Unanimity).unwrap())
    });
}

fn mlp(c: &mut Criterion) {
    let data = cloud(400, 85, 3);
    let (pos, neg): (Vec<_>, Vec<_>) = data.points().iter().partition(|p| p.label == 0);
    let pos: Vec<&[f64]> = pos.iter().map(|p| p.features.as_slice()).collect();
    let neg: Vec<&[f64]> = neg.iter().map(|p| p.features.as_slice()).collect();
    let params = TrainParams {
        max_epochs: 5,
        ..TrainParams::default()
    };
    c.bench_function("mlp_train/400x85/h10/5epochs", |b| {
        b.iter(|| {
            let net = init_network(&Layout::new(85, &[10], 1), 0).unwrap();
            train(net, &pos, &neg, &params).unwrap()
        })
    });
}

criterion_group!(benches, dendrogram, multicut, knn, mlp);
criterion_main!(benches);
