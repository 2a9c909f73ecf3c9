//! Parallel-vs-sequential benchmarks for the data-parallel surfaces:
//! batch evaluation across inputs and multi-seed oracle estimation.
//!
//! Build with the default `parallel` feature to measure the rayon path; the
//! `*_seq` variants pin the identical loop body to one thread for
//! comparison. `cargo bench -p dice-core`.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use dice_core::datagen::{make_spurious_clusters, SpuriousTaskConfig};
use dice_core::metrics::max_softmax_confidences;
use dice_core::model::EnsembleModel;
use dice_core::parallel::{map_slice, map_slice_seq};
use dice_core::rng::RunRng;
use dice_core::training::{desk_config, Variant};

fn eval_fixture() -> (EnsembleModel, Vec<Vec<f64>>) {
    let cfg = desk_config(Variant::Ceb);
    let mut rng = RunRng::new(7);
    let model = EnsembleModel::new(cfg.model_config(), &mut rng.init);
    let (data, _) = make_spurious_clusters(&SpuriousTaskConfig {
        classes: cfg.classes,
        core_dim: 2,
        nuisance_dim: cfg.input_dim - 2,
        nuisance_rho: 0.9,
        core_separation: 2.5,
        core_noise: 1.0,
        nuisance_scale: 3.0,
        label_noise: 0.0,
        count: 512,
        seed: 3,
    });
    let rows: Vec<Vec<f64>> = (0..data.len()).map(|i| data.input_row(i).to_vec()).collect();
    (model, rows)
}

/// Per-input ensemble confidence, chunked over the evaluation set.
fn bench_batch_eval(c: &mut Criterion) {
    let (model, rows) = eval_fixture();
    let chunks: Vec<&[Vec<f64>]> = rows.chunks(32).collect();
    let score_chunk = |chunk: &&[Vec<f64>]| -> Vec<f64> {
        let dim = chunk[0].len();
        let flat: Vec<f64> = chunk.iter().flatten().copied().collect();
        let t = dice_core::tensor::Tensor::matrix(chunk.len(), dim, flat);
        max_softmax_confidences(&model, &t)
    };
    let mut group = c.benchmark_group("batch_eval");
    group.bench_with_input(BenchmarkId::new("map", "rayon"), &chunks, |b, chunks| {
        b.iter(|| map_slice(chunks, score_chunk))
    });
    group.bench_with_input(BenchmarkId::new("map", "seq"), &chunks, |b, chunks| {
        b.iter(|| map_slice_seq(chunks, score_chunk))
    });
    group.finish();
}

/// Monte-Carlo KL estimation fanned out over seeds.
fn bench_mc_kl(c: &mut Criterion) {
    let seeds: Vec<u64> = (0..8).collect();
    let run = |&seed: &u64| {
        dice_core::oracle::mc_kl_estimate(&[0.4, -0.2], &[1.3, 0.7], &[0.0, 0.0], 50_000, seed)
    };
    let mut group = c.benchmark_group("mc_kl");
    group.bench_with_input(BenchmarkId::new("seeds", "rayon"), &seeds, |b, seeds| {
        b.iter(|| map_slice(seeds, run))
    });
    group.bench_with_input(BenchmarkId::new("seeds", "seq"), &seeds, |b, seeds| {
        b.iter(|| map_slice_seq(seeds, run))
    });
    group.finish();
}

criterion_group!(benches, bench_batch_eval, bench_mc_kl);
criterion_main!(benches);
