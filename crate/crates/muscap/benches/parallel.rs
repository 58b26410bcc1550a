//! Compares the rayon-parallel inner loops against their sequential
//! fallbacks: nearest-neighbor vocabulary scans and finite-difference
//! gradient sweeps.
//!
//! Run with `cargo bench` (parallel, the default) and
//! `cargo bench --no-default-features` (sequential) to compare.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use muscap::embeddings::EmbeddingTable;
use muscap::nn::gradcheck::{finite_difference_gradient, finite_difference_gradient_seq};
use muscap::nn::ParamSet;
use muscap::seq2seq::Seq2SeqModel;
use muscap::tensor::norm;

fn random_table(rng: &mut ChaCha8Rng, vocab: usize, dim: usize) -> EmbeddingTable {
    let words = (0..vocab).map(|i| format!("w{i}")).collect();
    let matrix = (0..vocab * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    EmbeddingTable::new(words, dim, matrix).unwrap()
}

fn bench_nearest_word(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut group = c.benchmark_group("nearest_word");
    for vocab in [1_000usize, 10_000] {
        let table = random_table(&mut rng, vocab, 300);
        let query: Vec<f64> = (0..300).map(|_| rng.gen_range(-1.0..1.0)).collect();
        group.bench_with_input(BenchmarkId::new("default", vocab), &vocab, |b, _| {
            b.iter(|| table.nearest_word(&query).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("sequential", vocab), &vocab, |b, _| {
            b.iter(|| table.nearest_row_seq(&query, norm(&query)))
        });
    }
    group.finish();
}

fn bench_finite_differences(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let model = Seq2SeqModel::init(6, 4, 4, &mut rng);
    let tracks: Vec<Vec<f64>> = (0..2)
        .map(|_| (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let targets: Vec<Vec<f64>> = (0..2)
        .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let theta = model.flatten();
    let shape = model.clone();
    let f = move |t: &[f64]| {
        let mut m = shape.clone();
        m.load_flat(t);
        m.teacher_forced_loss(&tracks, &targets).unwrap()
    };

    let mut group = c.benchmark_group("finite_difference_gradient");
    group.sample_size(10);
    group.bench_function("default", |b| {
        b.iter(|| finite_difference_gradient(&f, &theta).unwrap())
    });
    group.bench_function("sequential", |b| {
        b.iter(|| finite_difference_gradient_seq(&f, &theta).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_nearest_word, bench_finite_differences);
criterion_main!(benches);
