//! Rayon pool vs. a one-thread pool (the sequential schedule) on the hot
//! stages. Build with `--no-default-features` to time the plain sequential
//! fallback instead.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

use ctxfood::codebook::kmeans_fit;
use ctxfood::descriptors::extract_bundle;
use ctxfood::imaging::to_gray;
use ctxfood::interest::{detect_harris_laplace, DetectorParams};
use ctxfood::kernels::training_kernel_matrix;
use ctxfood::pipeline::{render_dish, GeneratorParams, Signature};

fn histograms(n: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    (0..n).map(|_| (0..dim).map(|_| rng.random_range(0.0..1.0)).collect()).collect()
}

fn points(n: usize, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    (0..n * dim).map(|_| rng.random_range(0.0..1.0)).collect()
}

fn schedules() -> Vec<(&'static str, Option<usize>)> {
    if ctxfood::par::is_parallel() {
        vec![("one-thread", Some(1)), ("rayon", None)]
    } else {
        vec![("sequential", None)]
    }
}

#[cfg(feature = "parallel")]
fn within<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        b = b.num_threads(t);
    }
    b.build().expect("thread pool").install(f)
}

#[cfg(not(feature = "parallel"))]
fn within<R: Send>(_: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    f()
}

fn kernel_matrix(c: &mut Criterion) {
    let mut group = c.benchmark_group("kernel_matrix");
    for n in [100, 200] {
        let h = histograms(n, 200);
        for (name, threads) in schedules() {
            group.bench_with_input(BenchmarkId::new(name, n), &h, |b, h| {
                b.iter(|| within(threads, || training_kernel_matrix(black_box(h), 0.5).unwrap()))
            });
        }
    }
    group.finish();
}

fn kmeans(c: &mut Criterion) {
    let mut group = c.benchmark_group("kmeans");
    group.sample_size(10);
    let dim = 36;
    let data = points(2000, dim);
    for (name, threads) in schedules() {
        group.bench_with_input(BenchmarkId::new(name, 50), &data, |b, d| {
            b.iter(|| within(threads, || kmeans_fit(black_box(d), dim, 50, 7).unwrap()))
        });
    }
    group.finish();
}

fn descriptors(c: &mut Criterion) {
    let mut group = c.benchmark_group("extract_bundle");
    group.sample_size(10);
    let sig = Signature { hue: 0.1, saturation: 0.8, shade: 0.93, pattern: 1, frequency: 3.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let img = render_dish(&sig, GeneratorParams::default().train_size, false, &mut rng).unwrap();
    let kps = detect_harris_laplace(&to_gray(&img).unwrap(), &DetectorParams::default()).unwrap();
    for (name, threads) in schedules() {
        group.bench_with_input(BenchmarkId::new(name, kps.len()), &kps, |b, kps| {
            b.iter(|| within(threads, || extract_bundle(black_box(&img), kps).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, kernel_matrix, kmeans, descriptors);
criterion_main!(benches);
