use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use curvete::decomposition::kmeans_points;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bench(c: &mut Criterion) {
    let mut group = c.benchmark_group("kmeans");
    // Feature width of a 32x32 autoencoder code with 8 filters.
    let d = 512;
    for n in [100, 300] {
        let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
        let points: Vec<f64> = (0..n * d).map(|_| rng.random_range(0.0..1.0)).collect();
        for k in [2, 5] {
            group.bench_with_input(BenchmarkId::new(format!("n{n}"), k), &k, |b, &k| {
                b.iter(|| kmeans_points(&points, d, k, 1, 100, 1e-6).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
