//! Compares the core per-pixel kernels with and without the `parallel`
//! feature. Run both sides with:
//!
//! ```text
//! cargo bench -p mfopt --bench parallel
//! cargo bench -p mfopt --bench parallel --no-default-features
//! ```
//!
//! Criterion persists baselines under `target/criterion`, so the two runs
//! can be compared directly.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mfopt::{
    convolve, filter::weighted_quantile_step, filter::LevelSetField, gaussian_kernel_mask,
    BoundaryMode, Grid2D, ScalarField2D,
};

const MODE: &str = if cfg!(feature = "parallel") {
    "parallel"
} else {
    "sequential"
};

fn test_field(g: Grid2D) -> ScalarField2D {
    ScalarField2D::from_fn(g, |ix, iy| {
        let x = (ix as f64 + 0.5) * g.h();
        let y = (iy as f64 + 0.5) * g.h();
        0.5 + 0.5 * (7.0 * x).sin() * (5.0 * y).cos()
    })
}

fn bench_convolve(c: &mut Criterion) {
    let mut group = c.benchmark_group("convolve_gaussian");
    for n in [128usize, 256] {
        let g = Grid2D::unit(n, BoundaryMode::Mirror).unwrap();
        let f = test_field(g);
        let mask = gaussian_kernel_mask(1e-4, &g, 4.0).unwrap();
        group.bench_with_input(BenchmarkId::new(MODE, n), &n, |b, _| {
            b.iter(|| convolve(&f, &mask))
        });
    }
    group.finish();
}

fn bench_quantile_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("weighted_quantile_step");
    group.sample_size(10);
    for n in [128usize, 256] {
        let g = Grid2D::unit(n, BoundaryMode::Mirror).unwrap();
        let phi = LevelSetField::clamped(test_field(g));
        let t = ScalarField2D::constant(g, 0.5);
        let mask = gaussian_kernel_mask(1e-4, &g, 4.0).unwrap();
        group.bench_with_input(BenchmarkId::new(MODE, n), &n, |b, _| {
            b.iter(|| weighted_quantile_step(&phi, &t, &mask))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_convolve, bench_quantile_step);
criterion_main!(benches);
