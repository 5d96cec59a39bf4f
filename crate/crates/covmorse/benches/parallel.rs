//! Bloch Γ-count over a θ-grid: one worker against the full pool.
//!
//! Build with `--no-default-features` to time the sequential fallback itself.

use covmorse::gamma_dim::{gamma_counting, GammaSystem, ThetaGrid};
use covmorse::geomodel::{build_torus_model, constant_curvature_field, link_phases_from_curvature, CoverSpec};
use covmorse::lattice_op::AssemblyOptions;
use covmorse::par;
use criterion::{criterion_group, criterion_main, Criterion};
use nalgebra::DMatrix;
use std::f64::consts::PI;

fn bloch_system() -> GammaSystem {
    let m = build_torus_model(1, DMatrix::identity(2, 2), 10, CoverSpec::FreeAbelian(2)).unwrap();
    let f = constant_curvature_field(&m, &[2.0 * PI], 1);
    let links = link_phases_from_curvature(&m, &f, 2).unwrap();
    let grid = ThetaGrid {
        per_circle: 16,
        max_depth: 0,
        ..ThetaGrid::default()
    };
    GammaSystem::dolbeault(&m, &links, 0, 1, &AssemblyOptions::default(), grid).unwrap()
}

fn bench(c: &mut Criterion) {
    let sys = bloch_system();
    let mut g = c.benchmark_group("bloch_count");
    g.sample_size(10);
    let label = if par::is_parallel() { "rayon" } else { "sequential" };
    g.bench_function(format!("{label}/1_worker"), |b| {
        b.iter(|| par::with_workers(Some(1), || gamma_counting(&sys, 3.0).unwrap().value))
    });
    g.bench_function(format!("{label}/all_workers"), |b| {
        b.iter(|| par::with_workers(None, || gamma_counting(&sys, 3.0).unwrap().value))
    });
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
