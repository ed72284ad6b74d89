use std::hint::black_box;

use bwlab_core::continuation::locate_branch_point;
use bwlab_core::eigensolver::{mismatch, shooting_length, solve_eigenvalue, SolveOptions};
use bwlab_core::models::turning_points;
use bwlab_core::semiclassics::{action_integral, critical_energy, trace_stokes_lines, Contour};
use bwlab_core::ModelSpec;
use criterion::{criterion_group, criterion_main, Criterion};
use num_complex::Complex64;

fn kernels(c: &mut Criterion) {
    let spec = ModelSpec::hbar(1.0);
    let e = Complex64::new(1.2, 0.0);
    c.bench_function("turning_points", |b| b.iter(|| turning_points(black_box(&spec), black_box(e))));
    let l = shooting_length(&spec, e).unwrap();
    c.bench_function("mismatch", |b| b.iter(|| mismatch(&spec, black_box(e), l, None, 1e-10).unwrap()));
    c.bench_function("solve_eigenvalue", |b| {
        b.iter(|| solve_eigenvalue(&spec, black_box(e), &SolveOptions::fast()).unwrap())
    });
    c.bench_function("action_integral", |b| {
        b.iter(|| action_integral(&spec, black_box(Complex64::new(0.4, 0.0)), Contour::GammaM).unwrap())
    });
    c.bench_function("stokes_diagram", |b| b.iter(|| trace_stokes_lines(&spec, black_box(Complex64::new(0.5, 0.0))).unwrap()));
}

fn drivers(c: &mut Criterion) {
    let mut g = c.benchmark_group("drivers");
    g.sample_size(10);
    g.bench_function("critical_energy", |b| b.iter(|| critical_energy(&ModelSpec::hbar(1.0)).unwrap()));
    g.bench_function("branch_point_n0", |b| b.iter(|| locate_branch_point(0).unwrap()));
    g.finish();
}

criterion_group!(benches, kernels, drivers);
criterion_main!(benches);
