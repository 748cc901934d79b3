use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use halfsphere_bench::{default_grid, gallery, perturbed_family, sample_integrand};
use halfsphere_core::foliation::{leaves_intersect, ray_intersect};
use halfsphere_core::graph::foliation_criterion;
use halfsphere_core::quadrature::{integrate_surface, recover_coefficients};
use halfsphere_core::{parse, Case, Program};

fn expr(c: &mut Criterion) {
    let text = "a*x + a*y + x*y - c1*x^3 - c2*y^3";
    c.bench_function("parse_diff_compile", |b| {
        b.iter(|| {
            let u = parse(black_box(text)).unwrap();
            let d = u.diff("x").diff("y");
            Program::compile(&[u, d], &["a", "x", "y", "c1", "c2"]).unwrap()
        })
    });
}

fn quadrature(c: &mut Criterion) {
    let grid = default_grid();
    let e = sample_integrand();
    c.bench_function("integrate_surface_64x128", |b| b.iter(|| integrate_surface(black_box(&e), &grid).unwrap()));
    let x = std::f64::consts::PI * (863.0 / 280.0 - 3.0 * std::f64::consts::LN_2);
    c.bench_function("recover_coefficients", |b| b.iter(|| recover_coefficients(black_box(x), 1e-12).unwrap()));
}

fn graph(c: &mut Criterion) {
    let s = gallery(0.3);
    c.bench_function("critical_point_and_criterion", |b| {
        b.iter(|| {
            let p = s.find_critical_point(black_box((0.01, -0.02))).unwrap();
            foliation_criterion(&s, &p, Case::Willmore).unwrap()
        })
    });
}

fn foliation(c: &mut Criterion) {
    let fam = perturbed_family(0.5);
    c.bench_function("ray_intersect", |b| b.iter(|| ray_intersect(&fam, 0.04, black_box([0.3, 0.4, 0.866])).unwrap()));
    c.bench_function("leaves_intersect_disjoint", |b| b.iter(|| leaves_intersect(&fam, 0.02, black_box(0.03)).unwrap()));
}

criterion_group!(benches, expr, quadrature, graph, foliation);
criterion_main!(benches);
