use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use hype_bench::point_pairs;
use hype_core::lorentz::{entailment_loss, exp_map_origin, exterior_angle, neg_lorentz_distance};
use hype_core::{ConeParams, Curvature, SpaceVector};

fn kernels(c: &mut Criterion) {
    let curv = Curvature::default();
    let cone = ConeParams::default();
    let mut group = c.benchmark_group("kernels");
    for dim in [16, 64, 512] {
        let pairs = point_pairs(256, dim);
        let tangents: Vec<SpaceVector> =
            pairs.iter().map(|(t, _)| SpaceVector::new(t.space().to_vec()).expect("non-empty")).collect();
        group.bench_with_input(BenchmarkId::new("exp_map", dim), &tangents, |b, vs| {
            b.iter(|| vs.iter().map(|v| exp_map_origin(black_box(v), curv).time()).sum::<f64>())
        });
        group.bench_with_input(BenchmarkId::new("distance", dim), &pairs, |b, ps| {
            b.iter(|| ps.iter().map(|(x, y)| neg_lorentz_distance(black_box(x), y, curv).unwrap()).sum::<f64>())
        });
        group.bench_with_input(BenchmarkId::new("exterior_angle", dim), &pairs, |b, ps| {
            b.iter(|| ps.iter().map(|(x, y)| exterior_angle(black_box(x), y, curv).unwrap()).sum::<f64>())
        });
        group.bench_with_input(BenchmarkId::new("entailment_loss", dim), &pairs, |b, ps| {
            b.iter(|| ps.iter().map(|(x, y)| entailment_loss(black_box(x), y, curv, cone).unwrap()).sum::<f64>())
        });
    }
    group.finish();
}

criterion_group!(benches, kernels);
criterion_main!(benches);
