use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use halosep_bench::lit_scene;
use halosep_core::{
    blind_separate, estimate_center, evaluate, radn_forward, remove_halo, RadnHyper, RadnParams,
    SeparationConfig,
};

const SIZES: [usize; 2] = [128, 256];

fn separation(c: &mut Criterion) {
    let cfg = SeparationConfig::default();
    let mut group = c.benchmark_group("separation");
    group.sample_size(10);
    for size in SIZES {
        let (z, center) = lit_scene(size, 0).unwrap();
        group.bench_with_input(BenchmarkId::new("estimate_center", size), &z, |b, z| {
            b.iter(|| estimate_center(z, 0.01).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("blind_separate", size), &z, |b, z| {
            b.iter(|| blind_separate(z, center, &cfg).unwrap())
        });
        let sep = blind_separate(&z, center, &cfg).unwrap();
        group.bench_with_input(BenchmarkId::new("remove_halo", size), &z, |b, z| {
            b.iter(|| remove_halo(z, &sep.halo, cfg.div_floor).unwrap())
        });
    }
    group.finish();
}

fn recovery(c: &mut Criterion) {
    let net = RadnParams::init_seeded(RadnHyper::default(), 0).unwrap();
    let mut group = c.benchmark_group("recovery");
    group.sample_size(10);
    for size in SIZES {
        let (z, _) = lit_scene(size, 1).unwrap();
        group.bench_with_input(BenchmarkId::new("radn_forward", size), &z, |b, z| {
            b.iter(|| radn_forward(&net, z).unwrap())
        });
    }
    group.finish();
}

fn metrics(c: &mut Criterion) {
    let mut group = c.benchmark_group("metrics");
    group.sample_size(10);
    for size in SIZES {
        let (z, _) = lit_scene(size, 2).unwrap();
        let (reference, _) = lit_scene(size, 3).unwrap();
        group.bench_with_input(BenchmarkId::new("evaluate", size), &z, |b, z| {
            b.iter(|| evaluate("bench", z, Some(&reference)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, separation, recovery, metrics);
criterion_main!(benches);
