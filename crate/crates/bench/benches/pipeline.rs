use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use moft_bench::{fixture, pan};
use moft_core::metrics::grid_seeds;
use moft_core::*;

fn stages(c: &mut Criterion) {
    let fx = fixture(4);
    let z = pan(&fx, 11, Displacement::new(1.0, 0.0));
    let features = fx.net.features(&z).unwrap();
    let reference = pan(&fx, 12, Displacement::new(-1.0, 0.0));
    let ref_moft = extract_moft(&fx.net.features(&reference).unwrap(), &fx.profile).unwrap();
    let d = z.dims();
    let mask = RegionMask::full(d.height, d.width, d.frames);

    c.bench_function("featurize", |b| b.iter(|| fx.net.features(black_box(&z)).unwrap()));
    c.bench_function("content_removal", |b| b.iter(|| content_removal(black_box(&features))));
    c.bench_function("extract_moft", |b| b.iter(|| extract_moft(black_box(&features), &fx.profile).unwrap()));
    c.bench_function("calibrate_profile", |b| b.iter(|| calibrate_profile(black_box(&fx.calibration), 0.04).unwrap()));
    c.bench_function("grad_motion_loss", |b| {
        b.iter(|| grad_motion_loss(&fx.net, black_box(z.values()), &ref_moft, &mask).unwrap())
    });
    let seeds = grid_seeds(d.height, d.width, 4, 2);
    c.bench_function("track_grid", |b| b.iter(|| track(black_box(&z), &seeds).unwrap()));
}

fn guidance(c: &mut Criterion) {
    let fx = fixture(2);
    let z = pan(&fx, 21, Displacement::default());
    let d = z.dims();
    let schedule = DirectionSchedule::constant(Displacement::new(1.0, 0.0), d.frames);
    let reference = synthesize_reference_moft(&schedule, &fx.profile, (d.frames, d.height, d.width)).unwrap();
    let mask = RegionMask::full(d.height, d.width, d.frames);
    let cfg = GuidanceConfig {
        total_steps: 6,
        t3: 0,
        ..GuidanceConfig::default()
    };
    let mut group = c.benchmark_group("guidance");
    group.sample_size(10);
    group.bench_function("six_steps", |b| {
        b.iter(|| run_guidance(&fx.net, black_box(&z), Some(&reference), &mask, None, &cfg).unwrap())
    });
    group.finish();
}

criterion_group!(benches, stages, guidance);
criterion_main!(benches);
