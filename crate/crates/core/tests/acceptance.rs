//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits nonzero if any criterion fails.
//!
//! Run with `cargo test -p moft-core --test acceptance`.

use std::process::ExitCode;
use std::time::Instant;

use moft_core::analysis::{calibrate_profile, calibration_samples, pca_separability, probe_noise_robustness};
use moft_core::guidance::{run_guidance_observed, UpdateEvent};
use moft_core::metrics::grid_seeds;
use moft_core::moft::content_removal;
use moft_core::synth::derive_seed;
use moft_core::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Thresholds, one block per criterion.
const C1_MIN_ACCURACY: f64 = 0.95;
const C1_MIN_GAP: f64 = 0.15;
const C1_SCENES_PER_CLASS: usize = 8;
const C2_FRACTION: f64 = 0.04;
const C2_MIN_MASS: f64 = 0.50;
const C3_TENSORS: usize = 100;
const C3_MAX_FRAME_SUM: f64 = 1e-5;
const C3_MAX_SHIFT_CHANGE: f64 = 1e-6;
const C4_POINTS: usize = 10;
const C4_STEP: f64 = 1e-3;
const C4_MAX_REL: f64 = 1e-4;
const C5_SEEDS: u64 = 10;
const C5_MIN_GOOD: usize = 8;
const C5_MAX_ANGLE_DEG: f64 = 45.0;
const C5_MAX_LOSS_RATIO: f64 = 0.5;
const C7_TOL: f64 = 1e-6;
const C8_TASKS: u64 = 10;
const C8_MAX_RATIO: f64 = 0.5;
const C9_TRIALS: usize = 20;
const C9_LEVELS: [f64; 4] = [0.0, 0.1, 0.2, 0.4];
const C9_RADIUS: f64 = 2.0;

const NET_SEED: u64 = 2024;
const CALIBRATION_SEED: u64 = 7;

struct Fixture {
    net: FeatureNet,
    calibration: Vec<CalibrationSample>,
    profile: MotionChannelProfile,
    pca: PcaModel,
    scene: SceneSpec,
}

impl Fixture {
    fn new() -> Self {
        let scene = SceneSpec::default();
        let net = FeatureNet::new(NET_SEED, scene.channels);
        let calibration = build_calibration_set(
            &cardinal_patterns(scene.frames),
            C1_SCENES_PER_CLASS,
            CALIBRATION_SEED,
            &scene,
            &net,
        )
        .expect("calibration set");
        let (pca, profile) = calibrate_profile(&calibration, C2_FRACTION).expect("calibration");
        Fixture {
            net,
            calibration,
            profile,
            pca,
            scene,
        }
    }
}

type Outcome = (bool, String);

fn c1_pca_separability(fx: &Fixture) -> Outcome {
    let (norm, labels) = calibration_samples(&fx.calibration, true);
    let (raw, _) = calibration_samples(&fx.calibration, false);
    let a_norm = pca_separability(&norm, &labels).unwrap();
    let a_raw = pca_separability(&raw, &labels).unwrap();
    (
        a_norm >= C1_MIN_ACCURACY && a_norm - a_raw >= C1_MIN_GAP,
        format!("normalized accuracy {a_norm:.4}, vanilla {a_raw:.4}"),
    )
}

fn c2_loading_concentration(fx: &Fixture) -> Outcome {
    let mass = fx.profile.mass_fraction(&fx.pca.components[0]);
    let truth = fx.net.motion_channel_indices();
    let hits = fx.profile.channel_indices().iter().filter(|c| truth.contains(c)).count();
    (
        mass >= C2_MIN_MASS,
        format!(
            "top {} channels hold {:.4} of |P1| mass ({hits} are true motion channels)",
            fx.profile.channels.len(),
            mass
        ),
    )
}

fn c3_content_removal() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_sum: f64 = 0.0;
    let mut worst_shift: f64 = 0.0;
    for _ in 0..C3_TENSORS {
        let dims = Dims4::new(
            rng.random_range(1..=12),
            rng.random_range(1..=6),
            rng.random_range(1..=6),
            rng.random_range(1..=5),
        );
        let x = FeatureTensor::from_fn(dims, |_, _, _, _| rng.random_range(-3.0f32..3.0)).unwrap();
        let offsets: Vec<f32> = (0..dims.frame_len()).map(|_| rng.random_range(-3.0f32..3.0)).collect();
        let shifted = FeatureTensor::from_fn(dims, |f, r, c, ch| {
            x.get(f, r, c, ch) + offsets[dims.offset(0, r, c, ch)]
        })
        .unwrap();
        let y = content_removal(&x);
        let n = dims.frame_len();
        let mut sums = vec![0.0f64; n];
        for (i, v) in y.as_slice().iter().enumerate() {
            sums[i % n] += *v as f64;
        }
        worst_sum = sums.iter().fold(worst_sum, |m, s| m.max(s.abs()));
        worst_shift = worst_shift.max(content_removal(&shifted).max_abs_diff(&y));
    }
    (
        worst_sum < C3_MAX_FRAME_SUM && worst_shift < C3_MAX_SHIFT_CHANGE,
        format!("max |frame sum| {worst_sum:.3e}, max shift change {worst_shift:.3e}"),
    )
}

fn random_latent(dims: Dims4, seed: u64) -> Tensor4<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor4::from_fn(dims, |_, _, _, _| rng.random_range(0.0..1.0)).unwrap()
}

fn c4_gradients(fx: &Fixture) -> Outcome {
    use moft_core::guidance::check_gradient;
    let dims = Dims4::new(8, 12, 12, fx.scene.channels);
    let mask = RegionMask::from_fn(12, 12, 8, |r, c| (2..10).contains(&r) && (3..11).contains(&c));
    let mut worst_c: f64 = 0.0;
    let mut worst_p: f64 = 0.0;
    for point in 0..C4_POINTS as u64 {
        let z = random_latent(dims, derive_seed(40, point));
        let reference = Moft {
            values: random_latent(dims.with_channels(fx.profile.channels.len()), derive_seed(41, point))
                .cast()
                .unwrap(),
            profile_id: fx.profile.id(),
            channel_order: fx.profile.channel_indices(),
        };
        let (_, g) = grad_motion_loss(&fx.net, &z, &reference, &mask).unwrap();
        let coords = pick_coords(&g, point);
        let r = check_gradient(&z, &g, &coords, C4_STEP, 0.0, |zz| {
            Ok(grad_motion_loss(&fx.net, zz, &reference, &mask)?.0)
        })
        .unwrap();
        worst_c = worst_c.max(r.max_rel_error);

        let spec = DragSpec::linear((3.4, 2.7), (8.2, 9.6), dims.frames).unwrap();
        let (_, g) = grad_drag_loss(&fx.net, &z, &spec).unwrap();
        let coords = pick_coords(&g, point);
        let r = check_gradient(&z, &g, &coords, C4_STEP, 0.0, |zz| Ok(grad_drag_loss(&fx.net, zz, &spec)?.0)).unwrap();
        worst_p = worst_p.max(r.max_rel_error);
    }
    (
        worst_c <= C4_MAX_REL && worst_p <= C4_MAX_REL,
        format!("max relative error motion {worst_c:.3e}, drag {worst_p:.3e}"),
    )
}

/// Three seeded coordinates among those with a non-negligible gradient.
fn pick_coords(g: &Tensor4<f64>, seed: u64) -> Vec<usize> {
    let scale = g.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let live: Vec<usize> = (0..g.as_slice().len()).filter(|&i| g.as_slice()[i].abs() > 1e-2 * scale).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..3).map(|_| live[rng.random_range(0..live.len())]).collect()
}

fn static_scene(fx: &Fixture, seed: u64) -> LatentVideo {
    let still = MotionPattern::constant("still", Displacement::default(), fx.scene.frames);
    generate_panning_video(&fx.scene.with_seed(seed), &still).unwrap()
}

fn mean_flow(video: &LatentVideo, frames: std::ops::Range<usize>) -> (f64, f64) {
    let d = video.dims();
    let set = track(video, &grid_seeds(d.height, d.width, 4, 2)).unwrap();
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
    for t in &set.tracklets {
        for (k, (dx, dy)) in t.displacements().into_iter().enumerate() {
            if frames.contains(&k) {
                sx += dx;
                sy += dy;
                n += 1.0;
            }
        }
    }
    (sx / n, sy / n)
}

fn c5_guidance(fx: &Fixture) -> Outcome {
    let cfg = GuidanceConfig::default();
    let (f, h, w) = (fx.scene.frames, fx.scene.height, fx.scene.width);
    let reference =
        synthesize_reference_moft(&DirectionSchedule::constant(Displacement::new(1.0, 0.0), f), &fx.profile, (f, h, w))
            .unwrap();
    let mask = RegionMask::full(h, w, f);
    let mut good = 0;
    let mut worst_ratio: f64 = 0.0;
    let mut angles = Vec::new();
    for s in 0..C5_SEEDS {
        let z = static_scene(fx, derive_seed(500, s));
        let out = run_guidance(&fx.net, &z, Some(&reference), &mask, None, &cfg).unwrap();
        // Transitions into frames 2..=8.
        let (fx_, fy_) = mean_flow(&out.latent, 0..7);
        let angle = fy_.atan2(fx_).to_degrees().abs();
        angles.push(format!("{angle:.0}"));
        if angle <= C5_MAX_ANGLE_DEG && fx_ > 0.0 {
            good += 1;
        }
        let first = out.log_at(cfg.total_steps - 1).unwrap().motion_loss;
        let last = out.log_at(cfg.t3).unwrap().motion_loss;
        worst_ratio = worst_ratio.max(last / first);
    }
    (
        good >= C5_MIN_GOOD && worst_ratio <= C5_MAX_LOSS_RATIO,
        format!(
            "{good}/{C5_SEEDS} seeds within {C5_MAX_ANGLE_DEG} deg (angles {}), worst loss ratio {worst_ratio:.3}",
            angles.join(",")
        ),
    )
}

fn c6_masked_clip(fx: &Fixture) -> Outcome {
    let cfg = GuidanceConfig::default();
    let (f, h, w) = (fx.scene.frames, fx.scene.height, fx.scene.width);
    let reference =
        synthesize_reference_moft(&DirectionSchedule::constant(Displacement::new(1.0, 0.0), f), &fx.profile, (f, h, w))
            .unwrap();
    let mask = RegionMask::from_fn(h, w, f, |_, c| c < w / 2);
    let clip = mask.clone().with_first_frames(8);
    let z = static_scene(fx, 61);
    let mut leaks = 0usize;
    let mut updates = 0usize;
    let mut nonzero_inside = false;
    let out = run_guidance_observed(&fx.net, &z, Some(&reference), &mask, None, &cfg, |e: &UpdateEvent<'_>| {
        updates += 1;
        let d = e.update.dims();
        for fr in 0..d.frames {
            for r in 0..d.height {
                for c in 0..d.width {
                    let inside = clip.frame_active(fr) && clip.contains(r, c);
                    for &v in e.update.pixel(fr, r, c) {
                        if !inside && v.to_bits() != 0 {
                            leaks += 1;
                        }
                        nonzero_inside |= inside && v != 0.0;
                    }
                }
            }
        }
    })
    .unwrap();
    let control = run_guidance(
        &fx.net,
        &z,
        Some(&reference),
        &mask,
        None,
        &GuidanceConfig {
            learning_rate: 0.0,
            ..cfg.clone()
        },
    )
    .unwrap();
    let d = z.dims();
    let mut untouched_differ = 0usize;
    for fr in 8..d.frames {
        for r in 0..d.height {
            for c in 0..d.width {
                for ch in 0..d.channels {
                    let a = out.latent.values().get(fr, r, c, ch);
                    let b = control.latent.values().get(fr, r, c, ch);
                    if a.to_bits() != b.to_bits() {
                        untouched_differ += 1;
                    }
                }
            }
        }
    }
    (
        leaks == 0 && untouched_differ == 0 && nonzero_inside,
        format!(
            "{updates} updates, {leaks} nonzero entries outside the clip region, \
             {untouched_differ} differences from the control run in frames 9-16"
        ),
    )
}

fn c7_metric_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut random_tracklet = |frames: usize| {
        let mut p = (rng.random_range(0.0..32.0), rng.random_range(0.0..32.0));
        let mut pts = vec![p];
        for _ in 1..frames {
            p = (p.0 + rng.random_range(-2.0..2.0), p.1 + rng.random_range(-2.0..2.0));
            pts.push(p);
        }
        Tracklet::new(pts)
    };
    let a = TrackletSet::new((0..5).map(|_| random_tracklet(16)).collect());
    let b = TrackletSet::new((0..7).map(|_| random_tracklet(16)).collect());
    let self_score = motion_fidelity(&a, &a).unwrap();
    let t = &a.tracklets[0];
    let anti = tracklet_corr(t, &t.with_scaled_motion(-1.0)).unwrap();
    let zero = mean_distance(t, t, (32, 32)).unwrap();
    // Brute-force oracle of the two-sided best-match average.
    let cos = |u: (f64, f64), v: (f64, f64)| (u.0 * v.0 + u.1 * v.1) / ((u.0.hypot(u.1)) * (v.0.hypot(v.1)));
    let corr = |x: &Tracklet, y: &Tracklet| {
        let (dx, dy) = (x.displacements(), y.displacements());
        (0..dx.len()).map(|k| cos(dx[k], dy[k])).sum::<f64>() / dx.len() as f64
    };
    let mut term_b = 0.0;
    for y in &b.tracklets {
        let mut best = f64::NEG_INFINITY;
        for x in &a.tracklets {
            best = best.max(corr(x, y));
        }
        term_b += best;
    }
    let mut term_a = 0.0;
    for x in &a.tracklets {
        let mut best = f64::NEG_INFINITY;
        for y in &b.tracklets {
            best = best.max(corr(x, y));
        }
        term_a += best;
    }
    let oracle = term_b / b.len() as f64 + term_a / a.len() as f64;
    let score = motion_fidelity(&a, &b).unwrap();
    let ok = (self_score - 2.0).abs() <= C7_TOL
        && (anti + 1.0).abs() <= C7_TOL
        && zero == 0.0
        && (score - oracle).abs() <= C7_TOL;
    (
        ok,
        format!(
            "fidelity(T,T)={self_score:.9}, corr(t,-t)={anti:.9}, dist(t,t)={zero}, |eq - oracle|={:.2e}",
            (score - oracle).abs()
        ),
    )
}

fn drag_task(fx: &Fixture, task: u64) -> (LatentVideo, DragSpec, RegionMask) {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(800, task));
    let (f, h, w) = (fx.scene.frames, fx.scene.height, fx.scene.width);
    let start = (rng.random_range(11.0..21.0f64).round(), rng.random_range(9.0..13.0f64).round());
    let angle: f64 = rng.random_range(-0.5..0.5);
    let len = 8.0;
    let target = (start.0 + len * angle.sin(), start.1 + len * angle.cos());
    let sprite = SpriteSpec {
        start,
        radius: 4.0,
        motion: MotionPattern::constant("still", Displacement::default(), f),
        contrast: 1.0,
    };
    let z = generate_sprite_video(&fx.scene.with_seed(derive_seed(801, task)), &sprite).unwrap();
    let spec = DragSpec::linear(start, target, f).unwrap();
    let mask = RegionMask::from_fn(h, w, f, |r, c| {
        // Capsule around the trajectory, padded by the sprite radius.
        let (pr, pc) = (r as f64 - start.0, c as f64 - start.1);
        let (ar, ac) = (target.0 - start.0, target.1 - start.1);
        let s = ((pr * ar + pc * ac) / (ar * ar + ac * ac)).clamp(0.0, 1.0);
        (pr - s * ar).hypot(pc - s * ac) <= 6.0
    });
    (z, spec, mask)
}

fn drag_distance(fx: &Fixture, z: &LatentVideo, spec: &DragSpec, mask: &RegionMask, cfg: &GuidanceConfig) -> f64 {
    let d = z.dims();
    let reference = spec.reference_moft(&fx.profile, d.height, d.width).unwrap();
    let out = run_guidance(&fx.net, z, Some(&reference), mask, Some(spec), cfg).unwrap();
    let tracked = track(&out.latent, &[spec.start()]).unwrap();
    let edited = &tracked.tracklets[0];
    let target = Tracklet::new(spec.trajectory.iter().map(|&(r, c)| (c, r)).collect());
    mean_distance(edited, &target, (d.height, d.width)).unwrap()
}

fn c8_schedule_and_drag(fx: &Fixture) -> Outcome {
    let cfg = GuidanceConfig::drag();
    let (z, spec, mask) = drag_task(fx, 0);
    let d = z.dims();
    let reference = spec.reference_moft(&fx.profile, d.height, d.width).unwrap();
    let out = run_guidance(&fx.net, &z, Some(&reference), &mask, Some(&spec), &cfg).unwrap();
    let schedule_ok = out.log.len() == 25
        && out.log.iter().all(|l| {
            let (c, p) = (cfg.weight_motion, cfg.weight_point);
            let expect = match l.step {
                19..=24 => (c, 0.0),
                18 => (c, p),
                5..=17 => (0.0, p),
                _ => (0.0, 0.0),
            };
            (l.weight_motion, l.weight_point) == expect
        });
    let dift_cfg = GuidanceConfig {
        mode: LossMode::PointOnly,
        ..cfg.clone()
    };
    let (mut both, mut dift) = (0.0, 0.0);
    for task in 0..C8_TASKS {
        let (z, spec, mask) = drag_task(fx, task);
        both += drag_distance(fx, &z, &spec, &mask, &cfg);
        dift += drag_distance(fx, &z, &spec, &mask, &dift_cfg);
    }
    let (both, dift) = (both / C8_TASKS as f64, dift / C8_TASKS as f64);
    (
        schedule_ok && both <= C8_MAX_RATIO * dift,
        format!("schedule {}, mean distance MOFT+DIFT {both:.4} vs DIFT-only {dift:.4}", if schedule_ok { "conforms" } else { "MISMATCH" }),
    )
}

fn c9_noise_probe(fx: &Fixture) -> Outcome {
    let (f, _, _) = (fx.scene.frames, fx.scene.height, fx.scene.width);
    let point = (16usize, 12usize);
    // A small sprite tracing a square loop: right, down, left, up, two
    // frames each.
    let sides = [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)];
    let loop_motion = (0..f - 1).map(|k| {
        let (x, y) = sides[(k / 2) % 4];
        Displacement::new(x, y)
    });
    let sprite = SpriteSpec {
        start: (point.0 as f64, point.1 as f64),
        radius: 1.5,
        motion: MotionPattern::new("loop", loop_motion.collect()),
        contrast: 1.0,
    };
    let z = generate_sprite_video(&fx.scene.with_seed(900), &sprite).unwrap();
    let report = probe_noise_robustness(&z, &fx.net, &fx.profile, point, &C9_LEVELS, C9_TRIALS, 901).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for (i, level) in C9_LEVELS.iter().enumerate() {
        let (m, d) = (report.moft_success(i, C9_RADIUS), report.dift_success(i, C9_RADIUS));
        ok &= m >= d;
        if i == C9_LEVELS.len() - 1 {
            ok &= m > d;
        }
        parts.push(format!("{level}: {m:.2}/{d:.2}"));
    }
    (ok, format!("success MOFT/vanilla by level {}", parts.join(", ")))
}

fn main() -> ExitCode {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let t0 = Instant::now();
    let fx = Fixture::new();
    println!("fixture ready in {:.1}s", t0.elapsed().as_secs_f64());
    let criteria: Vec<(&str, Box<dyn Fn(&Fixture) -> Outcome>)> = vec![
        ("1 pca separability", Box::new(c1_pca_separability)),
        ("2 loading concentration", Box::new(c2_loading_concentration)),
        ("3 content removal exactness", Box::new(|_| c3_content_removal())),
        ("4 gradient correctness", Box::new(c4_gradients)),
        ("5 guidance efficacy", Box::new(c5_guidance)),
        ("6 masked clip exactness", Box::new(c6_masked_clip)),
        ("7 metric identities", Box::new(|_| c7_metric_identities())),
        ("8 schedule and drag", Box::new(c8_schedule_and_drag)),
        ("9 noise robustness", Box::new(c9_noise_probe)),
    ];
    let mut failed = 0;
    for (name, run) in &criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let t = Instant::now();
        let (ok, detail) = run(&fx);
        println!(
            "{} criterion {name}: {detail} [{:.1}s]",
            if ok { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64()
        );
        failed += usize::from(!ok);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
