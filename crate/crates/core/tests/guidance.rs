use moft_core::guidance::{denoise_stage, motion_loss_values, run_guidance_observed};
use moft_core::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const F: usize = 8;
const H: usize = 12;
const W: usize = 12;

fn net() -> FeatureNet {
    FeatureNet::new(31, 4)
}

fn latent(seed: u64) -> LatentVideo {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    LatentVideo::new(
        Tensor4::from_fn(Dims4::new(F, H, W, 4), |_, _, _, _| rng.random_range(0.0..1.0)).unwrap(),
        seed,
    )
}

fn panning(seed: u64, d: Displacement) -> LatentVideo {
    let scene = SceneSpec {
        seed,
        height: H,
        width: W,
        frames: F,
        ..SceneSpec::default()
    };
    generate_panning_video(&scene, &MotionPattern::constant("p", d, F)).unwrap()
}

fn moft_of(net: &FeatureNet, z: &LatentVideo) -> Moft {
    let channels = net.motion_channel_indices();
    let values = content_removal(&net.features(z).unwrap().select_channels(&channels).unwrap());
    Moft {
        values,
        profile_id: "test".into(),
        channel_order: channels,
    }
}

fn centre_mask() -> RegionMask {
    RegionMask::from_fn(H, W, F, |r, c| (3..9).contains(&r) && (2..10).contains(&c))
}

#[test]
fn constant_offset_loss_has_closed_form() {
    let n = net();
    let m = moft_of(&n, &panning(1, Displacement::new(1.0, 0.0)));
    let c = 0.25f32;
    let shifted = Moft {
        values: Tensor4::from_fn(m.dims(), |f, r, col, k| m.values.get(f, r, col, k) + c).unwrap(),
        ..m.clone()
    };
    let mask = centre_mask();
    let want = c as f64 * ((F * m.dims().channels) as f64).sqrt();
    assert!((motion_loss(&m, &shifted, &mask).unwrap() - want).abs() < 1e-5);
    assert_eq!(motion_loss(&m, &m, &mask).unwrap(), 0.0);
}

#[test]
fn motion_loss_matches_scalar_oracle_on_small_mask() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let dims = Dims4::new(5, 6, 6, 3);
    let a = Tensor4::from_fn(dims, |_, _, _, _| rng.random_range(-1.0f64..1.0)).unwrap();
    let b = Tensor4::from_fn(dims, |_, _, _, _| rng.random_range(-1.0f64..1.0)).unwrap();
    let mask = RegionMask::from_fn(6, 6, 5, |r, c| (1..5).contains(&r) && (2..6).contains(&c));
    let mut total = 0.0;
    for r in 1..5 {
        for c in 2..6 {
            let mut sq = 0.0;
            for f in 0..5 {
                for k in 0..3 {
                    sq += (a.get(f, r, c, k) - b.get(f, r, c, k)).powi(2);
                }
            }
            total += sq.sqrt();
        }
    }
    let got = motion_loss_values(&a, &b, &mask).unwrap();
    assert!((got - total / 16.0).abs() < 1e-6);
}

#[test]
fn empty_mask_is_rejected() {
    let m = moft_of(&net(), &latent(1));
    let empty = RegionMask::from_fn(H, W, F, |_, _| false);
    assert!(matches!(motion_loss(&m, &m, &empty), Err(MoftError::Argument(_))));
}

#[test]
fn stationary_drag_on_static_video_is_zero() {
    let n = net();
    let z = panning(2, Displacement::default());
    let spec = DragSpec::new(vec![(5.5, 6.25); F]).unwrap();
    assert_eq!(drag_loss(&n.dift(&z).unwrap(), &spec).unwrap(), 0.0);
}

#[test]
fn following_the_pan_beats_standing_still() {
    let n = net();
    let z = panning(3, Displacement::new(0.5, 0.0));
    let dift = n.dift(&z).unwrap();
    let follow = DragSpec::linear((6.0, 3.0), (6.0, 3.0 + 0.5 * (F - 1) as f64), F).unwrap();
    let still = DragSpec::new(vec![(6.0, 3.0); F]).unwrap();
    assert!(drag_loss(&dift, &follow).unwrap() < drag_loss(&dift, &still).unwrap());
}

#[test]
fn full_clip_is_identity_and_empty_frame_set_is_zero() {
    let g = latent(5).values().clone();
    let full = RegionMask::full(H, W, F);
    assert_eq!(masked_clip(&g, &full).unwrap(), g);
    let none = RegionMask::full(H, W, F).with_frame_set(&[]);
    assert!(masked_clip(&g, &none).unwrap().as_slice().iter().all(|&v| v == 0.0));
}

#[test]
fn gradient_vanishes_at_self_reference() {
    let n = net();
    let z = panning(6, Displacement::new(1.0, 0.0));
    let (loss, g) = grad_motion_loss(&n, z.values(), &moft_of(&n, &z), &centre_mask()).unwrap();
    assert!(loss < 1e-6);
    assert!(g.as_slice().iter().all(|v| v.abs() < 1e-9));
}

#[test]
fn one_clipped_update_leaves_outside_entries_untouched() {
    let n = net();
    let z = latent(7);
    let reference = moft_of(&n, &panning(8, Displacement::new(1.0, 0.0)));
    let mask = centre_mask().with_first_frames(4);
    let (_, g) = grad_motion_loss(&n, z.values(), &reference, &centre_mask()).unwrap();
    let clip = masked_clip(&g, &mask).unwrap();
    let updated: Vec<f64> = z.as_slice().iter().zip(clip.as_slice()).map(|(a, u)| a - 0.5 * u).collect();
    let d = z.dims();
    for f in 0..F {
        for r in 0..H {
            for c in 0..W {
                if f < 4 && mask.contains(r, c) {
                    continue;
                }
                for k in 0..4 {
                    let i = d.offset(f, r, c, k);
                    assert_eq!(updated[i].to_bits(), z.as_slice()[i].to_bits());
                }
            }
        }
    }
}

#[test]
fn self_reference_is_a_fixed_point_without_denoiser() {
    let n = net();
    let z = panning(9, Displacement::new(1.0, 0.0));
    let cfg = GuidanceConfig {
        denoise: false,
        ..GuidanceConfig::default()
    };
    let out = run_guidance(&n, &z, Some(&moft_of(&n, &z)), &centre_mask(), None, &cfg).unwrap();
    assert!(out.latent.values().max_abs_diff(z.values()) < 1e-5);
}

#[test]
fn zero_learning_rate_only_denoises() {
    let n = net();
    let z = latent(10);
    let cfg = GuidanceConfig {
        learning_rate: 0.0,
        ..GuidanceConfig::default()
    };
    let reference = moft_of(&n, &panning(11, Displacement::new(1.0, 0.0)));
    let out = run_guidance(&n, &z, Some(&reference), &centre_mask(), None, &cfg).unwrap();
    let mut want = z.values().clone();
    for _ in 0..cfg.total_steps {
        want = denoise_stage(&want);
    }
    assert_eq!(out.latent.values(), &want);
}

#[test]
fn small_steps_decrease_the_loss() {
    let n = net();
    let mask = centre_mask();
    for seed in 0..3u64 {
        let z = latent(100 + seed);
        let reference = moft_of(&n, &panning(200 + seed, Displacement::new(1.0, 0.0)));
        let (l0, g) = grad_motion_loss(&n, z.values(), &reference, &mask).unwrap();
        // Backtracking probe.
        let mut eta = 100.0;
        let mut decreased = false;
        for _ in 0..30 {
            let step = Tensor4::from_fn(z.dims(), |f, r, c, k| z.values().get(f, r, c, k) - eta * g.get(f, r, c, k)).unwrap();
            let (l1, _) = grad_motion_loss(&n, &step, &reference, &mask).unwrap();
            if l1 < l0 {
                decreased = true;
                break;
            }
            eta *= 0.5;
        }
        assert!(decreased, "seed {seed}");
    }
}

#[test]
fn runs_are_bit_identical() {
    let n = net();
    let z = latent(12);
    let reference = moft_of(&n, &panning(13, Displacement::new(1.0, 0.0)));
    let spec = DragSpec::linear((5.0, 4.0), (6.0, 8.0), F).unwrap();
    let cfg = GuidanceConfig::drag();
    let a = run_guidance(&n, &z, Some(&reference), &centre_mask(), Some(&spec), &cfg).unwrap();
    let b = run_guidance(&n, &z, Some(&reference), &centre_mask(), Some(&spec), &cfg).unwrap();
    assert_eq!(a.latent.values(), b.latent.values());
    assert_eq!(a.log_csv(), b.log_csv());
}

#[test]
fn huge_learning_rate_diverges_with_step() {
    let n = net();
    let z = latent(14);
    let reference = moft_of(&n, &panning(15, Displacement::new(1.0, 0.0)));
    let cfg = GuidanceConfig {
        learning_rate: 1e300,
        ..GuidanceConfig::default()
    };
    match run_guidance(&n, &z, Some(&reference), &centre_mask(), None, &cfg) {
        Err(MoftError::Divergence { step, .. }) => assert!(step < cfg.total_steps),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn log_follows_the_schedule() {
    let n = net();
    let z = latent(16);
    let reference = moft_of(&n, &panning(17, Displacement::new(1.0, 0.0)));
    let spec = DragSpec::linear((5.0, 4.0), (6.0, 8.0), F).unwrap();
    let cfg = GuidanceConfig::drag();
    let mut updates = 0;
    let out = run_guidance_observed(&n, &z, Some(&reference), &centre_mask(), Some(&spec), &cfg, |_| updates += 1).unwrap();
    assert_eq!(updates, cfg.total_steps * cfg.inner_iters);
    let steps: Vec<usize> = out.log.iter().map(|l| l.step).collect();
    assert_eq!(steps, (0..25).rev().collect::<Vec<_>>());
    for l in &out.log {
        assert_eq!((l.weight_motion, l.weight_point), loss_schedule(l.step, &cfg).unwrap());
    }
    assert!(out.log_csv().starts_with("step,w_c,w_p,loss"));
}

#[test]
fn motion_loss_without_reference_is_rejected() {
    let cfg = GuidanceConfig::default();
    let r = run_guidance(&net(), &latent(1), None, &centre_mask(), None, &cfg);
    assert!(matches!(r, Err(MoftError::Argument(_))));
}

fn thresholds() -> impl Strategy<Value = (usize, usize, usize, usize)> {
    (3usize..40).prop_flat_map(|t| (Just(t), 2..=t)).prop_flat_map(|(t, t1)| (Just(t), Just(t1), 1..t1)).prop_flat_map(|(t, t1, t2)| (Just(t), Just(t1), Just(t2), 0..t2))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn schedule_partitions_the_steps((t, t1, t2, t3) in thresholds()) {
        let cfg = GuidanceConfig { total_steps: t, t1, t2, t3, ..GuidanceConfig::drag() };
        for step in 0..t {
            let (wc, wp) = loss_schedule(step, &cfg).unwrap();
            let branches = [
                step >= t1 && wc > 0.0 && wp == 0.0,
                step < t1 && step >= t2 && wc > 0.0 && wp > 0.0,
                step < t2 && step >= t3 && wc == 0.0 && wp > 0.0,
                step < t3 && wc == 0.0 && wp == 0.0,
            ];
            prop_assert_eq!(branches.iter().filter(|&&b| b).count(), 1);
        }
        prop_assert!(loss_schedule(t, &cfg).is_err());
    }

    #[test]
    fn drag_at_grid_points_equals_lookup(seed in any::<u64>(), pts in prop::collection::vec((0usize..H, 0usize..W), F)) {
        let n = net();
        let dift = n.dift(&latent(seed)).unwrap();
        let spec = DragSpec::new(pts.iter().map(|&(r, c)| (r as f64, c as f64)).collect()).unwrap();
        let mut want = 0.0;
        for f in 1..F {
            let (r, c) = pts[f];
            let d: f64 = dift.pixel(f, r, c).iter().zip(dift.pixel(0, pts[0].0, pts[0].1)).map(|(a, b)| (*a as f64 - *b as f64).powi(2)).sum();
            want += d.sqrt();
        }
        prop_assert!((drag_loss(&dift, &spec).unwrap() - want).abs() < 1e-9 * want.max(1.0));
    }
}
