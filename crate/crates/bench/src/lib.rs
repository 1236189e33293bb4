//! Shared fixtures for the pipeline benchmarks.

use moft_core::*;

/// A calibrated network and profile at the default geometry.
pub struct Fixture {
    pub scene: SceneSpec,
    pub net: FeatureNet,
    pub calibration: Vec<CalibrationSample>,
    pub profile: MotionChannelProfile,
}

pub fn fixture(scenes_per_direction: usize) -> Fixture {
    let scene = SceneSpec::default();
    let net = FeatureNet::new(2024, scene.channels);
    let calibration =
        build_calibration_set(&cardinal_patterns(scene.frames), scenes_per_direction, 7, &scene, &net).unwrap();
    let (_, profile) = calibrate_profile(&calibration, 0.04).unwrap();
    Fixture {
        scene,
        net,
        calibration,
        profile,
    }
}

pub fn pan(f: &Fixture, seed: u64, d: Displacement) -> LatentVideo {
    let p = MotionPattern::constant("pan", d, f.scene.frames);
    generate_panning_video(&f.scene.with_seed(seed), &p).unwrap()
}
