use std::path::Path;
use std::process::{Command, Output};

use moft_core::{load_tensor, Moft};

const SMALL: [&str; 8] = ["--set", "height=16", "--set", "width=16", "--set", "frames=8", "--set", "scenes=2"];

fn kit(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_moft-kit"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn kit_small(args: &[&str], cwd: &Path) -> Output {
    let mut all: Vec<&str> = args.to_vec();
    all.extend_from_slice(&SMALL);
    kit(&all, cwd)
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstdout {}\nstderr {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn calibrated(dir: &Path) {
    ok(&kit_small(&["synth", "--out", "s"], dir));
    ok(&kit_small(&["calibrate", "--manifest", "s/manifest.txt", "--out", "c"], dir));
}

#[test]
fn synth_calibrate_extract_has_zero_frame_sums() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    calibrated(d);
    let manifest = std::fs::read_to_string(d.join("s/manifest.txt")).unwrap();
    assert_eq!(manifest.lines().count(), 8);
    let first: Vec<&str> = manifest.lines().next().unwrap().split_whitespace().collect();
    assert_eq!(first[1], "right");
    assert_eq!(first.len(), 2 + 7);
    let profile = std::fs::read_to_string(d.join("c/profile.txt")).unwrap();
    assert!(profile.starts_with("D=64 q=0.04"));
    ok(&kit_small(&["extract", "--video", "s/video_003.mft", "--profile", "c/profile.txt", "--out", "e"], d));
    let values = load_tensor(d.join("e/moft.mft")).unwrap();
    let sidecar = std::fs::read_to_string(d.join("e/moft.sidecar")).unwrap();
    let (profile_id, channel_order) = Moft::parse_sidecar(&sidecar).unwrap();
    let m = Moft {
        values,
        profile_id,
        channel_order,
    };
    assert_eq!(m.dims().channels, profile.lines().count() - 1);
    assert!(m.max_frame_sum() < 1e-5, "{}", m.max_frame_sum());
}

#[test]
fn missing_flag_is_usage_error_naming_it() {
    let dir = tempfile::tempdir().unwrap();
    let out = kit(&["extract", "--video", "v.mft", "--out", "e"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--profile"));
}

#[test]
fn unknown_subcommand_and_key_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = kit(&["transmogrify"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    std::fs::write(dir.path().join("bad.txt"), "lr=1\nlearning_rate=2\n").unwrap();
    let out = kit(&["--config", "bad.txt", "synth", "--out", "s"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("junk.mft"), b"MFT1 not really").unwrap();
    std::fs::write(dir.path().join("p.txt"), "D=64 q=0.04\n").unwrap();
    let out = kit(&["extract", "--video", "junk.mft", "--profile", "p.txt", "--out", "e"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn help_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let out = kit(&["guide", "--help"], dir.path());
    assert!(ok(&out).contains("--clip-frames"));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    calibrated(a.path());
    calibrated(b.path());
    for f in ["s/manifest.txt", "s/video_005.mft", "c/profile.txt", "c/pca.csv", "c/config.txt"] {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn echoed_config_reproduces_guidance() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    calibrated(d);
    ok(&kit_small(&["synth", "--out", "still", "--pattern", "still", "--scenes", "1"], d));
    let args = [
        "guide",
        "--init",
        "still/video_000.mft",
        "--schedule",
        "right×7",
        "--profile",
        "c/profile.txt",
        "--steps",
        "6",
        "--set",
        "t3=1",
        "--out",
        "g1",
    ];
    ok(&kit(&args, d));
    let echoed = std::fs::read_to_string(d.join("g1/config.txt")).unwrap();
    assert!(echoed.contains("steps=6\n") && echoed.contains("t3=1\n"));
    let out = kit(
        &[
            "--config",
            "g1/config.txt",
            "guide",
            "--init",
            "still/video_000.mft",
            "--schedule",
            "right×7",
            "--profile",
            "c/profile.txt",
            "--out",
            "g2",
        ],
        d,
    );
    ok(&out);
    for f in ["video.mft", "log.csv", "config.txt"] {
        assert_eq!(std::fs::read(d.join("g1").join(f)).unwrap(), std::fs::read(d.join("g2").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn divergence_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    calibrated(d);
    ok(&kit_small(&["synth-ref", "--schedule", "left×7", "--profile", "c/profile.txt", "--out", "r"], d));
    let out = kit(&["guide", "--init", "s/video_000.mft", "--ref", "r/moft.mft", "--lr", "1e300", "--out", "g"], d);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn gradcheck_passes_for_seed_seven() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(&kit(&["gradcheck", "--seed", "7"], dir.path()));
    let err: f64 = text.split_whitespace().nth(4).unwrap().parse().unwrap();
    assert!(err < 1e-4, "{text}");
}

#[test]
fn fidelity_of_pan_against_its_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&kit(&["synth", "--out", "s", "--scenes", "1"], d));
    let same = ok(&kit(&["fidelity", "--video", "s/video_000.mft", "--manifest", "s/manifest.txt"], d));
    assert_eq!(same.trim(), "2.0000");
    let opposite = ok(&kit(
        &["fidelity", "--video", "s/video_000.mft", "--manifest", "s/manifest.txt", "--entry", "1", "--out", "f"],
        d,
    ));
    assert_eq!(opposite.trim(), "-2.0000");
    let files = ok(&kit(&["fidelity", "--generated", "f/generated.txt", "--reference", "f/generated.txt"], d));
    assert_eq!(files.trim(), "2.0000");
}

#[test]
fn thread_cap_keeps_outputs_and_rejects_zero() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    calibrated(d);
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_moft-kit"));
    cmd.args(["calibrate", "--manifest", "s/manifest.txt", "--out", "c1"]).current_dir(d);
    ok(&cmd.env("MOFT_THREADS", "1").output().unwrap());
    assert_eq!(std::fs::read(d.join("c/profile.txt")).unwrap(), std::fs::read(d.join("c1/profile.txt")).unwrap());
    let out = Command::new(env!("CARGO_BIN_EXE_moft-kit"))
        .args(["keys"])
        .env("MOFT_THREADS", "0")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}
