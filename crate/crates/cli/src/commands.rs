use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use moft_core::analysis::{channel_trace, region_trace};
use moft_core::guidance::check_gradient;
use moft_core::metrics::{fidelity_display, grid_seeds};
use moft_core::synth::derive_seed;
use moft_core::*;
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::*;

fn parse_point(flag: &str, s: &str) -> Result<(f64, f64)> {
    let bad = || anyhow!(Usage(format!("--{flag} expects row,col, got {s:?}")));
    let (r, c) = s.split_once(',').ok_or_else(bad)?;
    let r: f64 = r.trim().parse().map_err(|_| bad())?;
    let c: f64 = c.trim().parse().map_err(|_| bad())?;
    if !(r.is_finite() && c.is_finite()) {
        return Err(bad());
    }
    Ok((r, c))
}

fn pixel(flag: &str, s: &str) -> Result<(usize, usize)> {
    let (r, c) = parse_point(flag, s)?;
    if r < 0.0 || c < 0.0 || r.fract() != 0.0 || c.fract() != 0.0 {
        bail!(Usage(format!("--{flag} expects whole-pixel row,col, got {s:?}")));
    }
    Ok((r as usize, c as usize))
}

fn prepare_out(dir: &Path, cfg: &RunConfig) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    cfg.save(dir)
}

fn load_latent(path: &Path) -> Result<LatentVideo> {
    Ok(LatentVideo::from_feature_tensor(&load_tensor(path)?, 0))
}

fn save_latent(z: &LatentVideo, path: &Path) -> Result<()> {
    Ok(save_tensor(&z.to_feature_tensor()?, path)?)
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("sidecar")
}

fn load_moft(path: &Path) -> Result<Moft> {
    let values = load_tensor(path)?;
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).with_context(|| format!("reading sidecar {}", side.display()))?;
    let (profile_id, channel_order) = Moft::parse_sidecar(&text)?;
    if channel_order.len() != values.channels() {
        bail!(MoftError::ProfileMismatch(format!(
            "sidecar lists {} channels, tensor has {}",
            channel_order.len(),
            values.channels()
        )));
    }
    Ok(Moft {
        values,
        profile_id,
        channel_order,
    })
}

fn save_moft(m: &Moft, path: &Path) -> Result<()> {
    save_tensor(&m.values, path)?;
    let side = sidecar_path(path);
    fs::write(&side, m.sidecar()).with_context(|| format!("writing {}", side.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn network(cfg: &RunConfig, latent_channels: usize) -> Result<FeatureNet> {
    Ok(FeatureNet::new(cfg.get("net_seed")?, latent_channels))
}

fn scene(cfg: &RunConfig) -> Result<SceneSpec> {
    Ok(SceneSpec {
        seed: cfg.get("seed")?,
        height: cfg.get("height")?,
        width: cfg.get("width")?,
        octaves: cfg.get("octaves")?,
        frames: cfg.get("frames")?,
        channels: cfg.get("latent_channels")?,
    })
}

fn guidance_config(cfg: &RunConfig) -> Result<GuidanceConfig> {
    Ok(GuidanceConfig {
        total_steps: cfg.get("steps")?,
        learning_rate: cfg.get("lr")?,
        inner_iters: cfg.get("inner")?,
        t1: cfg.get("t1")?,
        t2: cfg.get("t2")?,
        t3: cfg.get("t3")?,
        weight_motion: cfg.get("w_c")?,
        weight_point: cfg.get("w_p")?,
        clip_frames: cfg.clip_frames()?,
        seed: cfg.get("seed")?,
        mode: cfg.get("mode")?,
        denoise: cfg.get("denoise")?,
    })
}

/// One manifest line: file, label, then the frame-wise displacements.
pub struct ManifestEntry {
    pub path: PathBuf,
    pub pattern: MotionPattern,
}

fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let mut tok = line.split_whitespace();
        let Some(file) = tok.next() else { continue };
        let label = tok
            .next()
            .ok_or_else(|| MoftError::Format(format!("manifest line {}: missing label", n + 1)))?;
        let mut displacements = Vec::new();
        for pair in tok {
            let d = DirectionSchedule::parse(pair)
                .map_err(|_| MoftError::Format(format!("manifest line {}: bad pair {pair:?}", n + 1)))?;
            displacements.extend(d.displacements);
        }
        out.push(ManifestEntry {
            path: base.join(file),
            pattern: MotionPattern::new(label, displacements),
        });
    }
    if out.is_empty() {
        bail!(MoftError::Format(format!("manifest {} lists no videos", path.display())));
    }
    Ok(out)
}

fn manifest_line(file: &str, pattern: &MotionPattern) -> String {
    let mut s = format!("{file} {}", pattern.label);
    for d in &pattern.displacements {
        s.push_str(&format!(" {},{}", d.x, d.y));
    }
    s.push('\n');
    s
}

fn parse_pattern(spec: &str, frames: usize) -> Result<MotionPattern> {
    let (label, schedule) = match spec.split_once(':') {
        Some((l, s)) => (l.trim(), s.trim()),
        None => (spec.trim(), spec.trim()),
    };
    if label.is_empty() || label.contains(char::is_whitespace) {
        bail!(Usage(format!("pattern label {label:?} must be a single word")));
    }
    if let Some(d) = Displacement::named(schedule) {
        return Ok(MotionPattern::constant(label, d, frames));
    }
    Ok(MotionPattern::new(label, DirectionSchedule::parse(schedule)?.displacements))
}

pub fn synth(mut cfg: RunConfig, a: SynthArgs) -> Result<()> {
    if let Some(v) = a.scenes {
        cfg.set("scenes", v)?;
    }
    if let Some(v) = a.seed {
        cfg.set("seed", v)?;
    }
    if let Some(v) = a.frames {
        cfg.set("frames", v)?;
    }
    let geometry = scene(&cfg)?;
    let scenes: usize = cfg.get("scenes")?;
    let patterns = if a.patterns.is_empty() {
        cardinal_patterns(geometry.frames)
    } else {
        a.patterns
            .iter()
            .map(|p| parse_pattern(p, geometry.frames))
            .collect::<Result<Vec<_>>>()?
    };
    prepare_out(&a.out, &cfg)?;
    // Same per-scene seeds as the library calibration set.
    let jobs: Vec<(usize, usize)> = (0..patterns.len()).flat_map(|d| (0..scenes).map(move |s| (d, s))).collect();
    let videos = jobs
        .par_iter()
        .map(|&(d, s)| {
            let sc = geometry.with_seed(derive_seed(geometry.seed, (d * 100_003 + s) as u64));
            generate_panning_video(&sc, &patterns[d])
        })
        .collect::<moft_core::Result<Vec<_>>>()?;
    let mut manifest = String::new();
    for (i, (&(d, _), z)) in jobs.iter().zip(&videos).enumerate() {
        let file = format!("video_{i:03}.mft");
        save_latent(z, &a.out.join(&file))?;
        manifest.push_str(&manifest_line(&file, &patterns[d]));
    }
    write(&a.out.join("manifest.txt"), &manifest)?;
    println!("wrote {} videos to {}", videos.len(), a.out.display());
    Ok(())
}

pub fn calibrate(mut cfg: RunConfig, a: CalibrateArgs) -> Result<()> {
    if let Some(q) = a.q {
        cfg.set("q", q)?;
    }
    let q: f64 = cfg.get("q")?;
    let entries = read_manifest(&a.manifest)?;
    let latents = entries
        .iter()
        .map(|e| load_latent(&e.path))
        .collect::<Result<Vec<_>>>()?;
    let net = network(&cfg, latents[0].dims().channels)?;
    let samples = entries
        .par_iter()
        .zip(&latents)
        .map(|(e, z)| {
            Ok(CalibrationSample {
                features: net.features(z)?,
                label: e.pattern.label.clone(),
                pattern: e.pattern.clone(),
            })
        })
        .collect::<moft_core::Result<Vec<_>>>()?;
    let (pca, profile) = calibrate_profile(&samples, q)?;
    prepare_out(&a.out, &cfg)?;
    profile.save(a.out.join("profile.txt"))?;
    let mut csv = String::from("channel,pc1,pc2\n");
    for ch in 0..pca.dim() {
        csv.push_str(&format!("{ch},{:.9e},{:.9e}\n", pca.components[0][ch], pca.components[1][ch]));
    }
    write(&a.out.join("pca.csv"), &csv)?;
    let kept: Vec<String> = profile.channels.iter().map(|c| c.index.to_string()).collect();
    println!(
        "{} videos; kept {} of {} channels [{}]; first component mass {:.4}",
        samples.len(),
        kept.len(),
        profile.dim,
        kept.join(","),
        profile.mass_fraction(&pca.components[0])
    );
    Ok(())
}

pub fn extract(cfg: RunConfig, a: ExtractArgs) -> Result<()> {
    let z = load_latent(&a.video)?;
    let profile = MotionChannelProfile::load(&a.profile)?;
    let features = network(&cfg, z.dims().channels)?.features(&z)?;
    let m = extract_moft(&features, &profile)?;
    prepare_out(&a.out, &cfg)?;
    save_moft(&m, &a.out.join("moft.mft"))?;
    println!("motion feature {}; max |frame sum| {:.3e}", m.dims(), m.max_frame_sum());
    Ok(())
}

pub fn trace(cfg: RunConfig, a: TraceArgs) -> Result<()> {
    let z = load_latent(&a.video)?;
    let features = network(&cfg, z.dims().channels)?.features(&z)?;
    let values = match (&a.point, &a.mask) {
        (Some(p), None) => channel_trace(&features, a.channel, pixel("point", p)?)?,
        (None, Some(m)) => region_trace(&features, a.channel, &RegionMask::load_pgm(m, z.dims().frames)?)?,
        _ => bail!(Usage("trace needs exactly one of --point or --mask".into())),
    };
    prepare_out(&a.out, &cfg)?;
    let mut csv = String::from("frame,value\n");
    for (f, v) in values.iter().enumerate() {
        csv.push_str(&format!("{},{v:.9e}\n", f + 1));
    }
    write(&a.out.join("trace.csv"), &csv)
}

pub fn heatmap(cfg: RunConfig, a: HeatmapArgs) -> Result<()> {
    let reference = load_moft(&a.reference)?;
    let target = load_moft(&a.target)?;
    let h = similarity_heatmap(&reference, pixel("point", &a.point)?, &target)?;
    prepare_out(&a.out, &cfg)?;
    h.save_pgm(a.out.join("heatmap.pgm"))?;
    write(&a.out.join("heatmap.csv"), &h.to_csv())?;
    let (r, c) = h.argmax();
    println!("peak at {r},{c} (similarity {:.4})", h.get(r, c));
    Ok(())
}

pub fn synth_ref(mut cfg: RunConfig, a: SynthRefArgs) -> Result<()> {
    let schedule = DirectionSchedule::parse(&a.schedule)?;
    cfg.set("frames", schedule.displacements.len() + 1)?;
    let profile = MotionChannelProfile::load(&a.profile)?;
    let shape = (cfg.get("frames")?, cfg.get("height")?, cfg.get("width")?);
    let m = synthesize_reference_moft(&schedule, &profile, shape)?;
    prepare_out(&a.out, &cfg)?;
    save_moft(&m, &a.out.join("moft.mft"))?;
    println!("reference motion feature {}", m.dims());
    Ok(())
}

fn load_mask(path: Option<&PathBuf>, dims: Dims4) -> Result<RegionMask> {
    match path {
        Some(p) => Ok(RegionMask::load_pgm(p, dims.frames)?),
        None => Ok(RegionMask::full(dims.height, dims.width, dims.frames)),
    }
}

fn write_outcome(out: &GuidanceOutcome, dir: &Path, log: Option<&PathBuf>) -> Result<()> {
    save_latent(&out.latent, &dir.join("video.mft"))?;
    let log_path = log.cloned().unwrap_or_else(|| dir.join("log.csv"));
    write(&log_path, &out.log_csv())
}

pub fn guide(mut cfg: RunConfig, a: GuideArgs) -> Result<()> {
    if let Some(v) = a.steps {
        cfg.set("steps", v)?;
    }
    if let Some(v) = a.lr {
        cfg.set("lr", v)?;
    }
    if let Some(v) = &a.clip_frames {
        cfg.set("clip_frames", v)?;
    }
    let gcfg = guidance_config(&cfg)?;
    let z = load_latent(&a.init)?;
    let d = z.dims();
    let reference = match (&a.reference, &a.schedule, &a.profile) {
        (Some(p), None, _) => load_moft(p)?,
        (None, Some(s), Some(profile)) => synthesize_reference_moft(
            &DirectionSchedule::parse(s)?,
            &MotionChannelProfile::load(profile)?,
            (d.frames, d.height, d.width),
        )?,
        _ => bail!(Usage("guide needs --ref, or --schedule with --profile".into())),
    };
    let mask = load_mask(a.mask.as_ref(), d)?;
    let net = network(&cfg, d.channels)?;
    let out = run_guidance(&net, &z, Some(&reference), &mask, None, &gcfg)?;
    prepare_out(&a.out, &cfg)?;
    write_outcome(&out, &a.out, a.log.as_ref())?;
    let first = out.log.first().map(|l| l.motion_loss).unwrap_or(f64::NAN);
    let last = motion_loss(&extract_moft(&net.features(&out.latent)?, &reference_profile(&reference))?, &reference, &mask)?;
    println!("motion loss {first:.6} -> {last:.6}");
    Ok(())
}

/// A profile carrying only the channel order of `m`, enough to extract a
/// comparable motion feature.
fn reference_profile(m: &Moft) -> MotionChannelProfile {
    MotionChannelProfile {
        dim: FEATURE_CHANNELS,
        fraction: m.channel_order.len() as f64 / FEATURE_CHANNELS as f64,
        channels: m
            .channel_order
            .iter()
            .map(|&index| ChannelEntry {
                index,
                loading: 0.0,
                stat_min: 0.0,
                stat_max: 0.0,
                axis: None,
                slope: None,
            })
            .collect(),
    }
}

fn capsule(dims: Dims4, start: (f64, f64), target: (f64, f64), radius: f64) -> RegionMask {
    RegionMask::from_fn(dims.height, dims.width, dims.frames, |r, c| {
        let (pr, pc) = (r as f64 - start.0, c as f64 - start.1);
        let (ar, ac) = (target.0 - start.0, target.1 - start.1);
        let len2 = ar * ar + ac * ac;
        let s = if len2 > 0.0 { ((pr * ar + pc * ac) / len2).clamp(0.0, 1.0) } else { 0.0 };
        (pr - s * ar).hypot(pc - s * ac) <= radius
    })
}

pub fn drag(mut cfg: RunConfig, a: DragArgs) -> Result<()> {
    for (key, v) in [("t1", a.t1), ("t2", a.t2), ("t3", a.t3), ("steps", a.steps)] {
        if let Some(v) = v {
            cfg.set(key, v)?;
        }
    }
    if let Some(v) = a.lr {
        cfg.set("lr", v)?;
    }
    let gcfg = guidance_config(&cfg)?;
    let z = load_latent(&a.init)?;
    let d = z.dims();
    let (start, target) = (parse_point("start", &a.start)?, parse_point("target", &a.target)?);
    let spec = DragSpec::linear(start, target, d.frames)?;
    let reference = match (gcfg.mode, &a.profile) {
        (LossMode::PointOnly, _) => None,
        (_, Some(p)) => Some(spec.reference_moft(&MotionChannelProfile::load(p)?, d.height, d.width)?),
        (_, None) => bail!(Usage("drag needs --profile unless mode=point".into())),
    };
    let mask = match &a.mask {
        Some(p) => RegionMask::load_pgm(p, d.frames)?,
        None => capsule(d, start, target, cfg.get("drag_radius")?),
    };
    let net = network(&cfg, d.channels)?;
    let out = run_guidance(&net, &z, reference.as_ref(), &mask, Some(&spec), &gcfg)?;
    prepare_out(&a.out, &cfg)?;
    write_outcome(&out, &a.out, a.log.as_ref())?;
    let tracked = track(&out.latent, &[start])?;
    tracked.save(a.out.join("track.txt"))?;
    let goal = Tracklet::new(spec.trajectory.iter().map(|&(r, c)| (c, r)).collect());
    let dist = mean_distance(&tracked.tracklets[0], &goal, (d.height, d.width))?;
    println!("mean distance {dist:.4}");
    Ok(())
}

fn manifest_tracklets(entry: &ManifestEntry, seeds: &[(f64, f64)]) -> TrackletSet {
    let positions = entry.pattern.positions();
    TrackletSet::new(
        seeds
            .iter()
            .map(|&(r, c)| Tracklet::new(positions.iter().map(|p| (c + p.x, r + p.y)).collect()))
            .collect(),
    )
}

pub fn fidelity(cfg: RunConfig, a: FidelityArgs) -> Result<()> {
    let (generated, seeds) = match (&a.generated, &a.video) {
        (Some(p), None) => (TrackletSet::load(p)?, Vec::new()),
        (None, Some(v)) => {
            let z = load_latent(v)?;
            let d = z.dims();
            let seeds = grid_seeds(d.height, d.width, cfg.get("grid_step")?, cfg.get("grid_margin")?);
            (track(&z, &seeds)?, seeds)
        }
        _ => bail!(Usage("fidelity needs --generated or --video".into())),
    };
    let reference = match (&a.reference, &a.manifest, &a.video) {
        (Some(p), None, _) => TrackletSet::load(p)?,
        (None, Some(m), Some(v)) => {
            let entries = read_manifest(m)?;
            let i = match a.entry {
                Some(i) => i,
                None => entries.iter().position(|e| e.path.file_name() == v.file_name()).unwrap_or(0),
            };
            let entry = entries
                .get(i)
                .ok_or_else(|| anyhow!(Usage(format!("--entry {i} beyond {} manifest lines", entries.len()))))?;
            manifest_tracklets(entry, &seeds)
        }
        _ => bail!(Usage("fidelity needs --reference, or --manifest with --video".into())),
    };
    let score = motion_fidelity(&generated, &reference)?;
    if let Some(dir) = &a.out {
        prepare_out(dir, &cfg)?;
        generated.save(dir.join("generated.txt"))?;
        reference.save(dir.join("reference.txt"))?;
    }
    if a.display {
        println!("{:.4}", fidelity_display(score));
    } else {
        println!("{score:.4}");
    }
    Ok(())
}

/// Uniform values in [0, 1) from a seeded counter.
fn uniform_tensor(dims: Dims4, seed: u64) -> Result<Tensor4<f64>> {
    let mut i = 0u64;
    Ok(Tensor4::from_fn(dims, |_, _, _, _| {
        i += 1;
        (derive_seed(seed, i) >> 11) as f64 / (1u64 << 53) as f64
    })?)
}

/// Seeded coordinates among those with a non-negligible gradient.
fn live_coords(g: &Tensor4<f64>, n: usize, seed: u64) -> Vec<usize> {
    let scale = g.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let live: Vec<usize> = (0..g.as_slice().len()).filter(|&i| g.as_slice()[i].abs() > 1e-2 * scale).collect();
    if live.is_empty() {
        return Vec::new();
    }
    (0..n as u64).map(|k| live[(derive_seed(seed, k) % live.len() as u64) as usize]).collect()
}

pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

pub fn gradcheck(mut cfg: RunConfig, a: GradcheckArgs) -> Result<()> {
    if let Some(s) = a.seed {
        cfg.set("seed", s)?;
    }
    let seed: u64 = cfg.get("seed")?;
    let points: usize = cfg.get("grad_points")?;
    let h: f64 = cfg.get("grad_step")?;
    let net = network(&cfg, cfg.get("latent_channels")?)?;
    let (id, channels) = match &a.profile {
        Some(p) => {
            let profile = MotionChannelProfile::load(p)?;
            (profile.id(), profile.channel_indices())
        }
        None => ("network".to_string(), net.motion_channel_indices()),
    };
    let dims = Dims4::new(8, 12, 12, net.latent_channels());
    let mask = RegionMask::from_fn(12, 12, 8, |r, c| (2..10).contains(&r) && (3..11).contains(&c));
    let z = uniform_tensor(dims, derive_seed(seed, 1))?;
    let reference = Moft {
        values: uniform_tensor(dims.with_channels(channels.len()), derive_seed(seed, 2))?.cast()?,
        profile_id: id,
        channel_order: channels,
    };
    let (_, g) = grad_motion_loss(&net, &z, &reference, &mask)?;
    let motion = check_gradient(&z, &g, &live_coords(&g, points, derive_seed(seed, 3)), h, 0.0, |zz| {
        Ok(grad_motion_loss(&net, zz, &reference, &mask)?.0)
    })?;
    let spec = DragSpec::linear((3.4, 2.7), (8.2, 9.6), dims.frames)?;
    let (_, g) = grad_drag_loss(&net, &z, &spec)?;
    let point = check_gradient(&z, &g, &live_coords(&g, points, derive_seed(seed, 4)), h, 0.0, |zz| {
        Ok(grad_drag_loss(&net, zz, &spec)?.0)
    })?;
    let worst = motion.max_rel_error.max(point.max_rel_error);
    println!(
        "max relative gradient error {worst:.3e} (motion {:.3e}, drag {:.3e}, {} coordinates)",
        motion.max_rel_error,
        point.max_rel_error,
        motion.coordinates + point.coordinates
    );
    if !(worst < GRADCHECK_TOLERANCE) {
        bail!(MoftError::Range(format!("gradient error {worst:.3e} not below {GRADCHECK_TOLERANCE:e}")));
    }
    Ok(())
}
