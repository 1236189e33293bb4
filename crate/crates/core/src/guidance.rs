//! Training-free latent optimization: motion loss against a reference
//! motion feature, point-drag loss on appearance features, masked gradient
//! clipping and the step-dependent loss schedule.

use crate::analysis::MotionChannelProfile;
use crate::error::{MoftError, Result};
use crate::moft::{content_removal, extract_moft_f64, synthesize_reference_moft, DirectionSchedule, Moft};
use crate::network::{FeatureNet, APPEARANCE_CHANNELS, FEATURE_CHANNELS};
use crate::synth::Displacement;
use crate::tensor::{LatentVideo, RegionMask, Scalar, Tensor4};

/// Divergence threshold on the per-step loss.
pub const DIVERGENCE_LOSS: f64 = 1e6;

/// Which losses the schedule activates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LossMode {
    /// Motion loss from step `T - 1` down to `t3`.
    #[default]
    Motion,
    /// Motion loss early, point loss late, overlapping between `t1` and `t2`.
    Composite,
    /// Point loss alone from `T - 1` down to `t3`.
    PointOnly,
}

impl std::str::FromStr for LossMode {
    type Err = MoftError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "motion" => Ok(LossMode::Motion),
            "composite" => Ok(LossMode::Composite),
            "point" | "point-only" => Ok(LossMode::PointOnly),
            _ => Err(MoftError::Config(format!("unknown loss mode {s:?}"))),
        }
    }
}

impl std::fmt::Display for LossMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossMode::Motion => "motion",
            LossMode::Composite => "composite",
            LossMode::PointOnly => "point",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceConfig {
    pub total_steps: usize,
    pub learning_rate: f64,
    pub inner_iters: usize,
    pub t1: usize,
    pub t2: usize,
    pub t3: usize,
    pub weight_motion: f64,
    pub weight_point: f64,
    /// Gradient clipping keeps only the first `n` frames; `None` keeps the
    /// mask's own frame set.
    pub clip_frames: Option<usize>,
    pub seed: u64,
    pub mode: LossMode,
    /// Apply the smoothing stage after every outer step.
    pub denoise: bool,
}

/// Point-loss weight for dragging. The drag loss is a plain sum over frames
/// while the motion loss is a mean, so under the default learning rate this
/// gives the drag term an effective step of 0.1.
pub const DRAG_POINT_WEIGHT: f64 = 2.5e-4;

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig {
            total_steps: 25,
            learning_rate: 400.0,
            inner_iters: 1,
            t1: 19,
            t2: 18,
            t3: 5,
            weight_motion: 1.0,
            weight_point: 1.0,
            clip_frames: Some(8),
            seed: 0,
            mode: LossMode::Motion,
            denoise: true,
        }
    }
}

impl GuidanceConfig {
    /// Defaults for point dragging: composite schedule, no frame clipping.
    pub fn drag() -> Self {
        GuidanceConfig {
            mode: LossMode::Composite,
            clip_frames: None,
            weight_point: DRAG_POINT_WEIGHT,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 {
            return Err(MoftError::Config("total steps must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(MoftError::Config(format!("learning rate {} must be >= 0", self.learning_rate)));
        }
        if self.inner_iters == 0 {
            return Err(MoftError::Config("inner iterations must be positive".into()));
        }
        if !(self.weight_motion >= 0.0 && self.weight_point >= 0.0) {
            return Err(MoftError::Config("loss weights must be nonnegative".into()));
        }
        let ordered = match self.mode {
            LossMode::Composite => self.total_steps >= self.t1 && self.t1 > self.t2 && self.t2 > self.t3,
            LossMode::Motion | LossMode::PointOnly => self.t3 < self.total_steps,
        };
        if !ordered {
            return Err(MoftError::Config(format!(
                "thresholds violate T >= t1 > t2 > t3 >= 0: T={} t1={} t2={} t3={}",
                self.total_steps, self.t1, self.t2, self.t3
            )));
        }
        Ok(())
    }
}

/// Loss weights `(w^c, w^p)` at step `t` (steps count down from `T - 1`).
pub fn loss_schedule(t: usize, cfg: &GuidanceConfig) -> Result<(f64, f64)> {
    cfg.validate()?;
    if t >= cfg.total_steps {
        return Err(MoftError::Argument(format!("step {t} outside 0..{}", cfg.total_steps)));
    }
    let (wc, wp) = (cfg.weight_motion, cfg.weight_point);
    Ok(match cfg.mode {
        LossMode::Composite if t >= cfg.t1 => (wc, 0.0),
        LossMode::Composite if t >= cfg.t2 => (wc, wp),
        LossMode::Composite if t >= cfg.t3 => (0.0, wp),
        LossMode::Motion if t >= cfg.t3 => (wc, 0.0),
        LossMode::PointOnly if t >= cfg.t3 => (0.0, wp),
        _ => (0.0, 0.0),
    })
}

/// A point trajectory to drag along, one (row, col) per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct DragSpec {
    pub trajectory: Vec<(f64, f64)>,
}

impl DragSpec {
    pub fn new(trajectory: Vec<(f64, f64)>) -> Result<Self> {
        if trajectory.len() < 2 {
            return Err(MoftError::Argument("drag trajectory needs at least two frames".into()));
        }
        Ok(DragSpec { trajectory })
    }

    /// Linear interpolation from `start` (frame 1) to `target` (frame F).
    pub fn linear(start: (f64, f64), target: (f64, f64), frames: usize) -> Result<Self> {
        if frames < 2 {
            return Err(MoftError::Argument("drag needs at least two frames".into()));
        }
        let n = (frames - 1) as f64;
        Self::new(
            (0..frames)
                .map(|f| {
                    let a = f as f64 / n;
                    (start.0 + a * (target.0 - start.0), start.1 + a * (target.1 - start.1))
                })
                .collect(),
        )
    }

    pub fn start(&self) -> (f64, f64) {
        self.trajectory[0]
    }

    pub fn target(&self) -> (f64, f64) {
        *self.trajectory.last().unwrap()
    }

    /// Frame-wise displacements of the trajectory as a direction schedule.
    pub fn schedule(&self) -> DirectionSchedule {
        DirectionSchedule {
            displacements: self
                .trajectory
                .windows(2)
                .map(|w| Displacement::new(w[1].1 - w[0].1, w[1].0 - w[0].0))
                .collect(),
        }
    }

    /// Reference motion feature that moves along the trajectory.
    pub fn reference_moft(&self, profile: &MotionChannelProfile, height: usize, width: usize) -> Result<Moft> {
        synthesize_reference_moft(&self.schedule(), profile, (self.trajectory.len(), height, width))
    }

    fn check(&self, frames: usize, height: usize, width: usize) -> Result<()> {
        if self.trajectory.len() != frames {
            return Err(MoftError::Argument(format!(
                "trajectory has {} points, video has {frames} frames",
                self.trajectory.len()
            )));
        }
        for (f, &(r, c)) in self.trajectory.iter().enumerate() {
            let inside = r >= 0.0 && c >= 0.0 && r <= (height - 1) as f64 && c <= (width - 1) as f64;
            if !inside {
                return Err(MoftError::Argument(format!(
                    "trajectory point {f} at ({r}, {c}) outside {height}x{width}"
                )));
            }
        }
        Ok(())
    }
}

fn check_mask<T: Scalar>(t: &Tensor4<T>, mask: &RegionMask) -> Result<usize> {
    if mask.height() != t.height() || mask.width() != t.width() {
        return Err(MoftError::Shape(format!(
            "mask {}x{} does not match {}x{}",
            mask.height(),
            mask.width(),
            t.height(),
            t.width()
        )));
    }
    match mask.count() {
        0 => Err(MoftError::Argument("empty region mask".into())),
        n => Ok(n),
    }
}

/// Per-position difference norms over the mask, in row-major mask order.
fn position_norms<T: Scalar>(a: &Tensor4<T>, b: &Tensor4<T>, mask: &RegionMask) -> Result<Vec<((usize, usize), f64)>> {
    if a.dims() != b.dims() {
        return Err(MoftError::Shape(format!("{} vs {}", a.dims(), b.dims())));
    }
    check_mask(a, mask)?;
    Ok(mask
        .positions()
        .map(|(r, c)| {
            let mut s = 0.0;
            for f in 0..a.frames() {
                for (x, y) in a.pixel(f, r, c).iter().zip(b.pixel(f, r, c)) {
                    let d = x.to_f64() - y.to_f64();
                    s += d * d;
                }
            }
            ((r, c), s.sqrt())
        })
        .collect())
}

/// Mean over masked positions of the L2 norm of the frames-by-channels
/// motion-feature difference.
pub fn motion_loss(moft: &Moft, reference: &Moft, mask: &RegionMask) -> Result<f64> {
    motion_loss_values(&moft.values, &reference.values, mask)
}

pub fn motion_loss_values<T: Scalar>(a: &Tensor4<T>, b: &Tensor4<T>, mask: &RegionMask) -> Result<f64> {
    let norms = position_norms(a, b, mask)?;
    Ok(norms.iter().map(|(_, n)| n).sum::<f64>() / norms.len() as f64)
}

/// Bilinear sample of all channels at fractional (row, col) of one frame,
/// with the four corner weights.
fn bilinear<T: Scalar>(t: &Tensor4<T>, frame: usize, p: (f64, f64)) -> (Vec<f64>, [((usize, usize), f64); 4]) {
    let (h, w) = (t.height(), t.width());
    let r0 = (p.0.floor() as usize).min(h - 1);
    let c0 = (p.1.floor() as usize).min(w - 1);
    let (r1, c1) = ((r0 + 1).min(h - 1), (c0 + 1).min(w - 1));
    let (fr, fc) = (p.0 - r0 as f64, p.1 - c0 as f64);
    let corners = [
        ((r0, c0), (1.0 - fr) * (1.0 - fc)),
        ((r0, c1), (1.0 - fr) * fc),
        ((r1, c0), fr * (1.0 - fc)),
        ((r1, c1), fr * fc),
    ];
    let mut v = vec![0.0; t.channels()];
    for &((r, c), wgt) in &corners {
        if wgt == 0.0 {
            continue;
        }
        for (o, x) in v.iter_mut().zip(t.pixel(frame, r, c)) {
            *o += wgt * x.to_f64();
        }
    }
    (v, corners)
}

/// Sum over frames 2..F of the distance between the bilinearly sampled
/// feature at the trajectory point and the (constant) frame-1 feature.
pub fn drag_loss<T: Scalar>(features: &Tensor4<T>, spec: &DragSpec) -> Result<f64> {
    Ok(drag_terms(features, spec)?.0)
}

/// Loss and per-frame unit residuals (zero where the residual vanishes).
fn drag_terms<T: Scalar>(features: &Tensor4<T>, spec: &DragSpec) -> Result<(f64, Vec<Vec<f64>>)> {
    spec.check(features.frames(), features.height(), features.width())?;
    let (anchor, _) = bilinear(features, 0, spec.trajectory[0]);
    let mut loss = 0.0;
    let mut units = vec![vec![0.0; features.channels()]];
    for (f, &p) in spec.trajectory.iter().enumerate().skip(1) {
        let (v, _) = bilinear(features, f, p);
        let diff: Vec<f64> = v.iter().zip(&anchor).map(|(a, b)| a - b).collect();
        let n = diff.iter().map(|d| d * d).sum::<f64>().sqrt();
        loss += n;
        units.push(if n > 0.0 { diff.iter().map(|d| d / n).collect() } else { vec![0.0; diff.len()] });
    }
    Ok((loss, units))
}

/// Zeroes the gradient outside the mask region and frame set.
pub fn masked_clip(grad: &Tensor4<f64>, mask: &RegionMask) -> Result<Tensor4<f64>> {
    let d = grad.dims();
    if mask.height() != d.height || mask.width() != d.width || mask.num_frames() != d.frames {
        return Err(MoftError::Shape(format!(
            "mask {}x{} with {} frames does not match {d}",
            mask.height(),
            mask.width(),
            mask.num_frames()
        )));
    }
    let mut out = grad.clone();
    let data = out.as_mut_slice();
    for f in 0..d.frames {
        let active = mask.frame_active(f);
        for r in 0..d.height {
            for c in 0..d.width {
                if !(active && mask.contains(r, c)) {
                    let o = d.offset(f, r, c, 0);
                    data[o..o + d.channels].iter_mut().for_each(|v| *v = 0.0);
                }
            }
        }
    }
    Ok(out)
}

/// Motion loss of the latent `z` and its gradient with respect to `z`.
pub fn grad_motion_loss(
    net: &FeatureNet,
    z: &Tensor4<f64>,
    reference: &Moft,
    mask: &RegionMask,
) -> Result<(f64, Tensor4<f64>)> {
    let features = net.features_f64(z);
    let values = reference.values.cast::<f64>()?;
    motion_loss_and_grad(net, z, &features, &values, &reference.channel_order, mask)
}

fn motion_loss_and_grad(
    net: &FeatureNet,
    z: &Tensor4<f64>,
    features: &Tensor4<f64>,
    reference: &Tensor4<f64>,
    channels: &[usize],
    mask: &RegionMask,
) -> Result<(f64, Tensor4<f64>)> {
    let moft = extract_moft_f64(features, channels)?;
    let norms = position_norms(&moft, reference, mask)?;
    let n = norms.len() as f64;
    let loss = norms.iter().map(|(_, v)| v).sum::<f64>() / n;

    let md = moft.dims();
    let mut g_moft = Tensor4::<f64>::zeros(md)?;
    {
        let out = g_moft.as_mut_slice();
        for &((r, c), norm) in &norms {
            // References are stored in single precision; residuals at that
            // resolution count as exact zeros.
            let scale: f64 = (0..md.frames)
                .flat_map(|f| reference.pixel(f, r, c).iter())
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            if norm <= 2.0 * f32::EPSILON as f64 * scale {
                continue;
            }
            for f in 0..md.frames {
                let o = md.offset(f, r, c, 0);
                for k in 0..md.channels {
                    out[o + k] = (moft.as_slice()[o + k] - reference.as_slice()[o + k]) / (n * norm);
                }
            }
        }
    }
    // Content removal is an orthogonal projection, hence self-adjoint.
    let g_sel = content_removal(&g_moft);
    let fd = features.dims();
    let mut g_feat = vec![0.0; fd.len()];
    for (p, px) in g_sel.as_slice().chunks_exact(channels.len()).enumerate() {
        for (&ch, &g) in channels.iter().zip(px) {
            g_feat[p * FEATURE_CHANNELS + ch] += g;
        }
    }
    let g_feat = Tensor4::new(fd, g_feat)?;
    Ok((loss, net.backward(z, &g_feat)))
}

/// Drag loss on the appearance features of `z` and its gradient.
pub fn grad_drag_loss(net: &FeatureNet, z: &Tensor4<f64>, spec: &DragSpec) -> Result<(f64, Tensor4<f64>)> {
    let dift = net.dift_f64(z);
    drag_loss_and_grad(net, z, &dift, spec)
}

fn drag_loss_and_grad(
    net: &FeatureNet,
    z: &Tensor4<f64>,
    dift: &Tensor4<f64>,
    spec: &DragSpec,
) -> Result<(f64, Tensor4<f64>)> {
    let (loss, units) = drag_terms(dift, spec)?;
    let dd = dift.dims();
    let mut g = vec![0.0; dd.len()];
    for (f, unit) in units.iter().enumerate().skip(1) {
        let (_, corners) = bilinear(dift, f, spec.trajectory[f]);
        for &((r, c), wgt) in &corners {
            if wgt == 0.0 {
                continue;
            }
            let o = dd.offset(f, r, c, 0);
            for (k, u) in unit.iter().enumerate() {
                g[o + k] += wgt * u;
            }
        }
    }
    debug_assert_eq!(dd.channels, APPEARANCE_CHANNELS);
    Ok((loss, net.backward_dift(z, &Tensor4::new(dd, g)?)))
}

/// The stand-in denoiser: `z <- 0.9 z + 0.1 box3x3(z)` per frame and
/// channel, with clamped borders.
pub fn denoise_stage(z: &Tensor4<f64>) -> Tensor4<f64> {
    let d = z.dims();
    let src = z.as_slice();
    let mut out = vec![0.0; d.len()];
    for f in 0..d.frames {
        for r in 0..d.height {
            for c in 0..d.width {
                let o = d.offset(f, r, c, 0);
                for ch in 0..d.channels {
                    let mut s = 0.0;
                    for dr in [-1isize, 0, 1] {
                        let rr = (r as isize + dr).clamp(0, d.height as isize - 1) as usize;
                        for dc in [-1isize, 0, 1] {
                            let cc = (c as isize + dc).clamp(0, d.width as isize - 1) as usize;
                            s += src[d.offset(f, rr, cc, ch)];
                        }
                    }
                    out[o + ch] = 0.9 * src[o + ch] + 0.1 * (s / 9.0);
                }
            }
        }
    }
    Tensor4::from_vec_unchecked(d, out)
}

/// One logged outer step. Losses are measured before that step's updates;
/// a loss without its input (no reference, no drag) is `NaN`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub weight_motion: f64,
    pub weight_point: f64,
    pub loss: f64,
    pub motion_loss: f64,
    pub point_loss: f64,
}

/// What a guidance observer sees after each inner update, before the
/// denoiser stage.
pub struct UpdateEvent<'a> {
    pub step: usize,
    pub inner: usize,
    /// The clipped update `eta * g_clip` subtracted from the latent.
    pub update: &'a Tensor4<f64>,
}

#[derive(Debug, Clone)]
pub struct GuidanceOutcome {
    pub latent: LatentVideo,
    pub log: Vec<StepLog>,
}

impl GuidanceOutcome {
    pub fn log_csv(&self) -> String {
        let mut s = String::from("step,w_c,w_p,loss,loss_motion,loss_point\n");
        for l in &self.log {
            s.push_str(&format!(
                "{},{},{},{:.9e},{:.9e},{:.9e}\n",
                l.step, l.weight_motion, l.weight_point, l.loss, l.motion_loss, l.point_loss
            ));
        }
        s
    }

    pub fn log_at(&self, step: usize) -> Option<&StepLog> {
        self.log.iter().find(|l| l.step == step)
    }
}

/// Latent optimization over `T` outer steps; see [`run_guidance_observed`].
pub fn run_guidance(
    net: &FeatureNet,
    z_init: &LatentVideo,
    reference: Option<&Moft>,
    mask: &RegionMask,
    drag: Option<&DragSpec>,
    cfg: &GuidanceConfig,
) -> Result<GuidanceOutcome> {
    run_guidance_observed(net, z_init, reference, mask, drag, cfg, |_| {})
}

/// For `t = T-1` down to `0`: evaluate the scheduled loss, apply
/// `inner_iters` clipped gradient updates, then the denoiser stage.
pub fn run_guidance_observed(
    net: &FeatureNet,
    z_init: &LatentVideo,
    reference: Option<&Moft>,
    mask: &RegionMask,
    drag: Option<&DragSpec>,
    cfg: &GuidanceConfig,
    mut observer: impl FnMut(&UpdateEvent<'_>),
) -> Result<GuidanceOutcome> {
    cfg.validate()?;
    let dims = z_init.dims();
    if mask.num_frames() != dims.frames {
        return Err(MoftError::Shape(format!(
            "mask has {} frames, latent has {}",
            mask.num_frames(),
            dims.frames
        )));
    }
    check_mask(z_init.values(), mask)?;
    let clip_mask = match cfg.clip_frames {
        Some(n) => mask.clone().with_first_frames(n),
        None => mask.clone(),
    };
    let reference = match reference {
        Some(m) => {
            let r = m.values.cast::<f64>()?;
            let rd = r.dims();
            if (rd.frames, rd.height, rd.width) != (dims.frames, dims.height, dims.width) {
                return Err(MoftError::Shape(format!("reference {rd} does not match latent {dims}")));
            }
            if m.channel_order.iter().any(|&c| c >= FEATURE_CHANNELS) || m.channel_order.len() != rd.channels {
                return Err(MoftError::ProfileMismatch("reference channel order does not fit the network".into()));
            }
            Some((r, m.channel_order.clone()))
        }
        None => None,
    };
    if let Some(spec) = drag {
        spec.check(dims.frames, dims.height, dims.width)?;
    }

    let mut z = z_init.values().clone();
    let mut log = Vec::with_capacity(cfg.total_steps);
    for t in (0..cfg.total_steps).rev() {
        let (wc, wp) = loss_schedule(t, cfg)?;
        if wc > 0.0 && reference.is_none() {
            return Err(MoftError::Argument("motion loss scheduled without a reference".into()));
        }
        if wp > 0.0 && drag.is_none() {
            return Err(MoftError::Argument("point loss scheduled without a drag spec".into()));
        }
        for inner in 0..cfg.inner_iters {
            let need_grad = (wc > 0.0 || wp > 0.0) && cfg.learning_rate > 0.0;
            let features = net.features_f64(&z);
            let mut grad = Tensor4::<f64>::zeros(dims)?;
            let mut lc = f64::NAN;
            let mut lp = f64::NAN;
            if let Some((r, ch)) = &reference {
                let (l, g) = motion_loss_and_grad(net, &z, &features, r, ch, mask).map_err(|e| diverged(e, t))?;
                lc = l;
                if need_grad && wc > 0.0 {
                    axpy(&mut grad, wc, &g);
                }
            }
            if let Some(spec) = drag {
                let dift = features.select_channels(&net.appearance_channel_indices())?;
                let (l, g) = drag_loss_and_grad(net, &z, &dift, spec).map_err(|e| diverged(e, t))?;
                lp = l;
                if need_grad && wp > 0.0 {
                    axpy(&mut grad, wp, &g);
                }
            }
            let loss = if wc > 0.0 { wc * lc } else { 0.0 } + if wp > 0.0 { wp * lp } else { 0.0 };
            let probe = if lc.is_nan() { 0.0 } else { lc } + if lp.is_nan() { 0.0 } else { lp };
            if !loss.is_finite() || loss > DIVERGENCE_LOSS || !probe.is_finite() || probe > DIVERGENCE_LOSS {
                return Err(MoftError::Divergence {
                    step: t,
                    loss: if loss.is_finite() { loss.max(probe) } else { loss },
                });
            }
            if inner == 0 {
                log.push(StepLog {
                    step: t,
                    weight_motion: wc,
                    weight_point: wp,
                    loss,
                    motion_loss: lc,
                    point_loss: lp,
                });
            }
            let mut update = masked_clip(&grad, &clip_mask)?;
            update.as_mut_slice().iter_mut().for_each(|v| *v *= cfg.learning_rate);
            observer(&UpdateEvent {
                step: t,
                inner,
                update: &update,
            });
            for (v, u) in z.as_mut_slice().iter_mut().zip(update.as_slice()) {
                *v -= u;
            }
            if let Some(i) = z.as_slice().iter().position(|v| !v.is_finite()) {
                return Err(MoftError::Divergence {
                    step: t,
                    loss: z.as_slice()[i],
                });
            }
        }
        if cfg.denoise {
            z = denoise_stage(&z);
        }
    }
    Ok(GuidanceOutcome {
        latent: LatentVideo::new(z, z_init.seed),
        log,
    })
}

/// Non-finite intermediates during a run mean the latent has blown up.
fn diverged(e: MoftError, step: usize) -> MoftError {
    match e {
        MoftError::NonFinite { .. } => MoftError::Divergence { step, loss: f64::NAN },
        other => other,
    }
}

fn axpy(acc: &mut Tensor4<f64>, a: f64, x: &Tensor4<f64>) {
    for (o, v) in acc.as_mut_slice().iter_mut().zip(x.as_slice()) {
        *o += a * v;
    }
}

/// Worst relative disagreement between analytic and central-difference
/// gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub coordinates: usize,
}

/// Relative error `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `grad` against central differences of `loss` with step `h` at
/// the given flat coordinates of `z`.
pub fn check_gradient(
    z: &Tensor4<f64>,
    grad: &Tensor4<f64>,
    coords: &[usize],
    h: f64,
    floor: f64,
    mut loss: impl FnMut(&Tensor4<f64>) -> Result<f64>,
) -> Result<GradCheck> {
    let mut worst: f64 = 0.0;
    let mut probe = z.clone();
    for &i in coords {
        let x = z.as_slice()[i];
        probe.as_mut_slice()[i] = x + h;
        let up = loss(&probe)?;
        probe.as_mut_slice()[i] = x - h;
        let down = loss(&probe)?;
        probe.as_mut_slice()[i] = x;
        worst = worst.max(relative_error(grad.as_slice()[i], (up - down) / (2.0 * h), floor));
    }
    Ok(GradCheck {
        max_rel_error: worst,
        coordinates: coords.len(),
    })
}
