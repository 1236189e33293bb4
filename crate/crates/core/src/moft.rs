//! Content-correlation removal, motion-feature extraction and reference
//! motion-feature synthesis.

use crate::analysis::MotionChannelProfile;
use crate::error::{MoftError, Result};
use crate::synth::Displacement;
use crate::tensor::{frame_mean_f64, Dims4, FeatureTensor, Scalar, Tensor4};

/// Subtracts the per-location, per-channel mean over frames.
///
/// A single-frame input yields all zeros.
pub fn content_removal<T: Scalar>(t: &Tensor4<T>) -> Tensor4<T> {
    let mean = frame_mean_f64(t);
    let n = mean.len();
    let data = t
        .as_slice()
        .iter()
        .enumerate()
        .map(|(i, v)| T::from_f64(v.to_f64() - mean[i % n]))
        .collect();
    Tensor4::from_vec_unchecked(t.dims(), data)
}

/// A motion feature: content-removed features restricted to the motion
/// channels of a profile, in profile order.
#[derive(Debug, Clone, PartialEq)]
pub struct Moft {
    pub values: FeatureTensor,
    /// Identifier of the profile that selected the channels.
    pub profile_id: String,
    /// Source channel index of each Moft channel.
    pub channel_order: Vec<usize>,
}

impl Moft {
    pub fn dims(&self) -> Dims4 {
        self.values.dims()
    }

    /// Largest |sum over frames| of any (row, col, channel).
    pub fn max_frame_sum(&self) -> f64 {
        frame_sums(&self.values).into_iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    /// One-line sidecar text recording the profile and channel order.
    pub fn sidecar(&self) -> String {
        let order: Vec<String> = self.channel_order.iter().map(|c| c.to_string()).collect();
        format!("profile={} channels={}\n", self.profile_id, order.join(","))
    }

    pub fn parse_sidecar(text: &str) -> Result<(String, Vec<usize>)> {
        let mut id = None;
        let mut channels = None;
        for tok in text.split_whitespace() {
            if let Some(v) = tok.strip_prefix("profile=") {
                id = Some(v.to_string());
            } else if let Some(v) = tok.strip_prefix("channels=") {
                let parsed: std::result::Result<Vec<usize>, _> = v.split(',').map(str::parse).collect();
                channels = Some(parsed.map_err(|_| MoftError::Format(format!("bad channel list {v:?}")))?);
            }
        }
        match (id, channels) {
            (Some(i), Some(c)) => Ok((i, c)),
            _ => Err(MoftError::Format("sidecar needs profile= and channels=".into())),
        }
    }
}

pub(crate) fn frame_sums<T: Scalar>(t: &Tensor4<T>) -> Vec<f64> {
    let n = t.dims().frame_len();
    let mut sums = vec![0.0; n];
    for frame in t.as_slice().chunks_exact(n) {
        for (s, v) in sums.iter_mut().zip(frame) {
            *s += v.to_f64();
        }
    }
    sums
}

fn check_profile(profile: &MotionChannelProfile, d: usize) -> Result<()> {
    if profile.dim != d {
        return Err(MoftError::ProfileMismatch(format!(
            "profile calibrated for D={}, features have D={d}",
            profile.dim
        )));
    }
    Ok(())
}

/// Content removal followed by motion-channel selection.
pub fn extract_moft(t: &FeatureTensor, profile: &MotionChannelProfile) -> Result<Moft> {
    check_profile(profile, t.channels())?;
    let order = profile.channel_indices();
    let selected = t.select_channels(&order)?;
    Ok(Moft {
        values: content_removal(&selected),
        profile_id: profile.id(),
        channel_order: order,
    })
}

/// Double-precision extraction used inside latent optimization.
pub(crate) fn extract_moft_f64(t: &Tensor4<f64>, channels: &[usize]) -> Result<Tensor4<f64>> {
    Ok(content_removal(&t.select_channels(channels)?))
}

/// Reference extraction from the features of a reference video. The result
/// is computed once and reused at every guidance step.
pub fn extract_reference_moft(ref_features: &FeatureTensor, profile: &MotionChannelProfile) -> Result<Moft> {
    extract_moft(ref_features, profile)
}

/// Desired frame-wise motion, `F - 1` displacements.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionSchedule {
    pub displacements: Vec<Displacement>,
}

impl DirectionSchedule {
    pub fn new(displacements: Vec<Displacement>) -> Result<Self> {
        if let Some(d) = displacements.iter().find(|d| !(d.x.is_finite() && d.y.is_finite())) {
            return Err(MoftError::Range(format!("non-finite displacement ({}, {})", d.x, d.y)));
        }
        Ok(DirectionSchedule { displacements })
    }

    pub fn constant(d: Displacement, frames: usize) -> Self {
        DirectionSchedule {
            displacements: vec![d; frames.saturating_sub(1)],
        }
    }

    pub fn negated(&self) -> Self {
        DirectionSchedule {
            displacements: self.displacements.iter().map(|d| d.neg()).collect(),
        }
    }

    /// Parses either explicit pairs `"dx1,dy1;dx2,dy2;..."` or the shorthand
    /// `"right×8,left×7"` (`x` or `*` may replace `×`; words are unit
    /// displacements, see [`Displacement::named`]).
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() {
            return Err(MoftError::Argument("empty schedule".into()));
        }
        let starts_numeric = s
            .chars()
            .next()
            .map(|c| c.is_ascii_digit() || c == '-' || c == '+' || c == '.')
            .unwrap_or(false);
        let bad = |tok: &str| MoftError::Argument(format!("cannot parse schedule element {tok:?}"));
        let mut out = Vec::new();
        if starts_numeric {
            for tok in s.split(';').map(str::trim).filter(|t| !t.is_empty()) {
                let (x, y) = tok.split_once(',').ok_or_else(|| bad(tok))?;
                let x: f64 = x.trim().parse().map_err(|_| bad(tok))?;
                let y: f64 = y.trim().parse().map_err(|_| bad(tok))?;
                out.push(Displacement::new(x, y));
            }
        } else {
            for tok in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
                let (word, count) = match tok.split_once(['×', 'x', '*']) {
                    Some((w, n)) if Displacement::named(w.trim()).is_some() => {
                        (w.trim(), n.trim().parse::<usize>().map_err(|_| bad(tok))?)
                    }
                    _ => (tok, 1),
                };
                let d = Displacement::named(word).ok_or_else(|| bad(tok))?;
                out.extend(std::iter::repeat_n(d, count));
            }
        }
        Self::new(out)
    }
}

/// Builds a spatially uniform reference Moft from a direction schedule.
///
/// Each motion channel integrates its calibrated drive `<d_k, axis>` over
/// frames into a piecewise-linear trend (frame 1 sits at zero drive), scaled
/// so a full-clip pan at the calibration speed spans the calibrated
/// [statMin, statMax] range. The trend is then content-removed. Requests
/// beyond the calibrated range are scaled back into it, which keeps the
/// frame sum at zero.
pub fn synthesize_reference_moft(
    schedule: &DirectionSchedule,
    profile: &MotionChannelProfile,
    shape: (usize, usize, usize),
) -> Result<Moft> {
    let (frames, height, width) = shape;
    if schedule.displacements.len() + 1 != frames {
        return Err(MoftError::Argument(format!(
            "schedule has {} displacements, {frames} frames need {}",
            schedule.displacements.len(),
            frames.saturating_sub(1)
        )));
    }
    let channels = profile.channels.len();
    let mut traces = Vec::with_capacity(channels);
    for entry in &profile.channels {
        let (axis, slope) = match (entry.axis, entry.slope) {
            (Some(a), Some(s)) if s.is_finite() && entry.stat_min <= entry.stat_max => (a, s),
            _ => return Err(MoftError::CalibrationMissing(entry.index)),
        };
        let mut trend = Vec::with_capacity(frames);
        let mut pos = 0.0;
        trend.push(0.0);
        for d in &schedule.displacements {
            pos += d.dot(axis);
            trend.push(slope * pos);
        }
        let mean = trend.iter().sum::<f64>() / frames as f64;
        trend.iter_mut().for_each(|v| *v -= mean);
        let hi = trend.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = trend.iter().copied().fold(f64::INFINITY, f64::min);
        let mut scale: f64 = 1.0;
        if hi > entry.stat_max {
            scale = scale.min(entry.stat_max.max(0.0) / hi);
        }
        if lo < entry.stat_min {
            scale = scale.min(entry.stat_min.min(0.0) / lo);
        }
        trend.iter_mut().for_each(|v| *v *= scale);
        traces.push(trend);
    }
    let dims = Dims4::new(frames, height, width, channels);
    let values = FeatureTensor::from_fn(dims, |f, _, _, c| traces[c][f] as f32)?;
    Ok(Moft {
        values,
        profile_id: profile.id(),
        channel_order: profile.channel_indices(),
    })
}
