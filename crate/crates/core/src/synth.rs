//! Deterministic synthetic videos: smooth periodic noise scenes translated
//! by per-frame displacements, plus a textured sprite moving over a static
//! background for local-motion experiments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{MoftError, Result};
use crate::network::FeatureNet;
use crate::tensor::{Dims4, FeatureTensor, LatentVideo, Tensor4};

/// Largest per-frame displacement component accepted by the generators.
pub const MAX_DISPLACEMENT: f64 = 3.0;

/// A per-frame displacement in pixels: `x` along columns, `y` along rows.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Displacement {
    pub x: f64,
    pub y: f64,
}

impl Displacement {
    pub const fn new(x: f64, y: f64) -> Self {
        Displacement { x, y }
    }

    pub fn dot(&self, axis: [f64; 2]) -> f64 {
        self.x * axis[0] + self.y * axis[1]
    }

    pub fn neg(self) -> Self {
        Displacement::new(-self.x, -self.y)
    }

    /// Unit displacement for a direction word (`right`, `left`, `up`, `down`,
    /// `still`, or a diagonal such as `up-right`).
    pub fn named(word: &str) -> Option<Self> {
        let d = match word {
            "right" => Displacement::new(1.0, 0.0),
            "left" => Displacement::new(-1.0, 0.0),
            "up" => Displacement::new(0.0, -1.0),
            "down" => Displacement::new(0.0, 1.0),
            "still" | "none" => Displacement::new(0.0, 0.0),
            "up-right" => Displacement::new(1.0, -1.0),
            "up-left" => Displacement::new(-1.0, -1.0),
            "down-right" => Displacement::new(1.0, 1.0),
            "down-left" => Displacement::new(-1.0, 1.0),
            _ => return None,
        };
        Some(d)
    }
}

/// Frame-wise motion of a whole video, `F - 1` displacements.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionPattern {
    pub label: String,
    pub displacements: Vec<Displacement>,
}

impl MotionPattern {
    pub fn new(label: impl Into<String>, displacements: Vec<Displacement>) -> Self {
        MotionPattern {
            label: label.into(),
            displacements,
        }
    }

    /// The same displacement for every one of `frames - 1` transitions.
    pub fn constant(label: impl Into<String>, d: Displacement, frames: usize) -> Self {
        Self::new(label, vec![d; frames.saturating_sub(1)])
    }

    /// Cumulative position of each frame relative to frame 1.
    pub fn positions(&self) -> Vec<Displacement> {
        let mut out = Vec::with_capacity(self.displacements.len() + 1);
        let mut p = Displacement::default();
        out.push(p);
        for d in &self.displacements {
            p = Displacement::new(p.x + d.x, p.y + d.y);
            out.push(p);
        }
        out
    }

    fn validate(&self, frames: usize) -> Result<()> {
        if self.displacements.len() + 1 != frames {
            return Err(MoftError::Argument(format!(
                "pattern '{}' has {} displacements, a {frames}-frame video needs {}",
                self.label,
                self.displacements.len(),
                frames.saturating_sub(1)
            )));
        }
        for (k, d) in self.displacements.iter().enumerate() {
            if !(d.x.is_finite() && d.y.is_finite())
                || d.x.abs() > MAX_DISPLACEMENT
                || d.y.abs() > MAX_DISPLACEMENT
            {
                return Err(MoftError::Range(format!(
                    "displacement {k} = ({}, {}) outside [-{MAX_DISPLACEMENT}, {MAX_DISPLACEMENT}]",
                    d.x, d.y
                )));
            }
        }
        Ok(())
    }
}

/// Geometry and seed of one synthetic scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub octaves: usize,
    pub frames: usize,
    pub channels: usize,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            seed: 0,
            height: 32,
            width: 32,
            octaves: 3,
            frames: 16,
            channels: 4,
        }
    }
}

impl SceneSpec {
    pub fn with_seed(&self, seed: u64) -> Self {
        SceneSpec { seed, ..self.clone() }
    }

    pub fn dims(&self) -> Dims4 {
        Dims4::new(self.frames, self.height, self.width, self.channels)
    }

    fn validate(&self) -> Result<()> {
        if self.height < 2 || self.width < 2 || self.frames == 0 || self.channels == 0 {
            return Err(MoftError::Argument(format!(
                "scene needs at least 2x2 pixels, one frame and one channel: {self:?}"
            )));
        }
        if self.octaves == 0 {
            return Err(MoftError::Argument("scene needs at least one octave".into()));
        }
        Ok(())
    }
}

/// SplitMix64 finalizer; derives independent stream seeds from a base seed.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One frame (`height * width * channels`, row-major) of periodic
/// multi-octave value noise, min-max normalized to [0, 1] per channel.
pub fn smooth_noise(seed: u64, height: usize, width: usize, channels: usize, octaves: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0.0; height * width * channels];
    for ch in 0..channels {
        let mut plane = vec![0.0; height * width];
        let mut amplitude = 1.0;
        for o in 0..octaves {
            let cells = 2usize << o;
            let lattice: Vec<f64> = (0..cells * cells).map(|_| rng.random::<f64>()).collect();
            for r in 0..height {
                let v = r as f64 * cells as f64 / height as f64;
                let (r0, tr) = (v.floor() as usize % cells, smoothstep(v.fract()));
                let r1 = (r0 + 1) % cells;
                for c in 0..width {
                    let u = c as f64 * cells as f64 / width as f64;
                    let (c0, tc) = (u.floor() as usize % cells, smoothstep(u.fract()));
                    let c1 = (c0 + 1) % cells;
                    let top = lerp(lattice[r0 * cells + c0], lattice[r0 * cells + c1], tc);
                    let bottom = lerp(lattice[r1 * cells + c0], lattice[r1 * cells + c1], tc);
                    plane[r * width + c] += amplitude * lerp(top, bottom, tr);
                }
            }
            amplitude *= 0.5;
        }
        let (lo, hi) = plane
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let span = if hi > lo { hi - lo } else { 1.0 };
        for (i, v) in plane.iter().enumerate() {
            out[i * channels + ch] = (v - lo) / span;
        }
    }
    out
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Bilinear sample of a `height x width x channels` frame at fractional
/// (row, col) with toroidal wrap.
fn sample_wrapped(frame: &[f64], height: usize, width: usize, channels: usize, row: f64, col: f64, out: &mut [f64]) {
    let r = row.rem_euclid(height as f64);
    let c = col.rem_euclid(width as f64);
    let (r0, c0) = (r.floor() as usize % height, c.floor() as usize % width);
    let (fr, fc) = (r - r.floor(), c - c.floor());
    let (r1, c1) = ((r0 + 1) % height, (c0 + 1) % width);
    let at = |rr: usize, cc: usize, ch: usize| frame[(rr * width + cc) * channels + ch];
    for (ch, o) in out.iter_mut().enumerate() {
        let top = at(r0, c0, ch) * (1.0 - fc) + at(r0, c1, ch) * fc;
        let bottom = at(r1, c0, ch) * (1.0 - fc) + at(r1, c1, ch) * fc;
        *o = top * (1.0 - fr) + bottom * fr;
    }
}

/// Moves content by `d` (content at `p` lands at `p + d`), wrapping at the
/// borders.
pub fn translate_wrapped(frame: &[f64], height: usize, width: usize, channels: usize, d: Displacement) -> Vec<f64> {
    let mut out = vec![0.0; frame.len()];
    for r in 0..height {
        for c in 0..width {
            let o = (r * width + c) * channels;
            sample_wrapped(
                frame,
                height,
                width,
                channels,
                r as f64 - d.y,
                c as f64 - d.x,
                &mut out[o..o + channels],
            );
        }
    }
    out
}

/// A panning video: frame 1 is seeded smooth noise and each following frame
/// is the previous one translated by the next displacement.
pub fn generate_panning_video(scene: &SceneSpec, pattern: &MotionPattern) -> Result<LatentVideo> {
    scene.validate()?;
    pattern.validate(scene.frames)?;
    let (h, w, c) = (scene.height, scene.width, scene.channels);
    let first = smooth_noise(scene.seed, h, w, c, scene.octaves);
    let mut data = Vec::with_capacity(scene.dims().len());
    data.extend_from_slice(&first);
    let mut prev = first;
    for d in &pattern.displacements {
        let next = if d.x == 0.0 && d.y == 0.0 {
            prev.clone()
        } else {
            translate_wrapped(&prev, h, w, c, *d)
        };
        data.extend_from_slice(&next);
        prev = next;
    }
    Ok(LatentVideo::new(Tensor4::new(scene.dims(), data)?, scene.seed))
}

/// A textured disk moving over a static background.
#[derive(Debug, Clone, PartialEq)]
pub struct SpriteSpec {
    /// Centre in frame 1 as (row, col).
    pub start: (f64, f64),
    pub radius: f64,
    pub motion: MotionPattern,
    /// Peak-to-peak contrast of the sprite texture relative to the
    /// background's [0, 1] range.
    pub contrast: f64,
}

/// Renders the sprite over a static background from `scene`. The sprite
/// texture travels with the sprite and has an anti-aliased one-pixel edge.
pub fn generate_sprite_video(scene: &SceneSpec, sprite: &SpriteSpec) -> Result<LatentVideo> {
    scene.validate()?;
    sprite.motion.validate(scene.frames)?;
    if !(sprite.radius > 0.0) {
        return Err(MoftError::Argument("sprite radius must be positive".into()));
    }
    let (h, w, c) = (scene.height, scene.width, scene.channels);
    let background = smooth_noise(scene.seed, h, w, c, scene.octaves);
    let texture = smooth_noise(derive_seed(scene.seed, 0x5151), h, w, c, scene.octaves + 1);
    let positions = sprite.motion.positions();
    let mut data = Vec::with_capacity(scene.dims().len());
    let mut tex = vec![0.0; c];
    for p in &positions {
        let (cr, cc) = (sprite.start.0 + p.y, sprite.start.1 + p.x);
        for r in 0..h {
            for col in 0..w {
                let (dr, dc) = (r as f64 - cr, col as f64 - cc);
                let alpha = (sprite.radius + 0.5 - (dr * dr + dc * dc).sqrt()).clamp(0.0, 1.0);
                let base = (r * w + col) * c;
                if alpha == 0.0 {
                    data.extend_from_slice(&background[base..base + c]);
                    continue;
                }
                sample_wrapped(&texture, h, w, c, dr + h as f64 / 2.0, dc + w as f64 / 2.0, &mut tex);
                for ch in 0..c {
                    let fg = 0.5 + sprite.contrast * (tex[ch] - 0.5);
                    data.push(alpha * fg + (1.0 - alpha) * background[base + ch]);
                }
            }
        }
    }
    Ok(LatentVideo::new(Tensor4::new(scene.dims(), data)?, scene.seed))
}

/// One labelled calibration video.
#[derive(Debug, Clone)]
pub struct CalibrationSample {
    pub features: FeatureTensor,
    pub label: String,
    pub pattern: MotionPattern,
}

/// `scenes_per_direction` independent scenes per pattern, featurized by `net`.
/// Output order is pattern-major and fully determined by `seed`.
pub fn build_calibration_set(
    directions: &[MotionPattern],
    scenes_per_direction: usize,
    seed: u64,
    geometry: &SceneSpec,
    net: &FeatureNet,
) -> Result<Vec<CalibrationSample>> {
    if directions.is_empty() {
        return Err(MoftError::Argument("no direction classes given".into()));
    }
    if directions.len() < 2 {
        return Err(MoftError::Argument("calibration needs at least two direction classes".into()));
    }
    let jobs: Vec<(usize, usize)> = (0..directions.len())
        .flat_map(|d| (0..scenes_per_direction).map(move |s| (d, s)))
        .collect();
    jobs.par_iter()
        .map(|&(d, s)| {
            let pattern = &directions[d];
            let scene = geometry.with_seed(derive_seed(seed, (d * 100_003 + s) as u64));
            let video = generate_panning_video(&scene, pattern)?;
            Ok(CalibrationSample {
                features: net.features(&video)?,
                label: pattern.label.clone(),
                pattern: pattern.clone(),
            })
        })
        .collect()
}

/// The default calibration classes: constant right, left, up and down pans
/// at one pixel per frame.
pub fn cardinal_patterns(frames: usize) -> Vec<MotionPattern> {
    ["right", "left", "up", "down"]
        .iter()
        .map(|name| MotionPattern::constant(*name, Displacement::named(name).unwrap(), frames))
        .collect()
}
