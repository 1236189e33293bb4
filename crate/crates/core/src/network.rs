//! The toy feature network standing in for a video diffusion U-Net.
//!
//! Each output location carries `FEATURE_CHANNELS` channels of two kinds,
//! interleaved by a seeded permutation so that nothing downstream can rely on
//! their positions:
//!
//! * appearance channels: a seeded random linear projection of the 3x3
//!   latent patch of the current frame (clamped at the borders). These play
//!   the role of the per-frame semantic features used for point matching.
//! * motion channels: for a preferred axis `e`, a windowed gradient-constraint
//!   estimate of the displacement between consecutive frames,
//!
//!   ```text
//!   v(x) = -2 * sum_y w(y-x) sum_ch dz(y) * (e . grad s(y))
//!          / (eps + sum_y w(y-x) sum_ch |grad s(y)|^2)
//!   ```
//!
//!   with `dz = z_g - z_{g-1}` and `s = (z_g + z_{g-1}) / 2`, accumulated over
//!   frames so that frame `f` reports the displacement of its content since
//!   frame 1 (frame 1 itself reports zero). This causal temporal integration
//!   mimics cross-frame attention: the value trend of a motion channel follows
//!   the pan direction.
//!
//! The network is smooth in the latents. [`FeatureNet::backward`] gives the
//! exact vector-Jacobian product used by latent optimization.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rand::seq::SliceRandom;

use crate::error::Result;
use crate::tensor::{Dims4, FeatureTensor, LatentVideo, Tensor4};

/// Output channel count D.
pub const FEATURE_CHANNELS: usize = 64;
/// Number of motion channels among the D outputs.
pub const MOTION_CHANNELS: usize = 4;
/// Number of appearance channels among the D outputs.
pub const APPEARANCE_CHANNELS: usize = FEATURE_CHANNELS - MOTION_CHANNELS;

const PATCH: usize = 3;
const WINDOW: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
const HALF: isize = (WINDOW.len() / 2) as isize;
const EPS: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelRole {
    Appearance(usize),
    Motion(usize),
}

#[derive(Debug, Clone)]
pub struct FeatureNet {
    seed: u64,
    latent_channels: usize,
    /// `(PATCH * PATCH * latent_channels) x APPEARANCE_CHANNELS`, row-major.
    projection: Vec<f64>,
    axes: [[f64; 2]; MOTION_CHANNELS],
    layout: Vec<ChannelRole>,
}

impl FeatureNet {
    pub fn new(seed: u64, latent_channels: usize) -> Self {
        assert!(latent_channels > 0, "latent_channels must be positive");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fan_in = PATCH * PATCH * latent_channels;
        let scale = 1.0 / (fan_in as f64).sqrt();
        let projection = (0..fan_in * APPEARANCE_CHANNELS)
            .map(|_| {
                let g: f64 = StandardNormal.sample(&mut rng);
                g * scale
            })
            .collect();
        let axes = std::array::from_fn(|k| {
            let a = std::f64::consts::PI * k as f64 / MOTION_CHANNELS as f64;
            [a.cos(), a.sin()]
        });
        let mut layout: Vec<ChannelRole> = (0..APPEARANCE_CHANNELS)
            .map(ChannelRole::Appearance)
            .chain((0..MOTION_CHANNELS).map(ChannelRole::Motion))
            .collect();
        layout.shuffle(&mut rng);
        FeatureNet {
            seed,
            latent_channels,
            projection,
            axes,
            layout,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn latent_channels(&self) -> usize {
        self.latent_channels
    }

    pub fn layout(&self) -> &[ChannelRole] {
        &self.layout
    }

    /// Output indices of the motion channels. Ground truth for tests; the
    /// analysis pipeline never consults it.
    pub fn motion_channel_indices(&self) -> Vec<usize> {
        let mut idx: Vec<(usize, usize)> = self
            .layout
            .iter()
            .enumerate()
            .filter_map(|(i, r)| match r {
                ChannelRole::Motion(k) => Some((*k, i)),
                ChannelRole::Appearance(_) => None,
            })
            .collect();
        idx.sort();
        idx.into_iter().map(|(_, i)| i).collect()
    }

    /// Preferred displacement axis (x = columns, y = rows) of motion channel `k`.
    pub fn motion_axis(&self, k: usize) -> [f64; 2] {
        self.axes[k]
    }

    /// Output indices of the appearance channels in appearance order.
    pub fn appearance_channel_indices(&self) -> Vec<usize> {
        let mut out = vec![0; APPEARANCE_CHANNELS];
        for (i, r) in self.layout.iter().enumerate() {
            if let ChannelRole::Appearance(j) = r {
                out[*j] = i;
            }
        }
        out
    }

    fn check(&self, z: &Tensor4<f64>) {
        assert_eq!(
            z.channels(),
            self.latent_channels,
            "latent has {} channels, network expects {}",
            z.channels(),
            self.latent_channels
        );
    }

    /// Full feature map in single precision.
    pub fn features(&self, z: &LatentVideo) -> Result<FeatureTensor> {
        self.features_f64(z.values()).cast()
    }

    /// Appearance channels only, in single precision.
    pub fn dift(&self, z: &LatentVideo) -> Result<FeatureTensor> {
        self.dift_f64(z.values()).cast()
    }

    pub fn features_f64(&self, z: &Tensor4<f64>) -> Tensor4<f64> {
        self.check(z);
        let d = z.dims();
        let appearance = self.dift_f64(z);
        let motion = self.motion_forward(z);
        let out_dims = d.with_channels(FEATURE_CHANNELS);
        let mut data = vec![0.0; out_dims.len()];
        let (a, m) = (appearance.as_slice(), motion.as_slice());
        for (p, px) in data.chunks_exact_mut(FEATURE_CHANNELS).enumerate() {
            for (slot, role) in px.iter_mut().zip(&self.layout) {
                *slot = match role {
                    ChannelRole::Appearance(j) => a[p * APPEARANCE_CHANNELS + j],
                    ChannelRole::Motion(k) => m[p * MOTION_CHANNELS + k],
                };
            }
        }
        Tensor4::from_vec_unchecked(out_dims, data)
    }

    /// The appearance block with `APPEARANCE_CHANNELS` channels.
    pub fn dift_f64(&self, z: &Tensor4<f64>) -> Tensor4<f64> {
        self.check(z);
        let d = z.dims();
        let c = d.channels;
        let out_dims = d.with_channels(APPEARANCE_CHANNELS);
        let mut out = vec![0.0; out_dims.len()];
        let mut patch = vec![0.0; PATCH * PATCH * c];
        for f in 0..d.frames {
            for r in 0..d.height {
                for col in 0..d.width {
                    gather_patch(z, f, r, col, &mut patch);
                    let o = out_dims.offset(f, r, col, 0);
                    let dst = &mut out[o..o + APPEARANCE_CHANNELS];
                    for (pi, &pv) in patch.iter().enumerate() {
                        if pv == 0.0 {
                            continue;
                        }
                        let row = &self.projection[pi * APPEARANCE_CHANNELS..(pi + 1) * APPEARANCE_CHANNELS];
                        for (o, &wgt) in dst.iter_mut().zip(row) {
                            *o += wgt * pv;
                        }
                    }
                }
            }
        }
        Tensor4::from_vec_unchecked(out_dims, out)
    }

    /// Vector-Jacobian product of [`FeatureNet::features_f64`] at `z`.
    pub fn backward(&self, z: &Tensor4<f64>, grad_features: &Tensor4<f64>) -> Tensor4<f64> {
        self.check(z);
        let d = z.dims();
        assert_eq!(grad_features.dims(), d.with_channels(FEATURE_CHANNELS));
        let pixels = d.frames * d.pixels();
        let mut ga = vec![0.0; pixels * APPEARANCE_CHANNELS];
        let mut gm = vec![0.0; pixels * MOTION_CHANNELS];
        for (p, px) in grad_features.as_slice().chunks_exact(FEATURE_CHANNELS).enumerate() {
            for (&g, role) in px.iter().zip(&self.layout) {
                match role {
                    ChannelRole::Appearance(j) => ga[p * APPEARANCE_CHANNELS + j] = g,
                    ChannelRole::Motion(k) => gm[p * MOTION_CHANNELS + k] = g,
                }
            }
        }
        let mut grad = self.backward_dift(
            z,
            &Tensor4::from_vec_unchecked(d.with_channels(APPEARANCE_CHANNELS), ga),
        );
        self.motion_backward(z, &gm, grad.as_mut_slice());
        grad
    }

    /// Vector-Jacobian product of [`FeatureNet::dift_f64`] at `z`.
    pub fn backward_dift(&self, z: &Tensor4<f64>, grad_dift: &Tensor4<f64>) -> Tensor4<f64> {
        self.check(z);
        let d = z.dims();
        assert_eq!(grad_dift.dims(), d.with_channels(APPEARANCE_CHANNELS));
        let c = d.channels;
        let mut grad = vec![0.0; d.len()];
        let mut gpatch = vec![0.0; PATCH * PATCH * c];
        for f in 0..d.frames {
            for r in 0..d.height {
                for col in 0..d.width {
                    let g = grad_dift.pixel(f, r, col);
                    if g.iter().all(|&v| v == 0.0) {
                        continue;
                    }
                    for (pi, gp) in gpatch.iter_mut().enumerate() {
                        let row = &self.projection[pi * APPEARANCE_CHANNELS..(pi + 1) * APPEARANCE_CHANNELS];
                        *gp = row.iter().zip(g).map(|(w, g)| w * g).sum();
                    }
                    scatter_patch(d, f, r, col, &gpatch, &mut grad);
                }
            }
        }
        Tensor4::from_vec_unchecked(d, grad)
    }

    /// Motion block, `MOTION_CHANNELS` values per pixel, frame-major.
    fn motion_forward(&self, z: &Tensor4<f64>) -> Tensor4<f64> {
        let d = z.dims();
        let np = d.pixels();
        let out_dims = d.with_channels(MOTION_CHANNELS);
        let mut out = vec![0.0; out_dims.len()];
        for g in 1..d.frames {
            let pair = PairTerms::new(z, g, &self.axes);
            let (prev, cur) = out.split_at_mut(g * np * MOTION_CHANNELS);
            let prev = &prev[(g - 1) * np * MOTION_CHANNELS..];
            let cur = &mut cur[..np * MOTION_CHANNELS];
            for p in 0..np {
                for k in 0..MOTION_CHANNELS {
                    let i = p * MOTION_CHANNELS + k;
                    cur[i] = prev[i] + 2.0 * pair.num[i] / pair.den[p];
                }
            }
        }
        Tensor4::from_vec_unchecked(out_dims, out)
    }

    fn motion_backward(&self, z: &Tensor4<f64>, gm: &[f64], grad: &mut [f64]) {
        let d = z.dims();
        let (h, w, c) = (d.height, d.width, d.channels);
        let np = d.pixels();
        let stride = np * MOTION_CHANNELS;
        // acc[g] = sum over frames f >= g of the upstream motion gradient
        let mut acc = vec![0.0; stride];
        let mut alpha = vec![0.0; stride];
        let mut beta = vec![0.0; np];
        let mut grad_s = vec![0.0; np * c];
        for g in (1..d.frames).rev() {
            for (a, &u) in acc.iter_mut().zip(&gm[g * stride..(g + 1) * stride]) {
                *a += u;
            }
            if acc.iter().all(|&v| v == 0.0) {
                continue;
            }
            let pair = PairTerms::new(z, g, &self.axes);
            for p in 0..np {
                let q = pair.den[p];
                let mut b = 0.0;
                for k in 0..MOTION_CHANNELS {
                    let i = p * MOTION_CHANNELS + k;
                    alpha[i] = 2.0 * acc[i] / q;
                    b -= 2.0 * acc[i] * pair.num[i] / (q * q);
                }
                beta[p] = b;
            }
            // numerator carries a leading minus sign; fold it into alpha
            alpha.iter_mut().for_each(|a| *a = -*a);
            let big_a = window_filter(&alpha, h, w, MOTION_CHANNELS);
            let big_b = window_filter(&beta, h, w, 1);

            let off_cur = g * d.frame_len();
            let off_prev = (g - 1) * d.frame_len();
            grad_s.iter_mut().for_each(|v| *v = 0.0);
            for p in 0..np {
                let ak = &big_a[p * MOTION_CHANNELS..(p + 1) * MOTION_CHANNELS];
                let (mut ex, mut ey) = (0.0, 0.0);
                for (k, a) in ak.iter().enumerate() {
                    ex += a * self.axes[k][0];
                    ey += a * self.axes[k][1];
                }
                for ch in 0..c {
                    let i = p * c + ch;
                    let (dz, gx, gy) = (pair.dz[i], pair.gx[i], pair.gy[i]);
                    // d/d(dz) and d/d(grad s)
                    let g_dz = ex * gx + ey * gy;
                    let g_gx = dz * ex + 2.0 * big_b[p] * gx;
                    let g_gy = dz * ey + 2.0 * big_b[p] * gy;
                    grad[off_cur + i] += g_dz;
                    grad[off_prev + i] -= g_dz;
                    let (r, col) = (p / w, p % w);
                    let (cl, cr) = (col.saturating_sub(1), (col + 1).min(w - 1));
                    let (ru, rd) = (r.saturating_sub(1), (r + 1).min(h - 1));
                    grad_s[(r * w + cr) * c + ch] += 0.5 * g_gx;
                    grad_s[(r * w + cl) * c + ch] -= 0.5 * g_gx;
                    grad_s[(rd * w + col) * c + ch] += 0.5 * g_gy;
                    grad_s[(ru * w + col) * c + ch] -= 0.5 * g_gy;
                }
            }
            for (i, gs) in grad_s.iter().enumerate() {
                grad[off_cur + i] += 0.5 * gs;
                grad[off_prev + i] += 0.5 * gs;
            }
        }
    }
}

/// The featurizer with default latent width four, seeded by `seed`.
pub fn featurize(z: &LatentVideo, seed: u64) -> Result<FeatureTensor> {
    FeatureNet::new(seed, z.dims().channels).features(z)
}

fn gather_patch(z: &Tensor4<f64>, f: usize, r: usize, col: usize, patch: &mut [f64]) {
    let d = z.dims();
    let c = d.channels;
    let mut i = 0;
    for dy in 0..PATCH {
        let rr = (r + dy).saturating_sub(1).min(d.height - 1);
        for dx in 0..PATCH {
            let cc = (col + dx).saturating_sub(1).min(d.width - 1);
            patch[i..i + c].copy_from_slice(z.pixel(f, rr, cc));
            i += c;
        }
    }
}

fn scatter_patch(d: Dims4, f: usize, r: usize, col: usize, gpatch: &[f64], grad: &mut [f64]) {
    let c = d.channels;
    let mut i = 0;
    for dy in 0..PATCH {
        let rr = (r + dy).saturating_sub(1).min(d.height - 1);
        for dx in 0..PATCH {
            let cc = (col + dx).saturating_sub(1).min(d.width - 1);
            let o = d.offset(f, rr, cc, 0);
            for ch in 0..c {
                grad[o + ch] += gpatch[i + ch];
            }
            i += c;
        }
    }
}

/// Truncated 5x5 binomial window sum: `out(x) = sum_y w(y - x) v(y)` over
/// in-bounds `y`. The window is symmetric, so this is its own adjoint.
fn window_filter(v: &[f64], h: usize, w: usize, k: usize) -> Vec<f64> {
    let mut tmp = vec![0.0; v.len()];
    for r in 0..h {
        for c in 0..w {
            for (t, wt) in WINDOW.iter().enumerate() {
                let cc = c as isize + t as isize - HALF;
                if cc < 0 || cc >= w as isize {
                    continue;
                }
                let src = (r * w + cc as usize) * k;
                let dst = (r * w + c) * k;
                for j in 0..k {
                    tmp[dst + j] += wt * v[src + j];
                }
            }
        }
    }
    let mut out = vec![0.0; v.len()];
    for r in 0..h {
        for (t, wt) in WINDOW.iter().enumerate() {
            let rr = r as isize + t as isize - HALF;
            if rr < 0 || rr >= h as isize {
                continue;
            }
            for c in 0..w {
                let src = (rr as usize * w + c) * k;
                let dst = (r * w + c) * k;
                for j in 0..k {
                    out[dst + j] += wt * tmp[src + j];
                }
            }
        }
    }
    out
}

/// Per-pixel quantities of the displacement estimate between frames g-1 and g.
struct PairTerms {
    dz: Vec<f64>,
    gx: Vec<f64>,
    gy: Vec<f64>,
    /// Windowed numerators, `MOTION_CHANNELS` per pixel.
    num: Vec<f64>,
    /// Windowed gradient energy plus `EPS`, one per pixel.
    den: Vec<f64>,
}

impl PairTerms {
    fn new(z: &Tensor4<f64>, g: usize, axes: &[[f64; 2]; MOTION_CHANNELS]) -> Self {
        let d = z.dims();
        let (h, w, c) = (d.height, d.width, d.channels);
        let (prev, cur) = (z.frame(g - 1), z.frame(g));
        let n = h * w * c;
        let mut dz = vec![0.0; n];
        let mut s = vec![0.0; n];
        for i in 0..n {
            dz[i] = cur[i] - prev[i];
            s[i] = 0.5 * (cur[i] + prev[i]);
        }
        let mut gx = vec![0.0; n];
        let mut gy = vec![0.0; n];
        for r in 0..h {
            let (ru, rd) = (r.saturating_sub(1), (r + 1).min(h - 1));
            for col in 0..w {
                let (cl, cr) = (col.saturating_sub(1), (col + 1).min(w - 1));
                for ch in 0..c {
                    let i = (r * w + col) * c + ch;
                    gx[i] = 0.5 * (s[(r * w + cr) * c + ch] - s[(r * w + cl) * c + ch]);
                    gy[i] = 0.5 * (s[(rd * w + col) * c + ch] - s[(ru * w + col) * c + ch]);
                }
            }
        }
        let np = h * w;
        let mut proj = vec![0.0; np * MOTION_CHANNELS];
        let mut energy = vec![0.0; np];
        for p in 0..np {
            for ch in 0..c {
                let i = p * c + ch;
                energy[p] += gx[i] * gx[i] + gy[i] * gy[i];
                for (k, e) in axes.iter().enumerate() {
                    proj[p * MOTION_CHANNELS + k] -= dz[i] * (e[0] * gx[i] + e[1] * gy[i]);
                }
            }
        }
        let num = window_filter(&proj, h, w, MOTION_CHANNELS);
        let den = window_filter(&energy, h, w, 1).into_iter().map(|v| v + EPS).collect();
        PairTerms { dz, gx, gy, num, den }
    }
}
