//! PCA over per-location feature vectors, motion-channel ranking, value
//! traces, cosine-similarity heatmaps and the noise-robustness probe.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{MoftError, Result};
use crate::moft::{content_removal, extract_moft, Moft};
use crate::network::FeatureNet;
use crate::synth::{derive_seed, CalibrationSample};
use crate::tensor::{write_pgm, FeatureTensor, LatentVideo, RegionMask, Scalar, Tensor4};

/// Principal axes of a sample cloud, sorted by descending variance.
///
/// Each component is a unit vector whose largest-magnitude entry is positive.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    pub components: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
}

/// Fits `num_components` principal axes to `samples` (all of equal length).
pub fn fit_pca(samples: &[Vec<f64>], num_components: usize) -> Result<PcaModel> {
    let n = samples.len();
    let d = samples.first().map(Vec::len).unwrap_or(0);
    if d == 0 {
        return Err(MoftError::Argument("PCA needs non-empty samples".into()));
    }
    if num_components == 0 || num_components > d {
        return Err(MoftError::Argument(format!(
            "numComponents must be in 1..={d}, got {num_components}"
        )));
    }
    if n < 2 {
        return Err(MoftError::Argument(format!("PCA needs at least 2 samples, got {n}")));
    }
    if let Some(i) = samples.iter().position(|s| s.len() != d) {
        return Err(MoftError::Shape(format!("sample {i} has length {}, expected {d}", samples[i].len())));
    }
    let mut mean = vec![0.0; d];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let centred: Vec<Vec<f64>> = samples
        .par_iter()
        .map(|s| s.iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect();
    let cov_rows: Vec<Vec<f64>> = (0..d)
        .into_par_iter()
        .map(|i| {
            let mut row = vec![0.0; d];
            for s in &centred {
                let si = s[i];
                if si == 0.0 {
                    continue;
                }
                for (r, v) in row.iter_mut().zip(s) {
                    *r += si * v;
                }
            }
            row.iter_mut().for_each(|r| *r /= (n - 1) as f64);
            row
        })
        .collect();
    let cov = DMatrix::from_fn(d, d, |i, j| 0.5 * (cov_rows[i][j] + cov_rows[j][i]));
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let mut components = Vec::with_capacity(num_components);
    let mut explained_variance = Vec::with_capacity(num_components);
    for &k in order.iter().take(num_components) {
        let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        let lead = v
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |(bi, bv), (i, &x)| if x.abs() > bv { (i, x.abs()) } else { (bi, bv) })
            .0;
        if v[lead] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        components.push(v);
        explained_variance.push(eig.eigenvalues[k].max(0.0));
    }
    Ok(PcaModel {
        mean,
        components,
        explained_variance,
    })
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Coordinates of `x` along the first `k` components.
    pub fn project(&self, x: &[f64], k: usize) -> Vec<f64> {
        self.components
            .iter()
            .take(k)
            .map(|c| c.iter().zip(x).zip(&self.mean).map(|((a, v), m)| a * (v - m)).sum())
            .collect()
    }

    pub fn reconstruct(&self, coords: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, &a) in self.components.iter().zip(coords) {
            for (o, v) in out.iter_mut().zip(c) {
                *o += a * v;
            }
        }
        out
    }
}

/// Every (row, col) feature vector of one frame.
pub fn frame_samples<T: Scalar>(t: &Tensor4<T>, frame: usize) -> Vec<Vec<f64>> {
    (0..t.height())
        .flat_map(|r| (0..t.width()).map(move |c| (r, c)))
        .map(|(r, c)| t.pixel(frame, r, c).iter().map(|v| v.to_f64()).collect())
        .collect()
}

/// First-frame samples of each calibration video, with labels as class ids
/// in order of first appearance. With `normalized` the content is removed
/// first.
pub fn calibration_samples(calibration: &[CalibrationSample], normalized: bool) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut classes: Vec<&str> = Vec::new();
    let ids: Vec<usize> = calibration
        .iter()
        .map(|s| match classes.iter().position(|c| *c == s.label) {
            Some(i) => i,
            None => {
                classes.push(&s.label);
                classes.len() - 1
            }
        })
        .collect();
    let blocks: Vec<Vec<Vec<f64>>> = calibration
        .par_iter()
        .map(|s| {
            if normalized {
                frame_samples(&content_removal(&s.features), 0)
            } else {
                frame_samples(&s.features, 0)
            }
        })
        .collect();
    let mut samples = Vec::new();
    let mut labels = Vec::new();
    for (block, id) in blocks.into_iter().zip(ids) {
        labels.extend(std::iter::repeat_n(id, block.len()));
        samples.extend(block);
    }
    (samples, labels)
}

/// Fraction of points whose nearest class centroid is their own class.
pub fn nearest_centroid_accuracy(points: &[Vec<f64>], labels: &[usize]) -> f64 {
    assert_eq!(points.len(), labels.len());
    if points.is_empty() {
        return 0.0;
    }
    let classes = labels.iter().copied().max().unwrap_or(0) + 1;
    let dim = points[0].len();
    let mut centroids = vec![vec![0.0; dim]; classes];
    let mut counts = vec![0usize; classes];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for (c, v) in centroids[l].iter_mut().zip(p) {
            *c += v;
        }
    }
    for (c, &n) in centroids.iter_mut().zip(&counts) {
        if n > 0 {
            c.iter_mut().for_each(|v| *v /= n as f64);
        }
    }
    let correct = points
        .iter()
        .zip(labels)
        .filter(|(p, &l)| {
            let best = (0..classes)
                .filter(|&k| counts[k] > 0)
                .min_by(|&a, &b| dist2(p, &centroids[a]).total_cmp(&dist2(p, &centroids[b])).then(a.cmp(&b)))
                .unwrap();
            best == l
        })
        .count();
    correct as f64 / points.len() as f64
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest-centroid accuracy of the 2-D PCA projection of `samples`.
pub fn pca_separability(samples: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    let model = fit_pca(samples, 2)?;
    let projected: Vec<Vec<f64>> = samples.par_iter().map(|s| model.project(s, 2)).collect();
    Ok(nearest_centroid_accuracy(&projected, labels))
}

/// One retained motion channel with its calibration statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEntry {
    pub index: usize,
    /// Signed first-component loading.
    pub loading: f64,
    pub stat_min: f64,
    pub stat_max: f64,
    /// Unit motion axis the channel's trend responds to.
    pub axis: Option<[f64; 2]>,
    /// Trace change per pixel of integrated drive along `axis`.
    pub slope: Option<f64>,
}

/// Motion channels ranked by |P1 loading| (ties by ascending index).
#[derive(Debug, Clone, PartialEq)]
pub struct MotionChannelProfile {
    pub dim: usize,
    pub fraction: f64,
    pub channels: Vec<ChannelEntry>,
}

/// Number of channels kept for a fraction `q` of `d`.
pub fn retained_count(q: f64, d: usize) -> usize {
    ((q * d as f64).round() as usize).clamp(1, d)
}

/// Spatial mean of one channel per frame.
pub fn mean_trace<T: Scalar>(t: &Tensor4<T>, channel: usize) -> Vec<f64> {
    let px = t.height() * t.width();
    (0..t.frames())
        .map(|f| {
            let mut s = 0.0;
            for r in 0..t.height() {
                for c in 0..t.width() {
                    s += t.get(f, r, c, channel).to_f64();
                }
            }
            s / px as f64
        })
        .collect()
}

/// Value of one channel at one location across frames.
pub fn channel_trace<T: Scalar>(t: &Tensor4<T>, channel: usize, point: (usize, usize)) -> Result<Vec<f64>> {
    if channel >= t.channels() || point.0 >= t.height() || point.1 >= t.width() {
        return Err(MoftError::Range(format!(
            "channel {channel} at {point:?} outside tensor {}",
            t.dims()
        )));
    }
    Ok((0..t.frames()).map(|f| t.get(f, point.0, point.1, channel).to_f64()).collect())
}

/// Mean of one channel over the region of `mask` across frames.
pub fn region_trace<T: Scalar>(t: &Tensor4<T>, channel: usize, mask: &RegionMask) -> Result<Vec<f64>> {
    if mask.height() != t.height() || mask.width() != t.width() {
        return Err(MoftError::Shape("mask and tensor geometry differ".into()));
    }
    let n = mask.count();
    if n == 0 {
        return Err(MoftError::Argument("empty region".into()));
    }
    Ok((0..t.frames())
        .map(|f| mask.positions().map(|(r, c)| t.get(f, r, c, channel).to_f64()).sum::<f64>() / n as f64)
        .collect())
}

/// Ranks channels by the first principal component of normalized
/// first-frame features and records per-channel calibration statistics.
pub fn rank_motion_channels(
    model: &PcaModel,
    calibration: &[CalibrationSample],
    fraction: f64,
) -> Result<MotionChannelProfile> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(MoftError::Argument(format!("fraction must be in (0, 1], got {fraction}")));
    }
    if calibration.is_empty() {
        return Err(MoftError::Argument("empty calibration set".into()));
    }
    let d = model.dim();
    if let Some(s) = calibration.iter().find(|s| s.features.channels() != d) {
        return Err(MoftError::ProfileMismatch(format!(
            "calibration video has D={}, model has D={d}",
            s.features.channels()
        )));
    }
    let p1 = &model.components[0];
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| p1[b].abs().total_cmp(&p1[a].abs()).then(a.cmp(&b)));
    order.truncate(retained_count(fraction, d));

    let normalized: Vec<FeatureTensor> = calibration
        .par_iter()
        .map(|s| content_removal(&s.features.select_channels(&order).expect("indices in range")))
        .collect();
    let mut channels = Vec::with_capacity(order.len());
    for (k, &index) in order.iter().enumerate() {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        // Normal equations of trace ~ g . centred cumulative displacement.
        let (mut sxx, mut sxy, mut syy, mut bx, mut by) = (0.0, 0.0, 0.0, 0.0, 0.0);
        let mut frames = 0;
        let mut s_max_pattern: Vec<[f64; 2]> = Vec::new();
        for (sample, norm) in calibration.iter().zip(&normalized) {
            let trace = mean_trace(norm, k);
            frames = frames.max(trace.len());
            for &v in &trace {
                lo = lo.min(v);
                hi = hi.max(v);
            }
            let pos = sample.pattern.positions();
            let n = pos.len().min(trace.len()) as f64;
            let (mx, my) = pos.iter().fold((0.0, 0.0), |(x, y), p| (x + p.x / n, y + p.y / n));
            for (p, &u) in pos.iter().zip(&trace) {
                let (px, py) = (p.x - mx, p.y - my);
                sxx += px * px;
                sxy += px * py;
                syy += py * py;
                bx += px * u;
                by += py * u;
            }
            s_max_pattern.extend(sample.pattern.displacements.iter().map(|d| [d.x, d.y]));
        }
        let det = sxx * syy - sxy * sxy;
        let (gx, gy) = if det.abs() > 1e-12 * (sxx * syy).max(1e-300) {
            ((syy * bx - sxy * by) / det, (sxx * by - sxy * bx) / det)
        } else if sxx >= syy && sxx > 0.0 {
            (bx / sxx, 0.0)
        } else if syy > 0.0 {
            (0.0, by / syy)
        } else {
            (0.0, 0.0)
        };
        let norm = (gx * gx + gy * gy).sqrt();
        let (axis, slope) = if norm > 0.0 && frames > 1 && hi > lo {
            let axis = [gx / norm, gy / norm];
            let s_max = s_max_pattern
                .iter()
                .map(|d| (d[0] * axis[0] + d[1] * axis[1]).abs())
                .fold(0.0, f64::max);
            if s_max > 0.0 {
                (Some(axis), Some((hi - lo) / (s_max * (frames - 1) as f64)))
            } else {
                (Some(axis), None)
            }
        } else {
            (None, None)
        };
        channels.push(ChannelEntry {
            index,
            loading: p1[index],
            stat_min: if lo.is_finite() { lo } else { 0.0 },
            stat_max: if hi.is_finite() { hi } else { 0.0 },
            axis,
            slope,
        });
    }
    Ok(MotionChannelProfile {
        dim: d,
        fraction,
        channels,
    })
}

/// Convenience: PCA on normalized first-frame samples, then ranking.
pub fn calibrate_profile(calibration: &[CalibrationSample], fraction: f64) -> Result<(PcaModel, MotionChannelProfile)> {
    let (samples, _) = calibration_samples(calibration, true);
    let model = fit_pca(&samples, 2)?;
    let profile = rank_motion_channels(&model, calibration, fraction)?;
    Ok((model, profile))
}

impl MotionChannelProfile {
    pub fn channel_indices(&self) -> Vec<usize> {
        self.channels.iter().map(|c| c.index).collect()
    }

    /// Share of the total |P1| mass held by the retained channels.
    pub fn mass_fraction(&self, p1: &[f64]) -> f64 {
        let total: f64 = p1.iter().map(|v| v.abs()).sum();
        let kept: f64 = self.channels.iter().map(|c| p1[c.index].abs()).sum();
        if total > 0.0 {
            kept / total
        } else {
            0.0
        }
    }

    /// Text form: a `D=<int> q=<float>` header, then one line per channel
    /// `index loading statMin statMax [axisX axisY slope]`.
    pub fn to_text(&self) -> String {
        let mut s = format!("D={} q={}\n", self.dim, self.fraction);
        for c in &self.channels {
            write!(s, "{} {:e} {:e} {:e}", c.index, c.loading, c.stat_min, c.stat_max).unwrap();
            if let (Some(a), Some(k)) = (c.axis, c.slope) {
                write!(s, " {:e} {:e} {:e}", a[0], a[1], k).unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines.next().ok_or_else(|| MoftError::Format("empty profile".into()))?;
        let mut dim = None;
        let mut fraction = None;
        for tok in header.split_whitespace() {
            if let Some(v) = tok.strip_prefix("D=") {
                dim = v.parse::<usize>().ok();
            } else if let Some(v) = tok.strip_prefix("q=") {
                fraction = v.parse::<f64>().ok();
            }
        }
        let (dim, fraction) = match (dim, fraction) {
            (Some(d), Some(q)) => (d, q),
            _ => return Err(MoftError::Format(format!("bad profile header {header:?}"))),
        };
        let mut channels = Vec::new();
        for line in lines {
            let bad = || MoftError::Format(format!("bad profile line {line:?}"));
            let tok: Vec<&str> = line.split_whitespace().collect();
            if tok.len() != 4 && tok.len() != 7 {
                return Err(bad());
            }
            let index: usize = tok[0].parse().map_err(|_| bad())?;
            let num = |i: usize| tok[i].parse::<f64>().map_err(|_| bad());
            if index >= dim {
                return Err(MoftError::Format(format!("channel {index} outside D={dim}")));
            }
            let (axis, slope) = if tok.len() == 7 {
                (Some([num(4)?, num(5)?]), Some(num(6)?))
            } else {
                (None, None)
            };
            channels.push(ChannelEntry {
                index,
                loading: num(1)?,
                stat_min: num(2)?,
                stat_max: num(3)?,
                axis,
                slope,
            });
        }
        if channels.is_empty() {
            return Err(MoftError::Format("profile lists no channels".into()));
        }
        Ok(MotionChannelProfile { dim, fraction, channels })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| MoftError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| MoftError::io(path, e))?;
        Self::from_text(&text)
    }

    /// FNV-1a hash of the text form, as 16 hex digits.
    pub fn id(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in self.to_text().bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}

/// A per-location score map in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl Heatmap {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    /// First (row-major) location of the maximum.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        (best / self.width, best % self.width)
    }

    /// Euclidean distance in pixels from the argmax to `point`.
    pub fn localization_error(&self, point: (usize, usize)) -> f64 {
        let (r, c) = self.argmax();
        let (dr, dc) = (r as f64 - point.0 as f64, c as f64 - point.1 as f64);
        (dr * dr + dc * dc).sqrt()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for r in 0..self.height {
            let row: Vec<String> = (0..self.width).map(|c| format!("{:.6}", self.get(r, c))).collect();
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }

    pub fn save_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let px: Vec<u8> = self.values.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        write_pgm(path, self.width, self.height, &px)
    }
}

/// Cosine similarity between the full frames-by-channels vector at `point`
/// in `reference` and the one at every location of `target`, min-max
/// normalized to [0, 1]. Zero-norm target vectors score zero before
/// normalization; a constant map becomes all ones.
pub fn similarity_map<T: Scalar>(reference: &Tensor4<T>, point: (usize, usize), target: &Tensor4<T>) -> Result<Heatmap> {
    let (rd, td) = (reference.dims(), target.dims());
    if rd.frames != td.frames || rd.channels != td.channels {
        return Err(MoftError::Shape(format!("reference {rd} and target {td} differ in F or D")));
    }
    if point.0 >= rd.height || point.1 >= rd.width {
        return Err(MoftError::Range(format!("point {point:?} outside {}x{}", rd.height, rd.width)));
    }
    let vector = |t: &Tensor4<T>, r: usize, c: usize| -> Vec<f64> {
        (0..t.frames()).flat_map(|f| t.pixel(f, r, c).iter().map(|v| v.to_f64())).collect()
    };
    let q = vector(reference, point.0, point.1);
    let qn = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    if qn == 0.0 {
        return Err(MoftError::DegenerateReference {
            row: point.0,
            col: point.1,
        });
    }
    let raw: Vec<f64> = (0..td.height * td.width)
        .into_par_iter()
        .map(|i| {
            let v = vector(target, i / td.width, i % td.width);
            let vn = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if vn == 0.0 {
                0.0
            } else {
                q.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() / (qn * vn)
            }
        })
        .collect();
    let lo = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let values = if hi > lo {
        raw.iter().map(|v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![1.0; raw.len()]
    };
    Ok(Heatmap {
        height: td.height,
        width: td.width,
        values,
    })
}

/// [`similarity_map`] on motion features, which must share their profile.
pub fn similarity_heatmap(reference: &Moft, point: (usize, usize), target: &Moft) -> Result<Heatmap> {
    if reference.channel_order != target.channel_order {
        return Err(MoftError::ProfileMismatch("reference and target use different channels".into()));
    }
    similarity_map(&reference.values, point, &target.values)
}

/// Argmax localization errors of motion-feature and appearance-feature
/// heatmaps under additive latent noise.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    pub levels: Vec<f64>,
    /// `[level][trial]` errors in pixels.
    pub moft_errors: Vec<Vec<f64>>,
    pub dift_errors: Vec<Vec<f64>>,
}

impl ProbeReport {
    fn rate(errors: &[f64], radius: f64) -> f64 {
        errors.iter().filter(|&&e| e <= radius).count() as f64 / errors.len().max(1) as f64
    }

    pub fn moft_success(&self, level: usize, radius: f64) -> f64 {
        Self::rate(&self.moft_errors[level], radius)
    }

    pub fn dift_success(&self, level: usize, radius: f64) -> f64 {
        Self::rate(&self.dift_errors[level], radius)
    }

    pub fn mean_errors(&self) -> Vec<(f64, f64, f64)> {
        self.levels
            .iter()
            .enumerate()
            .map(|(i, &l)| {
                let m = |e: &[f64]| e.iter().sum::<f64>() / e.len().max(1) as f64;
                (l, m(&self.moft_errors[i]), m(&self.dift_errors[i]))
            })
            .collect()
    }
}

/// Adds seeded i.i.d. Gaussian noise with standard deviation
/// `level * (max - min)` of the latent.
pub fn add_latent_noise(z: &LatentVideo, level: f64, seed: u64) -> Result<LatentVideo> {
    let (lo, hi) = z.value_range();
    let sigma = level * (hi - lo);
    let mut out = z.clone();
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).map_err(|e| MoftError::Argument(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in out.as_mut_slice() {
            *v += normal.sample(&mut rng);
        }
    }
    Ok(out)
}

/// Frame 1 of a tensor as a single-frame tensor.
pub fn first_frame<T: Scalar>(t: &Tensor4<T>) -> Tensor4<T> {
    Tensor4::from_vec_unchecked(t.dims().with_frames(1), t.frame(0).to_vec())
}

/// For each noise level and trial, compares heatmaps computed from the clean
/// reference at `point` against the noisy video. Motion features use the
/// whole clip; appearance features are per-frame point descriptors and use
/// frame 1.
pub fn probe_noise_robustness(
    z: &LatentVideo,
    net: &FeatureNet,
    profile: &MotionChannelProfile,
    point: (usize, usize),
    levels: &[f64],
    trials: usize,
    seed: u64,
) -> Result<ProbeReport> {
    let clean = net.features(z)?;
    let moft_ref = extract_moft(&clean, profile)?;
    let dift_ref = first_frame(&net.dift(z)?);
    let jobs: Vec<(usize, usize)> = (0..levels.len()).flat_map(|l| (0..trials).map(move |t| (l, t))).collect();
    let errors: Vec<(f64, f64)> = jobs
        .par_iter()
        .map(|&(l, t)| {
            let noisy = add_latent_noise(z, levels[l], derive_seed(seed, (l * 1_000_003 + t) as u64))?;
            let m = extract_moft(&net.features(&noisy)?, profile)?;
            let d = first_frame(&net.dift(&noisy)?);
            let hm = similarity_heatmap(&moft_ref, point, &m)?;
            let hd = similarity_map(&dift_ref, point, &d)?;
            Ok((hm.localization_error(point), hd.localization_error(point)))
        })
        .collect::<Result<_>>()?;
    let mut moft_errors = vec![Vec::with_capacity(trials); levels.len()];
    let mut dift_errors = vec![Vec::with_capacity(trials); levels.len()];
    for (&(l, _), (em, ed)) in jobs.iter().zip(errors) {
        moft_errors[l].push(em);
        dift_errors[l].push(ed);
    }
    Ok(ProbeReport {
        levels: levels.to_vec(),
        moft_errors,
        dift_errors,
    })
}
