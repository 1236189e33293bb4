//! Block-matching tracker, tracklet correlation, motion fidelity and the
//! drag mean-distance score.

use std::path::Path;

use rayon::prelude::*;

use crate::error::{MoftError, Result};
use crate::tensor::LatentVideo;

/// Half-size of the square matching window (5x5).
pub const WINDOW_RADIUS: isize = 2;
/// Largest integer offset searched per frame.
pub const SEARCH_RADIUS: isize = 3;
/// Sample spacing of the second sub-pixel refinement stage.
const FINE_STEP: f64 = 0.25;

/// Per-frame point positions, `(x, y)` = (column, row) in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct Tracklet {
    pub points: Vec<(f64, f64)>,
}

impl Tracklet {
    pub fn new(points: Vec<(f64, f64)>) -> Self {
        Tracklet { points }
    }

    pub fn frames(&self) -> usize {
        self.points.len()
    }

    /// `p_{k+1} - p_k` for each consecutive pair.
    pub fn displacements(&self) -> Vec<(f64, f64)> {
        self.points.windows(2).map(|w| (w[1].0 - w[0].0, w[1].1 - w[0].1)).collect()
    }

    /// The same start point with every displacement multiplied by `a`.
    pub fn with_scaled_motion(&self, a: f64) -> Self {
        let mut p = self.points[0];
        let mut out = vec![p];
        for (dx, dy) in self.displacements() {
            p = (p.0 + a * dx, p.1 + a * dy);
            out.push(p);
        }
        Tracklet::new(out)
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Tracklet::new(self.points.iter().map(|&(x, y)| (x + dx, y + dy)).collect())
    }

    pub fn to_line(&self) -> String {
        let parts: Vec<String> = self.points.iter().map(|(x, y)| format!("{x},{y}")).collect();
        parts.join(" ")
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let points = line
            .split_whitespace()
            .map(|tok| {
                let bad = || MoftError::Format(format!("bad tracklet point {tok:?}"));
                let (x, y) = tok.split_once(',').ok_or_else(bad)?;
                let x: f64 = x.parse().map_err(|_| bad())?;
                let y: f64 = y.parse().map_err(|_| bad())?;
                if x.is_finite() && y.is_finite() {
                    Ok((x, y))
                } else {
                    Err(bad())
                }
            })
            .collect::<Result<Vec<_>>>()?;
        if points.is_empty() {
            return Err(MoftError::Format("empty tracklet".into()));
        }
        Ok(Tracklet::new(points))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrackletSet {
    pub tracklets: Vec<Tracklet>,
}

impl TrackletSet {
    pub fn new(tracklets: Vec<Tracklet>) -> Self {
        TrackletSet { tracklets }
    }

    pub fn len(&self) -> usize {
        self.tracklets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracklets.is_empty()
    }

    pub fn to_text(&self) -> String {
        self.tracklets.iter().map(|t| t.to_line() + "\n").collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let tracklets = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(Tracklet::parse_line)
            .collect::<Result<Vec<_>>>()?;
        if let Some(t) = tracklets.iter().find(|t| t.frames() != tracklets[0].frames()) {
            return Err(MoftError::Format(format!(
                "tracklets have unequal lengths ({} vs {})",
                t.frames(),
                tracklets[0].frames()
            )));
        }
        Ok(TrackletSet { tracklets })
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
}

/// Bilinear sample of all channels at fractional (row, col), wrapping
/// toroidally.
fn sample(video: &LatentVideo, frame: usize, row: f64, col: f64, out: &mut [f64]) {
    let d = video.dims();
    let (h, w) = (d.height as isize, d.width as isize);
    let (r0, c0) = (row.floor(), col.floor());
    let (fr, fc) = (row - r0, col - c0);
    let (r0, c0) = (r0 as isize, c0 as isize);
    out.iter_mut().for_each(|v| *v = 0.0);
    let v = video.values();
    for (dr, wr) in [(0, 1.0 - fr), (1, fr)] {
        if wr == 0.0 {
            continue;
        }
        let rr = (r0 + dr).rem_euclid(h) as usize;
        for (dc, wc) in [(0, 1.0 - fc), (1, fc)] {
            if wc == 0.0 {
                continue;
            }
            let cc = (c0 + dc).rem_euclid(w) as usize;
            for (o, x) in out.iter_mut().zip(v.pixel(frame, rr, cc)) {
                *o += wr * wc * x;
            }
        }
    }
}

fn window(video: &LatentVideo, frame: usize, row: f64, col: f64) -> Vec<f64> {
    let c = video.dims().channels;
    let side = (2 * WINDOW_RADIUS + 1) as usize;
    let mut out = vec![0.0; side * side * c];
    let mut px = vec![0.0; c];
    let mut i = 0;
    for dr in -WINDOW_RADIUS..=WINDOW_RADIUS {
        for dc in -WINDOW_RADIUS..=WINDOW_RADIUS {
            sample(video, frame, row + dr as f64, col + dc as f64, &mut px);
            out[i..i + c].copy_from_slice(&px);
            i += c;
        }
    }
    out
}

/// Zero-mean, unit-norm copy, or `None` for a flat window.
fn standardize(v: &[f64]) -> Option<Vec<f64>> {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let centred: Vec<f64> = v.iter().map(|x| x - mean).collect();
    let norm = centred.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm <= 1e-12 * (1.0 + mean.abs()) * (v.len() as f64).sqrt() {
        None
    } else {
        Some(centred.into_iter().map(|x| x / norm).collect())
    }
}

/// Vertex offset of the parabola through (-1, a), (0, b), (1, c).
fn parabolic(a: f64, b: f64, c: f64) -> f64 {
    let den = a - 2.0 * b + c;
    if den >= 0.0 {
        0.0
    } else {
        (0.5 * (a - c) / den).clamp(-0.5, 0.5)
    }
}

/// Displacement `(dx, dy)` of the window at `(row, col)` from `frame` to
/// `frame + 1`, and whether the template was flat.
pub fn match_block(video: &LatentVideo, frame: usize, row: f64, col: f64) -> (f64, f64, bool) {
    let Some(template) = standardize(&window(video, frame, row, col)) else {
        return (0.0, 0.0, true);
    };
    let side = (2 * SEARCH_RADIUS + 1) as usize;
    let mut scores = vec![f64::NEG_INFINITY; side * side];
    for (i, s) in scores.iter_mut().enumerate() {
        let dy = i as isize / side as isize - SEARCH_RADIUS;
        let dx = i as isize % side as isize - SEARCH_RADIUS;
        if let Some(cand) = standardize(&window(video, frame + 1, row + dy as f64, col + dx as f64)) {
            *s = template.iter().zip(&cand).map(|(a, b)| a * b).sum();
        }
    }
    // Prefer the smallest offset among equal scores.
    let mut best = None::<(usize, f64, isize)>;
    for (i, &s) in scores.iter().enumerate() {
        let dy = i as isize / side as isize - SEARCH_RADIUS;
        let dx = i as isize % side as isize - SEARCH_RADIUS;
        let dist = dx * dx + dy * dy;
        match best {
            Some((_, bs, bd)) if s < bs || (s == bs && dist >= bd) => {}
            _ if s == f64::NEG_INFINITY => {}
            _ => best = Some((i, s, dist)),
        }
    }
    let Some((bi, bs, _)) = best else {
        return (0.0, 0.0, true);
    };
    let by = bi as isize / side as isize - SEARCH_RADIUS;
    let bx = bi as isize % side as isize - SEARCH_RADIUS;
    let (mut fx, mut fy) = (bx as f64, by as f64);
    if bs < 1.0 - 1e-9 {
        let at = |dx: isize, dy: isize| -> Option<f64> {
            if dx.abs() > SEARCH_RADIUS || dy.abs() > SEARCH_RADIUS {
                return None;
            }
            let s = scores[((dy + SEARCH_RADIUS) as usize) * side + (dx + SEARCH_RADIUS) as usize];
            s.is_finite().then_some(s)
        };
        if let (Some(a), Some(c)) = (at(bx - 1, by), at(bx + 1, by)) {
            fx += parabolic(a, bs, c);
        }
        if let (Some(a), Some(c)) = (at(bx, by - 1), at(bx, by + 1)) {
            fy += parabolic(a, bs, c);
        }
        // Second, finer parabola around the first estimate.
        let ncc = |dx: f64, dy: f64| -> Option<f64> {
            let cand = standardize(&window(video, frame + 1, row + dy, col + dx))?;
            Some(template.iter().zip(&cand).map(|(a, b)| a * b).sum())
        };
        let h = FINE_STEP;
        if let (Some(a), Some(b), Some(c)) = (ncc(fx - h, fy), ncc(fx, fy), ncc(fx + h, fy)) {
            fx += h * parabolic(a, b, c);
        }
        if let (Some(a), Some(b), Some(c)) = (ncc(fx, fy - h), ncc(fx, fy), ncc(fx, fy + h)) {
            fy += h * parabolic(a, b, c);
        }
    }
    (fx, fy, false)
}

/// Tracks each `(row, col)` seed through the video; also returns, per seed,
/// the frame transitions whose template was flat.
pub fn track_detailed(video: &LatentVideo, seeds: &[(f64, f64)]) -> Result<(TrackletSet, Vec<Vec<usize>>)> {
    let d = video.dims();
    for &(r, c) in seeds {
        if !(r >= 0.0 && c >= 0.0 && r <= (d.height - 1) as f64 && c <= (d.width - 1) as f64) {
            return Err(MoftError::Argument(format!("seed ({r}, {c}) outside {}x{}", d.height, d.width)));
        }
    }
    let results: Vec<(Tracklet, Vec<usize>)> = seeds
        .par_iter()
        .map(|&(r, c)| {
            let (mut x, mut y) = (c, r);
            let mut points = vec![(x, y)];
            let mut flat = Vec::new();
            for f in 0..d.frames - 1 {
                let (dx, dy, is_flat) = match_block(video, f, y, x);
                if is_flat {
                    flat.push(f);
                }
                x += dx;
                y += dy;
                points.push((x, y));
            }
            (Tracklet::new(points), flat)
        })
        .collect();
    let (tracklets, flags) = results.into_iter().unzip();
    Ok((TrackletSet::new(tracklets), flags))
}

pub fn track(video: &LatentVideo, seeds: &[(f64, f64)]) -> Result<TrackletSet> {
    Ok(track_detailed(video, seeds)?.0)
}

/// Evenly spaced `(row, col)` seeds with `margin` pixels kept clear.
pub fn grid_seeds(height: usize, width: usize, step: usize, margin: usize) -> Vec<(f64, f64)> {
    let step = step.max(1);
    let rows = (margin..height.saturating_sub(margin)).step_by(step);
    rows.flat_map(|r| {
        (margin..width.saturating_sub(margin))
            .step_by(step)
            .map(move |c| (r as f64, c as f64))
    })
    .collect()
}

/// Mean per-frame cosine between displacement vectors. Frames where either
/// displacement is zero are skipped.
pub fn tracklet_corr(a: &Tracklet, b: &Tracklet) -> Result<f64> {
    if a.frames() != b.frames() {
        return Err(MoftError::Argument(format!(
            "tracklets have {} and {} frames",
            a.frames(),
            b.frames()
        )));
    }
    let mut sum = 0.0;
    let mut n = 0;
    for ((ax, ay), (bx, by)) in a.displacements().into_iter().zip(b.displacements()) {
        let na = (ax * ax + ay * ay).sqrt();
        let nb = (bx * bx + by * by).sqrt();
        if na == 0.0 || nb == 0.0 {
            continue;
        }
        sum += (ax * bx + ay * by) / (na * nb);
        n += 1;
    }
    if n == 0 {
        return Err(MoftError::UndefinedCorrelation);
    }
    Ok(sum / n as f64)
}

/// `(1/m) sum_ref max_gen corr + (1/n) sum_gen max_ref corr`, in [-2, 2].
/// A tracklet whose every pairing is undefined drops out of its average.
pub fn motion_fidelity(generated: &TrackletSet, reference: &TrackletSet) -> Result<f64> {
    if generated.is_empty() || reference.is_empty() {
        return Err(MoftError::Argument("motion fidelity needs nonempty tracklet sets".into()));
    }
    let table: Vec<Vec<Option<f64>>> = generated
        .tracklets
        .iter()
        .map(|g| {
            reference
                .tracklets
                .iter()
                .map(|r| match tracklet_corr(g, r) {
                    Ok(v) => Ok(Some(v)),
                    Err(MoftError::UndefinedCorrelation) => Ok(None),
                    Err(e) => Err(e),
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mean_of_max = |values: Vec<Option<f64>>| -> Option<f64> {
        values.into_iter().flatten().reduce(f64::max)
    };
    let average = |best: Vec<Option<f64>>| -> Option<f64> {
        let defined: Vec<f64> = best.into_iter().flatten().collect();
        (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
    };
    let per_ref = (0..reference.len())
        .map(|j| mean_of_max(table.iter().map(|row| row[j]).collect()))
        .collect();
    let per_gen = table.iter().map(|row| mean_of_max(row.clone())).collect();
    match (average(per_ref), average(per_gen)) {
        (Some(a), Some(b)) => Ok(a + b),
        _ => Err(MoftError::UndefinedCorrelation),
    }
}

/// Display-only rescale `50 (score + 2) / 4` of a raw fidelity score.
pub fn fidelity_display(score: f64) -> f64 {
    50.0 * (score + 2.0) / 4.0
}

/// Mean per-frame Euclidean distance divided by the domain diagonal,
/// clamped to 1.
pub fn mean_distance(edited: &Tracklet, target: &Tracklet, domain: (usize, usize)) -> Result<f64> {
    if edited.frames() != target.frames() || edited.frames() == 0 {
        return Err(MoftError::Argument(format!(
            "tracklets have {} and {} frames",
            edited.frames(),
            target.frames()
        )));
    }
    let diag = ((domain.0 * domain.0 + domain.1 * domain.1) as f64).sqrt();
    let total: f64 = edited
        .points
        .iter()
        .zip(&target.points)
        .map(|(a, b)| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt())
        .sum();
    Ok((total / edited.frames() as f64 / diag).min(1.0))
}

/// Per-frame mean position of a set of equal-length tracklets.
pub fn average_tracklets(set: &TrackletSet) -> Result<Tracklet> {
    let first = set
        .tracklets
        .first()
        .ok_or_else(|| MoftError::Argument("cannot average an empty tracklet set".into()))?;
    let frames = first.frames();
    if set.tracklets.iter().any(|t| t.frames() != frames) {
        return Err(MoftError::Argument("tracklets have unequal lengths".into()));
    }
    let n = set.len() as f64;
    Ok(Tracklet::new(
        (0..frames)
            .map(|f| {
                let (sx, sy) = set
                    .tracklets
                    .iter()
                    .fold((0.0, 0.0), |(x, y), t| (x + t.points[f].0, y + t.points[f].1));
                (sx / n, sy / n)
            })
            .collect(),
    ))
}
