//! Dense 4-D tensors in (frame, row, column, channel) order, the `MFT1`
//! binary format, and spatial region masks.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{MoftError, Result};

const MAGIC: &[u8; 4] = b"MFT1";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 24;

/// Element types a [`Tensor4`] may hold.
pub trait Scalar: Copy + Default + PartialEq + std::fmt::Debug + Send + Sync + 'static {
    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
    fn is_finite(self) -> bool;
}

impl Scalar for f32 {
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn is_finite(self) -> bool {
        f32::is_finite(self)
    }
}

impl Scalar for f64 {
    fn to_f64(self) -> f64 {
        self
    }
    fn from_f64(v: f64) -> Self {
        v
    }
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

/// Extents of a 4-D tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims4 {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Dims4 {
    pub const fn new(frames: usize, height: usize, width: usize, channels: usize) -> Self {
        Dims4 {
            frames,
            height,
            width,
            channels,
        }
    }

    pub fn len(&self) -> usize {
        self.frames * self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements in one frame.
    pub fn frame_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    /// Number of spatial positions per frame.
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn offset(&self, frame: usize, row: usize, col: usize, ch: usize) -> usize {
        ((frame * self.height + row) * self.width + col) * self.channels + ch
    }

    pub fn with_frames(self, frames: usize) -> Self {
        Dims4 { frames, ..self }
    }

    pub fn with_channels(self, channels: usize) -> Self {
        Dims4 { channels, ..self }
    }

    fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.height == 0 || self.width == 0 || self.channels == 0 {
            return Err(MoftError::Shape(format!(
                "every dimension must be at least 1, got {self}"
            )));
        }
        Ok(())
    }
}

impl std::fmt::Display for Dims4 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "F={} H={} W={} D={}",
            self.frames, self.height, self.width, self.channels
        )
    }
}

/// Row-major dense tensor. Construction checks length and finiteness.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<T> {
    dims: Dims4,
    data: Vec<T>,
}

/// Features as produced by the feature network, one `f32` per element.
pub type FeatureTensor = Tensor4<f32>;

impl<T: Scalar> Tensor4<T> {
    pub fn new(dims: Dims4, data: Vec<T>) -> Result<Self> {
        dims.validate()?;
        if data.len() != dims.len() {
            return Err(MoftError::Shape(format!(
                "data length {} does not match {dims} ({} elements)",
                data.len(),
                dims.len()
            )));
        }
        check_finite(&data)?;
        Ok(Tensor4 { dims, data })
    }

    pub fn zeros(dims: Dims4) -> Result<Self> {
        dims.validate()?;
        Ok(Tensor4 {
            dims,
            data: vec![T::default(); dims.len()],
        })
    }

    /// Builds a tensor by evaluating `f(frame, row, col, channel)`.
    pub fn from_fn(dims: Dims4, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Result<Self> {
        dims.validate()?;
        let mut data = Vec::with_capacity(dims.len());
        for fr in 0..dims.frames {
            for r in 0..dims.height {
                for c in 0..dims.width {
                    for ch in 0..dims.channels {
                        data.push(f(fr, r, c, ch));
                    }
                }
            }
        }
        Self::new(dims, data)
    }

    pub(crate) fn from_vec_unchecked(dims: Dims4, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), dims.len());
        Tensor4 { dims, data }
    }

    pub fn dims(&self) -> Dims4 {
        self.dims
    }

    pub fn frames(&self) -> usize {
        self.dims.frames
    }

    pub fn height(&self) -> usize {
        self.dims.height
    }

    pub fn width(&self) -> usize {
        self.dims.width
    }

    pub fn channels(&self) -> usize {
        self.dims.channels
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, frame: usize, row: usize, col: usize, ch: usize) -> T {
        self.data[self.dims.offset(frame, row, col, ch)]
    }

    #[inline]
    pub fn set(&mut self, frame: usize, row: usize, col: usize, ch: usize, v: T) {
        let i = self.dims.offset(frame, row, col, ch);
        self.data[i] = v;
    }

    /// The channel vector at one (frame, row, col).
    pub fn pixel(&self, frame: usize, row: usize, col: usize) -> &[T] {
        let start = self.dims.offset(frame, row, col, 0);
        &self.data[start..start + self.dims.channels]
    }

    pub fn frame(&self, frame: usize) -> &[T] {
        let n = self.dims.frame_len();
        &self.data[frame * n..(frame + 1) * n]
    }

    /// Element type conversion. Fails if a value overflows the target type.
    pub fn cast<U: Scalar>(&self) -> Result<Tensor4<U>> {
        let data: Vec<U> = self.data.iter().map(|v| U::from_f64(v.to_f64())).collect();
        check_finite(&data)?;
        Ok(Tensor4 {
            dims: self.dims,
            data,
        })
    }

    pub fn scaled(&self, a: f64) -> Result<Self> {
        let data = self.data.iter().map(|v| T::from_f64(v.to_f64() * a)).collect();
        Self::new(self.dims, data)
    }

    /// Keeps the listed channels, in the given order.
    pub fn select_channels(&self, channels: &[usize]) -> Result<Self> {
        if let Some(&bad) = channels.iter().find(|&&c| c >= self.dims.channels) {
            return Err(MoftError::ProfileMismatch(format!(
                "channel {bad} out of range for D={}",
                self.dims.channels
            )));
        }
        if channels.is_empty() {
            return Err(MoftError::Argument("empty channel selection".into()));
        }
        let out_dims = self.dims.with_channels(channels.len());
        let mut data = Vec::with_capacity(out_dims.len());
        for px in self.data.chunks_exact(self.dims.channels) {
            data.extend(channels.iter().map(|&c| px[c]));
        }
        Ok(Tensor4 {
            dims: out_dims,
            data,
        })
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.to_f64() - b.to_f64()).abs())
            .fold(0.0, f64::max)
    }
}

fn check_finite<T: Scalar>(data: &[T]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(MoftError::NonFinite { index }),
        None => Ok(()),
    }
}

/// Neumaier-compensated accumulator.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    #[inline]
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub(crate) fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Per-element mean over frames in `f64`, one value per (row, col, channel).
pub(crate) fn frame_mean_f64<T: Scalar>(t: &Tensor4<T>) -> Vec<f64> {
    let n = t.dims.frame_len();
    let mut acc = vec![CompensatedSum::default(); n];
    for frame in t.data.chunks_exact(n) {
        for (a, v) in acc.iter_mut().zip(frame) {
            a.add(v.to_f64());
        }
    }
    let inv = 1.0 / t.dims.frames as f64;
    acc.iter().map(|a| a.value() * inv).collect()
}

/// Arithmetic mean over frames; the result has a single frame.
pub fn frame_mean<T: Scalar>(t: &Tensor4<T>) -> Tensor4<T> {
    let data = frame_mean_f64(t).into_iter().map(T::from_f64).collect();
    Tensor4::from_vec_unchecked(t.dims.with_frames(1), data)
}

/// Writes `t` in the `MFT1` layout. Nothing is written if `t` holds a
/// non-finite value.
pub fn save_tensor(t: &FeatureTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    check_finite(&t.data)?;
    let bytes = encode_mft1(t);
    let file = fs::File::create(path).map_err(|e| MoftError::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&bytes).map_err(|e| MoftError::io(path, e))?;
    w.flush().map_err(|e| MoftError::io(path, e))
}

pub fn load_tensor(path: impl AsRef<Path>) -> Result<FeatureTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| MoftError::io(path, e))?;
    decode_mft1(&bytes)
}

pub fn encode_mft1(t: &FeatureTensor) -> Vec<u8> {
    let d = t.dims;
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * d.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [d.frames, d.height, d.width, d.channels] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for v in &t.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_mft1(bytes: &[u8]) -> Result<FeatureTensor> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(MoftError::Format("missing MFT1 magic".into()));
    }
    if bytes.len() < HEADER_LEN {
        return Err(MoftError::CorruptFile(format!(
            "header truncated at {} bytes",
            bytes.len()
        )));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
    let version = word(1);
    if version != VERSION {
        return Err(MoftError::Format(format!("unsupported version {version}")));
    }
    let dims = Dims4::new(
        word(2) as usize,
        word(3) as usize,
        word(4) as usize,
        word(5) as usize,
    );
    dims.validate()?;
    let payload = &bytes[HEADER_LEN..];
    let expected = dims
        .frames
        .checked_mul(dims.height)
        .and_then(|n| n.checked_mul(dims.width))
        .and_then(|n| n.checked_mul(dims.channels))
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| MoftError::CorruptFile(format!("header dims overflow: {dims}")))?;
    if payload.len() != expected {
        return Err(MoftError::CorruptFile(format!(
            "header {dims} needs {expected} payload bytes, found {}",
            payload.len()
        )));
    }
    let data: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Tensor4::new(dims, data)
}

/// A video of latents driving the toy feature network.
///
/// Values are kept in `f64` so that latent optimization and its
/// finite-difference checks are not limited by single precision.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentVideo {
    pub seed: u64,
    values: Tensor4<f64>,
}

impl LatentVideo {
    pub fn new(values: Tensor4<f64>, seed: u64) -> Self {
        LatentVideo { seed, values }
    }

    pub fn zeros(dims: Dims4, seed: u64) -> Result<Self> {
        Ok(LatentVideo {
            seed,
            values: Tensor4::zeros(dims)?,
        })
    }

    pub fn dims(&self) -> Dims4 {
        self.values.dims()
    }

    pub fn values(&self) -> &Tensor4<f64> {
        &self.values
    }

    pub fn as_slice(&self) -> &[f64] {
        self.values.as_slice()
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        self.values.as_mut_slice()
    }

    /// (min, max) over all values.
    pub fn value_range(&self) -> (f64, f64) {
        self.values
            .as_slice()
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Single-precision copy for storage.
    pub fn to_feature_tensor(&self) -> Result<FeatureTensor> {
        self.values.cast()
    }

    pub fn from_feature_tensor(t: &FeatureTensor, seed: u64) -> Self {
        let data = t.as_slice().iter().map(|&v| v as f64).collect();
        LatentVideo {
            seed,
            values: Tensor4::from_vec_unchecked(t.dims(), data),
        }
    }
}

/// Spatial region ℛ plus the frame set ℱ used for gradient clipping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMask {
    height: usize,
    width: usize,
    inside: Vec<bool>,
    frames: Vec<bool>,
}

impl RegionMask {
    /// Every location and every one of `frames` frames.
    pub fn full(height: usize, width: usize, frames: usize) -> Self {
        RegionMask {
            height,
            width,
            inside: vec![true; height * width],
            frames: vec![true; frames],
        }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        frames: usize,
        f: impl Fn(usize, usize) -> bool,
    ) -> Self {
        let inside = (0..height * width).map(|i| f(i / width, i % width)).collect();
        RegionMask {
            height,
            width,
            inside,
            frames: vec![true; frames],
        }
    }

    /// Restricts the frame set to the first `n` frames.
    pub fn with_first_frames(mut self, n: usize) -> Self {
        for (i, f) in self.frames.iter_mut().enumerate() {
            *f = i < n;
        }
        self
    }

    pub fn with_frame_set(mut self, frames: &[usize]) -> Self {
        self.frames.iter_mut().for_each(|f| *f = false);
        for &i in frames {
            if i < self.frames.len() {
                self.frames[i] = true;
            }
        }
        self
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    #[inline]
    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.inside[row * self.width + col]
    }

    #[inline]
    pub fn frame_active(&self, frame: usize) -> bool {
        self.frames.get(frame).copied().unwrap_or(false)
    }

    pub fn count(&self) -> usize {
        self.inside.iter().filter(|&&b| b).count()
    }

    pub fn positions(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.inside
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i / self.width, i % self.width))
    }

    /// Reads a binary PGM (P5, maxval 255). Pixels above 127 are inside.
    pub fn load_pgm(path: impl AsRef<Path>, frames: usize) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| MoftError::io(path, e))?;
        let (width, height, pixels) = decode_pgm(&bytes)?;
        Ok(RegionMask {
            height,
            width,
            inside: pixels.iter().map(|&p| p > 127).collect(),
            frames: vec![true; frames],
        })
    }

    pub fn save_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let pixels: Vec<u8> = self.inside.iter().map(|&b| if b { 255 } else { 0 }).collect();
        write_pgm(path, self.width, self.height, &pixels)
    }
}

pub fn write_pgm(path: impl AsRef<Path>, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    fs::write(path, out).map_err(|e| MoftError::io(path, e))
}

/// Parses a P5 PGM with maxval 255, returning (width, height, pixels).
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let mut pos = 0;
    let mut next_token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(MoftError::Format("truncated PGM header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if next_token()? != "P5" {
        return Err(MoftError::Format("PGM must be binary P5".into()));
    }
    let parse = |s: String| {
        s.parse::<usize>()
            .map_err(|_| MoftError::Format(format!("bad PGM header field {s:?}")))
    };
    let width = parse(next_token()?)?;
    let height = parse(next_token()?)?;
    let maxval = parse(next_token()?)?;
    if maxval != 255 {
        return Err(MoftError::Format(format!("PGM maxval must be 255, got {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    let start = pos + 1;
    let need = width * height;
    if bytes.len() < start + need {
        return Err(MoftError::CorruptFile(format!(
            "PGM raster needs {need} bytes, found {}",
            bytes.len().saturating_sub(start)
        )));
    }
    Ok((width, height, bytes[start..start + need].to_vec()))
}
