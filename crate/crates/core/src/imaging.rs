//! Raster containers, Netpbm I/O, grayscale conversion, Otsu binarization and
//! deterministic augmentation.
//!
//! Ink is assumed dark on a light ground: binarization marks dark samples as
//! foreground. Plates photographed the other way round should go through
//! [`invert`] first.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("unsupported magic {0:?}, expected P5 or P6")]
    BadMagic(String),
    #[error("truncated data: expected {expected} sample bytes, found {found}")]
    TruncatedData { expected: usize, found: usize },
    #[error("unsupported maxval {0}, only 255 is accepted")]
    UnsupportedMaxval(u32),
    #[error("malformed header: {0}")]
    BadHeader(String),
    #[error("invalid raster: {0}")]
    InvalidRaster(String),
    #[error("invalid augmentation spec: {0}")]
    InvalidAugSpec(String),
}

pub type Result<T> = std::result::Result<T, ImagingError>;

/// An 8-bit image with one (gray) or three (RGB) interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(ImagingError::InvalidRaster(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(ImagingError::InvalidRaster(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(ImagingError::InvalidRaster(format!(
                "data length {} does not match {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// A single-channel raster filled with `value`.
    ///
    /// Panics if either dimension is zero.
    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        assert!(
            width > 0 && height > 0,
            "raster dimensions must be positive"
        );
        Self {
            width,
            height,
            channels: 1,
            data: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    /// Sample of channel `c` at `(x, y)`.
    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: u8) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Gray value at `(x, y)` of a single-channel raster.
    #[inline]
    pub fn luma(&self, x: usize, y: usize) -> u8 {
        debug_assert_eq!(self.channels, 1);
        self.data[y * self.width + x]
    }

    /// Copy of the half-open rectangle `[x0, x1) × [y0, y1)`.
    pub fn crop(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> Result<Raster> {
        if x0 >= x1 || y0 >= y1 || x1 > self.width || y1 > self.height {
            return Err(ImagingError::InvalidRaster(format!(
                "crop ({x0},{y0})-({x1},{y1}) outside {}x{}",
                self.width, self.height
            )));
        }
        let (w, h, ch) = (x1 - x0, y1 - y0, self.channels);
        let mut data = Vec::with_capacity(w * h * ch);
        for y in y0..y1 {
            let start = (y * self.width + x0) * ch;
            data.extend_from_slice(&self.data[start..start + w * ch]);
        }
        Raster::new(w, h, ch, data)
    }

    /// Expand a gray raster to three identical channels.
    pub fn to_rgb(&self) -> Raster {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        Raster {
            width: self.width,
            height: self.height,
            channels: 3,
            data,
        }
    }
}

/// Binary mask; `true` marks foreground (ink).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryRaster {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryRaster {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 || bits.len() != width * height {
            return Err(ImagingError::InvalidRaster(format!(
                "{} bits do not describe a {width}x{height} mask",
                bits.len()
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0, "mask dimensions must be positive");
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count_foreground(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn crop(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> Result<BinaryRaster> {
        if x0 >= x1 || y0 >= y1 || x1 > self.width || y1 > self.height {
            return Err(ImagingError::InvalidRaster(format!(
                "crop ({x0},{y0})-({x1},{y1}) outside {}x{}",
                self.width, self.height
            )));
        }
        let mut bits = Vec::with_capacity((x1 - x0) * (y1 - y0));
        for y in y0..y1 {
            bits.extend_from_slice(&self.bits[y * self.width + x0..y * self.width + x1]);
        }
        BinaryRaster::new(x1 - x0, y1 - y0, bits)
    }

    /// Render as a gray raster: ink black, ground white.
    pub fn to_raster(&self) -> Raster {
        let data = self.bits.iter().map(|&b| if b { 0 } else { 255 }).collect();
        Raster {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }
}

// ---------------------------------------------------------------------------
// Netpbm
// ---------------------------------------------------------------------------

pub fn load_image(path: impl AsRef<Path>) -> Result<Raster> {
    decode_pnm(&fs::read(path)?)
}

/// Write a 1-channel raster as P5 or a 3-channel raster as P6.
pub fn save_image(raster: &Raster, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_pnm(raster))?;
    Ok(())
}

pub fn encode_pnm(raster: &Raster) -> Vec<u8> {
    let magic = if raster.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", raster.width, raster.height).into_bytes();
    out.extend_from_slice(&raster.data);
    out
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderReader<'_> {
    fn skip_whitespace_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u32> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(ImagingError::BadHeader(format!("missing {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| ImagingError::BadHeader(format!("{what} out of range")))
    }
}

pub fn decode_pnm(bytes: &[u8]) -> Result<Raster> {
    let channels = match bytes.get(0..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => {
            let shown = String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned();
            return Err(ImagingError::BadMagic(shown));
        }
    };
    let mut header = HeaderReader { bytes, pos: 2 };
    let width = header.number("width")? as usize;
    let height = header.number("height")? as usize;
    let maxval = header.number("maxval")?;
    if maxval != 255 {
        return Err(ImagingError::UnsupportedMaxval(maxval));
    }
    if width == 0 || height == 0 {
        return Err(ImagingError::BadHeader(format!(
            "zero dimension {width}x{height}"
        )));
    }
    // Exactly one whitespace byte separates maxval from the raster.
    match bytes.get(header.pos) {
        Some(b) if b.is_ascii_whitespace() => header.pos += 1,
        _ => return Err(ImagingError::BadHeader("no whitespace after maxval".into())),
    }
    let expected = width * height * channels;
    let payload = &bytes[header.pos..];
    if payload.len() < expected {
        return Err(ImagingError::TruncatedData {
            expected,
            found: payload.len(),
        });
    }
    Raster::new(width, height, channels, payload[..expected].to_vec())
}

// ---------------------------------------------------------------------------
// Point operations
// ---------------------------------------------------------------------------

/// BT.601 luma, rounded. Gray input is returned unchanged.
pub fn to_grayscale(r: &Raster) -> Raster {
    if r.channels == 1 {
        return r.clone();
    }
    let data = r
        .data
        .chunks_exact(3)
        .map(|px| {
            let y = 0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64;
            y.round().clamp(0.0, 255.0) as u8
        })
        .collect();
    Raster {
        width: r.width,
        height: r.height,
        channels: 1,
        data,
    }
}

pub fn invert(r: &Raster) -> Raster {
    let mut out = r.clone();
    out.data.iter_mut().for_each(|v| *v = 255 - *v);
    out
}

pub fn histogram(g: &Raster) -> [u64; 256] {
    let mut hist = [0u64; 256];
    for &v in &g.data {
        hist[v as usize] += 1;
    }
    hist
}

/// Otsu threshold `t` in `0..=256`; foreground is every sample `< t`.
///
/// Ties resolve to the lowest maximizing threshold. A histogram with a single
/// occupied bin yields `0` (everything background).
pub fn otsu_threshold(g: &Raster) -> u16 {
    let hist = histogram(g);
    let total: f64 = hist.iter().sum::<u64>() as f64;
    let sum_all: f64 = hist
        .iter()
        .enumerate()
        .map(|(v, &c)| v as f64 * c as f64)
        .sum();

    let mut best_t = 0u16;
    let mut best_var = 0.0f64;
    let (mut n_below, mut sum_below) = (0.0f64, 0.0f64);
    for t in 1..=256u16 {
        let v = (t - 1) as usize;
        n_below += hist[v] as f64;
        sum_below += v as f64 * hist[v] as f64;
        let n_above = total - n_below;
        if n_below == 0.0 || n_above == 0.0 {
            continue;
        }
        let mean_below = sum_below / n_below;
        let mean_above = (sum_all - sum_below) / n_above;
        let diff = mean_below - mean_above;
        let between = (n_below / total) * (n_above / total) * diff * diff;
        // The relative margin keeps float noise from breaking exact ties in
        // favour of a higher threshold.
        if between > best_var * (1.0 + 1e-12) {
            best_var = between;
            best_t = t;
        }
    }
    best_t
}

/// Foreground where the sample is strictly darker than `threshold`.
pub fn binarize_with(g: &Raster, threshold: u16) -> BinaryRaster {
    let gray = to_grayscale(g);
    let bits = gray.data.iter().map(|&v| (v as u16) < threshold).collect();
    BinaryRaster {
        width: gray.width,
        height: gray.height,
        bits,
    }
}

pub fn binarize_otsu(g: &Raster) -> BinaryRaster {
    let gray = to_grayscale(g);
    binarize_with(&gray, otsu_threshold(&gray))
}

// ---------------------------------------------------------------------------
// Resampling
// ---------------------------------------------------------------------------

/// Bilinear resize of a gray raster.
pub fn resize_bilinear(g: &Raster, width: usize, height: usize) -> Raster {
    assert!(width > 0 && height > 0);
    let g = to_grayscale(g);
    if g.width == width && g.height == height {
        return g;
    }
    let sx = g.width as f64 / width as f64;
    let sy = g.height as f64 / height as f64;
    let mut data = Vec::with_capacity(width * height);
    for y in 0..height {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (g.height - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(g.height - 1);
        let wy = fy - y0 as f64;
        for x in 0..width {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (g.width - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(g.width - 1);
            let wx = fx - x0 as f64;
            let top = g.luma(x0, y0) as f64 * (1.0 - wx) + g.luma(x1, y0) as f64 * wx;
            let bottom = g.luma(x0, y1) as f64 * (1.0 - wx) + g.luma(x1, y1) as f64 * wx;
            data.push((top * (1.0 - wy) + bottom * wy).round().clamp(0.0, 255.0) as u8);
        }
    }
    Raster {
        width,
        height,
        channels: 1,
        data,
    }
}

/// Center `g` on a square canvas of side `max(w, h)` filled with `fill`.
pub fn pad_to_square(g: &Raster, fill: u8) -> Raster {
    let g = to_grayscale(g);
    let side = g.width.max(g.height);
    if g.width == g.height {
        return g;
    }
    let mut out = Raster::filled(side, side, fill);
    let ox = (side - g.width) / 2;
    let oy = (side - g.height) / 2;
    for y in 0..g.height {
        for x in 0..g.width {
            out.set(ox + x, oy + y, 0, g.luma(x, y));
        }
    }
    out
}

fn border_median(g: &Raster) -> u8 {
    let mut samples = Vec::with_capacity(2 * (g.width + g.height));
    for x in 0..g.width {
        samples.push(g.luma(x, 0));
        samples.push(g.luma(x, g.height - 1));
    }
    for y in 0..g.height {
        samples.push(g.luma(0, y));
        samples.push(g.luma(g.width - 1, y));
    }
    samples.sort_unstable();
    samples[samples.len() / 2]
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

/// Parameter ranges for [`augment`]. There is deliberately no flip: mirroring
/// a hieroglyph changes its reading direction.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AugSpec {
    /// Rotation interval in degrees, inside `[-45, 45]`.
    pub rotation_range: (f64, f64),
    /// Isotropic scale interval, inside `(0, 2]`.
    pub scale_range: (f64, f64),
    /// Brightness offset drawn from `[-delta, delta]`.
    pub brightness_delta: f64,
    /// Standard deviation of additive Gaussian noise.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl AugSpec {
    pub fn identity(seed: u64) -> Self {
        Self {
            rotation_range: (0.0, 0.0),
            scale_range: (1.0, 1.0),
            brightness_delta: 0.0,
            noise_sigma: 0.0,
            seed,
        }
    }

    /// The default recipe: ±10°, 0.9–1.1 scale, ±20 brightness, σ = 8.
    pub fn standard(seed: u64) -> Self {
        Self {
            rotation_range: (-10.0, 10.0),
            scale_range: (0.9, 1.1),
            brightness_delta: 20.0,
            noise_sigma: 8.0,
            seed,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (r0, r1) = self.rotation_range;
        if !(r0 <= r1 && r0 >= -45.0 && r1 <= 45.0) {
            return Err(ImagingError::InvalidAugSpec(format!(
                "rotation range ({r0}, {r1}) must be ordered and within [-45, 45]"
            )));
        }
        let (s0, s1) = self.scale_range;
        if !(s0 <= s1 && s0 > 0.0 && s1 <= 2.0) {
            return Err(ImagingError::InvalidAugSpec(format!(
                "scale range ({s0}, {s1}) must be ordered and within (0, 2]"
            )));
        }
        if !(self.brightness_delta >= 0.0 && self.brightness_delta.is_finite()) {
            return Err(ImagingError::InvalidAugSpec(
                "brightness delta must be finite and non-negative".into(),
            ));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(ImagingError::InvalidAugSpec(
                "noise sigma must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

fn draw(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Rotate, scale, shift brightness and add noise, in that order.
///
/// All parameters come from a ChaCha8 stream seeded with `spec.seed`, so the
/// same `(input, spec)` always produces the same raster. Resampling is
/// nearest-neighbour; pixels mapped from outside the source take the median
/// border value.
pub fn augment(g: &Raster, spec: &AugSpec) -> Result<Raster> {
    spec.validate()?;
    let g = to_grayscale(g);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let angle = draw(&mut rng, spec.rotation_range);
    let scale = draw(&mut rng, spec.scale_range);
    let brightness = draw(&mut rng, (-spec.brightness_delta, spec.brightness_delta));

    let mut out = if angle == 0.0 && scale == 1.0 {
        g.clone()
    } else {
        let fill = border_median(&g);
        let (sin, cos) = angle.to_radians().sin_cos();
        let cx = g.width as f64 / 2.0;
        let cy = g.height as f64 / 2.0;
        let mut out = Raster::filled(g.width, g.height, fill);
        for y in 0..g.height {
            for x in 0..g.width {
                // Inverse map: undo the scale, then the rotation.
                let dx = (x as f64 + 0.5 - cx) / scale;
                let dy = (y as f64 + 0.5 - cy) / scale;
                let sx = cos * dx + sin * dy + cx;
                let sy = -sin * dx + cos * dy + cy;
                if sx >= 0.0 && sy >= 0.0 {
                    let (ix, iy) = (sx.floor() as usize, sy.floor() as usize);
                    if ix < g.width && iy < g.height {
                        out.set(x, y, 0, g.luma(ix, iy));
                    }
                }
            }
        }
        out
    };

    if brightness != 0.0 {
        for v in out.data.iter_mut() {
            *v = (*v as f64 + brightness).round().clamp(0.0, 255.0) as u8;
        }
    }
    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma)
            .map_err(|e| ImagingError::InvalidAugSpec(e.to_string()))?;
        for v in out.data.iter_mut() {
            let n: f64 = normal.sample(&mut rng);
            *v = (*v as f64 + n).round().clamp(0.0, 255.0) as u8;
        }
    }
    Ok(out)
}

/// `count` augmented copies of `g`, copy `i` seeded with `spec.seed + i`.
pub fn augment_many(g: &Raster, spec: &AugSpec, count: usize) -> Result<Vec<Raster>> {
    (0..count as u64)
        .map(|i| augment(g, &spec.with_seed(spec.seed.wrapping_add(i))))
        .collect()
}
