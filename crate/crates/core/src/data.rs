//! Synthetic desk-scale data: images in `[0, 1]`, degradations, patches,
//! procedural clean corpora, 2D toy distributions, and the pair sources
//! the trainer draws from.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::math;
use crate::mct::PairSource;
use crate::rng;
use crate::tensor::Tensor;

/// Row-major, channel-interleaved image with pixels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidShape {
                shape: vec![height, width],
                reason: "image extents must be positive",
            });
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidShape {
                shape: vec![height, width, channels],
                reason: "images have 1 or 3 channels",
            });
        }
        if pixels.len() != width * height * channels {
            return Err(Error::InvalidShape {
                shape: vec![height, width, channels],
                reason: "pixel count does not match extents",
            });
        }
        if let Some(&v) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::OutOfRange {
                name: "pixel",
                value: v,
                lo: 0.0,
                hi: 1.0,
            });
        }
        Ok(Image {
            width,
            height,
            channels,
            pixels,
        })
    }

    /// Clamps arbitrary finite values into `[0, 1]`.
    pub fn from_clamped(width: usize, height: usize, channels: usize, values: &[f64]) -> Result<Self> {
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Image::new(
            width,
            height,
            channels,
            values.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        )
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        Image::new(width, height, channels, vec![value; width * height * channels])
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

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize, c: usize) -> f64 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    /// `[h, w]` for grayscale, `[h, w, c]` otherwise.
    pub fn shape(&self) -> Vec<usize> {
        if self.channels == 1 {
            vec![self.height, self.width]
        } else {
            vec![self.height, self.width, self.channels]
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_parts(self.shape(), self.pixels.clone())
    }

    /// 8-bit levels with round-half-to-even.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.pixels.iter().map(|&v| libm::rint(v * 255.0) as u8).collect()
    }

    pub fn from_bytes(width: usize, height: usize, channels: usize, bytes: &[u8]) -> Result<Self> {
        Image::new(
            width,
            height,
            channels,
            bytes.iter().map(|&b| b as f64 / 255.0).collect(),
        )
    }

    /// The image as it reads back after an 8-bit save.
    pub fn quantized(&self) -> Image {
        let pixels = self.to_bytes().into_iter().map(|b| b as f64 / 255.0).collect();
        Image { pixels, ..*self }
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.pixels.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.pixels.len() as f64
    }
}

/// Line-segment rain overlay parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct RainSpec {
    /// Fraction in `[0, 1]`; the streak count is `round(density·W·H/length)`.
    pub density: f64,
    /// Degrees from vertical.
    pub angle_deg: f64,
    /// Streak length in pixels.
    pub length: f64,
    /// Brightness added at full coverage, in `[0, 1]`.
    pub intensity: f64,
    pub seed: u64,
}

impl RainSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.density) {
            return Err(Error::OutOfRange {
                name: "density",
                value: self.density,
                lo: 0.0,
                hi: 1.0,
            });
        }
        if !(0.0..=1.0).contains(&self.intensity) {
            return Err(Error::OutOfRange {
                name: "intensity",
                value: self.intensity,
                lo: 0.0,
                hi: 1.0,
            });
        }
        if !(self.length >= 1.0 && self.length.is_finite()) || !self.angle_deg.is_finite() {
            return Err(Error::config("rain length must be >= 1 pixel and angle finite"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DegradationSpec {
    /// `sigma` on the 8-bit scale, in `[0, 50]`.
    GaussianNoise {
        sigma: f64,
        seed: u64,
    },
    RainStreaks(RainSpec),
}

impl DegradationSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            DegradationSpec::GaussianNoise { sigma, .. } => check_sigma(*sigma),
            DegradationSpec::RainStreaks(r) => r.validate(),
        }
    }

    /// Degraded image (clamped) and the raw values before clamping.
    pub fn apply(&self, img: &Image) -> Result<(Image, Tensor)> {
        match self {
            DegradationSpec::GaussianNoise { sigma, seed } => degrade_gaussian(img, *sigma, *seed),
            DegradationSpec::RainStreaks(r) => {
                let out = degrade_rain(img, r)?;
                let t = out.to_tensor();
                Ok((out, t))
            }
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        match self {
            DegradationSpec::GaussianNoise { sigma, .. } => DegradationSpec::GaussianNoise { sigma: *sigma, seed },
            DegradationSpec::RainStreaks(r) => DegradationSpec::RainStreaks(RainSpec { seed, ..r.clone() }),
        }
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(0.0..=50.0).contains(&sigma) {
        return Err(Error::OutOfRange {
            name: "sigma",
            value: sigma,
            lo: 0.0,
            hi: 50.0,
        });
    }
    Ok(())
}

/// Adds `N(0, (sigma/255)²)` noise to every value.
pub fn add_gaussian_noise(values: &mut [f64], sigma: f64, rng: &mut dyn RngCore) {
    let s = sigma / 255.0;
    for v in values {
        let z: f64 = rng.sample(StandardNormal);
        *v += s * z;
    }
}

/// Returns the clamped noisy image and the unclamped noisy tensor.
pub fn degrade_gaussian(img: &Image, sigma: f64, seed: u64) -> Result<(Image, Tensor)> {
    check_sigma(sigma)?;
    let mut raw = img.pixels.clone();
    if sigma > 0.0 {
        add_gaussian_noise(&mut raw, sigma, &mut rng::stream(seed));
    }
    let clamped = Image::from_clamped(img.width, img.height, img.channels, &raw)?;
    Ok((clamped, Tensor::from_parts(img.shape(), raw)))
}

/// Overlays bright anti-aliased line segments.
pub fn degrade_rain(img: &Image, spec: &RainSpec) -> Result<Image> {
    spec.validate()?;
    let (w, h) = (img.width, img.height);
    let count = math::round(spec.density * (w * h) as f64 / spec.length) as usize;
    if count == 0 || spec.intensity == 0.0 {
        return Ok(img.clone());
    }
    let mut r = rng::stream(spec.seed);
    let mut coverage = vec![0.0; w * h];
    let theta = spec.angle_deg * core::f64::consts::PI / 180.0;
    let (dx, dy) = (math::sin(theta), math::cos(theta));
    const STEP: f64 = 0.25;
    let samples = (spec.length / STEP) as usize + 1;
    for _ in 0..count {
        let cx = r.random_range(0.0..w as f64);
        let cy = r.random_range(0.0..h as f64);
        for s in 0..samples {
            let along = -spec.length / 2.0 + s as f64 * STEP;
            splat(&mut coverage, w, h, cx + along * dx, cy + along * dy, STEP);
        }
    }
    let c = img.channels;
    let mut out = img.pixels.clone();
    for (p, cov) in coverage.iter().enumerate() {
        let add = spec.intensity * cov.min(1.0);
        for v in &mut out[p * c..(p + 1) * c] {
            *v += add;
        }
    }
    Image::from_clamped(w, h, c, &out)
}

/// Bilinear deposit of `mass` at a sub-pixel position (pixel centres at
/// integer + 0.5).
fn splat(buf: &mut [f64], w: usize, h: usize, x: f64, y: f64, mass: f64) {
    let (fx, fy) = (x - 0.5, y - 0.5);
    let (x0, y0) = (math::floor(fx), math::floor(fy));
    let (ax, ay) = (fx - x0, fy - y0);
    for (ox, wx) in [(0, 1.0 - ax), (1, ax)] {
        for (oy, wy) in [(0, 1.0 - ay), (1, ay)] {
            let (px, py) = (x0 as i64 + ox, y0 as i64 + oy);
            if px >= 0 && py >= 0 && (px as usize) < w && (py as usize) < h {
                buf[py as usize * w + px as usize] += mass * wx * wy;
            }
        }
    }
}

/// Top-left corners of sliding windows along one axis.
pub fn window_origins(extent: usize, size: usize, stride: usize) -> Vec<usize> {
    (0..=(extent - size) / stride).map(|i| i * stride).collect()
}

/// Window origins that also cover the far edge when `stride` does not
/// divide `extent − size`.
pub fn covering_origins(extent: usize, size: usize, stride: usize) -> Vec<usize> {
    let mut o = window_origins(extent, size, stride);
    if *o.last().expect("at least one window") != extent - size {
        o.push(extent - size);
    }
    o
}

fn check_patch(img: &Image, size: usize, stride: usize) -> Result<()> {
    if size == 0 || stride == 0 {
        return Err(Error::config("patch size and stride must be positive"));
    }
    if size > img.width.min(img.height) {
        return Err(Error::config(format!(
            "patch size {size} exceeds image extent {}x{}",
            img.width, img.height
        )));
    }
    Ok(())
}

/// Extracts the window with top-left corner `(x, y)`.
pub fn crop(img: &Image, x: usize, y: usize, size: usize) -> Tensor {
    let c = img.channels;
    let mut data = Vec::with_capacity(size * size * c);
    for row in y..y + size {
        let start = (row * img.width + x) * c;
        data.extend_from_slice(&img.pixels[start..start + size * c]);
    }
    let shape = if c == 1 { vec![size, size] } else { vec![size, size, c] };
    Tensor::from_parts(shape, data)
}

/// Row-major sliding windows.
pub fn patchify(img: &Image, size: usize, stride: usize) -> Result<Vec<Tensor>> {
    check_patch(img, size, stride)?;
    let mut out = Vec::new();
    for y in window_origins(img.height, size, stride) {
        for x in window_origins(img.width, size, stride) {
            out.push(crop(img, x, y, size));
        }
    }
    Ok(out)
}

/// Averages overlapping patches back into an image-sized buffer.
pub fn assemble(
    patches: &[&[f64]],
    origins: &[(usize, usize)],
    width: usize,
    height: usize,
    channels: usize,
    size: usize,
) -> Vec<f64> {
    let mut acc = vec![0.0; width * height * channels];
    let mut weight = vec![0.0; width * height];
    for (patch, &(x, y)) in patches.iter().zip(origins) {
        for r in 0..size {
            for col in 0..size {
                let p = (y + r) * width + x + col;
                weight[p] += 1.0;
                for ch in 0..channels {
                    acc[p * channels + ch] += patch[(r * size + col) * channels + ch];
                }
            }
        }
    }
    for (p, wgt) in weight.iter().enumerate() {
        if *wgt > 0.0 {
            for ch in 0..channels {
                acc[p * channels + ch] /= wgt;
            }
        }
    }
    acc
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Toy2d {
    TwoMoons,
    Gmm,
}

impl core::str::FromStr for Toy2d {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two_moons" => Ok(Toy2d::TwoMoons),
            "gmm" => Ok(Toy2d::Gmm),
            other => Err(Error::UnknownDataset(other.to_string())),
        }
    }
}

impl Toy2d {
    pub fn name(self) -> &'static str {
        match self {
            Toy2d::TwoMoons => "two_moons",
            Toy2d::Gmm => "gmm",
        }
    }

    /// `n × 2` samples.
    ///
    /// Two moons: unit-radius half circles, the lower one shifted by
    /// `(1, −0.5)`, alternating by index, recentred on the origin, plus
    /// `N(0, 0.05²)` jitter. Gmm: equal mixture of `N((±2, ±2), 0.3²)`.
    pub fn sample(self, n: usize, seed: u64) -> Result<Tensor> {
        if n == 0 {
            return Err(Error::Empty("toy sample"));
        }
        let mut r = rng::stream(seed);
        let mut data = Vec::with_capacity(2 * n);
        for i in 0..n {
            let (x, y) = match self {
                Toy2d::TwoMoons => {
                    let th = r.random_range(0.0..core::f64::consts::PI);
                    let (px, py) = if i % 2 == 0 {
                        (math::cos(th), math::sin(th))
                    } else {
                        (1.0 - math::cos(th), 0.5 - math::sin(th))
                    };
                    let nx: f64 = r.sample(StandardNormal);
                    let ny: f64 = r.sample(StandardNormal);
                    (px - 0.5 + 0.05 * nx, py - 0.25 + 0.05 * ny)
                }
                Toy2d::Gmm => {
                    let c = r.random_range(0..4u32);
                    let cx = if c & 1 == 0 { 2.0 } else { -2.0 };
                    let cy = if c & 2 == 0 { 2.0 } else { -2.0 };
                    let nx: f64 = r.sample(StandardNormal);
                    let ny: f64 = r.sample(StandardNormal);
                    (cx + 0.3 * nx, cy + 0.3 * ny)
                }
            };
            data.push(x);
            data.push(y);
        }
        Tensor::new(vec![n, 2], data)
    }
}

pub fn toy2d(name: &str, n: usize, seed: u64) -> Result<Tensor> {
    name.parse::<Toy2d>()?.sample(n, seed)
}

/// `[n, dim]` standard normal draws.
pub fn standard_normal(n: usize, dim: usize, rng: &mut dyn RngCore) -> Result<Tensor> {
    let data = (0..n * dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Tensor::new(vec![n, dim], data)
}

/// Procedural grayscale images: a few low-frequency plane waves around
/// mid-gray with rectangles and discs painted on top.
pub fn gen_clean_corpus(n: usize, size: usize, seed: u64) -> Result<Vec<Image>> {
    if n == 0 || size == 0 {
        return Err(Error::Empty("corpus"));
    }
    (0..n)
        .map(|i| procedural_image(size, rng::derive_seed(seed, i as u64)))
        .collect()
}

fn procedural_image(size: usize, seed: u64) -> Result<Image> {
    let mut r = rng::stream(seed);
    let s = size as f64;
    let two_pi = 2.0 * core::f64::consts::PI;
    let mut waves = Vec::new();
    for _ in 0..6 {
        let (fx, fy) = loop {
            let f = (r.random_range(-3i32..=3), r.random_range(-3i32..=3));
            if f != (0, 0) {
                break f;
            }
        };
        let amp = r.random_range(0.03..0.09);
        let phase = r.random_range(0.0..two_pi);
        waves.push((fx as f64, fy as f64, amp, phase));
    }
    let base = r.random_range(0.35..0.65);
    let mut px = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            let mut v = base;
            for &(fx, fy, a, ph) in &waves {
                v += a * math::cos(two_pi * (fx * x as f64 + fy * y as f64) / s + ph);
            }
            px[y * size + x] = v;
        }
    }
    let shapes = r.random_range(2..=4);
    for _ in 0..shapes {
        let level = r.random_range(0.1..0.9);
        let cx = r.random_range(0.0..s);
        let cy = r.random_range(0.0..s);
        let rad = r.random_range(0.1 * s..0.3 * s);
        let disc = r.random_bool(0.5);
        for y in 0..size {
            for x in 0..size {
                let (ddx, ddy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                let inside = if disc {
                    ddx * ddx + ddy * ddy <= rad * rad
                } else {
                    ddx.abs() <= rad && ddy.abs() <= 0.6 * rad
                };
                if inside {
                    let v = &mut px[y * size + x];
                    *v = 0.25 * *v + 0.75 * level;
                }
            }
        }
    }
    for v in &mut px {
        *v = v.clamp(0.05, 0.95);
    }
    Image::new(size, size, 1, px)
}

/// Fixed `(clean, degraded)` pairs sampled with replacement.
pub struct PairSet {
    dim: usize,
    x0: Vec<f64>,
    x1: Vec<f64>,
}

impl PairSet {
    pub fn new(pairs: &[(Tensor, Tensor)]) -> Result<Self> {
        let (first, _) = pairs.first().ok_or(Error::Empty("dataset"))?;
        let dim = first.len();
        let mut x0 = Vec::with_capacity(dim * pairs.len());
        let mut x1 = Vec::with_capacity(dim * pairs.len());
        for (a, b) in pairs {
            if a.len() != dim || b.len() != dim {
                return Err(Error::shape("PairSet", first.shape(), b.shape()));
            }
            x0.extend_from_slice(a.data());
            x1.extend_from_slice(b.data());
        }
        Ok(PairSet { dim, x0, x1 })
    }

    pub fn len(&self) -> usize {
        self.x0.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.x0.is_empty()
    }

    pub fn pairs(&self) -> Vec<(Tensor, Tensor)> {
        (0..self.len())
            .map(|i| {
                let span = i * self.dim..(i + 1) * self.dim;
                (
                    Tensor::from_parts(vec![self.dim], self.x0[span.clone()].to_vec()),
                    Tensor::from_parts(vec![self.dim], self.x1[span].to_vec()),
                )
            })
            .collect()
    }
}

impl PairSource for PairSet {
    fn dim(&self) -> usize {
        self.dim
    }

    fn draw(&self, rng: &mut dyn RngCore, n: usize) -> Result<(Tensor, Tensor)> {
        let mut a = Vec::with_capacity(n * self.dim);
        let mut b = Vec::with_capacity(n * self.dim);
        for _ in 0..n {
            let i = rng.random_range(0..self.len());
            a.extend_from_slice(&self.x0[i * self.dim..(i + 1) * self.dim]);
            b.extend_from_slice(&self.x1[i * self.dim..(i + 1) * self.dim]);
        }
        Ok((
            Tensor::from_parts(vec![n, self.dim], a),
            Tensor::from_parts(vec![n, self.dim], b),
        ))
    }
}

/// Clean patches paired with fresh, unclamped Gaussian noise on every
/// draw. The noise level is drawn uniformly from `sigma` (8-bit scale).
pub struct NoisyPatches {
    dim: usize,
    clean: Vec<f64>,
    sigma: (f64, f64),
}

impl NoisyPatches {
    pub fn new(patches: &[Tensor], sigma: (f64, f64)) -> Result<Self> {
        let first = patches.first().ok_or(Error::Empty("dataset"))?;
        check_sigma(sigma.0)?;
        check_sigma(sigma.1)?;
        if sigma.0 > sigma.1 {
            return Err(Error::config("sigma range is reversed"));
        }
        let dim = first.len();
        let mut clean = Vec::with_capacity(dim * patches.len());
        for p in patches {
            if p.len() != dim {
                return Err(Error::shape("NoisyPatches", first.shape(), p.shape()));
            }
            clean.extend_from_slice(p.data());
        }
        Ok(NoisyPatches { dim, clean, sigma })
    }

    pub fn from_images(images: &[Image], size: usize, stride: usize, sigma: (f64, f64)) -> Result<Self> {
        let mut patches = Vec::new();
        for img in images {
            patches.extend(patchify(img, size, stride)?);
        }
        NoisyPatches::new(&patches, sigma)
    }

    pub fn len(&self) -> usize {
        self.clean.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.clean.is_empty()
    }
}

impl PairSource for NoisyPatches {
    fn dim(&self) -> usize {
        self.dim
    }

    fn draw(&self, rng: &mut dyn RngCore, n: usize) -> Result<(Tensor, Tensor)> {
        let mut a = Vec::with_capacity(n * self.dim);
        let mut b = Vec::with_capacity(n * self.dim);
        for _ in 0..n {
            let i = rng.random_range(0..self.len());
            let patch = &self.clean[i * self.dim..(i + 1) * self.dim];
            let sigma = if self.sigma.0 == self.sigma.1 {
                self.sigma.0
            } else {
                rng.random_range(self.sigma.0..=self.sigma.1)
            };
            a.extend_from_slice(patch);
            let start = b.len();
            b.extend_from_slice(patch);
            add_gaussian_noise(&mut b[start..], sigma, rng);
        }
        Ok((
            Tensor::from_parts(vec![n, self.dim], a),
            Tensor::from_parts(vec![n, self.dim], b),
        ))
    }
}

/// Generation pairs: a target sample as `x0` and independent standard
/// normal noise as `x1`.
pub struct NoiseToTarget {
    dim: usize,
    targets: Vec<f64>,
}

impl NoiseToTarget {
    pub fn new(targets: &Tensor) -> Result<Self> {
        let (n, dim) = targets.as_matrix("NoiseToTarget")?;
        if n == 0 {
            return Err(Error::Empty("dataset"));
        }
        Ok(NoiseToTarget {
            dim,
            targets: targets.data().to_vec(),
        })
    }
}

impl PairSource for NoiseToTarget {
    fn dim(&self) -> usize {
        self.dim
    }

    fn draw(&self, rng: &mut dyn RngCore, n: usize) -> Result<(Tensor, Tensor)> {
        let count = self.targets.len() / self.dim;
        let mut a = Vec::with_capacity(n * self.dim);
        for _ in 0..n {
            let i = rng.random_range(0..count);
            a.extend_from_slice(&self.targets[i * self.dim..(i + 1) * self.dim]);
        }
        let b = standard_normal(n, self.dim, rng)?;
        Ok((Tensor::from_parts(vec![n, self.dim], a), b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(size: usize, v: f64) -> Image {
        Image::filled(size, size, 1, v).unwrap()
    }

    #[test]
    fn image_validation() {
        assert!(Image::new(2, 2, 1, vec![0.0, 0.5, 1.0, 1.1]).is_err());
        assert!(Image::new(2, 2, 2, vec![0.0; 8]).is_err());
        assert!(Image::new(2, 2, 1, vec![0.0; 3]).is_err());
        let c = Image::from_clamped(2, 1, 1, &[-0.2, 1.7]).unwrap();
        assert_eq!(c.pixels(), &[0.0, 1.0]);
    }

    #[test]
    fn gaussian_zero_sigma_is_identity_and_range_checked() {
        let img = gray(8, 0.3);
        let (out, raw) = degrade_gaussian(&img, 0.0, 1).unwrap();
        assert_eq!(out, img);
        assert_eq!(raw.data(), img.pixels());
        assert!(degrade_gaussian(&img, 50.1, 1).is_err());
        assert!(degrade_gaussian(&img, -1.0, 1).is_err());
        assert_eq!(
            degrade_gaussian(&img, 25.0, 4).unwrap(),
            degrade_gaussian(&img, 25.0, 4).unwrap()
        );
    }

    #[test]
    fn rain_identity_range_and_brightening() {
        let img = gray(32, 0.5);
        let spec = RainSpec {
            density: 0.0,
            angle_deg: 15.0,
            length: 8.0,
            intensity: 0.6,
            seed: 3,
        };
        assert_eq!(degrade_rain(&img, &spec).unwrap(), img);
        let rainy = degrade_rain(
            &img,
            &RainSpec {
                density: 0.3,
                ..spec.clone()
            },
        )
        .unwrap();
        assert!(rainy.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(rainy.mean() > img.mean());
        assert!(degrade_rain(
            &img,
            &RainSpec {
                density: 1.5,
                ..spec.clone()
            }
        )
        .is_err());
        assert!(degrade_rain(&img, &RainSpec { length: 0.0, ..spec }).is_err());
    }

    #[test]
    fn patch_counts() {
        assert_eq!(patchify(&gray(32, 0.1), 16, 16).unwrap().len(), 4);
        assert_eq!(patchify(&gray(17, 0.1), 16, 1).unwrap().len(), 4);
        assert!(patchify(&gray(8, 0.1), 16, 4).is_err());
        assert_eq!(covering_origins(20, 16, 16), vec![0, 4]);
        assert_eq!(covering_origins(32, 16, 16), vec![0, 16]);
    }

    #[test]
    fn tiling_reassembles_exactly() {
        let imgs = gen_clean_corpus(1, 32, 9).unwrap();
        let img = &imgs[0];
        let patches = patchify(img, 16, 16).unwrap();
        let origins: Vec<(usize, usize)> = [(0, 0), (16, 0), (0, 16), (16, 16)].into();
        let slices: Vec<&[f64]> = patches.iter().map(|p| p.data()).collect();
        let back = assemble(&slices, &origins, 32, 32, 1, 16);
        assert_eq!(back, img.pixels());
    }

    #[test]
    fn toy_sets() {
        let g = toy2d("gmm", 100, 1).unwrap();
        assert_eq!(g.shape(), &[100, 2]);
        assert_eq!(toy2d("two_moons", 37, 1).unwrap().shape(), &[37, 2]);
        assert!(matches!(toy2d("spiral", 10, 1), Err(Error::UnknownDataset(_))));
        assert!(toy2d("gmm", 0, 1).is_err());
        assert_eq!(toy2d("gmm", 50, 2).unwrap(), toy2d("gmm", 50, 2).unwrap());
    }

    #[test]
    fn corpus_properties() {
        let a = gen_clean_corpus(4, 24, 5).unwrap();
        assert_eq!(a, gen_clean_corpus(4, 24, 5).unwrap());
        for img in &a {
            assert!(img.variance() > 0.001);
            assert!(img.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn sources_reject_empty_input() {
        assert!(PairSet::new(&[]).is_err());
        assert!(NoisyPatches::new(&[], (25.0, 25.0)).is_err());
    }

    #[test]
    fn quantization_rounds_half_to_even() {
        let img = Image::new(2, 1, 1, vec![0.5 / 255.0, 1.5 / 255.0]).unwrap();
        assert_eq!(img.to_bytes(), vec![0, 2]);
    }
}
