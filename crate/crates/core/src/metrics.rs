//! Full-reference image metrics and a two-sample distance for point clouds.

use alloc::vec;
use alloc::vec::Vec;

use crate::data::Image;
use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

pub const PSNR_CAP_DB: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
pub const SSIM_C1: f64 = K1 * K1;
pub const SSIM_C2: f64 = K2 * K2;

fn check_same(a: &Image, b: &Image, op: &'static str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, &a.shape(), &b.shape()));
    }
    Ok(())
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_same(a, b, "mse")?;
    let s: f64 = a.pixels().iter().zip(b.pixels()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(s / a.pixels().len() as f64)
}

/// `10·log10(1/mse)`, capped for (near-)identical inputs.
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse < 1e-10 {
        PSNR_CAP_DB
    } else {
        (10.0 * math::log10(1.0 / mse)).min(PSNR_CAP_DB)
    }
}

pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut taps = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, t) in taps.iter_mut().enumerate() {
        let d = i as f64 - half;
        *t = math::exp(-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA));
    }
    let total: f64 = taps.iter().sum();
    taps.map(|t| t / total)
}

/// Separable valid-region filtering of a `w × h` plane.
fn filter_valid(src: &[f64], w: usize, h: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            let line = &src[y * w + x..y * w + x + SSIM_WINDOW];
            rows[y * ow + x] = line.iter().zip(taps).map(|(v, t)| v * t).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|k| rows[(y + k) * ow + x] * taps[k]).sum();
        }
    }
    out
}

fn ssim_plane(a: &[f64], b: &[f64], w: usize, h: usize, taps: &[f64; SSIM_WINDOW]) -> f64 {
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect() };
    let mu_a = filter_valid(a, w, h, taps);
    let mu_b = filter_valid(b, w, h, taps);
    let aa = filter_valid(&prod(&|x, _| x * x), w, h, taps);
    let bb = filter_valid(&prod(&|_, y| y * y), w, h, taps);
    let ab = filter_valid(&prod(&|x, y| x * y), w, h, taps);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        total +=
            ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2)) / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
    }
    total / mu_a.len() as f64
}

/// Mean local SSIM over valid 11×11 Gaussian windows, channels averaged.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_same(a, b, "ssim")?;
    let (w, h, c) = (a.width(), a.height(), a.channels());
    if w.min(h) < SSIM_WINDOW {
        return Err(Error::InvalidShape {
            shape: a.shape(),
            reason: "image is smaller than the SSIM window",
        });
    }
    let taps = gaussian_taps();
    let plane = |img: &Image, ch: usize| -> Vec<f64> { img.pixels().iter().skip(ch).step_by(c).copied().collect() };
    let total: f64 = (0..c)
        .map(|ch| ssim_plane(&plane(a, ch), &plane(b, ch), w, h, &taps))
        .sum();
    Ok(total / c as f64)
}

fn mean_pair_distance(a: &[f64], b: &[f64], dim: usize) -> f64 {
    let (n, m) = (a.len() / dim, b.len() / dim);
    let mut total = 0.0;
    for i in 0..n {
        let p = &a[i * dim..(i + 1) * dim];
        for j in 0..m {
            let q = &b[j * dim..(j + 1) * dim];
            let d2: f64 = p.iter().zip(q).map(|(x, y)| (x - y) * (x - y)).sum();
            total += math::sqrt(d2);
        }
    }
    total / (n * m) as f64
}

/// `2·E‖a−b‖ − E‖a−a′‖ − E‖b−b′‖` with every expectation taken over all
/// ordered pairs, including coincident ones.
pub fn energy_distance(a: &Tensor, b: &Tensor) -> Result<f64> {
    let (n, da) = a.as_matrix("energy_distance")?;
    let (m, db) = b.as_matrix("energy_distance")?;
    if n == 0 || m == 0 {
        return Err(Error::Empty("energy_distance sample"));
    }
    if da != db {
        return Err(Error::shape("energy_distance", a.shape(), b.shape()));
    }
    let (x, y) = (a.data(), b.data());
    Ok(2.0 * mean_pair_distance(x, y, da) - mean_pair_distance(x, x, da) - mean_pair_distance(y, y, da))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageMetrics {
    pub psnr: f64,
    pub ssim: f64,
    pub mse: f64,
}

impl ImageMetrics {
    pub fn compare(output: &Image, reference: &Image) -> Result<Self> {
        let mse = mse(output, reference)?;
        Ok(ImageMetrics {
            psnr: psnr_from_mse(mse),
            ssim: ssim(output, reference)?,
            mse,
        })
    }
}

/// Aggregate over a set of images. `psnr` is taken from the mean MSE;
/// `ssim` is the mean of per-image values.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub psnr: f64,
    pub ssim: f64,
    pub mse: f64,
    pub nfe: usize,
    pub per_image: Vec<ImageMetrics>,
}

impl MetricsReport {
    pub fn from_images(per_image: Vec<ImageMetrics>, nfe: usize) -> Result<Self> {
        if per_image.is_empty() {
            return Err(Error::Empty("metrics report"));
        }
        let n = per_image.len() as f64;
        let mse = per_image.iter().map(|m| m.mse).sum::<f64>() / n;
        let ssim = per_image.iter().map(|m| m.ssim).sum::<f64>() / n;
        Ok(MetricsReport {
            psnr: psnr_from_mse(mse),
            ssim,
            mse,
            nfe,
            per_image,
        })
    }

    /// Mean of per-image PSNR values.
    pub fn mean_image_psnr(&self) -> f64 {
        self.per_image.iter().map(|m| m.psnr).sum::<f64>() / self.per_image.len() as f64
    }
}
