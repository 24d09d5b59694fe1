//! Whole-image restoration by tiling into model-sized patches.
//!
//! Every patch of an image goes through the solver in one batch, so an
//! `N`-step sampler costs exactly `N` model evaluations per image.

use alloc::vec;
use alloc::vec::Vec;

use crate::data::{assemble, covering_origins, crop, Image};
use crate::error::{Error, Result};
use crate::metrics::{ImageMetrics, MetricsReport};
use crate::sampler::{solve, CountingField, SamplerConfig, VelocityField};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Tiling {
    pub patch: usize,
    pub stride: usize,
}

impl Tiling {
    pub fn new(patch: usize, stride: usize) -> Result<Self> {
        if patch == 0 || stride == 0 || stride > patch {
            return Err(Error::config("tiling needs 0 < stride <= patch"));
        }
        Ok(Tiling { patch, stride })
    }

    pub fn origins(&self, img: &Image) -> Result<Vec<(usize, usize)>> {
        if img.width().min(img.height()) < self.patch {
            return Err(Error::InvalidShape {
                shape: img.shape(),
                reason: "image is smaller than one patch",
            });
        }
        let xs = covering_origins(img.width(), self.patch, self.stride);
        let ys = covering_origins(img.height(), self.patch, self.stride);
        Ok(ys.iter().flat_map(|&y| xs.iter().map(move |&x| (x, y))).collect())
    }
}

/// Restores `degraded`, returning a clamped image.
pub fn restore_image<F>(field: &F, degraded: &Image, tiling: Tiling, cfg: &SamplerConfig) -> Result<Image>
where
    F: VelocityField<Tensor> + ?Sized,
{
    let origins = tiling.origins(degraded)?;
    let dim = tiling.patch * tiling.patch * degraded.channels();
    let mut rows = Vec::with_capacity(origins.len() * dim);
    for &(x, y) in &origins {
        rows.extend_from_slice(crop(degraded, x, y, tiling.patch).data());
    }
    let x1 = Tensor::from_parts(vec![origins.len(), dim], rows);
    let out = solve(field, &x1, cfg)?.output;
    let patches: Vec<&[f64]> = out.data().chunks(dim).collect();
    let px = assemble(
        &patches,
        &origins,
        degraded.width(),
        degraded.height(),
        degraded.channels(),
        tiling.patch,
    );
    Image::from_clamped(degraded.width(), degraded.height(), degraded.channels(), &px)
}

/// Restores every `(clean, degraded)` pair and scores the 8-bit
/// quantized output against the clean image. `nfe` in the report is the
/// measured number of model calls per image.
pub fn evaluate<F>(
    field: &F,
    pairs: &[(Image, Image)],
    tiling: Tiling,
    cfg: &SamplerConfig,
) -> Result<(Vec<Image>, MetricsReport)>
where
    F: VelocityField<Tensor>,
{
    if pairs.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let counted = CountingField::new(|x: &Tensor, t: f64| field.velocity(x, t));
    let mut outputs = Vec::with_capacity(pairs.len());
    let mut per_image = Vec::with_capacity(pairs.len());
    for (clean, degraded) in pairs {
        let restored = restore_image(&counted, degraded, tiling, cfg)?.quantized();
        per_image.push(ImageMetrics::compare(&restored, clean)?);
        outputs.push(restored);
    }
    let nfe = counted.calls() / pairs.len();
    Ok((outputs, MetricsReport::from_images(per_image, nfe)?))
}

/// Scores degraded inputs directly, as a no-restoration baseline.
pub fn baseline(pairs: &[(Image, Image)]) -> Result<MetricsReport> {
    let per_image = pairs
        .iter()
        .map(|(clean, degraded)| ImageMetrics::compare(&degraded.quantized(), clean))
        .collect::<Result<Vec<_>>>()?;
    MetricsReport::from_images(per_image, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_clean_corpus;
    use crate::velocity::VelocityMode;

    #[test]
    fn identity_field_returns_input_with_edge_cover() {
        let img = gen_clean_corpus(1, 20, 3).unwrap().remove(0);
        let zero = |x: &Tensor, _t: f64| Ok(x.scale(0.0));
        let tiling = Tiling::new(16, 16).unwrap();
        assert_eq!(tiling.origins(&img).unwrap().len(), 4);
        let out = restore_image(&zero, &img, tiling, &SamplerConfig::new(3, VelocityMode::Cumulative)).unwrap();
        assert!(out
            .pixels()
            .iter()
            .zip(img.pixels())
            .all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn nfe_is_steps_per_image() {
        let imgs = gen_clean_corpus(3, 32, 1).unwrap();
        let pairs: Vec<(Image, Image)> = imgs.iter().map(|i| (i.clone(), i.clone())).collect();
        let zero = |x: &Tensor, _t: f64| Ok(x.scale(0.0));
        for n in [1, 4] {
            let (_, report) = evaluate(
                &zero,
                &pairs,
                Tiling::new(16, 8).unwrap(),
                &SamplerConfig::new(n, VelocityMode::Cumulative),
            )
            .unwrap();
            assert_eq!(report.nfe, n);
        }
    }

    #[test]
    fn bad_tiling() {
        assert!(Tiling::new(16, 0).is_err());
        assert!(Tiling::new(16, 17).is_err());
        let small = Image::filled(8, 8, 1, 0.5).unwrap();
        assert!(Tiling::new(16, 16).unwrap().origins(&small).is_err());
    }
}
