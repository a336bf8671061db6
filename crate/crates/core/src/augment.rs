//! Preprocessing (intensity rescaling, bilinear resize) and the stochastic
//! training augmentations: horizontal flip, elastic deformation, cutout.
//!
//! Every stochastic operation takes an explicit seed. During training the
//! seed of a sample is [`crate::rng::stream_seed`]`(global_seed, sample_id,
//! epoch)`, so a sample's augmentation does not depend on batch order.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ImageError, VfError};
use crate::raster::RasterImage;
use crate::rng::{hash_words, rng_for, TAG_CUTOUT, TAG_ELASTIC, TAG_FLIP};
use crate::vf::{mirror_exam, VfExam, VfGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub hflip_prob: f64,
    /// Mirror the VF target along with the image.
    pub flip_labels: bool,
    pub elastic_alpha: f64,
    pub elastic_sigma: f64,
    pub cutout_fraction: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            hflip_prob: 0.5,
            flip_labels: true,
            elastic_alpha: 8.0,
            elastic_sigma: 6.0,
            cutout_fraction: 0.25,
        }
    }
}

impl AugmentConfig {
    /// Every violated constraint, not just the first.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            v.push(format!("augment.hflip_prob {} not in [0, 1]", self.hflip_prob));
        }
        if !(self.elastic_alpha.is_finite() && self.elastic_alpha >= 0.0) {
            v.push(format!("augment.elastic_alpha {} must be finite and >= 0", self.elastic_alpha));
        }
        if !(self.elastic_sigma.is_finite() && self.elastic_sigma > 0.0) {
            v.push(format!("augment.elastic_sigma {} must be finite and > 0", self.elastic_sigma));
        }
        if !(self.cutout_fraction.is_finite() && (0.0..1.0).contains(&self.cutout_fraction)) {
            v.push(format!("augment.cutout_fraction {} not in [0, 1)", self.cutout_fraction));
        }
        v
    }
}

/// Maps raw intensities to [0, 1] via `(v - min) / (max - min)`, clamped.
pub fn normalize_intensity(
    raw: &[f64],
    width: usize,
    height: usize,
    min: f64,
    max: f64,
) -> Result<RasterImage, ImageError> {
    if max == min {
        return Err(ImageError::EmptyRange(min));
    }
    let span = max - min;
    let pixels = raw.iter().map(|&v| (((v - min) / span).clamp(0.0, 1.0)) as f32).collect();
    RasterImage::new(width, height, pixels)
}

#[inline]
fn lerp(a: f32, b: f32, t: f32) -> f32 {
    a + (b - a) * t
}

/// Bilinear sample at continuous coordinates with edge clamping.
fn sample_clamped(img: &RasterImage, x: f32, y: f32) -> f32 {
    let w = img.width();
    let h = img.height();
    let x = x.clamp(0.0, (w - 1) as f32);
    let y = y.clamp(0.0, (h - 1) as f32);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f32;
    let fy = y - y0 as f32;
    let top = lerp(img.get(x0, y0), img.get(x1, y0), fx);
    let bottom = lerp(img.get(x0, y1), img.get(x1, y1), fx);
    lerp(top, bottom, fy).clamp(0.0, 1.0)
}

/// Bilinear resize with half-pixel-centre sampling.
pub fn resize_bilinear(image: &RasterImage, out_w: usize, out_h: usize) -> RasterImage {
    assert!(out_w > 0 && out_h > 0, "output dimensions must be positive");
    if out_w == image.width() && out_h == image.height() {
        return image.clone();
    }
    let sx = image.width() as f32 / out_w as f32;
    let sy = image.height() as f32 / out_h as f32;
    let mut pixels = Vec::with_capacity(out_w * out_h);
    for y in 0..out_h {
        let src_y = (y as f32 + 0.5) * sy - 0.5;
        for x in 0..out_w {
            let src_x = (x as f32 + 0.5) * sx - 0.5;
            pixels.push(sample_clamped(image, src_x, src_y));
        }
    }
    RasterImage::from_trusted(out_w, out_h, pixels)
}

/// A training sample: model inputs plus the exam they are labelled with.
#[derive(Debug, Clone, PartialEq)]
pub struct AugSample {
    pub images: Vec<RasterImage>,
    pub vf: VfExam,
}

/// Reverses the column order of every image; with `flip_labels` the VF
/// target is mirrored to the other eye as well.
pub fn horizontal_flip(sample: &AugSample, config: &AugmentConfig, grid: &VfGrid) -> Result<AugSample, VfError> {
    let vf = if config.flip_labels { mirror_exam(&sample.vf, grid)? } else { sample.vf.clone() };
    Ok(AugSample { images: sample.images.iter().map(RasterImage::flipped_horizontal).collect(), vf })
}

fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    k.into_iter().map(|v| (v / total) as f32).collect()
}

/// Separable Gaussian blur with replicated edges.
fn blur(field: &[f32], w: usize, h: usize, kernel: &[f32]) -> Vec<f32> {
    let r = (kernel.len() / 2) as isize;
    let mut tmp = vec![0.0f32; w * h];
    for y in 0..h {
        let row = &field[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                let sx = (x as isize + k as isize - r).clamp(0, w as isize - 1) as usize;
                acc += kv * row[sx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0f32; w * h];
    for y in 0..h {
        for (k, &kv) in kernel.iter().enumerate() {
            let sy = (y as isize + k as isize - r).clamp(0, h as isize - 1) as usize;
            let src = &tmp[sy * w..(sy + 1) * w];
            let dst = &mut out[y * w..(y + 1) * w];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += kv * s;
            }
        }
    }
    out
}

/// Simard-style elastic deformation: uniform [-1, 1] displacement fields,
/// Gaussian-smoothed with `sigma`, scaled by `alpha` (pixels), applied by
/// bilinear sampling with edge clamping.
pub fn elastic_deform(image: &RasterImage, alpha: f64, sigma: f64, seed: u64) -> RasterImage {
    assert!(alpha >= 0.0 && sigma > 0.0, "elastic_deform needs alpha >= 0 and sigma > 0");
    if alpha == 0.0 {
        return image.clone();
    }
    let (w, h) = (image.width(), image.height());
    let mut rng = rng_for(&[TAG_ELASTIC, seed]);
    let mut field = || -> Vec<f32> { (0..w * h).map(|_| rng.random_range(-1.0f32..=1.0)).collect() };
    let raw_dx = field();
    let raw_dy = field();
    let kernel = gaussian_kernel(sigma);
    let dx = blur(&raw_dx, w, h, &kernel);
    let dy = blur(&raw_dy, w, h, &kernel);
    let a = alpha as f32;
    let mut pixels = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            pixels.push(sample_clamped(image, x as f32 + a * dx[i], y as f32 + a * dy[i]));
        }
    }
    RasterImage::from_trusted(w, h, pixels)
}

/// Side length of the cutout square for an image.
pub fn cutout_side(width: usize, height: usize, fraction: f64) -> usize {
    ((fraction * width.min(height) as f64).round() as usize).min(width.min(height))
}

/// Zeroes one square of side `round(fraction * min(w, h))`, placed uniformly
/// at random fully inside the image.
pub fn cutout(image: &RasterImage, fraction: f64, seed: u64) -> RasterImage {
    assert!((0.0..1.0).contains(&fraction), "cutout fraction must lie in [0, 1)");
    let (w, h) = (image.width(), image.height());
    let side = cutout_side(w, h, fraction);
    if side == 0 {
        return image.clone();
    }
    let mut rng = rng_for(&[TAG_CUTOUT, seed]);
    let x0 = rng.random_range(0..=w - side);
    let y0 = rng.random_range(0..=h - side);
    let mut pixels = image.pixels().to_vec();
    for y in y0..y0 + side {
        pixels[y * w + x0..y * w + x0 + side].fill(0.0);
    }
    RasterImage::from_trusted(w, h, pixels)
}

/// Full training augmentation of one sample from its stream seed:
/// flip (with probability `hflip_prob`), then elastic deformation, then cutout.
pub fn augment_sample(
    sample: &AugSample,
    config: &AugmentConfig,
    stream_seed: u64,
    grid: &VfGrid,
) -> Result<AugSample, VfError> {
    let mut flip_rng = rng_for(&[TAG_FLIP, stream_seed]);
    let mut out = if flip_rng.random::<f64>() < config.hflip_prob {
        horizontal_flip(sample, config, grid)?
    } else {
        sample.clone()
    };
    for (k, img) in out.images.iter_mut().enumerate() {
        let s = hash_words(&[stream_seed, k as u64]);
        if config.elastic_alpha > 0.0 {
            *img = elastic_deform(img, config.elastic_alpha, config.elastic_sigma, s);
        }
        if config.cutout_fraction > 0.0 {
            *img = cutout(img, config.cutout_fraction, s);
        }
    }
    Ok(out)
}
