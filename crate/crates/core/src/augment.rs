//! The stochastic view transformations used to build positive pairs.
//!
//! All transforms take `[C × H × W]` images with values in `[0, 1]` and return
//! images of the same range. A view is produced as
//! crop → flip → color jitter → grayscale → blur, each stage drawing from the
//! supplied [`Rng`] in that fixed order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JitterStrengths {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
}

impl JitterStrengths {
    pub const NONE: JitterStrengths = JitterStrengths {
        brightness: 0.0,
        contrast: 0.0,
        saturation: 0.0,
        hue: 0.0,
    };

    /// `(0.8, 0.8, 0.8, 0.2) · s`.
    pub fn scaled(s: f64) -> Self {
        JitterStrengths {
            brightness: 0.8 * s,
            contrast: 0.8 * s,
            saturation: 0.8 * s,
            hue: 0.2 * s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformSpace {
    pub crop_scale: (f64, f64),
    pub crop_aspect: (f64, f64),
    pub flip_prob: f64,
    pub jitter_prob: f64,
    pub jitter: JitterStrengths,
    pub grayscale_prob: f64,
    pub blur_prob: f64,
    pub blur_sigma: (f64, f64),
}

impl Default for TransformSpace {
    fn default() -> Self {
        TransformSpace {
            crop_scale: (0.08, 1.0),
            crop_aspect: (3.0 / 4.0, 4.0 / 3.0),
            flip_prob: 0.5,
            jitter_prob: 0.8,
            jitter: JitterStrengths::scaled(0.5),
            grayscale_prob: 0.2,
            blur_prob: 0.5,
            blur_sigma: (0.1, 2.0),
        }
    }
}

impl TransformSpace {
    /// Full-image crop and every random stage disabled.
    pub fn identity() -> Self {
        TransformSpace {
            crop_scale: (1.0, 1.0),
            crop_aspect: (1.0, 1.0),
            flip_prob: 0.0,
            jitter_prob: 0.0,
            jitter: JitterStrengths::NONE,
            grayscale_prob: 0.0,
            blur_prob: 0.0,
            blur_sigma: (0.1, 2.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [self.flip_prob, self.jitter_prob, self.grayscale_prob, self.blur_prob];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("transform probabilities must lie in [0, 1]"));
        }
        let ranges = [self.crop_scale, self.crop_aspect, self.blur_sigma];
        if ranges.iter().any(|(lo, hi)| !(*lo > 0.0 && lo <= hi)) {
            return Err(Error::invalid("transform ranges must be positive and non-empty"));
        }
        if self.crop_scale.1 > 1.0 {
            return Err(Error::invalid("crop scale cannot exceed 1"));
        }
        let j = self.jitter;
        if [j.brightness, j.contrast, j.saturation].iter().any(|s| *s < 0.0) || !(0.0..=0.5).contains(&j.hue) {
            return Err(Error::invalid("jitter strengths must be >= 0 and hue <= 0.5"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedPair {
    pub view_i: Tensor,
    pub view_j: Tensor,
    pub source: usize,
}

fn dims3(x: &Tensor) -> Result<(usize, usize, usize)> {
    match x.shape() {
        [c, h, w] => Ok((*c, *h, *w)),
        s => Err(Error::InvalidShape {
            shape: s.to_vec(),
            reason: "expected a [C, H, W] image".into(),
        }),
    }
}

fn require_rgb(x: &Tensor, op: &str) -> Result<(usize, usize)> {
    let (c, h, w) = dims3(x)?;
    if c != 3 {
        return Err(Error::invalid(format!("{op} needs 3 channels, got {c}")));
    }
    Ok((h, w))
}

/// Bilinear resize of the `crop_h × crop_w` window at `(top, left)` using
/// half-pixel centers.
pub fn resize_region(
    x: &Tensor,
    top: usize,
    left: usize,
    crop_h: usize,
    crop_w: usize,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor> {
    let (c, h, w) = dims3(x)?;
    if crop_h == 0 || crop_w == 0 || top + crop_h > h || left + crop_w > w || out_h == 0 || out_w == 0 {
        return Err(Error::invalid("crop window outside image"));
    }
    let src = |p: usize, out: usize, inp: usize| -> (usize, usize, f64) {
        let s = ((p as f64 + 0.5) * inp as f64 / out as f64 - 0.5).clamp(0.0, (inp - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(inp - 1);
        (i0, i1, s - i0 as f64)
    };
    let ys: Vec<_> = (0..out_h).map(|p| src(p, out_h, crop_h)).collect();
    let xs: Vec<_> = (0..out_w).map(|p| src(p, out_w, crop_w)).collect();
    let d = x.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = &d[ch * h * w..(ch + 1) * h * w];
        let at = |y: usize, xx: usize| plane[(top + y) * w + left + xx];
        for &(y0, y1, wy) in &ys {
            for &(x0, x1, wx) in &xs {
                let v = if wy == 0.0 && wx == 0.0 {
                    at(y0, x0)
                } else {
                    let a = at(y0, x0) * (1.0 - wx) + at(y0, x1) * wx;
                    let b = at(y1, x0) * (1.0 - wx) + at(y1, x1) * wx;
                    a * (1.0 - wy) + b * wy
                };
                out.push(v);
            }
        }
    }
    Tensor::new(vec![c, out_h, out_w], out)
}

/// Samples an area fraction and aspect ratio, crops, and resizes to
/// `out_h × out_w`. Falls back to a center crop after 10 rejected proposals.
pub fn random_resized_crop(
    x: &Tensor,
    scale: (f64, f64),
    aspect: (f64, f64),
    out_h: usize,
    out_w: usize,
    rng: &mut Rng,
) -> Result<Tensor> {
    let (_, h, w) = dims3(x)?;
    let area = (h * w) as f64;
    let (log_lo, log_hi) = (aspect.0.ln(), aspect.1.ln());
    for _ in 0..10 {
        let target = area * rng.uniform(scale.0, scale.1);
        let ratio = rng.uniform(log_lo, log_hi).exp();
        let cw = (target * ratio).sqrt().round() as usize;
        let ch = (target / ratio).sqrt().round() as usize;
        if cw > 0 && ch > 0 && cw <= w && ch <= h {
            let top = rng.below((h - ch + 1) as u64) as usize;
            let left = rng.below((w - cw + 1) as u64) as usize;
            return resize_region(x, top, left, ch, cw, out_h, out_w);
        }
    }
    let in_ratio = w as f64 / h as f64;
    let (ch, cw) = if in_ratio < aspect.0 {
        (((w as f64 / aspect.0).round() as usize).clamp(1, h), w)
    } else if in_ratio > aspect.1 {
        (h, ((h as f64 * aspect.1).round() as usize).clamp(1, w))
    } else {
        (h, w)
    };
    resize_region(x, (h - ch) / 2, (w - cw) / 2, ch, cw, out_h, out_w)
}

pub fn horizontal_flip(x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = dims3(x)?;
    let d = x.data();
    let mut out = Vec::with_capacity(d.len());
    for row in 0..c * h {
        out.extend(d[row * w..(row + 1) * w].iter().rev());
    }
    Tensor::new(vec![c, h, w], out)
}

fn luminance(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// Per-pixel luminance plane of an RGB image.
fn gray_plane(x: &Tensor) -> Result<Vec<f64>> {
    let (h, w) = require_rgb(x, "grayscale")?;
    let n = h * w;
    let d = x.data();
    Ok((0..n).map(|i| luminance(d[i], d[n + i], d[2 * n + i])).collect())
}

/// Luminance `0.299R + 0.587G + 0.114B` replicated to three channels.
pub fn to_grayscale(x: &Tensor) -> Result<Tensor> {
    let gray = gray_plane(x)?;
    let mut data = Vec::with_capacity(gray.len() * 3);
    for _ in 0..3 {
        data.extend_from_slice(&gray);
    }
    Tensor::new(x.shape().to_vec(), data)
}

fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

pub fn adjust_brightness(x: &Tensor, factor: f64) -> Result<Tensor> {
    x.map(|v| clamp01(v * factor))
}

/// Blends toward the image's mean luminance.
pub fn adjust_contrast(x: &Tensor, factor: f64) -> Result<Tensor> {
    let gray = gray_plane(x)?;
    let mean = gray.iter().sum::<f64>() / gray.len() as f64;
    x.map(|v| clamp01(factor * v + (1.0 - factor) * mean))
}

/// Blends each pixel toward its own luminance.
pub fn adjust_saturation(x: &Tensor, factor: f64) -> Result<Tensor> {
    let gray = gray_plane(x)?;
    let n = gray.len();
    let mut out = x.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        *v = clamp01(factor * *v + (1.0 - factor) * gray[i % n]);
    }
    Ok(out)
}

pub fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    (h, s, max)
}

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let sector = h6.floor();
    let f = h6 - sector;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector as u32 % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

/// Rotates hue by `shift` (in turns, `[-0.5, 0.5]`).
pub fn adjust_hue(x: &Tensor, shift: f64) -> Result<Tensor> {
    let (h, w) = require_rgb(x, "hue")?;
    let n = h * w;
    let d = x.data();
    let mut out = vec![0.0; 3 * n];
    for i in 0..n {
        let (hh, s, v) = rgb_to_hsv(d[i], d[n + i], d[2 * n + i]);
        let (r, g, b) = hsv_to_rgb(hh + shift, s, v);
        out[i] = clamp01(r);
        out[n + i] = clamp01(g);
        out[2 * n + i] = clamp01(b);
    }
    Tensor::new(x.shape().to_vec(), out)
}

/// Brightness, contrast, saturation and hue adjustments with factors drawn
/// uniformly from their strength ranges, applied in a random order.
/// A zero strength leaves its stage out.
pub fn color_jitter(x: &Tensor, strengths: &JitterStrengths, rng: &mut Rng) -> Result<Tensor> {
    require_rgb(x, "color jitter")?;
    let order = rng.permutation(4);
    let mut out = x.clone();
    for stage in order {
        out = match stage {
            0 if strengths.brightness > 0.0 => {
                let s = strengths.brightness;
                adjust_brightness(&out, rng.uniform((1.0 - s).max(0.0), 1.0 + s))?
            }
            1 if strengths.contrast > 0.0 => {
                let s = strengths.contrast;
                adjust_contrast(&out, rng.uniform((1.0 - s).max(0.0), 1.0 + s))?
            }
            2 if strengths.saturation > 0.0 => {
                let s = strengths.saturation;
                adjust_saturation(&out, rng.uniform((1.0 - s).max(0.0), 1.0 + s))?
            }
            3 if strengths.hue > 0.0 => adjust_hue(&out, rng.uniform(-strengths.hue, strengths.hue))?,
            _ => out,
        };
    }
    Ok(out)
}

/// Largest odd integer ≤ round(0.1 · min(h, w)), but at least 3.
pub fn blur_kernel_size(h: usize, w: usize) -> usize {
    let k = (0.1 * h.min(w) as f64).round() as usize;
    let k = if k % 2 == 0 { k.saturating_sub(1) } else { k };
    k.max(3)
}

/// Separable Gaussian blur with replicated edges and a kernel normalized to 1.
pub fn gaussian_blur_with_sigma(x: &Tensor, sigma: f64) -> Result<Tensor> {
    let (c, h, w) = dims3(x)?;
    if h < 3 || w < 3 || !(sigma > 0.0) {
        return Err(Error::invalid("blur needs h, w >= 3 and sigma > 0"));
    }
    let k = blur_kernel_size(h, w);
    let half = (k / 2) as isize;
    let mut kernel: Vec<f64> = (-half..=half)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|v| *v /= total);

    let d = x.data();
    let mut tmp = vec![0.0; d.len()];
    for ch in 0..c {
        for y in 0..h {
            for xx in 0..w {
                let mut acc = 0.0;
                for (ki, kv) in kernel.iter().enumerate() {
                    let sx = (xx as isize + ki as isize - half).clamp(0, w as isize - 1) as usize;
                    acc += kv * d[(ch * h + y) * w + sx];
                }
                tmp[(ch * h + y) * w + xx] = acc;
            }
        }
    }
    let mut out = vec![0.0; d.len()];
    for ch in 0..c {
        for y in 0..h {
            for xx in 0..w {
                let mut acc = 0.0;
                for (ki, kv) in kernel.iter().enumerate() {
                    let sy = (y as isize + ki as isize - half).clamp(0, h as isize - 1) as usize;
                    acc += kv * tmp[(ch * h + sy) * w + xx];
                }
                out[(ch * h + y) * w + xx] = clamp01(acc);
            }
        }
    }
    Tensor::new(vec![c, h, w], out)
}

pub fn gaussian_blur(x: &Tensor, sigma_range: (f64, f64), rng: &mut Rng) -> Result<Tensor> {
    let sigma = rng.uniform(sigma_range.0, sigma_range.1);
    gaussian_blur_with_sigma(x, sigma)
}

/// One draw `t ~ 𝒯` applied to `x`.
pub fn random_view(x: &Tensor, space: &TransformSpace, rng: &mut Rng) -> Result<Tensor> {
    let (_, h, w) = dims3(x)?;
    let mut v = random_resized_crop(x, space.crop_scale, space.crop_aspect, h, w, rng)?;
    if rng.bernoulli(space.flip_prob) {
        v = horizontal_flip(&v)?;
    }
    if rng.bernoulli(space.jitter_prob) {
        v = color_jitter(&v, &space.jitter, rng)?;
    }
    if rng.bernoulli(space.grayscale_prob) {
        v = to_grayscale(&v)?;
    }
    if rng.bernoulli(space.blur_prob) {
        v = gaussian_blur(&v, space.blur_sigma, rng)?;
    }
    Ok(v)
}

/// Two independent views of `x`; the first view's draws precede the second's.
pub fn sample_pair(x: &Tensor, source: usize, space: &TransformSpace, rng: &mut Rng) -> Result<AugmentedPair> {
    let (_, h, w) = dims3(x)?;
    if h < 8 || w < 8 {
        return Err(Error::invalid(format!("views need at least 8x8 images, got {h}x{w}")));
    }
    let view_i = random_view(x, space, rng)?;
    let view_j = random_view(x, space, rng)?;
    Ok(AugmentedPair { view_i, view_j, source })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_image(seed: u64, h: usize, w: usize) -> Tensor {
        Tensor::uniform(&mut Rng::new(seed, 0), 0.0, 1.0, &[3, h, w]).unwrap()
    }

    fn variance(t: &Tensor) -> f64 {
        let m = t.mean();
        t.data().iter().map(|v| (v - m) * (v - m)).sum::<f64>() / t.len() as f64
    }

    #[test]
    fn default_space_is_valid() {
        TransformSpace::default().validate().unwrap();
        TransformSpace::identity().validate().unwrap();
        let mut bad = TransformSpace::default();
        bad.flip_prob = 1.5;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn identity_space_returns_input() {
        let x = rand_image(1, 16, 16);
        let pair = sample_pair(&x, 0, &TransformSpace::identity(), &mut Rng::new(2, 0)).unwrap();
        assert!(pair.view_i.max_abs_diff(&x) < 1e-12);
        assert!(pair.view_j.max_abs_diff(&x) < 1e-12);
    }

    #[test]
    fn pair_is_reproducible_from_cloned_rng() {
        let x = rand_image(3, 16, 16);
        let rng = Rng::new(7, 7);
        let a = sample_pair(&x, 0, &TransformSpace::default(), &mut rng.clone()).unwrap();
        let b = sample_pair(&x, 0, &TransformSpace::default(), &mut rng.clone()).unwrap();
        assert!(a.view_i.bitwise_eq(&b.view_i) && a.view_j.bitwise_eq(&b.view_j));
    }

    #[test]
    fn default_views_differ() {
        let x = rand_image(4, 16, 16);
        let differing = (0..100)
            .filter(|&s| {
                let p = sample_pair(&x, 0, &TransformSpace::default(), &mut Rng::new(s, 1)).unwrap();
                !p.view_i.bitwise_eq(&p.view_j)
            })
            .count();
        assert!(differing >= 99);
    }

    #[test]
    fn resize_only_crop_is_identity() {
        let x = rand_image(5, 12, 12);
        let y = random_resized_crop(&x, (1.0, 1.0), (1.0, 1.0), 12, 12, &mut Rng::new(0, 0)).unwrap();
        assert!(y.max_abs_diff(&x) < 1e-12);
    }

    #[test]
    fn constant_image_crops_to_constant() {
        let x = Tensor::full(&[3, 16, 16], 0.37).unwrap();
        let y = random_resized_crop(&x, (0.08, 1.0), (0.75, 4.0 / 3.0), 16, 16, &mut Rng::new(1, 0)).unwrap();
        assert!(y.data().iter().all(|v| (v - 0.37).abs() < 1e-12));
    }

    #[test]
    fn downsized_gradient_stays_in_range() {
        let w = 16;
        let data: Vec<f64> = (0..3 * 8 * w).map(|i| (i % w) as f64 / (w - 1) as f64).collect();
        let x = Tensor::new(vec![3, 8, w], data).unwrap();
        let y = resize_region(&x, 0, 0, 8, w, 4, w / 2).unwrap();
        assert!(y.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        // Half-pixel centers: output column j samples input position 2j + 0.5.
        assert!((y.data()[0] - 0.5 / 15.0).abs() < 1e-12);
    }

    #[test]
    fn crop_falls_back_to_center_when_proposals_fail() {
        // Scale 1 with a far-from-square aspect never fits a square image.
        let x = rand_image(6, 8, 8);
        let y = random_resized_crop(&x, (1.0, 1.0), (3.0, 4.0), 8, 8, &mut Rng::new(2, 0)).unwrap();
        assert_eq!(y.shape(), &[3, 8, 8]);
    }

    #[test]
    fn flip_properties() {
        let x = rand_image(7, 5, 6);
        assert!(horizontal_flip(&horizontal_flip(&x).unwrap()).unwrap().bitwise_eq(&x));
        let sym = Tensor::new(vec![1, 1, 3], vec![0.2, 0.9, 0.2]).unwrap();
        assert!(horizontal_flip(&sym).unwrap().bitwise_eq(&sym));
        let thin = Tensor::new(vec![3, 4, 1], (0..12).map(|i| i as f64 / 12.0).collect()).unwrap();
        assert!(horizontal_flip(&thin).unwrap().bitwise_eq(&thin));
    }

    #[test]
    fn jitter_zero_strength_is_identity() {
        let x = rand_image(8, 8, 8);
        let y = color_jitter(&x, &JitterStrengths::NONE, &mut Rng::new(0, 0)).unwrap();
        assert!(y.bitwise_eq(&x));
    }

    #[test]
    fn zero_brightness_is_black() {
        let x = rand_image(9, 8, 8);
        assert_eq!(adjust_brightness(&x, 0.0).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn saturation_leaves_gray_pixels_alone() {
        let gray = to_grayscale(&rand_image(10, 8, 8)).unwrap();
        let s = JitterStrengths {
            saturation: 0.8,
            ..JitterStrengths::NONE
        };
        for seed in 0..10 {
            let y = color_jitter(&gray, &s, &mut Rng::new(seed, 0)).unwrap();
            assert!(y.max_abs_diff(&gray) < 1e-9);
        }
    }

    #[test]
    fn jitter_output_stays_in_unit_range() {
        let x = rand_image(11, 8, 8);
        let y = color_jitter(&x, &JitterStrengths::scaled(1.0), &mut Rng::new(3, 0)).unwrap();
        assert!(y.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn hsv_round_trip() {
        let mut rng = Rng::new(12, 0);
        for _ in 0..200 {
            let (r, g, b) = (rng.next_f64(), rng.next_f64(), rng.next_f64());
            let (h, s, v) = rgb_to_hsv(r, g, b);
            let (r2, g2, b2) = hsv_to_rgb(h, s, v);
            assert!((r - r2).abs() < 1e-12 && (g - g2).abs() < 1e-12 && (b - b2).abs() < 1e-12);
        }
    }

    #[test]
    fn grayscale_examples() {
        let px = |r: f64, g: f64, b: f64| Tensor::new(vec![3, 1, 1], vec![r, g, b]).unwrap();
        assert!(to_grayscale(&px(0.4, 0.4, 0.4)).unwrap().max_abs_diff(&px(0.4, 0.4, 0.4)) < 1e-15);
        assert!(to_grayscale(&px(1.0, 0.0, 0.0)).unwrap().max_abs_diff(&px(0.299, 0.299, 0.299)) < 1e-15);
        let x = rand_image(13, 6, 6);
        let g = to_grayscale(&x).unwrap();
        assert!(to_grayscale(&g).unwrap().max_abs_diff(&g) < 1e-12);
        assert!(to_grayscale(&Tensor::zeros(&[1, 4, 4])).is_err());
    }

    #[test]
    fn blur_kernel_sizes() {
        assert_eq!(blur_kernel_size(32, 32), 3);
        assert_eq!(blur_kernel_size(16, 16), 3);
        assert_eq!(blur_kernel_size(96, 96), 9);
        assert_eq!(blur_kernel_size(128, 128), 13);
        for r in [8, 16, 32, 64, 96, 128, 200] {
            let k = blur_kernel_size(r, r);
            assert!(k % 2 == 1 && k >= 3);
        }
    }

    #[test]
    fn blur_preserves_constants_and_reduces_variance() {
        let c = Tensor::full(&[3, 16, 16], 0.6).unwrap();
        let y = gaussian_blur(&c, (0.1, 2.0), &mut Rng::new(0, 0)).unwrap();
        assert!(y.max_abs_diff(&c) < 1e-12);
        assert!((y.mean() - c.mean()).abs() < 1e-6);
        let x = rand_image(14, 32, 32);
        let y = gaussian_blur_with_sigma(&x, 1.0).unwrap();
        assert!(variance(&y) < variance(&x));
    }

    #[test]
    fn pair_requires_eight_pixels() {
        let x = rand_image(15, 4, 4);
        assert!(sample_pair(&x, 0, &TransformSpace::default(), &mut Rng::new(0, 0)).is_err());
    }
}
