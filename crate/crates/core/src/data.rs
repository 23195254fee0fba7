//! Image datasets: splitting, Z-score normalization, a procedural generator
//! and loaders for the CIFAR-10 binary layout and packed `NTA1` files.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::hsv_to_rgb;
use crate::error::{Error, Result};
use crate::expcli::container::Container;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Images `[n × C × H × W]` with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageDataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub name: String,
}

impl ImageDataset {
    pub fn new(images: Tensor, labels: Vec<usize>, num_classes: usize, name: impl Into<String>) -> Result<Self> {
        if images.ndim() != 4 {
            return Err(Error::InvalidShape {
                shape: images.shape().to_vec(),
                reason: "dataset images must be [n, C, H, W]".into(),
            });
        }
        if images.rows() != labels.len() {
            return Err(Error::invalid(format!(
                "{} images but {} labels",
                images.rows(),
                labels.len()
            )));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange { label, num_classes });
        }
        Ok(ImageDataset {
            images,
            labels,
            num_classes,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-sample `[C, H, W]`.
    pub fn sample_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    pub fn channels(&self) -> usize {
        self.images.shape()[1]
    }

    pub fn image(&self, i: usize) -> Tensor {
        self.images.slice0(i)
    }

    pub fn subset(&self, indices: &[usize]) -> Result<ImageDataset> {
        Ok(ImageDataset {
            images: self.images.select0(indices)?,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            name: self.name.clone(),
        })
    }

    /// Images flattened to `[n × (C·H·W)]` rows.
    pub fn flattened(&self) -> Result<Tensor> {
        self.images.reshape(&[self.len(), self.images.row_len()])
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub fractions: [f64; 3],
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(seed: u64) -> Self {
        SplitSpec {
            fractions: [0.7, 0.1, 0.2],
            seed,
        }
    }
}

const SPLIT_STREAM: u64 = 0x5_9117;

/// Index lists for (train, val, test): the first two take
/// `floor(fraction · n)` entries of a seeded permutation, test takes the rest.
pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<[Vec<usize>; 3]> {
    let [a, b, c] = spec.fractions;
    if [a, b, c].iter().any(|f| !(*f >= 0.0)) || (a + b + c - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("split fractions must be non-negative and sum to 1"));
    }
    // Tolerance keeps 0.7·10 from flooring to 6 on representational error.
    let n_train = (a * n as f64 + 1e-9).floor() as usize;
    let n_val = (b * n as f64 + 1e-9).floor() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= n {
        return Err(Error::invalid(format!("{n} samples cannot fill every split")));
    }
    let perm = Rng::new(spec.seed, SPLIT_STREAM).permutation(n);
    Ok([
        perm[..n_train].to_vec(),
        perm[n_train..n_train + n_val].to_vec(),
        perm[n_train + n_val..].to_vec(),
    ])
}

pub fn split(ds: &ImageDataset, spec: &SplitSpec) -> Result<(ImageDataset, ImageDataset, ImageDataset)> {
    let [train, val, test] = split_indices(ds.len(), spec)?;
    Ok((ds.subset(&train)?, ds.subset(&val)?, ds.subset(&test)?))
}

/// Per-channel mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn identity(channels: usize) -> Self {
        NormStats {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    /// `(x − μ_c) / σ_c` on a single `[C, H, W]` image.
    pub fn normalize_image(&self, x: &Tensor) -> Result<Tensor> {
        let c = x.shape().first().copied().unwrap_or(0);
        if c != self.mean.len() || x.ndim() != 3 {
            return Err(Error::ShapeMismatch {
                op: "zscore",
                lhs: x.shape().to_vec(),
                rhs: vec![self.mean.len()],
            });
        }
        let plane = x.row_len();
        let mut out = x.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let ch = i / plane;
            *v = (*v - self.mean[ch]) / self.std[ch];
        }
        out.ensure_finite("zscore")?;
        Ok(out)
    }
}

pub fn compute_norm_stats(train: &ImageDataset) -> Result<NormStats> {
    if train.is_empty() {
        return Err(Error::invalid("cannot compute statistics of an empty dataset"));
    }
    let c = train.channels();
    let plane = train.sample_shape()[1] * train.sample_shape()[2];
    let d = train.images.data();
    let count = (train.len() * plane) as f64;
    let mut mean = vec![0.0; c];
    let mut std = vec![0.0; c];
    for ch in 0..c {
        let values = || (0..train.len()).flat_map(move |n| d[(n * c + ch) * plane..(n * c + ch + 1) * plane].iter());
        let mu = values().fold(0.0, |a, v| a + v) / count;
        let var = values().fold(0.0, |a, v| a + (v - mu) * (v - mu)) / count;
        let sigma = var.sqrt();
        if !(sigma > 1e-12 * mu.abs().max(1.0)) {
            return Err(Error::ZeroVariance(ch));
        }
        mean[ch] = mu;
        std[ch] = sigma;
    }
    Ok(NormStats { mean, std })
}

pub fn apply_zscore(ds: &ImageDataset, stats: &NormStats) -> Result<ImageDataset> {
    if ds.channels() != stats.mean.len() {
        return Err(Error::ShapeMismatch {
            op: "apply_zscore",
            lhs: ds.sample_shape().to_vec(),
            rhs: vec![stats.mean.len()],
        });
    }
    let c = ds.channels();
    let plane = ds.images.row_len() / c;
    let mut images = ds.images.clone();
    for (i, v) in images.data_mut().iter_mut().enumerate() {
        let ch = (i / plane) % c;
        *v = (*v - stats.mean[ch]) / stats.std[ch];
    }
    images.ensure_finite("apply_zscore")?;
    Ok(ImageDataset {
        images,
        labels: ds.labels.clone(),
        num_classes: ds.num_classes,
        name: ds.name.clone(),
    })
}

/// Procedural RGB dataset: each class has its own hue, shape and stripe
/// frequency; position, size, background and pixel noise vary per sample.
pub fn synth_blobs(num_classes: usize, per_class: usize, resolution: usize, rng: &mut Rng) -> Result<ImageDataset> {
    if resolution < 8 {
        return Err(Error::invalid("synthetic images need resolution >= 8"));
    }
    if num_classes == 0 {
        return Err(Error::invalid("need at least one class"));
    }
    let r = resolution;
    let rf = r as f64;
    let n = num_classes * per_class;
    let mut data = Vec::with_capacity(n * 3 * r * r);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % num_classes;
        labels.push(class);
        let hue = class as f64 / num_classes as f64 + rng.uniform(-0.03, 0.03);
        let (cr, cg, cb) = hsv_to_rgb(hue, rng.uniform(0.6, 1.0), rng.uniform(0.7, 1.0));
        let bg = rng.uniform(0.1, 0.4);
        let cx = rf / 2.0 + rng.uniform(-rf / 6.0, rf / 6.0);
        let cy = rf / 2.0 + rng.uniform(-rf / 6.0, rf / 6.0);
        let size = rng.uniform(rf / 4.0, rf / 3.0);
        let freq = (1 + class % 3) as f64;
        let phase = rng.uniform(0.0, std::f64::consts::TAU);
        let mut img = vec![0.0; 3 * r * r];
        for y in 0..r {
            for x in 0..r {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                let inside = match class % 4 {
                    0 => dx * dx + dy * dy <= size * size,
                    1 => dx.abs() <= size * 0.8 && dy.abs() <= size * 0.8,
                    2 => dx.abs() <= size * 1.2 && dy.abs() <= size * 0.4,
                    _ => dx.abs() <= size * 0.4 && dy.abs() <= size * 1.2,
                };
                let px = y * r + x;
                if inside {
                    let stripe = 0.75 + 0.25 * (std::f64::consts::TAU * freq * x as f64 / rf + phase).sin();
                    img[px] = cr * stripe;
                    img[r * r + px] = cg * stripe;
                    img[2 * r * r + px] = cb * stripe;
                } else {
                    for ch in 0..3 {
                        img[ch * r * r + px] = bg;
                    }
                }
            }
        }
        for v in img.iter_mut() {
            *v = (*v + 0.03 * rng.normal()).clamp(0.0, 1.0);
        }
        data.extend_from_slice(&img);
    }
    ImageDataset::new(Tensor::new(vec![n, 3, r, r], data)?, labels, num_classes, "synthetic")
}

pub const CIFAR_RECORD: usize = 3073;

/// Parses CIFAR-10 binary records: one label byte followed by 3072 pixel
/// bytes (R, G, B planes of 32×32, row-major), scaled by 1/255.
pub fn parse_cifar_bytes(bytes: &[u8], name: &str) -> Result<ImageDataset> {
    if bytes.len() % CIFAR_RECORD != 0 {
        return Err(Error::Format(format!(
            "truncated CIFAR file: {} bytes is not a multiple of {CIFAR_RECORD}",
            bytes.len()
        )));
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * 3072);
    for record in bytes.chunks_exact(CIFAR_RECORD) {
        if record[0] >= 10 {
            return Err(Error::Format(format!("CIFAR label byte {} >= 10", record[0])));
        }
        labels.push(record[0] as usize);
        pixels.extend(record[1..].iter().map(|&b| b as f64 / 255.0));
    }
    ImageDataset::new(Tensor::new(vec![n, 3, 32, 32], pixels)?, labels, 10, name)
}

pub fn load_cifar_binary(path: &Path) -> Result<ImageDataset> {
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("cifar10");
    parse_cifar_bytes(&fs::read(path)?, name)
}

/// Writes `images` (f32) and `labels` (i64) entries plus name/class metadata.
pub fn save_packed(path: &Path, ds: &ImageDataset) -> Result<()> {
    let mut c = Container::new();
    c.insert_tensor("images", &ds.images)?;
    c.insert_i64("labels", vec![ds.len()], ds.labels.iter().map(|&l| l as i64).collect())?;
    c.set_meta(&serde_json::json!({ "name": ds.name, "num_classes": ds.num_classes }))?;
    c.save(path)
}

pub fn load_packed(path: &Path) -> Result<ImageDataset> {
    let c = Container::load(path)?;
    let images = c.tensor("images")?.clone();
    let (_, raw) = c.i64s("labels")?;
    let labels = raw
        .iter()
        .map(|&l| usize::try_from(l).map_err(|_| Error::Format(format!("negative label {l}"))))
        .collect::<Result<Vec<_>>>()?;
    let meta = c.meta()?.unwrap_or_default();
    let num_classes = meta["num_classes"]
        .as_u64()
        .map(|v| v as usize)
        .unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    let name = meta["name"].as_str().unwrap_or("packed").to_string();
    ImageDataset::new(images, labels, num_classes, name)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(n: usize) -> ImageDataset {
        let images = Tensor::uniform(&mut Rng::new(n as u64, 0), 0.0, 1.0, &[n, 3, 2, 2]).unwrap();
        ImageDataset::new(images, (0..n).map(|i| i % 2).collect(), 2, "tiny").unwrap()
    }

    #[test]
    fn split_sizes() {
        let sizes = |n| split_indices(n, &SplitSpec::new(0)).unwrap().map(|v| v.len());
        assert_eq!(sizes(10), [7, 1, 2]);
        assert_eq!(sizes(101), [70, 10, 21]);
        assert_eq!(sizes(100), [70, 10, 20]);
    }

    #[test]
    fn split_is_deterministic_and_seed_dependent() {
        let a = split_indices(100, &SplitSpec::new(4)).unwrap();
        let b = split_indices(100, &SplitSpec::new(4)).unwrap();
        let c = split_indices(100, &SplitSpec::new(5)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn split_rejects_tiny_datasets() {
        assert!(split_indices(9, &SplitSpec::new(0)).is_err());
        let bad = SplitSpec {
            fractions: [0.5, 0.5, 0.5],
            seed: 0,
        };
        assert!(split_indices(100, &bad).is_err());
    }

    #[test]
    fn two_value_channel_stats() {
        let images = Tensor::new(vec![2, 1, 1, 1], vec![0.0, 2.0]).unwrap();
        let ds = ImageDataset::new(images, vec![0, 0], 1, "t").unwrap();
        let stats = compute_norm_stats(&ds).unwrap();
        assert_eq!(stats.mean, vec![1.0]);
        assert_eq!(stats.std, vec![1.0]);
        assert_eq!(apply_zscore(&ds, &stats).unwrap().images.data(), &[-1.0, 1.0]);
    }

    #[test]
    fn constant_channel_is_zero_variance() {
        let mut ds = tiny(10);
        let plane = 4;
        for n in 0..10 {
            for v in &mut ds.images.data_mut()[(n * 3 + 1) * plane..(n * 3 + 2) * plane] {
                *v = 0.3;
            }
        }
        assert!(matches!(compute_norm_stats(&ds), Err(Error::ZeroVariance(1))));
    }

    #[test]
    fn renormalizing_is_idempotent() {
        let ds = tiny(20);
        let once = apply_zscore(&ds, &compute_norm_stats(&ds).unwrap()).unwrap();
        let stats = compute_norm_stats(&once).unwrap();
        for c in 0..3 {
            assert!(stats.mean[c].abs() < 1e-9);
            assert!((stats.std[c] - 1.0).abs() < 1e-9);
        }
        assert_eq!(once.labels, ds.labels);
    }

    #[test]
    fn identity_stats_leave_data_unchanged() {
        let ds = tiny(10);
        let out = apply_zscore(&ds, &NormStats::identity(3)).unwrap();
        assert!(out.images.bitwise_eq(&ds.images));
        assert!(apply_zscore(&ds, &NormStats::identity(1)).is_err());
    }

    #[test]
    fn single_image_normalization_matches_dataset() {
        let ds = tiny(10);
        let stats = compute_norm_stats(&ds).unwrap();
        let whole = apply_zscore(&ds, &stats).unwrap();
        let one = stats.normalize_image(&ds.image(3)).unwrap();
        assert!(one.bitwise_eq(&whole.image(3)));
    }

    #[test]
    fn synth_is_balanced_and_deterministic() {
        let a = synth_blobs(4, 100, 16, &mut Rng::new(1, 0)).unwrap();
        let b = synth_blobs(4, 100, 16, &mut Rng::new(1, 0)).unwrap();
        assert_eq!(a.len(), 400);
        assert_eq!(a.class_counts(), vec![100; 4]);
        assert!(a.images.bitwise_eq(&b.images));
        assert!(a.images.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    fn cifar_fixture() -> Vec<u8> {
        let mut bytes = vec![3u8];
        bytes.extend(std::iter::repeat(0u8).take(3072));
        bytes.push(9);
        bytes.extend((0..3072).map(|i| (i % 256) as u8));
        bytes
    }

    #[test]
    fn cifar_two_records() {
        let ds = parse_cifar_bytes(&cifar_fixture(), "fixture").unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.labels, vec![3, 9]);
        assert!(ds.image(0).data().iter().all(|&v| v == 0.0));
        let second = ds.image(1);
        assert_eq!(second.data()[255], 1.0);
        assert_eq!(second.data()[1], 1.0 / 255.0);
        // Channel-planar layout: G plane starts at pixel byte 1024.
        assert_eq!(second.data()[1024], 0.0);
    }

    #[test]
    fn cifar_errors() {
        let bytes = cifar_fixture();
        assert!(parse_cifar_bytes(&bytes[..3000], "t").is_err());
        let mut bad = bytes.clone();
        bad[0] = 10;
        assert!(parse_cifar_bytes(&bad, "t").is_err());
    }

    #[test]
    fn packed_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.nta");
        let ds = tiny(12);
        save_packed(&path, &ds).unwrap();
        let back = load_packed(&path).unwrap();
        assert_eq!(back.labels, ds.labels);
        assert_eq!(back.num_classes, 2);
        assert!(back.images.max_abs_diff(&ds.images) < 1e-7);
    }
}
