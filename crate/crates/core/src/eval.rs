//! Linear-probe evaluation of frozen representations and summary statistics.

use serde::{Deserialize, Serialize};

use crate::data::{split_indices, ImageDataset, NormStats, SplitSpec};
use crate::error::{Error, Result};
use crate::losses::softmax_cross_entropy;
use crate::nn::{Dense, Layer, LayerStack};
use crate::optim::Adam;
use crate::rng::Rng;
use crate::tensor::Tensor;

const EXTRACT_CHUNK: usize = 256;

/// Representations `h = f(x)` with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub source: String,
}

impl FeatureDataset {
    pub fn new(features: Tensor, labels: Vec<usize>, num_classes: usize, source: impl Into<String>) -> Result<Self> {
        if features.ndim() != 2 || features.rows() != labels.len() {
            return Err(Error::ShapeMismatch {
                op: "feature dataset",
                lhs: features.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange { label, num_classes });
        }
        Ok(FeatureDataset {
            features,
            labels,
            num_classes,
            source: source.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.features.shape()[1]
    }
}

/// Runs every image through the backbone, with no augmentation.
pub fn extract_features(
    backbone: &LayerStack,
    ds: &ImageDataset,
    norm: &NormStats,
    source: impl Into<String>,
) -> Result<FeatureDataset> {
    if ds.sample_shape() != backbone.input_shape() {
        return Err(Error::ShapeMismatch {
            op: "extract_features",
            lhs: ds.sample_shape().to_vec(),
            rhs: backbone.input_shape().to_vec(),
        });
    }
    let mut rows = Vec::with_capacity(ds.len());
    let indices: Vec<usize> = (0..ds.len()).collect();
    for chunk in indices.chunks(EXTRACT_CHUNK) {
        let images = chunk
            .iter()
            .map(|&i| norm.normalize_image(&ds.image(i)))
            .collect::<Result<Vec<_>>>()?;
        let h = backbone.infer(&Tensor::stack(&images)?)?;
        rows.extend((0..h.rows()).map(|r| h.row(r).to_vec()));
    }
    let width = backbone.output_shape().iter().product();
    let features = if rows.is_empty() {
        Tensor::zeros(&[0, width])
    } else {
        Tensor::from_rows(&rows)?
    };
    FeatureDataset::new(features, ds.labels.clone(), ds.num_classes, source)
}

fn argmax(row: &[f64]) -> usize {
    // First index wins on ties.
    let mut best = 0;
    for (k, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = k;
        }
    }
    best
}

/// Fraction of rows whose argmax equals the label; ties go to the lowest class.
pub fn acc_at_1(predictions: &Tensor, labels: &[usize]) -> Result<f64> {
    if predictions.ndim() != 2 || predictions.rows() != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "acc_at_1",
            lhs: predictions.shape().to_vec(),
            rhs: vec![labels.len()],
        });
    }
    if labels.is_empty() {
        return Err(Error::invalid("accuracy of an empty set"));
    }
    let correct = labels
        .iter()
        .enumerate()
        .filter(|&(r, &l)| argmax(predictions.row(r)) == l)
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            epochs: 50,
            batch_size: 32,
            lr: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeResult {
    /// Peak test accuracy over all probe epochs.
    pub acc1: f64,
    /// Zero-based epoch at which `acc1` was first reached.
    pub best_epoch: usize,
    pub epoch_loss: Vec<f64>,
    pub test_acc: Vec<f64>,
    pub config: ProbeConfig,
    pub split_sizes: [usize; 3],
}

/// Logistic-regression probe: one dense layer trained with softmax
/// cross-entropy on a fresh split of the features.
pub fn train_probe(fd: &FeatureDataset, split: &SplitSpec, cfg: &ProbeConfig) -> Result<ProbeResult> {
    let mut seen = vec![false; fd.num_classes];
    for &l in &fd.labels {
        seen[l] = true;
    }
    if seen.iter().filter(|&&s| s).count() < 2 {
        return Err(Error::invalid("probe needs at least two classes"));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::invalid("probe epochs and batch size must be positive"));
    }
    let [train_idx, val_idx, test_idx] = split_indices(fd.len(), split)?;
    let train_x = fd.features.select0(&train_idx)?;
    let train_y: Vec<usize> = train_idx.iter().map(|&i| fd.labels[i]).collect();
    let test_x = fd.features.select0(&test_idx)?;
    let test_y: Vec<usize> = test_idx.iter().map(|&i| fd.labels[i]).collect();

    let root = Rng::new(cfg.seed, 0x9B0B);
    let mut layer = Layer::Dense(Dense::new(fd.width(), fd.num_classes, &mut root.child(0))?);
    let mut adam = Adam::new(cfg.lr)?;
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    let mut test_acc = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let order = root.child_path(&[1, epoch as u64]).permutation(train_idx.len());
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let x = train_x.select0(batch)?;
            let y: Vec<usize> = batch.iter().map(|&i| train_y[i]).collect();
            layer.zero_grad();
            let logits = layer.forward(&x)?;
            let (loss, grad) = softmax_cross_entropy(&logits, &y)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite("probe loss"));
            }
            layer.backward(&x, &grad)?;
            adam.step(&mut layer.params())?;
            total += loss * batch.len() as f64;
        }
        epoch_loss.push(total / train_idx.len() as f64);
        test_acc.push(acc_at_1(&layer.forward(&test_x)?, &test_y)?);
    }

    let (best_epoch, acc1) = test_acc
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, a)| if a > best.1 { (i, a) } else { best });
    Ok(ProbeResult {
        acc1,
        best_epoch,
        epoch_loss,
        test_acc,
        config: *cfg,
        split_sizes: [train_idx.len(), val_idx.len(), test_idx.len()],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub count: usize,
    pub minimum: f64,
    pub maximum: f64,
    pub average: f64,
    pub range: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    /// `q3 − q1`.
    pub midspread: f64,
    /// Population standard deviation.
    pub std_dev: f64,
}

/// Linear interpolation at fractional index `p·(n−1)` of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summarize(values: &[f64]) -> Result<SummaryStats> {
    if values.is_empty() {
        return Err(Error::invalid("cannot summarize an empty list"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("summarize"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let minimum = sorted[0];
    let maximum = sorted[sorted.len() - 1];
    // Shifted by the minimum so constant inputs give exactly zero spread.
    let shift = sorted.iter().map(|v| v - minimum).sum::<f64>() / n;
    let average = minimum + shift;
    let variance = sorted.iter().map(|v| (v - minimum - shift).powi(2)).sum::<f64>() / n;
    let q1 = quantile_sorted(&sorted, 0.25);
    let q3 = quantile_sorted(&sorted, 0.75);
    Ok(SummaryStats {
        count: sorted.len(),
        minimum,
        maximum,
        average: average.clamp(minimum, maximum),
        range: maximum - minimum,
        q1,
        median: quantile_sorted(&sorted, 0.5),
        q3,
        midspread: q3 - q1,
        std_dev: variance.sqrt(),
    })
}
