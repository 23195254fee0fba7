//! Four-layer dense autoencoder whose encoder output layer is the embedding
//! transplanted into the projector.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expcli::container::Container;
use crate::losses::{mse, mse_with_grad};
use crate::nn::{Activation, Dense, Layer, LayerStack};
use crate::optim::{Adam, ReduceOnPlateau};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AutoencoderSpec {
    pub input_dim: usize,
    /// Width feeding the embedding layer; must equal the backbone width.
    pub hidden_dim: usize,
    pub latent_dim: usize,
    pub activation: Activation,
}

impl AutoencoderSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim < self.latent_dim {
            return Err(Error::invalid(format!(
                "autoencoder input dim {} is smaller than latent dim {}",
                self.input_dim, self.latent_dim
            )));
        }
        if self.input_dim == 0 || self.hidden_dim == 0 || self.latent_dim == 0 {
            return Err(Error::invalid("autoencoder dims must be positive"));
        }
        Ok(())
    }

    pub fn encoder_widths(&self) -> [usize; 3] {
        [self.input_dim, self.hidden_dim, self.latent_dim]
    }

    pub fn decoder_widths(&self) -> [usize; 3] {
        [self.latent_dim, self.hidden_dim, self.input_dim]
    }
}

#[derive(Debug, Clone)]
pub struct Autoencoder {
    pub spec: AutoencoderSpec,
    pub encoder: LayerStack,
    pub decoder: LayerStack,
}

fn two_layer(widths: [usize; 3], act: Activation, rng: &mut Rng) -> Result<LayerStack> {
    LayerStack::new(
        vec![widths[0]],
        vec![
            Layer::Dense(Dense::new(widths[0], widths[1], rng)?),
            Layer::Activation(act),
            Layer::Dense(Dense::new(widths[1], widths[2], rng)?),
        ],
    )
}

pub fn build_autoencoder(spec: AutoencoderSpec, rng: &mut Rng) -> Result<Autoencoder> {
    spec.validate()?;
    let encoder = two_layer(spec.encoder_widths(), spec.activation, &mut rng.child(0))?;
    let decoder = two_layer(spec.decoder_widths(), spec.activation, &mut rng.child(1))?;
    Ok(Autoencoder { spec, encoder, decoder })
}

impl Autoencoder {
    pub fn param_count(&self) -> usize {
        self.encoder.param_count() + self.decoder.param_count()
    }

    /// `D(E(x))` for `[batch × m]` rows or a single length-`m` vector.
    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        if x.ndim() == 1 {
            let batch = x.reshape(&[1, x.len()])?;
            let out = self.decoder.infer(&self.encoder.infer(&batch)?)?;
            return out.reshape(&[x.len()]);
        }
        self.decoder.infer(&self.encoder.infer(x)?)
    }

    pub fn embed(&self, x: &Tensor) -> Result<Tensor> {
        self.encoder.infer(x)
    }

    /// Deep copy of the encoder's final dense layer, marked frozen.
    pub fn extract_embedding_layer(&self) -> Dense {
        let (_, layer) = self
            .encoder
            .dense_layers()
            .last()
            .expect("encoder always ends in a dense layer");
        let mut copy = layer.clone();
        copy.grad_weight = Tensor::zeros(copy.weight.shape());
        copy.grad_bias = Tensor::zeros(copy.bias.shape());
        copy.frozen = true;
        copy
    }

    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::new();
        for (prefix, stack) in [("encoder", &self.encoder), ("decoder", &self.decoder)] {
            for (i, (_, d)) in stack.dense_layers().enumerate() {
                c.insert_tensor(&format!("{prefix}.{i}.weight"), &d.weight)?;
                c.insert_tensor(&format!("{prefix}.{i}.bias"), &d.bias)?;
            }
        }
        c.set_meta(&serde_json::json!({ "spec": self.spec }))?;
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let meta = c.meta()?.ok_or_else(|| Error::Format("checkpoint has no metadata".into()))?;
        let spec: AutoencoderSpec = serde_json::from_value(meta["spec"].clone())?;
        let mut ae = build_autoencoder(spec, &mut Rng::new(0, 0))?;
        for (prefix, stack) in [("encoder", &mut ae.encoder), ("decoder", &mut ae.decoder)] {
            let mut i = 0;
            for layer in stack.layers_mut() {
                if let Layer::Dense(d) = layer {
                    let w = c.tensor(&format!("{prefix}.{i}.weight"))?;
                    let b = c.tensor(&format!("{prefix}.{i}.bias"))?;
                    *d = Dense::from_params(w.clone(), b.clone())?;
                    i += 1;
                }
            }
        }
        // Stored tensors must match the declared widths.
        ae.encoder = LayerStack::new(vec![spec.input_dim], ae.encoder.layers().to_vec())?;
        ae.decoder = LayerStack::new(vec![spec.latent_dim], ae.decoder.layers().to_vec())?;
        Ok(ae)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Autoencoder::from_container(&Container::load(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AeTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub patience: usize,
    pub factor: f64,
    pub seed: u64,
}

impl Default for AeTrainConfig {
    fn default() -> Self {
        AeTrainConfig {
            epochs: 100,
            batch_size: 100,
            lr: 1e-4,
            patience: 10,
            factor: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub train_mse: Vec<f64>,
    pub val_mse: Vec<f64>,
    pub lr: Vec<f64>,
    /// Zero-based epoch of the returned snapshot.
    pub best_epoch: usize,
    pub best_val: f64,
}

/// Index of the first strict minimum.
pub fn best_epoch(val_curve: &[f64]) -> Option<usize> {
    val_curve
        .iter()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (i, &v)| match best {
            Some((_, b)) if v >= b => best,
            _ => Some((i, v)),
        })
        .map(|(i, _)| i)
}

/// Minimizes reconstruction MSE with Adam and a plateau schedule on
/// validation MSE; returns the snapshot from the best validation epoch.
pub fn train_autoencoder(
    ae: &Autoencoder,
    train: &Tensor,
    val: &Tensor,
    cfg: &AeTrainConfig,
) -> Result<(Autoencoder, TrainReport)> {
    let m = ae.spec.input_dim;
    for (name, t) in [("train", train), ("val", val)] {
        if t.ndim() != 2 || t.shape()[1] != m || t.rows() == 0 {
            return Err(Error::invalid(format!(
                "{name} split must be non-empty [n × {m}], got {:?}",
                t.shape()
            )));
        }
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::invalid("epochs and batch size must be positive"));
    }
    let mut model = ae.clone();
    let mut adam = Adam::new(cfg.lr)?;
    let mut plateau = ReduceOnPlateau::new(cfg.patience, cfg.factor)?;
    let shuffle = Rng::new(cfg.seed, 0xAE);
    let n = train.rows();

    let mut report = TrainReport {
        train_mse: Vec::with_capacity(cfg.epochs),
        val_mse: Vec::with_capacity(cfg.epochs),
        lr: Vec::with_capacity(cfg.epochs),
        best_epoch: 0,
        best_val: f64::INFINITY,
    };
    let mut best = model.clone();

    for epoch in 0..cfg.epochs {
        report.lr.push(adam.lr);
        let order = shuffle.child(epoch as u64).permutation(n);
        let mut weighted = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let x = train.select0(batch)?;
            model.encoder.zero_grad();
            model.decoder.zero_grad();
            let z = model.encoder.forward(&x, true)?;
            let recon = model.decoder.forward(&z, true)?;
            let (loss, grad) = mse_with_grad(&recon, &x)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite("autoencoder training loss"));
            }
            let dz = model.decoder.backward(&grad)?;
            model.encoder.backward(&dz)?;
            let mut params = model.encoder.params();
            params.extend(model.decoder.params());
            adam.step(&mut params)?;
            weighted += loss * batch.len() as f64;
        }
        report.train_mse.push(weighted / n as f64);

        let val_loss = mse(&model.reconstruct(val)?, val)?;
        report.val_mse.push(val_loss);
        if val_loss < report.best_val {
            report.best_val = val_loss;
            report.best_epoch = epoch;
            best = model.clone();
        }
        adam.lr = plateau.update(val_loss, adam.lr)?;
    }
    best.encoder.zero_grad();
    best.decoder.zero_grad();
    Ok((best, report))
}
