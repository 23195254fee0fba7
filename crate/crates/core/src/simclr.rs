//! Backbone and projector construction plus the contrastive training loop.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{sample_pair, TransformSpace};
use crate::data::{compute_norm_stats, ImageDataset, NormStats};
use crate::error::{Error, Result};
use crate::expcli::container::Container;
use crate::losses::{nt_xent, NtXentConfig};
use crate::nn::{Activation, AvgPool2d, Conv2d, Dense, Layer, LayerStack};
use crate::optim::{eta_min_for, initial_lr_from_batch, CosineAnnealing, SgdMomentum};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Upper bound on the projection width.
pub const MAX_PROJECTION_DIM: usize = 128;
pub const MIN_RESOLUTION: usize = 8;

const ORDER_STREAM: u64 = 0x0D;
const AUGMENT_STREAM: u64 = 0xA6;
const VAL_STREAM: u64 = 0x7A;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneKind {
    TinyConv,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneSpec {
    pub kind: BackboneKind,
    pub width: usize,
}

pub fn build_backbone(spec: BackboneSpec, resolution: usize, rng: &mut Rng) -> Result<LayerStack> {
    if resolution < MIN_RESOLUTION {
        return Err(Error::invalid(format!(
            "resolution {resolution} is below the minimum {MIN_RESOLUTION}"
        )));
    }
    if spec.width == 0 {
        return Err(Error::invalid("backbone width must be positive"));
    }
    let input = vec![3, resolution, resolution];
    let layers = match spec.kind {
        BackboneKind::TinyConv => {
            let side = resolution / 2 / 2;
            vec![
                Layer::Conv2d(Conv2d::new(3, 8, 3, 1, 1, rng)?),
                Layer::Activation(Activation::Relu),
                Layer::AvgPool2d(AvgPool2d { size: 2 }),
                Layer::Conv2d(Conv2d::new(8, 8, 3, 1, 1, rng)?),
                Layer::Activation(Activation::Relu),
                Layer::AvgPool2d(AvgPool2d { size: 2 }),
                Layer::Flatten,
                Layer::Dense(Dense::new(8 * side * side, spec.width, rng)?),
            ]
        }
        BackboneKind::Mlp => {
            let m = 3 * resolution * resolution;
            vec![
                Layer::Flatten,
                Layer::Dense(Dense::new(m, 2 * spec.width, rng)?),
                Layer::Activation(Activation::Relu),
                Layer::Dense(Dense::new(2 * spec.width, spec.width, rng)?),
            ]
        }
    };
    let stack = LayerStack::new(input.clone(), layers)?;
    let mut probe_shape = vec![1];
    probe_shape.extend(&input);
    let probe = stack.infer(&Tensor::zeros(&probe_shape))?;
    if probe.shape() != [1, spec.width] {
        return Err(Error::InvalidShape {
            shape: probe.shape().to_vec(),
            reason: format!("backbone must emit width {}", spec.width),
        });
    }
    Ok(stack)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectorKind {
    Mlp,
    Ae,
}

impl ProjectorKind {
    pub fn name(self) -> &'static str {
        match self {
            ProjectorKind::Mlp => "mlp",
            ProjectorKind::Ae => "ae",
        }
    }
}

impl std::fmt::Display for ProjectorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ProjectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(ProjectorKind::Mlp),
            "ae" => Ok(ProjectorKind::Ae),
            other => Err(Error::invalid(format!("unknown projector kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectorSpec {
    pub kind: ProjectorKind,
    pub input_width: usize,
    pub dim_g: usize,
    pub activation: Activation,
    pub dim_z: usize,
    pub frozen: bool,
}

impl ProjectorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim_z == 0 || self.dim_z > MAX_PROJECTION_DIM {
            return Err(Error::invalid(format!(
                "dim_z must be in 1..={MAX_PROJECTION_DIM}, got {}",
                self.dim_z
            )));
        }
        if self.input_width == 0 || self.dim_g == 0 {
            return Err(Error::invalid("projector widths must be positive"));
        }
        if self.kind == ProjectorKind::Mlp && self.frozen {
            return Err(Error::invalid("a randomly initialised mlp projector cannot be frozen"));
        }
        Ok(())
    }
}

/// `Dense(W→dim_g) · act · Dense(dim_g→dim_z)`. The ae kind takes its input
/// layer from `embedding`; the output layer is drawn from the same stream for
/// both kinds so paired runs start from the same head.
pub fn build_projector(spec: ProjectorSpec, embedding: Option<&Dense>, rng: &mut Rng) -> Result<LayerStack> {
    spec.validate()?;
    let mut input = Dense::new(spec.input_width, spec.dim_g, &mut rng.child(0))?;
    let output = Dense::new(spec.dim_g, spec.dim_z, &mut rng.child(1))?;
    match (spec.kind, embedding) {
        (ProjectorKind::Ae, Some(emb)) => {
            if emb.weight.shape() != [spec.dim_g, spec.input_width] {
                return Err(Error::ShapeMismatch {
                    op: "embedding transplant",
                    lhs: emb.weight.shape().to_vec(),
                    rhs: vec![spec.dim_g, spec.input_width],
                });
            }
            input = Dense::from_params(emb.weight.clone(), emb.bias.clone())?;
            input.frozen = spec.frozen;
        }
        (ProjectorKind::Ae, None) => {
            return Err(Error::invalid("ae projector needs a pretrained embedding layer"));
        }
        (ProjectorKind::Mlp, Some(_)) => {
            return Err(Error::invalid("mlp projector does not take an embedding layer"));
        }
        (ProjectorKind::Mlp, None) => {}
    }
    LayerStack::new(
        vec![spec.input_width],
        vec![
            Layer::Dense(input),
            Layer::Activation(spec.activation),
            Layer::Dense(output),
        ],
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimclrConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub temperature: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub normalize: bool,
    pub seed: u64,
}

impl Default for SimclrConfig {
    fn default() -> Self {
        SimclrConfig {
            epochs: 30,
            batch_size: 64,
            temperature: 0.5,
            weight_decay: 1e-5,
            momentum: 0.9,
            normalize: false,
            seed: 0,
        }
    }
}

impl SimclrConfig {
    pub fn full_scale(batch_size: usize) -> Self {
        SimclrConfig {
            epochs: 150,
            batch_size,
            ..SimclrConfig::default()
        }
    }

    pub fn initial_lr(&self) -> f64 {
        initial_lr_from_batch(self.batch_size)
    }

    pub fn schedule(&self) -> Result<CosineAnnealing> {
        let lr = self.initial_lr();
        CosineAnnealing::new(lr, eta_min_for(lr), self.epochs)
    }
}

/// Backbone `f` followed by projector `g`.
#[derive(Debug, Clone)]
pub struct SimclrModel {
    pub backbone: LayerStack,
    pub projector: LayerStack,
}

impl SimclrModel {
    pub fn represent(&self, x: &Tensor) -> Result<Tensor> {
        self.backbone.infer(x)
    }

    /// `z = g(f(x))`.
    pub fn project(&self, x: &Tensor) -> Result<Tensor> {
        self.projector.infer(&self.backbone.infer(x)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimclrReport {
    pub step_loss: Vec<f64>,
    pub epoch_train_loss: Vec<f64>,
    /// `None` when the validation split cannot form a pair batch.
    pub epoch_val_loss: Vec<Option<f64>>,
    pub lr: Vec<f64>,
    pub norm: NormStats,
}

impl SimclrReport {
    pub fn final_loss(&self) -> f64 {
        self.epoch_train_loss.last().copied().unwrap_or(f64::NAN)
    }
}

fn frozen_snapshot(stack: &LayerStack) -> Vec<(usize, Vec<Tensor>)> {
    stack
        .layers()
        .iter()
        .enumerate()
        .filter(|(_, l)| l.is_frozen())
        .map(|(i, l)| (i, l.param_values().into_iter().cloned().collect()))
        .collect()
}

fn check_frozen(stack: &LayerStack, snapshot: &[(usize, Vec<Tensor>)]) -> Result<()> {
    for (i, values) in snapshot {
        let now = stack.layers()[*i].param_values();
        if now.len() != values.len() || now.iter().zip(values).any(|(a, b)| !a.bitwise_eq(b)) {
            return Err(Error::FrozenMutated);
        }
    }
    Ok(())
}

/// Stacks augmented views as `[i_1..i_N, j_1..j_N]`. Each sample's views come
/// from its own rng stream keyed by `(epoch, index)`, so the result does not
/// depend on how the work is spread over threads.
fn view_batch(
    ds: &ImageDataset,
    indices: &[usize],
    epoch: usize,
    space: &TransformSpace,
    norm: Option<&NormStats>,
    rng: &Rng,
) -> Result<Tensor> {
    let pairs: Vec<_> = indices
        .par_iter()
        .map(|&idx| {
            let mut r = rng.child_path(&[epoch as u64, idx as u64]);
            let p = sample_pair(&ds.image(idx), idx, space, &mut r)?;
            match norm {
                Some(n) => Ok((n.normalize_image(&p.view_i)?, n.normalize_image(&p.view_j)?)),
                None => Ok((p.view_i, p.view_j)),
            }
        })
        .collect::<Result<_>>()?;
    let (vi, vj): (Vec<Tensor>, Vec<Tensor>) = pairs.into_iter().unzip();
    let mut views = vi;
    views.extend(vj);
    Tensor::stack(&views)
}

fn val_loss(
    model: &SimclrModel,
    val: &ImageDataset,
    batch: usize,
    epoch: usize,
    space: &TransformSpace,
    norm: Option<&NormStats>,
    loss_cfg: &NtXentConfig,
    rng: &Rng,
) -> Result<Option<f64>> {
    if val.len() < 2 {
        return Ok(None);
    }
    let indices: Vec<usize> = (0..val.len()).collect();
    let size = batch.min(val.len());
    let mut total = 0.0;
    let mut count = 0;
    for chunk in indices.chunks_exact(size) {
        let x = view_batch(val, chunk, epoch, space, norm, rng)?;
        let (loss, _) = nt_xent(&model.project(&x)?, loss_cfg)?;
        total += loss;
        count += 1;
    }
    Ok(Some(total / count as f64))
}

/// Joint SGD on backbone and projector against the NT-Xent objective, with a
/// per-epoch cosine schedule. Frozen projector layers are verified unchanged
/// after every epoch.
pub fn train_simclr(
    backbone: &LayerStack,
    projector: &LayerStack,
    train: &ImageDataset,
    val: &ImageDataset,
    cfg: &SimclrConfig,
    space: &TransformSpace,
) -> Result<(SimclrModel, SimclrReport)> {
    if cfg.batch_size < 2 {
        return Err(Error::invalid("contrastive batches need at least 2 samples"));
    }
    if cfg.batch_size > train.len() {
        return Err(Error::invalid(format!(
            "batch size {} exceeds the {} training samples",
            cfg.batch_size,
            train.len()
        )));
    }
    if cfg.epochs == 0 {
        return Err(Error::invalid("epochs must be positive"));
    }
    if backbone.output_shape() != projector.input_shape() {
        return Err(Error::ShapeMismatch {
            op: "backbone to projector",
            lhs: backbone.output_shape().to_vec(),
            rhs: projector.input_shape().to_vec(),
        });
    }
    space.validate()?;
    let loss_cfg = NtXentConfig::new(cfg.temperature)?;
    let schedule = cfg.schedule()?;
    let mut sgd = SgdMomentum::new(cfg.initial_lr(), cfg.momentum, cfg.weight_decay)?;
    let norm_stats = if cfg.normalize {
        compute_norm_stats(train)?
    } else {
        NormStats::identity(train.channels())
    };
    let norm = cfg.normalize.then_some(&norm_stats);

    let mut model = SimclrModel {
        backbone: backbone.clone(),
        projector: projector.clone(),
    };
    let frozen = frozen_snapshot(&model.projector);
    let order_rng = Rng::new(cfg.seed, ORDER_STREAM);
    let aug_rng = Rng::new(cfg.seed, AUGMENT_STREAM);
    let val_rng = Rng::new(cfg.seed, VAL_STREAM);

    let mut report = SimclrReport {
        step_loss: Vec::new(),
        epoch_train_loss: Vec::with_capacity(cfg.epochs),
        epoch_val_loss: Vec::with_capacity(cfg.epochs),
        lr: Vec::with_capacity(cfg.epochs),
        norm: norm_stats.clone(),
    };

    for epoch in 0..cfg.epochs {
        sgd.lr = schedule.lr(epoch)?;
        report.lr.push(sgd.lr);
        let order = order_rng.child(epoch as u64).permutation(train.len());
        let mut epoch_total = 0.0;
        let mut steps = 0;
        for batch in order.chunks_exact(cfg.batch_size) {
            let x = view_batch(train, batch, epoch, space, norm, &aug_rng)?;
            model.backbone.zero_grad();
            model.projector.zero_grad();
            let h = model.backbone.forward(&x, true)?;
            let z = model.projector.forward(&h, true)?;
            let (loss, grad_z) = nt_xent(&z, &loss_cfg)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite("contrastive loss"));
            }
            let grad_h = model.projector.backward(&grad_z)?;
            model.backbone.backward(&grad_h)?;
            let mut params = model.backbone.params();
            params.extend(model.projector.params());
            sgd.step(&mut params)?;
            report.step_loss.push(loss);
            epoch_total += loss;
            steps += 1;
        }
        report.epoch_train_loss.push(epoch_total / steps as f64);
        check_frozen(&model.projector, &frozen)?;
        report.epoch_val_loss.push(val_loss(
            &model,
            val,
            cfg.batch_size,
            epoch,
            space,
            norm,
            &loss_cfg,
            &val_rng,
        )?);
    }
    model.backbone.zero_grad();
    model.projector.zero_grad();
    Ok((model, report))
}

/// Everything needed to rebuild a trained model from a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub backbone: BackboneSpec,
    pub resolution: usize,
    pub projector: ProjectorSpec,
    pub config: SimclrConfig,
    pub norm: NormStats,
}

const PARAM_NAMES: [&str; 2] = ["weight", "bias"];

fn insert_stack(c: &mut Container, prefix: &str, stack: &LayerStack) -> Result<()> {
    for (i, layer) in stack.layers().iter().enumerate() {
        for (which, value) in layer.param_values().into_iter().enumerate() {
            c.insert_tensor(&format!("{prefix}.{i}.{}", PARAM_NAMES[which]), value)?;
        }
    }
    Ok(())
}

fn restore_stack(c: &Container, prefix: &str, stack: &mut LayerStack) -> Result<()> {
    for (i, layer) in stack.layers_mut().iter_mut().enumerate() {
        for (which, name) in PARAM_NAMES.iter().enumerate() {
            let Some(slot) = layer.param_value_mut(which) else { break };
            let stored = c.tensor(&format!("{prefix}.{i}.{name}"))?;
            if stored.shape() != slot.shape() {
                return Err(Error::Format(format!("{prefix}.{i}.{name} has the wrong shape")));
            }
            *slot = stored.clone();
        }
    }
    Ok(())
}

pub fn save_model(path: &Path, model: &SimclrModel, meta: &ModelMeta) -> Result<()> {
    let mut c = Container::new();
    insert_stack(&mut c, "backbone", &model.backbone)?;
    insert_stack(&mut c, "projector", &model.projector)?;
    c.set_meta(&serde_json::to_value(meta)?)?;
    c.save(path)
}

pub fn load_model(path: &Path) -> Result<(SimclrModel, ModelMeta)> {
    let c = Container::load(path)?;
    let meta: ModelMeta = serde_json::from_value(
        c.meta()?.ok_or_else(|| Error::Format("checkpoint has no metadata".into()))?,
    )?;
    let mut rng = Rng::new(0, 0);
    let mut backbone = build_backbone(meta.backbone, meta.resolution, &mut rng)?;
    let mut spec = meta.projector;
    // Rebuild the projector shape without the embedding; frozen flags are
    // restored afterwards.
    spec.kind = ProjectorKind::Mlp;
    spec.frozen = false;
    let mut projector = build_projector(spec, None, &mut rng)?;
    restore_stack(&c, "backbone", &mut backbone)?;
    restore_stack(&c, "projector", &mut projector)?;
    if meta.projector.frozen {
        projector.layers_mut()[0].set_frozen(true);
    }
    Ok((SimclrModel { backbone, projector }, meta))
}
