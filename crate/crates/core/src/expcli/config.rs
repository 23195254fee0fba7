//! JSON experiment configuration. A `scale` preset supplies every value and
//! the user file overrides any subset of it; unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::augment::{resize_region, TransformSpace};
use crate::data::{load_cifar_binary, load_packed, synth_blobs, ImageDataset};
use crate::error::{Error, Result};
use crate::nn::Activation;
use crate::rng::Rng;
use crate::simclr::{BackboneKind, BackboneSpec, ProjectorKind, MAX_PROJECTION_DIM};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Desk,
    Paper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Synthetic { classes: usize, per_class: usize, seed: u64 },
    Cifar { files: Vec<PathBuf> },
    Packed { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: String,
    pub source: DatasetSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub projectors: Vec<ProjectorKind>,
    pub dim_g: Vec<usize>,
    pub activations: Vec<Activation>,
    pub dim_z: Vec<usize>,
    pub normalized: Vec<bool>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContrastiveSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub temperature: f64,
    pub weight_decay: f64,
    pub momentum: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutoencoderSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub patience: usize,
    pub factor: f64,
    /// Z-score the AE inputs; off by default because validation loss tends
    /// to stall with it on.
    pub normalize: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scale: Scale,
    pub resolution: usize,
    pub split_seed: u64,
    pub datasets: Vec<DatasetConfig>,
    pub backbone: BackboneSpec,
    pub grid: GridConfig,
    pub simclr: ContrastiveSettings,
    pub autoencoder: AutoencoderSettings,
    pub probe: ProbeSettings,
    pub augment: TransformSpace,
}

impl ExperimentConfig {
    pub fn preset(scale: Scale) -> Self {
        let (resolution, width, dim_g, dim_z, epochs, batch) = match scale {
            Scale::Desk => (16, 64, vec![16, 32, 64], vec![8, 16, 32], 30, 64),
            Scale::Paper => (32, 512, vec![128, 256, 512], vec![32, 64, 128], 150, 256),
        };
        ExperimentConfig {
            scale,
            resolution,
            split_seed: 0,
            datasets: vec![DatasetConfig {
                name: "synthetic".into(),
                source: DatasetSource::Synthetic {
                    classes: 4,
                    per_class: 200,
                    seed: 0,
                },
            }],
            backbone: BackboneSpec {
                kind: BackboneKind::TinyConv,
                width,
            },
            grid: GridConfig {
                projectors: vec![ProjectorKind::Mlp, ProjectorKind::Ae],
                dim_g,
                activations: Activation::PROJECTOR_KINDS.to_vec(),
                dim_z,
                normalized: vec![false, true],
                seeds: vec![0],
            },
            simclr: ContrastiveSettings {
                epochs,
                batch_size: batch,
                temperature: 0.5,
                weight_decay: 1e-5,
                momentum: 0.9,
            },
            autoencoder: AutoencoderSettings {
                epochs: 100,
                batch_size: 100,
                lr: 1e-4,
                patience: 10,
                factor: 0.5,
                normalize: false,
                seed: 0,
            },
            probe: ProbeSettings {
                epochs: 50,
                batch_size: 32,
                lr: 1e-3,
            },
            augment: TransformSpace::default(),
        }
    }

    /// Overlays `user` on the preset named by its `scale` key (default desk).
    pub fn from_value(user: Value) -> Result<Self> {
        if !user.is_object() {
            return Err(Error::Config("config must be a JSON object".into()));
        }
        let scale = match user.get("scale") {
            Some(v) => serde_json::from_value(v.clone())
                .map_err(|e| Error::Config(format!("scale: {e}")))?,
            None => Scale::Desk,
        };
        let mut merged = serde_json::to_value(Self::preset(scale))?;
        merge(&mut merged, user);
        let cfg: ExperimentConfig =
            serde_json::from_value(merged).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_value(value)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn input_dim(&self) -> usize {
        3 * self.resolution * self.resolution
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        let g = &self.grid;
        if g.projectors.is_empty()
            || g.dim_g.is_empty()
            || g.activations.is_empty()
            || g.dim_z.is_empty()
            || g.normalized.is_empty()
            || g.seeds.is_empty()
        {
            return fail("every grid axis needs at least one value".into());
        }
        if self.datasets.is_empty() {
            return fail("no datasets configured".into());
        }
        let mut names: Vec<&str> = self.datasets.iter().map(|d| d.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return fail("dataset names must be unique".into());
        }
        for d in &self.datasets {
            if d.name.is_empty() || !d.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return fail(format!("dataset name {:?} must be [A-Za-z0-9_]+", d.name));
            }
        }
        if let Some(z) = g.dim_z.iter().find(|&&z| z == 0 || z > MAX_PROJECTION_DIM) {
            return fail(format!("dim_z {z} outside 1..={MAX_PROJECTION_DIM}"));
        }
        if let Some(n) = g.dim_g.iter().find(|&&n| n == 0 || n > self.input_dim()) {
            return fail(format!(
                "dim_g {n} must be positive and at most the image size {}",
                self.input_dim()
            ));
        }
        if self.backbone.width == 0 {
            return fail("backbone width must be positive".into());
        }
        if self.simclr.batch_size < 2 || self.simclr.epochs == 0 {
            return fail("simclr needs batch_size >= 2 and epochs >= 1".into());
        }
        if !(self.simclr.temperature > 0.0) {
            return fail("temperature must be positive".into());
        }
        self.augment.validate()
    }
}

fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Bilinear resize of every image to `res × res`; a no-op when sizes match.
pub fn resize_dataset(ds: &ImageDataset, res: usize) -> Result<ImageDataset> {
    let [_, c, h, w] = ds.images.shape() else { unreachable!() };
    let (c, h, w) = (*c, *h, *w);
    if c != 3 {
        return Err(Error::Config(format!("{} has {c} channels, expected 3", ds.name)));
    }
    if h == res && w == res {
        return Ok(ds.clone());
    }
    let images = (0..ds.len())
        .map(|i| resize_region(&ds.image(i), 0, 0, h, w, res, res))
        .collect::<Result<Vec<_>>>()?;
    ImageDataset::new(Tensor::stack(&images)?, ds.labels.clone(), ds.num_classes, ds.name.clone())
}

pub fn load_dataset(cfg: &DatasetConfig, resolution: usize) -> Result<ImageDataset> {
    let mut ds = match &cfg.source {
        DatasetSource::Synthetic { classes, per_class, seed } => {
            synth_blobs(*classes, *per_class, resolution, &mut Rng::new(*seed, 0x5E7))?
        }
        DatasetSource::Cifar { files } => {
            let parts = files
                .iter()
                .map(|f| load_cifar_binary(f))
                .collect::<Result<Vec<_>>>()?;
            let images: Vec<Tensor> = parts
                .iter()
                .flat_map(|p| (0..p.len()).map(|i| p.image(i)))
                .collect();
            if images.is_empty() {
                return Err(Error::Config(format!("dataset {} has no images", cfg.name)));
            }
            let labels = parts.iter().flat_map(|p| p.labels.iter().copied()).collect();
            ImageDataset::new(Tensor::stack(&images)?, labels, 10, cfg.name.clone())?
        }
        DatasetSource::Packed { path } => load_packed(path)?,
    };
    ds.name = cfg.name.clone();
    resize_dataset(&ds, resolution)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_the_desk_preset() {
        let cfg = ExperimentConfig::from_json("{}").unwrap();
        assert_eq!(cfg, ExperimentConfig::preset(Scale::Desk));
        assert_eq!(cfg.grid.dim_g, vec![16, 32, 64]);
        assert_eq!(cfg.backbone.width, 64);
    }

    #[test]
    fn paper_scale_and_partial_override() {
        let cfg = ExperimentConfig::from_json(
            r#"{"scale": "paper", "simclr": {"epochs": 3}, "grid": {"seeds": [1, 2]}}"#,
        )
        .unwrap();
        assert_eq!(cfg.grid.dim_z, vec![32, 64, 128]);
        assert_eq!(cfg.simclr.epochs, 3);
        assert_eq!(cfg.simclr.batch_size, 256);
        assert_eq!(cfg.grid.seeds, vec![1, 2]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"simclr": {"epoch": 3}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"extra": 1}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"scale": "huge"}"#).is_err());
    }

    #[test]
    fn invalid_grid_values_are_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"grid": {"dim_z": [256]}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"grid": {"activations": []}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"grid": {"dim_g": [100000]}}"#).is_err());
    }

    #[test]
    fn round_trips_through_json() {
        let cfg = ExperimentConfig::preset(Scale::Paper);
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
    }

    #[test]
    fn synthetic_source_matches_resolution() {
        let d = DatasetConfig {
            name: "s".into(),
            source: DatasetSource::Synthetic { classes: 2, per_class: 3, seed: 1 },
        };
        let ds = load_dataset(&d, 12).unwrap();
        assert_eq!(ds.images.shape(), &[6, 3, 12, 12]);
        let small = resize_dataset(&ds, 8).unwrap();
        assert_eq!(small.images.shape(), &[6, 3, 8, 8]);
    }
}
