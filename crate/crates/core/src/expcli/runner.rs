//! Pretraining and grid execution. Every cell owns its models, rng streams
//! and output directory; failures are recorded and the grid carries on.

use std::collections::BTreeSet;
use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::autoencoder::{build_autoencoder, train_autoencoder, AeTrainConfig, Autoencoder, AutoencoderSpec};
use crate::data::{apply_zscore, compute_norm_stats, split, ImageDataset, SplitSpec};
use crate::error::{Error, Result};
use crate::eval::{extract_features, train_probe, ProbeConfig};
use crate::expcli::cell::{enumerate_cells, write_results_csv, ExperimentCell, RunRecord, RunStatus};
use crate::expcli::config::{load_dataset, ExperimentConfig};
use crate::expcli::report::{frozen_summary, stats_report, write_frozen_summary, write_stats, FrozenArm, StatsRow};
use crate::nn::Activation;
use crate::rng::Rng;
use crate::simclr::{
    build_backbone, build_projector, save_model, train_simclr, ModelMeta, ProjectorKind, ProjectorSpec,
    SimclrConfig,
};

const AE_STREAM: u64 = 0xAE0;
const BACKBONE_STREAM: u64 = 0xBB;
const PROJECTOR_STREAM: u64 = 0x9E;

/// A dataset resized to the configured resolution and split 70/10/20.
#[derive(Debug, Clone)]
pub struct PreparedDataset {
    pub name: String,
    pub train: ImageDataset,
    pub val: ImageDataset,
    pub test: ImageDataset,
}

pub fn prepare_datasets(cfg: &ExperimentConfig) -> Result<Vec<PreparedDataset>> {
    cfg.datasets
        .iter()
        .map(|d| {
            let ds = load_dataset(d, cfg.resolution)?;
            let (train, val, test) = split(&ds, &SplitSpec::new(cfg.split_seed))?;
            Ok(PreparedDataset {
                name: d.name.clone(),
                train,
                val,
                test,
            })
        })
        .collect()
}

fn find<'a>(data: &'a [PreparedDataset], name: &str) -> Result<&'a PreparedDataset> {
    data.iter()
        .find(|d| d.name == name)
        .ok_or_else(|| Error::Config(format!("unknown dataset {name:?}")))
}

pub fn ae_checkpoint_path(out: &Path, dataset: &str, latent_dim: usize) -> PathBuf {
    out.join("autoencoders").join(format!("{dataset}-n{latent_dim}.nta"))
}

pub fn cell_dir(out: &Path, cell: &ExperimentCell) -> PathBuf {
    out.join("runs").join(cell.id())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AeRecord {
    pub dataset: String,
    pub latent_dim: usize,
    pub path: PathBuf,
    pub best_epoch: usize,
    pub best_val: f64,
    pub first_val: f64,
}

fn ae_spec(cfg: &ExperimentConfig, latent_dim: usize) -> AutoencoderSpec {
    AutoencoderSpec {
        input_dim: cfg.input_dim(),
        hidden_dim: cfg.backbone.width,
        latent_dim,
        activation: Activation::Relu,
    }
}

fn pretrain_one(cfg: &ExperimentConfig, d: &PreparedDataset, latent: usize, out: &Path) -> Result<AeRecord> {
    let s = &cfg.autoencoder;
    let (train, val) = if s.normalize {
        let stats = compute_norm_stats(&d.train)?;
        (apply_zscore(&d.train, &stats)?, apply_zscore(&d.val, &stats)?)
    } else {
        (d.train.clone(), d.val.clone())
    };
    let ae = build_autoencoder(ae_spec(cfg, latent), &mut Rng::new(s.seed, AE_STREAM).child(latent as u64))?;
    let tcfg = AeTrainConfig {
        epochs: s.epochs,
        batch_size: s.batch_size,
        lr: s.lr,
        patience: s.patience,
        factor: s.factor,
        seed: s.seed,
    };
    let (best, report) = train_autoencoder(&ae, &train.flattened()?, &val.flattened()?, &tcfg)?;
    let path = ae_checkpoint_path(out, &d.name, latent);
    best.save(&path)?;
    fs::write(path.with_extension("json"), serde_json::to_string_pretty(&report)?)?;
    Ok(AeRecord {
        dataset: d.name.clone(),
        latent_dim: latent,
        path,
        best_epoch: report.best_epoch,
        best_val: report.best_val,
        first_val: report.val_mse[0],
    })
}

/// Trains one autoencoder per (dataset, latent width) in parallel.
pub fn pretrain_autoencoders(
    cfg: &ExperimentConfig,
    data: &[PreparedDataset],
    latents: &BTreeSet<usize>,
    out: &Path,
) -> Result<Vec<AeRecord>> {
    let jobs: Vec<(&PreparedDataset, usize)> = data
        .iter()
        .flat_map(|d| latents.iter().map(move |&n| (d, n)))
        .collect();
    jobs.par_iter().map(|&(d, n)| pretrain_one(cfg, d, n, out)).collect()
}

#[derive(Serialize)]
struct LossRow {
    epoch: usize,
    train_loss: f64,
    val_loss: Option<f64>,
    lr: f64,
}

fn run_cell_inner(cfg: &ExperimentConfig, d: &PreparedDataset, cell: &ExperimentCell, out: &Path) -> Result<RunRecord> {
    let start = Instant::now();
    cell.validate()?;
    let width = cfg.backbone.width;
    let backbone = build_backbone(cfg.backbone, cfg.resolution, &mut Rng::new(cell.seed, BACKBONE_STREAM))?;
    let embedding = match cell.projector {
        ProjectorKind::Ae => {
            let path = ae_checkpoint_path(out, &cell.dataset, cell.dim_g);
            Some(Autoencoder::load(&path)?.extract_embedding_layer())
        }
        ProjectorKind::Mlp => None,
    };
    let pspec = ProjectorSpec {
        kind: cell.projector,
        input_width: width,
        dim_g: cell.dim_g,
        activation: cell.activation,
        dim_z: cell.dim_z,
        frozen: cell.frozen,
    };
    let projector = build_projector(pspec, embedding.as_ref(), &mut Rng::new(cell.seed, PROJECTOR_STREAM))?;
    let s = &cfg.simclr;
    let scfg = SimclrConfig {
        epochs: s.epochs,
        batch_size: s.batch_size,
        temperature: s.temperature,
        weight_decay: s.weight_decay,
        momentum: s.momentum,
        normalize: cell.normalized,
        seed: cell.seed,
    };
    let (model, report) = train_simclr(&backbone, &projector, &d.train, &d.val, &scfg, &cfg.augment)?;

    let dir = cell_dir(out, cell);
    fs::create_dir_all(&dir)?;
    let model_path = dir.join("model.nta");
    let meta = ModelMeta {
        backbone: cfg.backbone,
        resolution: cfg.resolution,
        projector: pspec,
        config: scfg,
        norm: report.norm.clone(),
    };
    save_model(&model_path, &model, &meta)?;
    let loss_path = dir.join("loss.csv");
    let mut w = csv::Writer::from_writer(File::create(&loss_path)?);
    for (epoch, &train_loss) in report.epoch_train_loss.iter().enumerate() {
        w.serialize(LossRow {
            epoch,
            train_loss,
            val_loss: report.epoch_val_loss[epoch],
            lr: report.lr[epoch],
        })?;
    }
    w.flush()?;

    let features = extract_features(&model.backbone, &d.test, &report.norm, cell.id())?;
    let pcfg = ProbeConfig {
        epochs: cfg.probe.epochs,
        batch_size: cfg.probe.batch_size,
        lr: cfg.probe.lr,
        seed: cell.seed,
    };
    let probe = train_probe(&features, &SplitSpec::new(cfg.split_seed), &pcfg)?;
    let probe_path = dir.join("probe.json");
    fs::write(&probe_path, serde_json::to_string_pretty(&probe)?)?;

    Ok(RunRecord {
        cell: cell.clone(),
        acc1: Some(probe.acc1),
        best_epoch: Some(probe.best_epoch),
        final_loss: Some(report.final_loss()),
        wall_seconds: start.elapsed().as_secs_f64(),
        status: RunStatus::Ok,
        error: None,
        artifacts: vec![model_path, loss_path, probe_path],
    })
}

/// Contrastive training, feature extraction and probing for one cell.
/// Never fails: errors become a `failed` record.
pub fn run_cell(cfg: &ExperimentConfig, data: &[PreparedDataset], cell: &ExperimentCell, out: &Path) -> RunRecord {
    let start = Instant::now();
    let result = find(data, &cell.dataset).and_then(|d| run_cell_inner(cfg, d, cell, out));
    match result {
        Ok(r) => r,
        Err(e) => {
            let dir = cell_dir(out, cell);
            let _ = fs::create_dir_all(&dir).and_then(|_| fs::write(dir.join("error.txt"), e.to_string()));
            RunRecord::failed(cell.clone(), start.elapsed().as_secs_f64(), &e)
        }
    }
}

pub fn run_cells(cfg: &ExperimentConfig, data: &[PreparedDataset], cells: &[ExperimentCell], out: &Path) -> Vec<RunRecord> {
    cells.par_iter().map(|c| run_cell(cfg, data, c, out)).collect()
}

fn ae_latents(cells: &[ExperimentCell]) -> BTreeSet<usize> {
    cells
        .iter()
        .filter(|c| c.projector == ProjectorKind::Ae)
        .map(|c| c.dim_g)
        .collect()
}

fn with_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

#[derive(Debug, Clone)]
pub struct GridOutcome {
    pub autoencoders: Vec<AeRecord>,
    pub records: Vec<RunRecord>,
    pub stats: Vec<StatsRow>,
    pub results_csv: PathBuf,
}

impl GridOutcome {
    pub fn all_ok(&self) -> bool {
        self.records.iter().all(|r| r.status == RunStatus::Ok)
    }
}

fn execute(
    cfg: &ExperimentConfig,
    cells: &[ExperimentCell],
    out: &Path,
    csv_name: &str,
) -> Result<(Vec<AeRecord>, Vec<RunRecord>, PathBuf)> {
    fs::create_dir_all(out)?;
    fs::write(out.join("config.json"), serde_json::to_string_pretty(cfg)?)?;
    let data = prepare_datasets(cfg)?;
    let autoencoders = pretrain_autoencoders(cfg, &data, &ae_latents(cells), out)?;
    let records = run_cells(cfg, &data, cells, out);
    let csv_path = out.join(csv_name);
    write_results_csv(&csv_path, &records)?;
    Ok((autoencoders, records, csv_path))
}

/// Pretrains the required autoencoders, then runs every grid cell and writes
/// `results.csv` plus the grouped statistics.
pub fn run_grid(cfg: &ExperimentConfig, out: &Path, threads: Option<usize>) -> Result<GridOutcome> {
    with_pool(threads, || {
        let cells = enumerate_cells(cfg);
        let (autoencoders, records, results_csv) = execute(cfg, &cells, out, "results.csv")?;
        let stats = stats_report(&records)?;
        write_stats(out, &stats)?;
        Ok(GridOutcome {
            autoencoders,
            records,
            stats,
            results_csv,
        })
    })?
}

/// Paired frozen/unfrozen ae cells with sigmoid activation and no
/// normalization, one pair per (dataset, dim_g, dim_z, seed).
pub fn frozen_cells(cfg: &ExperimentConfig) -> Vec<ExperimentCell> {
    let g = &cfg.grid;
    let mut cells = Vec::new();
    for d in &cfg.datasets {
        for &dim_g in &g.dim_g {
            for &dim_z in &g.dim_z {
                for &seed in &g.seeds {
                    for frozen in [true, false] {
                        cells.push(ExperimentCell {
                            dataset: d.name.clone(),
                            projector: ProjectorKind::Ae,
                            dim_g,
                            activation: Activation::Sigmoid,
                            dim_z,
                            normalized: false,
                            frozen,
                            seed,
                        });
                    }
                }
            }
        }
    }
    cells
}

#[derive(Debug, Clone)]
pub struct FrozenOutcome {
    pub records: Vec<RunRecord>,
    pub arms: Vec<FrozenArm>,
    pub results_csv: PathBuf,
}

impl FrozenOutcome {
    pub fn all_ok(&self) -> bool {
        self.records.iter().all(|r| r.status == RunStatus::Ok)
    }
}

pub fn frozen_comparison(cfg: &ExperimentConfig, out: &Path, threads: Option<usize>) -> Result<FrozenOutcome> {
    with_pool(threads, || {
        let cells = frozen_cells(cfg);
        let (_, records, results_csv) = execute(cfg, &cells, out, "frozen.csv")?;
        let arms = frozen_summary(&records)?;
        write_frozen_summary(&out.join("frozen_summary.csv"), &arms)?;
        Ok(FrozenOutcome {
            records,
            arms,
            results_csv,
        })
    })?
}
