//! Grid cells, run records and the results CSV.

use std::fs::{self, File};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::expcli::config::ExperimentConfig;
use crate::nn::Activation;
use crate::simclr::ProjectorKind;

pub const CSV_HEADER: [&str; 13] = [
    "dataset",
    "projector",
    "dim_g",
    "activation",
    "dim_z",
    "normalized",
    "frozen",
    "seed",
    "acc1",
    "best_epoch",
    "final_loss",
    "wall_seconds",
    "status",
];

/// Number of leading CSV columns that describe the cell itself.
pub const CELL_FIELDS: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct ExperimentCell {
    pub dataset: String,
    pub projector: ProjectorKind,
    pub dim_g: usize,
    pub activation: Activation,
    pub dim_z: usize,
    pub normalized: bool,
    pub frozen: bool,
    pub seed: u64,
}

impl ExperimentCell {
    pub fn validate(&self) -> Result<()> {
        if self.projector == ProjectorKind::Mlp && self.frozen {
            return Err(Error::Config("an mlp cell cannot be frozen".into()));
        }
        Ok(())
    }

    pub fn render(&self) -> [String; CELL_FIELDS] {
        [
            self.dataset.clone(),
            self.projector.to_string(),
            self.dim_g.to_string(),
            self.activation.to_string(),
            self.dim_z.to_string(),
            self.normalized.to_string(),
            self.frozen.to_string(),
            self.seed.to_string(),
        ]
    }

    pub fn parse(fields: &[&str]) -> Result<Self> {
        let [dataset, projector, dim_g, activation, dim_z, normalized, frozen, seed] = fields else {
            return Err(Error::Format(format!("expected {CELL_FIELDS} cell fields, got {}", fields.len())));
        };
        let bad = |what: &str, v: &str| Error::Format(format!("bad {what} {v:?}"));
        let cell = ExperimentCell {
            dataset: dataset.to_string(),
            projector: projector.parse()?,
            dim_g: dim_g.parse().map_err(|_| bad("dim_g", dim_g))?,
            activation: activation.parse()?,
            dim_z: dim_z.parse().map_err(|_| bad("dim_z", dim_z))?,
            normalized: normalized.parse().map_err(|_| bad("normalized", normalized))?,
            frozen: frozen.parse().map_err(|_| bad("frozen", frozen))?,
            seed: seed.parse().map_err(|_| bad("seed", seed))?,
        };
        cell.validate()?;
        Ok(cell)
    }

    /// Filesystem-safe identifier, unique within a grid.
    pub fn id(&self) -> String {
        format!(
            "{}-{}-g{}-{}-z{}-{}-{}-s{}",
            self.dataset,
            self.projector,
            self.dim_g,
            self.activation,
            self.dim_z,
            if self.normalized { "norm" } else { "raw" },
            if self.frozen { "frozen" } else { "open" },
            self.seed
        )
    }
}

/// Cartesian product of the grid axes, dataset-major. Only ae cells are frozen.
pub fn enumerate_cells(cfg: &ExperimentConfig) -> Vec<ExperimentCell> {
    let g = &cfg.grid;
    let mut cells = Vec::new();
    for d in &cfg.datasets {
        for &projector in &g.projectors {
            for &dim_g in &g.dim_g {
                for &activation in &g.activations {
                    for &dim_z in &g.dim_z {
                        for &normalized in &g.normalized {
                            for &seed in &g.seeds {
                                cells.push(ExperimentCell {
                                    dataset: d.name.clone(),
                                    projector,
                                    dim_g,
                                    activation,
                                    dim_z,
                                    normalized,
                                    frozen: projector == ProjectorKind::Ae,
                                    seed,
                                });
                            }
                        }
                    }
                }
            }
        }
    }
    cells
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed,
}

impl RunStatus {
    pub fn name(self) -> &'static str {
        match self {
            RunStatus::Ok => "ok",
            RunStatus::Failed => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub cell: ExperimentCell,
    pub acc1: Option<f64>,
    pub best_epoch: Option<usize>,
    pub final_loss: Option<f64>,
    pub wall_seconds: f64,
    pub status: RunStatus,
    pub error: Option<String>,
    pub artifacts: Vec<PathBuf>,
}

impl RunRecord {
    pub fn failed(cell: ExperimentCell, wall_seconds: f64, err: &Error) -> Self {
        RunRecord {
            cell,
            acc1: None,
            best_epoch: None,
            final_loss: None,
            wall_seconds,
            status: RunStatus::Failed,
            error: Some(err.to_string()),
            artifacts: Vec::new(),
        }
    }

    fn csv_row(&self) -> Vec<String> {
        let opt = |v: Option<String>| v.unwrap_or_default();
        let mut row: Vec<String> = self.cell.render().into();
        row.push(opt(self.acc1.map(|v| v.to_string())));
        row.push(opt(self.best_epoch.map(|v| v.to_string())));
        row.push(opt(self.final_loss.map(|v| v.to_string())));
        row.push(format!("{:.3}", self.wall_seconds));
        row.push(self.status.name().to_string());
        row
    }
}

pub fn write_results_csv(path: &Path, records: &[RunRecord]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_writer(File::create(path)?);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record(r.csv_row())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a results CSV back; artifact paths and error text are not stored
/// there and come back empty.
pub fn read_results_csv(path: &Path) -> Result<Vec<RunRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(Error::Format(format!("unexpected results header {header:?}")));
    }
    let mut out = Vec::new();
    for row in r.records() {
        let row = row?;
        let fields: Vec<&str> = row.iter().collect();
        let cell = ExperimentCell::parse(&fields[..CELL_FIELDS])?;
        let num = |i: usize| -> Result<Option<f64>> {
            match fields[i] {
                "" => Ok(None),
                v => v.parse().map(Some).map_err(|_| Error::Format(format!("bad number {v:?}"))),
            }
        };
        let best_epoch = match fields[9] {
            "" => None,
            v => Some(v.parse().map_err(|_| Error::Format(format!("bad epoch {v:?}")))?),
        };
        let status = match fields[12] {
            "ok" => RunStatus::Ok,
            "failed" => RunStatus::Failed,
            v => return Err(Error::Format(format!("bad status {v:?}"))),
        };
        out.push(RunRecord {
            cell,
            acc1: num(8)?,
            best_epoch,
            final_loss: num(10)?,
            wall_seconds: num(11)?.unwrap_or(0.0),
            status,
            error: None,
            artifacts: Vec::new(),
        });
    }
    Ok(out)
}
