//! Grouped accuracy statistics over run records.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::eval::{summarize, SummaryStats};
use crate::expcli::cell::{RunRecord, RunStatus};
use crate::simclr::ProjectorKind;

/// Acc@1 summary for one (dataset, normalization, projector) group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub dataset: String,
    pub normalized: bool,
    pub projector: ProjectorKind,
    pub stats: SummaryStats,
}

fn successful(records: &[RunRecord]) -> impl Iterator<Item = (&RunRecord, f64)> {
    records
        .iter()
        .filter(|r| r.status == RunStatus::Ok)
        .filter_map(|r| r.acc1.map(|a| (r, a)))
}

pub fn stats_report(records: &[RunRecord]) -> Result<Vec<StatsRow>> {
    let mut groups: BTreeMap<(String, bool, ProjectorKind), Vec<f64>> = BTreeMap::new();
    for (r, acc) in successful(records) {
        groups
            .entry((r.cell.dataset.clone(), r.cell.normalized, r.cell.projector))
            .or_default()
            .push(acc);
    }
    groups
        .into_iter()
        .map(|((dataset, normalized, projector), accs)| {
            Ok(StatsRow {
                dataset,
                normalized,
                projector,
                stats: summarize(&accs)?,
            })
        })
        .collect()
}

const STATS_HEADER: [&str; 13] = [
    "dataset",
    "normalized",
    "projector",
    "count",
    "minimum",
    "maximum",
    "average",
    "range",
    "q1",
    "median",
    "q3",
    "midspread",
    "std_dev",
];

pub fn write_stats(dir: &Path, rows: &[StatsRow]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_writer(File::create(dir.join("stats.csv"))?);
    w.write_record(STATS_HEADER)?;
    for row in rows {
        let s = &row.stats;
        let mut rec = vec![row.dataset.clone(), row.normalized.to_string(), row.projector.to_string()];
        rec.push(s.count.to_string());
        rec.extend(
            [s.minimum, s.maximum, s.average, s.range, s.q1, s.median, s.q3, s.midspread, s.std_dev]
                .iter()
                .map(f64::to_string),
        );
        w.write_record(rec)?;
    }
    w.flush()?;
    fs::write(dir.join("stats.json"), serde_json::to_string_pretty(rows)?)?;
    Ok(())
}

pub fn read_stats_json(path: &Path) -> Result<Vec<StatsRow>> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Best and mean Acc@1 for one arm of the freeze comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenArm {
    pub dataset: String,
    pub frozen: bool,
    pub count: usize,
    pub max_acc1: f64,
    pub avg_acc1: f64,
}

pub fn frozen_summary(records: &[RunRecord]) -> Result<Vec<FrozenArm>> {
    let mut groups: BTreeMap<(String, bool), Vec<f64>> = BTreeMap::new();
    for (r, acc) in successful(records) {
        groups.entry((r.cell.dataset.clone(), r.cell.frozen)).or_default().push(acc);
    }
    groups
        .into_iter()
        .rev()
        .map(|((dataset, frozen), accs)| {
            let s = summarize(&accs)?;
            Ok(FrozenArm {
                dataset,
                frozen,
                count: s.count,
                max_acc1: s.maximum,
                avg_acc1: s.average,
            })
        })
        .collect()
}

pub fn write_frozen_summary(path: &Path, arms: &[FrozenArm]) -> Result<()> {
    let mut w = csv::Writer::from_writer(File::create(path)?);
    w.write_record(["dataset", "frozen", "count", "max_acc1", "avg_acc1"])?;
    for a in arms {
        w.write_record([
            a.dataset.clone(),
            a.frozen.to_string(),
            a.count.to_string(),
            a.max_acc1.to_string(),
            a.avg_acc1.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
