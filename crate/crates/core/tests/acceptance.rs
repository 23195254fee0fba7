//! Acceptance suite. Prints one `[PASS]`/`[FAIL]` line per criterion and
//! exits non-zero if any criterion fails or overruns its time budget.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use aeproj::augment::TransformSpace;
use aeproj::autoencoder::{build_autoencoder, train_autoencoder, AeTrainConfig, Autoencoder, AutoencoderSpec};
use aeproj::data::{parse_cifar_bytes, split, synth_blobs, SplitSpec, CIFAR_RECORD};
use aeproj::eval::{summarize, SummaryStats};
use aeproj::expcli::runner::{ae_checkpoint_path, prepare_datasets, pretrain_autoencoders, run_cell};
use aeproj::expcli::{enumerate_cells, run_grid, Container, ExperimentCell, ExperimentConfig, RunRecord, RunStatus, Scale};
use aeproj::losses::{mse, nt_xent, NtXentConfig};
use aeproj::nn::{grad_check, Activation, Layer};
use aeproj::optim::{eta_min_for, initial_lr_from_batch, ReduceOnPlateau};
use aeproj::simclr::{
    build_backbone, build_projector, load_model, train_simclr, BackboneKind, BackboneSpec, ProjectorKind, ProjectorSpec,
    SimclrConfig,
};
use aeproj::{Rng, Tensor};

use common::{brute_force_nt_xent, mixed_loss, random_rows, smooth_random_stack};

const GRAD_REL_TOL: f64 = 1e-4;
const GRAD_STACKS: u64 = 50;
const NT_XENT_TOL: f64 = 1e-10;
const NT_XENT_BATCHES: u64 = 200;
const SCALE_TOL: f64 = 1e-9;
const MIN_MOVED_FRACTION: f64 = 0.01;
const AE_RATIO: f64 = 0.6;
const CHANCE: f64 = 0.25;
const ABOVE_CHANCE: f64 = 0.20;
const SEEDS: u64 = 5;
const MIN_GOOD_SEEDS: usize = 4;
const DESK_CELLS: usize = 144;
const CONTAINER_TENSORS: u64 = 1000;
/// Relative rounding bound of a round trip through 32-bit floats.
const F32_REL: f64 = f32::EPSILON as f64 / 2.0;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn c1_gradients() -> Outcome {
    let mut kinds = BTreeSet::new();
    let mut worst: f64 = 0.0;
    for seed in 0..GRAD_STACKS {
        let (stack, x) = smooth_random_stack(seed, 1e-3);
        for layer in stack.layers() {
            kinds.insert(match layer {
                Layer::Dense(_) => "dense".to_string(),
                Layer::Conv2d(_) => "conv2d".to_string(),
                Layer::AvgPool2d(_) => "avgpool2d".to_string(),
                Layer::Flatten => "flatten".to_string(),
                Layer::Activation(a) => a.name().to_string(),
            });
        }
        let r = ok(grad_check(&stack, &mixed_loss, &x, 1e-5))?;
        worst = worst.max(r.max_rel_error).max(r.input_max_rel_error);
        ensure(worst < GRAD_REL_TOL, || format!("stack {seed}: {r:?}"))?;
    }
    let expected = ["dense", "conv2d", "avgpool2d", "flatten", "relu", "silu", "sigmoid", "tanh", "identity"];
    for k in expected {
        ensure(kinds.contains(k), || format!("layer kind {k} never exercised"))?;
    }
    Ok(format!("{GRAD_STACKS} stacks, {} layer kinds, worst rel err {worst:.2e}", kinds.len()))
}

fn c2_nt_xent_oracle() -> Outcome {
    let mut root = Rng::new(2024, 0x2);
    let mut worst: f64 = 0.0;
    for b in 0..NT_XENT_BATCHES {
        let n = 1 + root.below(8) as usize;
        let d = 1 + root.below(16) as usize;
        let tau = [0.1, 0.5, 1.0][(b % 3) as usize];
        let rows = random_rows(&mut root.child(b), 2 * n, d);
        let z = ok(Tensor::from_rows(&rows))?;
        let (loss, _) = ok(nt_xent(&z, &ok(NtXentConfig::new(tau))?))?;
        let diff = (loss - brute_force_nt_xent(&rows, tau)).abs();
        worst = worst.max(diff);
        ensure(diff < NT_XENT_TOL, || format!("batch {b} (N={n}, d={d}, tau={tau}): diff {diff:e}"))?;
    }
    for seed in 0..20 {
        let z = ok(Tensor::from_rows(&random_rows(&mut Rng::new(seed, 0x21), 2, 7)))?;
        for tau in [0.1, 0.5, 1.0] {
            let loss = ok(nt_xent(&z, &ok(NtXentConfig::new(tau))?))?.0;
            ensure(loss == 0.0, || format!("N=1 loss {loss:e}"))?;
        }
    }
    Ok(format!("{NT_XENT_BATCHES} batches, worst diff {worst:.2e}, N=1 exactly 0"))
}

fn c3_scale_invariance() -> Outcome {
    let cfg = NtXentConfig::default();
    let mut worst: f64 = 0.0;
    let mut checks = 0;
    for seed in 0..40 {
        let mut rng = Rng::new(seed, 0x3);
        let n = 1 + rng.below(8) as usize;
        let d = 2 + rng.below(15) as usize;
        let z = ok(Tensor::from_rows(&random_rows(&mut rng, 2 * n, d)))?;
        let base = ok(nt_xent(&z, &cfg))?.0;
        for row in 0..2 * n {
            for c in [1e-3, 1.0, 1e3] {
                let mut s = z.clone();
                s.row_mut(row).iter_mut().for_each(|v| *v *= c);
                let diff = (ok(nt_xent(&s, &cfg))?.0 - base).abs();
                worst = worst.max(diff);
                checks += 1;
                ensure(diff < SCALE_TOL, || format!("row {row} scaled by {c}: diff {diff:e}"))?;
            }
        }
    }
    Ok(format!("{checks} rescalings, worst diff {worst:.2e}"))
}

fn desk_config(dim_g: usize, dim_z: usize, activation: Activation) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::preset(Scale::Desk);
    cfg.grid.dim_g = vec![dim_g];
    cfg.grid.dim_z = vec![dim_z];
    cfg.grid.activations = vec![activation];
    cfg.grid.normalized = vec![false];
    cfg
}

fn cell(kind: ProjectorKind, activation: Activation, normalized: bool, frozen: bool, seed: u64) -> ExperimentCell {
    ExperimentCell {
        dataset: "synthetic".into(),
        projector: kind,
        dim_g: 32,
        activation,
        dim_z: 16,
        normalized,
        frozen,
        seed,
    }
}

fn c4_freeze_invariant() -> Outcome {
    let cfg = desk_config(32, 16, Activation::Sigmoid);
    let out = ok(tempfile::tempdir())?;
    let data = ok(prepare_datasets(&cfg))?;
    ok(pretrain_autoencoders(&cfg, &data, &BTreeSet::from([32]), out.path()))?;
    let donor = ok(Autoencoder::load(&ae_checkpoint_path(out.path(), "synthetic", 32)))?.extract_embedding_layer();
    let mut moved_fraction = 0.0;
    for frozen in [true, false] {
        let rec = run_cell(&cfg, &data, &cell(ProjectorKind::Ae, Activation::Sigmoid, false, frozen, 0), out.path());
        ensure(rec.status == RunStatus::Ok, || format!("frozen={frozen}: {:?}", rec.error))?;
        let (model, _) = ok(load_model(&rec.artifacts[0]))?;
        let (_, emb) = model.projector.dense_layers().next().ok_or("projector has no dense layer")?;
        if frozen {
            ensure(emb.weight.bitwise_eq(&donor.weight) && emb.bias.bitwise_eq(&donor.bias), || {
                "frozen embedding drifted from the checkpoint".into()
            })?;
        } else {
            let pairs = emb
                .weight
                .data()
                .iter()
                .zip(donor.weight.data())
                .chain(emb.bias.data().iter().zip(donor.bias.data()));
            let (mut moved, mut total) = (0usize, 0usize);
            for (a, b) in pairs {
                total += 1;
                moved += (a.to_bits() != b.to_bits()) as usize;
            }
            moved_fraction = moved as f64 / total as f64;
            ensure(moved_fraction >= MIN_MOVED_FRACTION, || {
                format!("only {:.3}% of unfrozen entries moved", 100.0 * moved_fraction)
            })?;
        }
    }
    Ok(format!(
        "{} epochs; frozen bitwise identical, unfrozen moved {:.1}%",
        cfg.simclr.epochs,
        100.0 * moved_fraction
    ))
}

/// Reference plateau state machine, written out independently.
fn plateau_fixture(losses: &[f64], patience: usize, factor: f64, lr0: f64) -> Vec<f64> {
    let (mut best, mut bad, mut lr) = (f64::INFINITY, 0, lr0);
    let mut trace = Vec::new();
    for &l in losses {
        if l < best {
            best = l;
            bad = 0;
        } else {
            bad += 1;
            if bad > patience {
                lr *= factor;
                bad = 0;
            }
        }
        trace.push(lr);
    }
    trace
}

fn replay(losses: &[f64], patience: usize, factor: f64, lr0: f64) -> Result<Vec<f64>, String> {
    let mut p = ok(ReduceOnPlateau::new(patience, factor))?;
    let mut lr = lr0;
    let mut trace = Vec::new();
    for &l in losses {
        lr = ok(p.update(l, lr))?;
        trace.push(lr);
    }
    Ok(trace)
}

fn c5_schedulers() -> Outcome {
    let ds = ok(synth_blobs(2, 24, 8, &mut Rng::new(5, 1)))?;
    let (tr, va, _) = ok(split(&ds, &SplitSpec::new(5)))?;
    let bb = ok(build_backbone(BackboneSpec { kind: BackboneKind::Mlp, width: 8 }, 8, &mut Rng::new(5, 2)))?;
    let spec = ProjectorSpec {
        kind: ProjectorKind::Mlp,
        input_width: 8,
        dim_g: 8,
        activation: Activation::Tanh,
        dim_z: 4,
        frozen: false,
    };
    let pj = ok(build_projector(spec, None, &mut Rng::new(5, 3)))?;
    let cfg = SimclrConfig { epochs: 7, batch_size: 8, ..SimclrConfig::default() };
    let (_, report) = ok(train_simclr(&bb, &pj, &tr, &va, &cfg, &TransformSpace::default()))?;
    let eta0 = 0.3 * cfg.batch_size as f64 / 256.0;
    let eta_min = eta0 / 50.0;
    ensure(report.lr.len() == cfg.epochs, || format!("lr trace has {} entries", report.lr.len()))?;
    for (t, &lr) in report.lr.iter().enumerate() {
        let expected = eta_min + (eta0 - eta_min) * (1.0 + (PI * t as f64 / cfg.epochs as f64).cos()) / 2.0;
        ensure(lr == expected, || format!("epoch {t}: lr {lr:e} vs {expected:e}"))?;
    }

    // Eleven non-improving calls after the first: the twelfth halves the rate.
    let flat = vec![1.0; 13];
    let trace = replay(&flat, 10, 0.5, 1e-4)?;
    let mut expected = vec![1e-4; 11];
    expected.extend([5e-5, 5e-5]);
    ensure(trace == expected, || format!("patience-10 trace {trace:?}"))?;
    let staircase = [5.0, 4.0, 4.0, 4.0, 4.0, 3.0, 3.0, 3.0, 3.0];
    let trace = replay(&staircase, 2, 0.5, 1.0)?;
    ensure(trace == [1.0, 1.0, 1.0, 1.0, 0.5, 0.5, 0.5, 0.5, 0.25], || format!("patience-2 trace {trace:?}"))?;
    let mut rng = Rng::new(55, 5);
    for case in 0..200 {
        let losses: Vec<f64> = (0..40).map(|_| (rng.below(6) as f64) * 0.5).collect();
        let patience = rng.below(5) as usize;
        let got = replay(&losses, patience, 0.5, 0.1)?;
        ensure(got == plateau_fixture(&losses, patience, 0.5, 0.1), || format!("random fixture {case} differs"))?;
    }
    Ok(format!("{} cosine epochs exact; plateau fixtures match", cfg.epochs))
}

fn c6_hyperparameters() -> Outcome {
    let lr = initial_lr_from_batch(1280);
    ensure(lr == 1.5, || format!("initial_lr_from_batch(1280) = {lr}"))?;
    ensure(eta_min_for(lr) == lr / 50.0, || format!("eta_min {}", eta_min_for(lr)))?;
    let s = SimclrConfig { batch_size: 1280, ..SimclrConfig::default() };
    let sched = ok(s.schedule())?;
    ensure(sched.eta0 == 1.5 && sched.eta_min == 1.5 / 50.0, || format!("{sched:?}"))?;
    Ok(format!("lr {lr}, eta_min {}", sched.eta_min))
}

fn c7_autoencoder() -> Outcome {
    let mut ratios = Vec::new();
    for seed in 0..SEEDS {
        let ds = ok(synth_blobs(4, 200, 16, &mut Rng::new(seed, 0x5E7)))?;
        let (tr, va, _) = ok(split(&ds, &SplitSpec::new(seed)))?;
        let (tr, va) = (ok(tr.flattened())?, ok(va.flattened())?);
        let spec = AutoencoderSpec { input_dim: 768, hidden_dim: 64, latent_dim: 32, activation: Activation::Relu };
        let ae = ok(build_autoencoder(spec, &mut Rng::new(seed, 0xAE0)))?;
        let cfg = AeTrainConfig { seed, ..AeTrainConfig::default() };
        let (best, report) = ok(train_autoencoder(&ae, &tr, &va, &cfg))?;
        let minimum = report.val_mse.iter().copied().fold(f64::INFINITY, f64::min);
        let snapshot = ok(mse(&ok(best.reconstruct(&va))?, &va))?;
        ensure(snapshot == minimum && report.best_val == minimum, || {
            format!("seed {seed}: snapshot {snapshot:e}, curve min {minimum:e}")
        })?;
        ratios.push(minimum / report.val_mse[0]);
    }
    let good = ratios.iter().filter(|&&r| r <= AE_RATIO).count();
    let shown: Vec<String> = ratios.iter().map(|r| format!("{r:.3}")).collect();
    ensure(good >= MIN_GOOD_SEEDS, || format!("best/first ratios {shown:?}"))?;
    Ok(format!("best/first val MSE ratios [{}], snapshot == curve min", shown.join(", ")))
}

fn loss_curve(path: &Path) -> Result<Vec<f64>, String> {
    let mut rdr = ok(csv::Reader::from_path(path))?;
    let col = ok(rdr.headers())?.iter().position(|h| h == "train_loss").ok_or("no train_loss column")?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        out.push(ok(ok(rec)?[col].parse::<f64>())?);
    }
    Ok(out)
}

fn c8_end_to_end() -> Outcome {
    // Raw [0, 1] inputs share a large common direction and the tiny backbone
    // often falls onto the uniform plateau, so this check runs Z-scored cells.
    let activation = Activation::Relu;
    let cfg = desk_config(32, 16, activation);
    let out = ok(tempfile::tempdir())?;
    let data = ok(prepare_datasets(&cfg))?;
    ok(pretrain_autoencoders(&cfg, &data, &BTreeSet::from([32]), out.path()))?;
    let test_len = data[0].test.len();
    let mut lines = Vec::new();
    let mut failures = Vec::new();
    for kind in [ProjectorKind::Mlp, ProjectorKind::Ae] {
        let (mut decreased, mut above) = (0, 0);
        let mut accs = Vec::new();
        for seed in 0..SEEDS {
            let rec = run_cell(&cfg, &data, &cell(kind, activation, true, kind == ProjectorKind::Ae, seed), out.path());
            ensure(rec.status == RunStatus::Ok, || format!("{kind} seed {seed}: {:?}", rec.error))?;
            let curve = loss_curve(&rec.artifacts[1])?;
            ensure(curve.len() == cfg.simclr.epochs, || format!("{} epochs logged", curve.len()))?;
            decreased += (curve[curve.len() - 1] < curve[0]) as usize;
            let probe: serde_json::Value = ok(serde_json::from_str(&ok(fs::read_to_string(&rec.artifacts[2]))?))?;
            let sizes: Vec<u64> = probe["split_sizes"]
                .as_array()
                .ok_or("probe.json lacks split_sizes")?
                .iter()
                .filter_map(|v| v.as_u64())
                .collect();
            ensure(sizes.iter().sum::<u64>() == test_len as u64, || format!("probe split {sizes:?} of {test_len}"))?;
            let epochs = probe["test_acc"].as_array().map_or(0, |a| a.len());
            ensure(epochs == cfg.probe.epochs, || format!("probe ran {epochs} epochs"))?;
            let acc = rec.acc1.ok_or("missing acc1")?;
            above += (acc >= CHANCE + ABOVE_CHANCE) as usize;
            accs.push(format!("{acc:.3}"));
        }
        if decreased < MIN_GOOD_SEEDS || above < MIN_GOOD_SEEDS {
            failures.push(format!("{kind}: loss decreased {decreased}/{SEEDS}, acc1 [{}]", accs.join(", ")));
        }
        lines.push(format!("{kind}: loss down {decreased}/{SEEDS}, acc1 [{}]", accs.join(", ")));
    }
    ensure(failures.is_empty(), || failures.join("; "))?;
    Ok(lines.join("; "))
}

fn grid_compute_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::preset(Scale::Desk);
    cfg.resolution = 8;
    cfg.datasets[0].source = aeproj::expcli::config::DatasetSource::Synthetic { classes: 4, per_class: 16, seed: 0 };
    cfg.simclr.epochs = 1;
    cfg.simclr.batch_size = 16;
    cfg.autoencoder.epochs = 2;
    cfg.probe.epochs = 2;
    cfg
}

fn strip_wall_time(text: &str) -> Result<Vec<Vec<String>>, String> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = ok(rec)?;
        rows.push(rec.iter().enumerate().filter(|&(i, _)| i != 11).map(|(_, f)| f.to_string()).collect());
    }
    Ok(rows)
}

fn stats_from_csv(path: &Path) -> Result<BTreeMap<(String, bool, String), SummaryStats>, String> {
    let mut rdr = ok(csv::Reader::from_path(path))?;
    let h: Vec<String> = ok(rdr.headers())?.iter().map(str::to_string).collect();
    let at = |name: &str| h.iter().position(|c| c == name).ok_or(format!("no column {name}"));
    let (ds, norm, proj, acc, status) = (at("dataset")?, at("normalized")?, at("projector")?, at("acc1")?, at("status")?);
    let mut groups: BTreeMap<(String, bool, String), Vec<f64>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = ok(rec)?;
        if &rec[status] != "ok" {
            continue;
        }
        let key = (rec[ds].to_string(), ok(rec[norm].parse::<bool>())?, rec[proj].to_string());
        groups.entry(key).or_default().push(ok(rec[acc].parse::<f64>())?);
    }
    groups.into_iter().map(|(k, v)| Ok((k, ok(summarize(&v))?))).collect()
}

fn c9_grid() -> Outcome {
    for scale in [Scale::Desk, Scale::Paper] {
        let n = enumerate_cells(&ExperimentConfig::preset(scale)).len();
        ensure(n == DESK_CELLS, || format!("{scale:?} preset enumerates {n} cells"))?;
    }
    let cfg = grid_compute_config();
    ensure(enumerate_cells(&cfg).len() == DESK_CELLS, || "compute config changed the grid".into())?;
    let a = ok(tempfile::tempdir())?;
    let b = ok(tempfile::tempdir())?;
    let first = ok(run_grid(&cfg, a.path(), Some(4)))?;
    let second = ok(run_grid(&cfg, b.path(), Some(1)))?;
    ensure(first.records.len() == DESK_CELLS, || format!("{} records", first.records.len()))?;
    let ta = ok(fs::read_to_string(&first.results_csv))?;
    let tb = ok(fs::read_to_string(&second.results_csv))?;
    ensure(strip_wall_time(&ta)? == strip_wall_time(&tb)?, || "rerun CSV differs".into())?;

    let expected = stats_from_csv(&first.results_csv)?;
    let reported = ok(aeproj::expcli::report::read_stats_json(&a.path().join("stats.json")))?;
    let got: BTreeMap<(String, bool, String), SummaryStats> = reported
        .into_iter()
        .map(|r| ((r.dataset, r.normalized, r.projector.to_string()), r.stats))
        .collect();
    ensure(got == expected, || format!("stats.json {got:?} vs CSV {expected:?}"))?;
    let ok_count = first.records.iter().filter(|r: &&RunRecord| r.status == RunStatus::Ok).count();
    Ok(format!(
        "{DESK_CELLS} cells ({ok_count} ok), rerun identical, {} stats rows exact",
        got.len()
    ))
}

fn c10_round_trips() -> Outcome {
    let mut rng = Rng::new(10, 0x10);
    let mut c = Container::new();
    let mut originals = Vec::new();
    for i in 0..CONTAINER_TENSORS {
        let ndim = 1 + rng.below(4) as usize;
        let shape: Vec<usize> = (0..ndim).map(|_| 1 + rng.below(5) as usize).collect();
        let mag = 10f64.powf(rng.uniform(-3.0, 3.0));
        let t = ok(Tensor::uniform(&mut rng, -mag, mag, &shape))?;
        ok(c.insert_tensor(&format!("t{i}"), &t))?;
        originals.push(t);
    }
    let dir = ok(tempfile::tempdir())?;
    let path = dir.path().join("round.nta");
    ok(c.save(&path))?;
    let back = ok(Container::load(&path))?;
    for (i, t) in originals.iter().enumerate() {
        let r = ok(back.tensor(&format!("t{i}")))?;
        ensure(r.shape() == t.shape(), || format!("t{i} shape {:?}", r.shape()))?;
        for (a, b) in t.data().iter().zip(r.data()) {
            ensure((a - b).abs() <= a.abs() * F32_REL, || format!("t{i}: {a} -> {b}"))?;
        }
    }

    let mut bytes = Vec::with_capacity(2 * CIFAR_RECORD);
    for (rec, label) in [3u8, 7u8].iter().enumerate() {
        bytes.push(*label);
        bytes.extend((0..3072usize).map(|p| ((p * 7 + rec * 131) % 256) as u8));
    }
    let ds = ok(parse_cifar_bytes(&bytes, "fixture"))?;
    ensure(ds.labels == [3, 7] && ds.images.shape() == [2, 3, 32, 32], || format!("{:?}", ds.labels))?;
    for (i, v) in ds.images.data().iter().enumerate() {
        let raw = bytes[(i / 3072) * CIFAR_RECORD + 1 + i % 3072];
        ensure(*v == raw as f64 / 255.0 && (v * 255.0).round() as u8 == raw, || format!("pixel {i}"))?;
    }

    let mut cells = 0;
    for scale in [Scale::Desk, Scale::Paper] {
        let cfg = ExperimentConfig::preset(scale);
        let rendered = ok(serde_json::to_string(&cfg))?;
        ensure(ok(ExperimentConfig::from_json(&rendered))? == cfg, || format!("{scale:?} config round trip"))?;
        for cell in enumerate_cells(&cfg) {
            let fields = cell.render();
            let refs: Vec<&str> = fields.iter().map(String::as_str).collect();
            ensure(ok(ExperimentCell::parse(&refs))? == cell, || format!("cell {}", cell.id()))?;
            cells += 1;
        }
    }
    Ok(format!("{CONTAINER_TENSORS} tensors, 2-record CIFAR fixture, {cells} cells"))
}

fn c11_statistics() -> Outcome {
    let s = ok(summarize(&[1.0, 2.0, 3.0, 4.0]))?;
    ensure(s.midspread == 1.5 && s.q1 == 1.75 && s.q3 == 3.25, || format!("{s:?}"))?;
    for values in [vec![2.5], vec![0.7; 9], vec![-3.0; 4]] {
        let s = ok(summarize(&values))?;
        ensure(s.range == 0.0 && s.midspread == 0.0 && s.std_dev == 0.0, || format!("{values:?}: {s:?}"))?;
    }
    Ok(format!("midspread {}", s.midspread))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome, Option<u64>); 11] = [
        ("C1 gradient exactness", c1_gradients, Some(30)),
        ("C2 NT-Xent oracle equivalence", c2_nt_xent_oracle, Some(10)),
        ("C3 NT-Xent scale invariance", c3_scale_invariance, None),
        ("C4 freeze invariant", c4_freeze_invariant, None),
        ("C5 scheduler exactness", c5_schedulers, None),
        ("C6 hyperparameter derivations", c6_hyperparameters, None),
        ("C7 autoencoder pipeline", c7_autoencoder, Some(120)),
        ("C8 end-to-end directional check", c8_end_to_end, Some(900)),
        ("C9 grid bookkeeping", c9_grid, None),
        ("C10 format round-trips", c10_round_trips, None),
        ("C11 statistics", c11_statistics, None),
    ];
    let mut failed = 0;
    for (name, check, budget) in criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        let took = start.elapsed();
        let result = match (result, budget) {
            (Ok(_), Some(b)) if took > Duration::from_secs(b) => Err(format!("exceeded {b}s budget")),
            (r, _) => r,
        };
        match result {
            Ok(detail) => println!("[PASS] {name} ({:.1}s): {detail}", took.as_secs_f64()),
            Err(why) => {
                failed += 1;
                println!("[FAIL] {name} ({:.1}s): {why}", took.as_secs_f64());
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
