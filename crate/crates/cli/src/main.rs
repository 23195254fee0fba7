use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aeproj::eval::{extract_features, train_probe, ProbeConfig};
use aeproj::data::SplitSpec;
use aeproj::expcli::cell::ExperimentCell;
use aeproj::expcli::report::write_stats;
use aeproj::expcli::runner::{
    ae_checkpoint_path, pretrain_autoencoders, prepare_datasets, run_cell, PreparedDataset,
};
use aeproj::expcli::{
    enumerate_cells, frozen_comparison, read_results_csv, run_grid, stats_report, write_results_csv,
    ExperimentConfig, RunRecord, RunStatus, Scale,
};
use aeproj::nn::Activation;
use aeproj::simclr::{load_model, ProjectorKind};
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

#[derive(Parser)]
#[command(name = "aeproj", version, about = "Contrastive learning with autoencoder-initialised projectors")]
struct Cli {
    /// JSON experiment config; the desk preset when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "runs")]
    out_dir: PathBuf,
    /// Replaces the grid seeds with this single seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain one autoencoder per dataset and grid dim_g.
    PretrainAe,
    /// Train and probe a single cell.
    Train(CellArgs),
    /// Probe a saved model checkpoint on its dataset's test split.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: Option<String>,
    },
    /// Run the full grid.
    Grid,
    /// Paired frozen and unfrozen ae projectors.
    FrozenCompare,
    /// Recompute grouped statistics from a results CSV.
    Stats {
        #[arg(long)]
        results: PathBuf,
    },
}

#[derive(Args)]
struct CellArgs {
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    projector: Option<ProjectorKind>,
    #[arg(long)]
    dim_g: Option<usize>,
    #[arg(long)]
    activation: Option<Activation>,
    #[arg(long)]
    dim_z: Option<usize>,
    #[arg(long)]
    normalized: bool,
    /// Let the transplanted embedding train (ae only).
    #[arg(long)]
    unfrozen: bool,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => ExperimentConfig::preset(Scale::Desk),
    };
    if let Some(seed) = cli.seed {
        cfg.grid.seeds = vec![seed];
    }
    Ok(cfg)
}

fn report_records(records: &[RunRecord]) -> bool {
    let mut ok = true;
    for r in records {
        match r.status {
            RunStatus::Ok => info!("{} acc1={:.4}", r.cell.id(), r.acc1.unwrap_or(f64::NAN)),
            RunStatus::Failed => {
                ok = false;
                warn!("{} failed: {}", r.cell.id(), r.error.as_deref().unwrap_or("?"));
            }
        }
    }
    let done = records.iter().filter(|r| r.status == RunStatus::Ok).count();
    println!("{done}/{} cells succeeded", records.len());
    ok
}

fn pick_cell(cfg: &ExperimentConfig, args: &CellArgs) -> Result<ExperimentCell> {
    let g = &cfg.grid;
    let projector = args.projector.unwrap_or(g.projectors[0]);
    let cell = ExperimentCell {
        dataset: args.dataset.clone().unwrap_or_else(|| cfg.datasets[0].name.clone()),
        projector,
        dim_g: args.dim_g.unwrap_or(g.dim_g[0]),
        activation: args.activation.unwrap_or(g.activations[0]),
        dim_z: args.dim_z.unwrap_or(g.dim_z[0]),
        normalized: args.normalized,
        frozen: projector == ProjectorKind::Ae && !args.unfrozen,
        seed: g.seeds[0],
    };
    if args.unfrozen && projector == ProjectorKind::Mlp {
        bail!("--unfrozen only applies to the ae projector");
    }
    Ok(cell)
}

fn train(cfg: &ExperimentConfig, args: &CellArgs, out: &Path) -> Result<bool> {
    let cell = pick_cell(cfg, args)?;
    let data: Vec<PreparedDataset> = prepare_datasets(cfg)?
        .into_iter()
        .filter(|d| d.name == cell.dataset)
        .collect();
    if cell.projector == ProjectorKind::Ae && !ae_checkpoint_path(out, &cell.dataset, cell.dim_g).exists() {
        info!("pretraining autoencoder for {} with latent {}", cell.dataset, cell.dim_g);
        pretrain_autoencoders(cfg, &data, &[cell.dim_g].into(), out)?;
    }
    let record = run_cell(cfg, &data, &cell, out);
    write_results_csv(&out.join("results.csv"), std::slice::from_ref(&record))?;
    println!("{}", serde_json::to_string_pretty(&record)?);
    Ok(report_records(&[record]))
}

fn evaluate(cfg: &ExperimentConfig, model: &Path, dataset: Option<&str>) -> Result<()> {
    let (m, meta) = load_model(model).with_context(|| format!("loading {}", model.display()))?;
    if meta.resolution != cfg.resolution {
        bail!("model resolution {} differs from config {}", meta.resolution, cfg.resolution);
    }
    let data = prepare_datasets(cfg)?;
    let d = match dataset {
        Some(name) => data.iter().find(|d| d.name == name).context("unknown dataset")?,
        None => &data[0],
    };
    let features = extract_features(&m.backbone, &d.test, &meta.norm, model.display().to_string())?;
    let pcfg = ProbeConfig {
        epochs: cfg.probe.epochs,
        batch_size: cfg.probe.batch_size,
        lr: cfg.probe.lr,
        seed: meta.config.seed,
    };
    let probe = train_probe(&features, &SplitSpec::new(cfg.split_seed), &pcfg)?;
    println!("acc1={} best_epoch={}", probe.acc1, probe.best_epoch);
    Ok(())
}

fn run(cli: &Cli) -> Result<bool> {
    let cfg = load_config(cli)?;
    let out = cli.out_dir.as_path();
    match &cli.command {
        Command::PretrainAe => {
            let data = prepare_datasets(&cfg)?;
            let latents = cfg.grid.dim_g.iter().copied().collect();
            let pool = rayon_pool(cli.threads)?;
            let records = pool.install(|| pretrain_autoencoders(&cfg, &data, &latents, out))?;
            for r in &records {
                println!(
                    "{} n={} best_epoch={} val_mse {:.6} -> {:.6} ({})",
                    r.dataset,
                    r.latent_dim,
                    r.best_epoch,
                    r.first_val,
                    r.best_val,
                    r.path.display()
                );
            }
            Ok(true)
        }
        Command::Train(args) => rayon_pool(cli.threads)?.install(|| train(&cfg, args, out)),
        Command::Evaluate { model, dataset } => {
            evaluate(&cfg, model, dataset.as_deref())?;
            Ok(true)
        }
        Command::Grid => {
            info!("running {} cells", enumerate_cells(&cfg).len());
            let outcome = run_grid(&cfg, out, cli.threads)?;
            let ok = report_records(&outcome.records);
            println!("results: {}", outcome.results_csv.display());
            print_stats(&outcome.stats);
            Ok(ok)
        }
        Command::FrozenCompare => {
            let outcome = frozen_comparison(&cfg, out, cli.threads)?;
            let ok = report_records(&outcome.records);
            for arm in &outcome.arms {
                println!(
                    "{} frozen={} n={} max={:.4} avg={:.4}",
                    arm.dataset, arm.frozen, arm.count, arm.max_acc1, arm.avg_acc1
                );
            }
            Ok(ok)
        }
        Command::Stats { results } => {
            let records = read_results_csv(results)?;
            let stats = stats_report(&records)?;
            write_stats(out, &stats)?;
            print_stats(&stats);
            Ok(records.iter().all(|r| r.status == RunStatus::Ok))
        }
    }
}

fn rayon_pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        b = b.num_threads(n);
    }
    Ok(b.build()?)
}

fn print_stats(rows: &[aeproj::expcli::StatsRow]) {
    println!("dataset\tnormalized\tprojector\tn\tmin\tmax\tavg\trange\tmidspread\tstd");
    for r in rows {
        let s = &r.stats;
        println!(
            "{}\t{}\t{}\t{}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}\t{:.4}",
            r.dataset, r.normalized, r.projector, s.count, s.minimum, s.maximum, s.average, s.range, s.midspread, s.std_dev
        );
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
