use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, ValueEnum};

use graft_core::augment::MixConfig;
use graft_core::dataset::{load_tu_dataset, synth_motif_dataset, Dataset};
use graft_core::nn::{Arch, Readout};
use graft_core::results::{format_table, summarize, write_records, ResultRecord};
use graft_core::train::{run_fold, Ablations, AugmentMode, RunOptions, TrainConfig};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Synthetic {
    Motif,
}

/// Train and evaluate a graph classifier with k-fold cross validation.
#[derive(Debug, Parser)]
#[command(name = "graft", version)]
struct Args {
    /// Directory holding a TU-format dataset.
    #[arg(long, requires = "name", conflicts_with = "synthetic")]
    data: Option<PathBuf>,
    /// Dataset name (file prefix inside --data).
    #[arg(long)]
    name: Option<String>,
    /// Use a generated dataset instead of --data.
    #[arg(long, value_enum)]
    synthetic: Option<Synthetic>,
    #[arg(long, default_value_t = 400)]
    synthetic_size: usize,
    #[arg(long, default_value_t = 7)]
    synthetic_seed: u64,

    #[arg(long, default_value = "gcs", value_parser = parse_arch)]
    arch: Arch,
    #[arg(long, default_value_t = 3)]
    layers: usize,
    #[arg(long, default_value_t = 128)]
    hidden: usize,
    #[arg(long, default_value = "mean", value_parser = parse_readout)]
    readout: Readout,
    #[arg(long, default_value = "none", value_parser = parse_augment)]
    augment: AugmentMode,
    /// Percent of nodes used as anchors.
    #[arg(long = "R", default_value_t = 10.0)]
    r: f64,
    /// Comma-separated hop counts to sample from.
    #[arg(long, default_value = "1,2,3")]
    khops: String,
    #[arg(long, default_value_t = 2.0)]
    alpha: f64,
    /// Comma-separated ablations: size-based-label, scattered-nodes,
    /// random-subgraph, no-cross-edges.
    #[arg(long, default_value = "")]
    ablation: String,
    /// Perturbation ratio for dropn/perme/maskn, keep ratio for subg.
    #[arg(long)]
    baseline_ratio: Option<f64>,

    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Run only the first N folds of each repeat.
    #[arg(long)]
    fold_limit: Option<usize>,
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    #[arg(long, default_value_t = 1000)]
    epochs: usize,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    #[arg(long, default_value_t = 5e-4)]
    lr: f64,
    /// Early-stopping patience in iterations.
    #[arg(long, default_value_t = 1500)]
    patience: usize,
    /// Learning-rate decay patience in iterations.
    #[arg(long, default_value_t = 1000)]
    lr_patience: usize,

    /// Results file, one JSON record per fold and repeat.
    #[arg(long, default_value = "results.jsonl")]
    out: PathBuf,
    /// Write the first batch's mixed graphs of every fold here.
    #[arg(long)]
    dump_mixed: Option<PathBuf>,
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
}

fn parse_arch(s: &str) -> Result<Arch, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| format!("unknown arch {s:?}"))
}

fn parse_readout(s: &str) -> Result<Readout, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| format!("unknown readout {s:?}"))
}

fn parse_augment(s: &str) -> Result<AugmentMode, String> {
    s.parse().map_err(|e: graft_core::Error| e.to_string())
}

fn load(args: &Args) -> Result<Dataset> {
    let ds = match (&args.data, args.synthetic) {
        (Some(dir), _) => {
            let name = args.name.as_deref().expect("clap enforces --name");
            load_tu_dataset(dir, name).with_context(|| format!("loading {name} from {}", dir.display()))?
        }
        (None, Some(Synthetic::Motif)) => synth_motif_dataset(args.synthetic_size, args.synthetic_seed)?,
        (None, None) => bail!("pass --data DIR --name NAME or --synthetic motif"),
    };
    if ds.feature_dim == 0 {
        return Ok(ds.with_degree_features()?);
    }
    Ok(ds)
}

fn config(args: &Args) -> Result<TrainConfig> {
    let khops = args
        .khops
        .split(',')
        .map(|k| k.trim().parse::<usize>())
        .collect::<Result<Vec<_>, _>>()
        .with_context(|| format!("bad --khops {:?}", args.khops))?;
    let cfg = TrainConfig {
        arch: args.arch,
        layers: args.layers,
        hidden: args.hidden,
        readout: args.readout,
        augment: args.augment,
        mix: MixConfig {
            r: args.r,
            khops,
            alpha: args.alpha,
            ..MixConfig::default()
        },
        ablations: args.ablation.parse::<Ablations>()?,
        baseline_ratio: args.baseline_ratio,
        lr: args.lr,
        batch_size: args.batch_size,
        max_epochs: args.epochs,
        patience: args.patience,
        lr_patience: args.lr_patience,
        seed: args.seed,
        ..TrainConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

fn run(args: Args) -> Result<()> {
    let cfg = config(&args)?;
    let ds = load(&args)?;
    println!(
        "dataset {}: {} graphs, {} classes, {} features, {:.1} nodes / {:.1} edges on average",
        ds.name,
        ds.len(),
        ds.num_classes,
        ds.feature_dim,
        ds.mean_nodes(),
        ds.mean_edges()
    );
    let khops: Vec<String> = cfg.mix.khops.iter().map(|k| k.to_string()).collect();
    println!(
        "config: arch={} layers={} hidden={} readout={} augment={} R={} K={{{}}} alpha={} connector={}",
        serde_json::to_value(cfg.arch)?.as_str().unwrap_or("?"),
        cfg.layers,
        cfg.hidden,
        serde_json::to_value(cfg.readout)?.as_str().unwrap_or("?"),
        cfg.augment,
        cfg.mix.r,
        khops.join(","),
        cfg.mix.alpha,
        serde_json::to_value(cfg.connector())?.as_str().unwrap_or("?"),
    );

    let mut records = Vec::new();
    for repeat in 0..args.repeats {
        let seed = args.seed.wrapping_add(repeat as u64);
        let splits = ds.stratified_kfold(args.folds, seed)?;
        let take = args.fold_limit.unwrap_or(args.folds).min(args.folds);
        for split in splits.iter().take(take) {
            let run_cfg = TrainConfig { seed, ..cfg.clone() };
            let opts = RunOptions {
                checkpoint_dir: args.checkpoint_dir.clone(),
                dump_dir: args.dump_mixed.clone(),
                tag: format!("r{repeat}"),
            };
            let m = run_fold(&ds, split, &run_cfg, &opts)?;
            println!(
                "repeat {repeat} fold {}: test acc {:.4} auroc {:.4} ece {:.4} (best epoch {}, {} epochs, {:.1}s)",
                split.fold,
                m.test.accuracy,
                m.test.auroc,
                m.test.ece,
                m.best_epoch,
                m.epochs.len(),
                m.wall_clock_secs
            );
            records.push(ResultRecord {
                dataset: ds.name.clone(),
                repeat,
                fold: split.fold,
                config: run_cfg,
                metrics: m,
            });
        }
    }
    write_records(&args.out, &records).with_context(|| format!("writing {}", args.out.display()))?;
    println!();
    print!("{}", format_table(&[(cfg.augment.to_string(), summarize(&records))]));
    println!("{} records written to {}", records.len(), args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
