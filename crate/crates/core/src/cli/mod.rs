//! Command line front end: `prepare`, `train`, `evaluate`, `sweep` and
//! `export`. Every flag overrides the matching key of the `--config` file.

mod config;
mod sweep;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

pub use config::{
    DataConfig, DatasetKind, ExperimentConfig, GenericFiles, Prepared, RunConfig, SweepGrid, ATTRIBUTE_FILE,
    ITEM_MAP_FILE, SPLIT_FILE, USER_MAP_FILE,
};
pub use sweep::{run_sweep, SweepRow};

use crate::error::{Error, Result};
use crate::evaluation::{embedding_nmi, evaluate, export_embeddings, user_rows, MetricsReport};
use crate::trainer::{
    final_embeddings, load_checkpoint, Checkpoint, ModelKind, RunDir, TrainConfig, TrainData, Trainer,
};

#[derive(Debug, Parser)]
#[command(name = "fairdgcl", version, about = "Fair graph contrastive recommendation")]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load a raw dataset, split it and write the split, attributes and id maps.
    Prepare(PrepareArgs),
    /// Train one model and evaluate the best checkpoint on the test split.
    Train(TrainArgs),
    /// Recompute metrics from a checkpoint.
    Evaluate(EvaluateArgs),
    /// Train over a grid of alpha, beta, layers and seeds and tabulate test metrics.
    Sweep(SweepArgs),
    /// Write final embeddings as CSV and print their group NMI.
    Export(ExportArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Experiment configuration file (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub dataset: Option<DatasetKind>,
    /// Raw data directory [default: $FAIRDGCL_DATA/<dataset>].
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Split seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory [default: prepared/<dataset>].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Hyperparameter overrides shared by `train` and `sweep`.
#[derive(Debug, Clone, Args)]
pub struct HyperArgs {
    #[arg(long, value_enum)]
    pub model: Option<ModelKind>,
    /// Embedding size.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Maximum number of epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Interactions per training step.
    #[arg(long)]
    pub batch: Option<usize>,
    /// Contrastive temperature.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Relaxation temperature of the recognition view.
    #[arg(long)]
    pub tau_r: Option<f64>,
    /// Adam learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Evaluation cutoffs, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub ks: Option<Vec<usize>>,
    /// Edge drop probability of the randomdrop baseline.
    #[arg(long)]
    pub drop_rate: Option<f64>,
    /// Early-stopping patience in epochs (0 disables).
    #[arg(long)]
    pub patience: Option<usize>,
    /// Prepared split file; without it the raw data is split in memory.
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Parent directory of run directories [default: runs].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Run name [default: <model>-<config hash prefix>].
    #[arg(long)]
    pub name: Option<String>,
    /// Write per-epoch view and edge-drop dumps under the run directory.
    #[arg(long)]
    pub dump_views: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    /// Weight of the contrastive term.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Weight of the adversarial term.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Propagation layers.
    #[arg(long)]
    pub layers: Option<usize>,
    /// Training seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub hyper: HyperArgs,
    /// Contrastive weights, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub alpha: Option<Vec<f64>>,
    /// Adversarial weights, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub beta: Option<Vec<f64>>,
    /// Layer counts, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub layers: Option<Vec<usize>>,
    /// Training seeds, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub seed: Option<Vec<u64>>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Checkpoint file, or a run directory (its best checkpoint is used).
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Split file [default: the copy inside the run directory].
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Cutoffs [default: the checkpoint's eval_ks].
    #[arg(long, value_delimiter = ',')]
    pub ks: Option<Vec<usize>>,
    /// Evaluate on the validation part instead of the test part.
    #[arg(long)]
    pub valid: bool,
    /// Refuse unless the checkpoint was trained with this configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Checkpoint file, or a run directory (its best checkpoint is used).
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Split file [default: the copy inside the run directory].
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Output CSV [default: embeddings.csv in the run directory].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Number of k-means clusters for the NMI diagnostic.
    #[arg(long, default_value_t = 2)]
    pub clusters: usize,
    /// k-means seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Parses the process arguments, runs the command and returns the exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match command {
        Command::Prepare(a) => cmd_prepare(&a, &mut out),
        Command::Train(a) => cmd_train(&a, &mut out).map(|_| ()),
        Command::Evaluate(a) => cmd_evaluate(&a, &mut out).map(|_| ()),
        Command::Sweep(a) => cmd_sweep(&a, &mut out).map(|_| ()),
        Command::Export(a) => cmd_export(&a, &mut out).map(|_| ()),
    }
}

fn out_err(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

fn base_config(data: &DataArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &data.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(d) = data.dataset {
        cfg.data.dataset = d;
    }
    if let Some(d) = &data.data_dir {
        cfg.data.dir = Some(d.clone());
    }
    Ok(cfg)
}

fn apply_hyper(cfg: &mut ExperimentConfig, h: &HyperArgs) {
    let t = &mut cfg.train;
    macro_rules! set {
        ($field:ident, $val:expr) => {
            if let Some(v) = $val.clone() {
                t.$field = v;
            }
        };
    }
    set!(model, h.model);
    set!(dim, h.dim);
    set!(epochs, h.epochs);
    set!(batch_size, h.batch);
    set!(tau, h.tau);
    set!(tau_r, h.tau_r);
    set!(learning_rate, h.lr);
    set!(eval_ks, h.ks);
    set!(drop_rate, h.drop_rate);
    set!(patience, h.patience);
    if let Some(s) = &h.split {
        cfg.data.split = Some(s.clone());
    }
    if let Some(o) = &h.out {
        cfg.run.out = o.clone();
    }
    if let Some(n) = &h.name {
        cfg.run.name = Some(n.clone());
    }
    cfg.run.dump_views |= h.dump_views;
}

/// The split named by the config, or a fresh in-memory split of the raw data.
pub fn load_prepared(data: &DataConfig) -> Result<Prepared> {
    match &data.split {
        Some(p) => Prepared::read(p),
        None => Prepared::from_dataset(&data.load_raw()?, data),
    }
}

pub fn train_data(p: &Prepared) -> Result<TrainData> {
    TrainData::new(&p.split, p.partition.clone(), p.n_users(), p.n_items())
}

/// One line per column of the dataset summary.
pub fn summary_table(name: &str, p: &Prepared) -> String {
    let n = p.split.len();
    let cells = (p.n_users() * p.n_items()) as f64;
    let sparsity = if cells > 0.0 { 100.0 * (1.0 - n as f64 / cells) } else { 0.0 };
    let mut s = format!(
        "{:<10} {:>7} {:>7} {:>13} {:>9}\n",
        "dataset", "users", "items", "interactions", "sparsity"
    );
    s += &format!(
        "{:<10} {:>7} {:>7} {:>13} {:>8.2}%\n",
        name,
        p.n_users(),
        p.n_items(),
        n,
        sparsity
    );
    s += &format!(
        "groups: {} / {} users; split train {} / valid {} / test {}\n",
        p.partition.group0().len(),
        p.partition.group1().len(),
        p.split.train.len(),
        p.split.valid.len(),
        p.split.test.len()
    );
    s
}

pub fn cmd_prepare(args: &PrepareArgs, out: &mut impl std::io::Write) -> Result<()> {
    let mut cfg = base_config(&args.data)?;
    if let Some(s) = args.seed {
        cfg.data.seed = s;
    }
    let ds = cfg.data.load_raw()?;
    let prepared = Prepared::from_dataset(&ds, &cfg.data)?;
    let dir = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("prepared").join(cfg.data.dataset.to_string()));
    prepared.write(&dir)?;
    write!(out, "{}", summary_table(&cfg.data.dataset.to_string(), &prepared)).map_err(out_err)?;
    writeln!(out, "wrote {}", dir.join(SPLIT_FILE).display()).map_err(out_err)?;
    Ok(())
}

fn run_name(cfg: &ExperimentConfig) -> String {
    cfg.run
        .name
        .clone()
        .unwrap_or_else(|| format!("{}-{}", cfg.train.model, &cfg.train.hash()[..12]))
}

/// Result of [`train_run`].
pub struct TrainedRun {
    pub dir: PathBuf,
    pub best: Checkpoint,
    pub report: MetricsReport,
}

/// Trains (or resumes) the run described by `cfg` on `prepared` inside
/// `run_root`, then writes the test report of the best checkpoint.
pub fn train_run(cfg: &ExperimentConfig, prepared: &Prepared, run_root: &Path) -> Result<TrainedRun> {
    cfg.train.validate()?;
    let data = train_data(prepared)?;
    let run = RunDir::create(run_root)?.with_view_dumps(cfg.run.dump_views);
    let trainer = match run.latest_epoch() {
        Some(latest) => {
            let latest = load_checkpoint(&run.checkpoint_path(latest))?;
            latest.verify_config(&cfg.train).map_err(|_| {
                Error::Config(format!(
                    "run directory {} holds a run with a different configuration; choose another --name",
                    run_root.display()
                ))
            })?;
            let best = run.best_path().map(|p| load_checkpoint(&p)).transpose()?;
            log::info!("resuming {} from epoch {}", run_root.display(), latest.epoch);
            Trainer::resume(latest, best, &data)?
        }
        None => {
            prepared.write(run_root)?;
            let cfg_path = run_root.join("config.toml");
            fs::write(&cfg_path, cfg.to_toml()).map_err(|e| Error::io(&cfg_path, e))?;
            Trainer::new(cfg.train.clone(), &data)?
        }
    };
    let outcome = match trainer.with_run_dir(run.clone())?.train() {
        Ok(o) => o,
        Err(e @ Error::Numeric(_)) => {
            let abort = run_root.join("abort.json");
            return Err(Error::Numeric(format!("{e}; diagnostics in {}", abort.display())));
        }
        Err(e) => return Err(e),
    };
    let h = final_embeddings(&outcome.best.params, &data.graph)?;
    let report = evaluate(&h, &data.graph, &data.test, &data.partition, &cfg.train.eval_ks)?;
    let mut doc = report.to_json_map("");
    doc.insert("epoch".into(), Value::from(outcome.best.epoch));
    run.write_json("report.json", &Value::Object(doc))?;
    Ok(TrainedRun {
        dir: run_root.to_path_buf(),
        best: outcome.best,
        report,
    })
}

pub fn cmd_train(args: &TrainArgs, out: &mut impl std::io::Write) -> Result<TrainedRun> {
    let mut cfg = base_config(&args.data)?;
    apply_hyper(&mut cfg, &args.hyper);
    let t = &mut cfg.train;
    if let Some(v) = args.alpha {
        t.alpha = v;
    }
    if let Some(v) = args.beta {
        t.beta = v;
    }
    if let Some(v) = args.layers {
        t.n_layers = v;
    }
    if let Some(v) = args.seed {
        t.seed = v;
    }
    cfg.train.validate()?;
    let prepared = load_prepared(&cfg.data)?;
    let root = cfg.run.out.join(run_name(&cfg));
    let done = train_run(&cfg, &prepared, &root)?;
    writeln!(out, "{}", done.report.to_json()).map_err(out_err)?;
    writeln!(out, "run directory: {}", done.dir.display()).map_err(out_err)?;
    Ok(done)
}

pub fn cmd_sweep(args: &SweepArgs, out: &mut impl std::io::Write) -> Result<Vec<SweepRow>> {
    let mut cfg = base_config(&args.data)?;
    apply_hyper(&mut cfg, &args.hyper);
    if let Some(v) = &args.alpha {
        cfg.sweep.alpha = v.clone();
    }
    if let Some(v) = &args.beta {
        cfg.sweep.beta = v.clone();
    }
    if let Some(v) = &args.layers {
        cfg.sweep.n_layers = v.clone();
    }
    if let Some(v) = &args.seed {
        cfg.sweep.seed = v.clone();
    }
    let prepared = load_prepared(&cfg.data)?;
    let root = cfg
        .run
        .out
        .join(cfg.run.name.clone().unwrap_or_else(|| format!("sweep-{}", cfg.train.model)));
    let rows = run_sweep(&cfg, &prepared, &root)?;
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    writeln!(
        out,
        "{} cells, {} failed; table at {}",
        rows.len(),
        failed,
        root.join(sweep::SWEEP_FILE).display()
    )
    .map_err(out_err)?;
    Ok(rows)
}

/// A checkpoint path plus the run directory it lives in.
fn resolve_checkpoint(path: &Path) -> Result<(Checkpoint, PathBuf)> {
    if path.is_dir() {
        let run = RunDir::create(path)?;
        let best = run
            .best_path()
            .ok_or_else(|| Error::Checkpoint(format!("{} has no best checkpoint", path.display())))?;
        Ok((load_checkpoint(&best)?, path.to_path_buf()))
    } else {
        let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Ok((load_checkpoint(path)?, dir))
    }
}

fn checkpoint_data(ckpt: &Checkpoint, run_dir: &Path, split: Option<&Path>) -> Result<TrainData> {
    let split = split.map(Path::to_path_buf).unwrap_or_else(|| run_dir.join(SPLIT_FILE));
    let data = train_data(&Prepared::read(&split)?)?;
    ckpt.verify_data(&data)?;
    Ok(data)
}

pub fn cmd_evaluate(args: &EvaluateArgs, out: &mut impl std::io::Write) -> Result<MetricsReport> {
    let (ckpt, dir) = resolve_checkpoint(&args.checkpoint)?;
    if let Some(p) = &args.config {
        ckpt.verify_config(&ExperimentConfig::load(p)?.train)?;
    }
    let data = checkpoint_data(&ckpt, &dir, args.split.as_deref())?;
    let ks = args.ks.clone().unwrap_or_else(|| ckpt.config.eval_ks.clone());
    let mut probe = TrainConfig {
        eval_ks: ks.clone(),
        ..TrainConfig::default()
    };
    probe.eval_ks.sort_unstable();
    probe.validate()?;
    let targets = if args.valid { &data.valid } else { &data.test };
    let h = final_embeddings(&ckpt.params, &data.graph)?;
    let report = evaluate(&h, &data.graph, targets, &data.partition, &probe.eval_ks)?;
    writeln!(out, "{}", report.to_json()).map_err(out_err)?;
    Ok(report)
}

pub fn cmd_export(args: &ExportArgs, out: &mut impl std::io::Write) -> Result<f64> {
    let (ckpt, dir) = resolve_checkpoint(&args.checkpoint)?;
    let data = checkpoint_data(&ckpt, &dir, args.split.as_deref())?;
    let h = final_embeddings(&ckpt.params, &data.graph)?;
    let path = args.out.clone().unwrap_or_else(|| dir.join("embeddings.csv"));
    export_embeddings(&h, &data.partition, &path)?;
    let nmi = embedding_nmi(user_rows(&h).view(), &data.partition, args.clusters, args.seed)?;
    writeln!(out, "wrote {}", path.display()).map_err(out_err)?;
    writeln!(out, "nmi {nmi:.6}").map_err(out_err)?;
    Ok(nmi)
}
