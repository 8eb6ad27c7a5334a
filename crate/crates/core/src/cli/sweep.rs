//! Grid sweep over (alpha, beta, layers, seed) with a resumable CSV table.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::config::{ExperimentConfig, Prepared};
use super::train_run;
use crate::error::{Error, Result};
use crate::trainer::TrainConfig;

pub const SWEEP_FILE: &str = "sweep.csv";
const METRICS: [&str; 4] = ["recall", "ndcg", "phi_r", "phi_n"];

/// One configuration of the grid and its test metrics, or the error that
/// stopped it.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub config_hash: String,
    pub alpha: f64,
    pub beta: f64,
    pub n_layers: usize,
    pub seed: u64,
    pub best_epoch: Option<usize>,
    /// `(column, value)` in header order, e.g. `("recall@10", 0.21)`.
    pub metrics: Vec<(String, f64)>,
    pub error: Option<String>,
}

impl SweepRow {
    pub fn metric(&self, key: &str) -> Option<f64> {
        self.metrics.iter().find(|(k, _)| k == key).map(|&(_, v)| v)
    }

    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

fn header(ks: &[usize]) -> Vec<String> {
    let mut h: Vec<String> = ["config_hash", "model", "alpha", "beta", "n_layers", "seed", "status", "best_epoch"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for &k in ks {
        h.extend(METRICS.iter().map(|m| format!("{m}@{k}")));
    }
    h.push("error".into());
    h
}

fn clean(msg: &str) -> String {
    msg.replace([',', '\n', '\r'], " ")
}

fn to_line(row: &SweepRow, cfg: &TrainConfig) -> String {
    let mut f = vec![
        row.config_hash.clone(),
        cfg.model.to_string(),
        row.alpha.to_string(),
        row.beta.to_string(),
        row.n_layers.to_string(),
        row.seed.to_string(),
        if row.is_ok() { "ok" } else { "failed" }.to_string(),
        row.best_epoch.map(|e| e.to_string()).unwrap_or_default(),
    ];
    for &k in &cfg.eval_ks {
        for m in METRICS {
            let key = format!("{m}@{k}");
            f.push(row.metric(&key).map(|v| v.to_string()).unwrap_or_default());
        }
    }
    f.push(row.error.as_deref().map(clean).unwrap_or_default());
    f.join(",")
}

fn parse_line(line: &str, header: &[String]) -> Option<SweepRow> {
    let f: Vec<&str> = line.split(',').collect();
    if f.len() != header.len() {
        return None;
    }
    let mut metrics = Vec::new();
    for (name, value) in header[8..header.len() - 1].iter().zip(&f[8..f.len() - 1]) {
        if let Ok(v) = value.parse() {
            metrics.push((name.clone(), v));
        }
    }
    Some(SweepRow {
        config_hash: f[0].to_string(),
        alpha: f[2].parse().ok()?,
        beta: f[3].parse().ok()?,
        n_layers: f[4].parse().ok()?,
        seed: f[5].parse().ok()?,
        best_epoch: f[7].parse().ok(),
        metrics,
        error: (f[6] != "ok").then(|| f[f.len() - 1].to_string()),
    })
}

/// The grid cells in row order: alpha outermost, seed innermost.
pub fn grid_configs(cfg: &ExperimentConfig) -> Vec<TrainConfig> {
    let t = &cfg.train;
    let or = |v: &Vec<f64>, d: f64| if v.is_empty() { vec![d] } else { v.clone() };
    let alphas = or(&cfg.sweep.alpha, t.alpha);
    let betas = or(&cfg.sweep.beta, t.beta);
    let layers = if cfg.sweep.n_layers.is_empty() { vec![t.n_layers] } else { cfg.sweep.n_layers.clone() };
    let seeds = if cfg.sweep.seed.is_empty() { vec![t.seed] } else { cfg.sweep.seed.clone() };
    let mut out = Vec::new();
    for &alpha in &alphas {
        for &beta in &betas {
            for &n_layers in &layers {
                for &seed in &seeds {
                    out.push(TrainConfig {
                        alpha,
                        beta,
                        n_layers,
                        seed,
                        ..t.clone()
                    });
                }
            }
        }
    }
    out
}

fn write_table(path: &Path, ks: &[usize], lines: &[String]) -> Result<()> {
    let mut text = header(ks).join(",");
    text.push('\n');
    for l in lines {
        text.push_str(l);
        text.push('\n');
    }
    let tmp = path.with_extension("csv.tmp");
    fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Runs every grid cell not already marked `ok` in `root/sweep.csv`, each in
/// its own run directory under `root/cells/`, and rewrites the table after
/// every cell. Failed cells are recorded and the sweep moves on.
pub fn run_sweep(cfg: &ExperimentConfig, prepared: &Prepared, root: &Path) -> Result<Vec<SweepRow>> {
    cfg.train.validate()?;
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let table = root.join(SWEEP_FILE);
    let head = header(&cfg.train.eval_ks);
    let mut done: HashMap<String, SweepRow> = HashMap::new();
    if let Ok(text) = fs::read_to_string(&table) {
        let mut lines = text.lines();
        if lines.next().map(|h| h == head.join(",")).unwrap_or(false) {
            for row in lines.filter_map(|l| parse_line(l, &head)) {
                if row.is_ok() {
                    done.insert(row.config_hash.clone(), row);
                }
            }
        } else {
            log::warn!("{} has a different header; starting the table afresh", table.display());
        }
    }

    let cells = grid_configs(cfg);
    let mut rows: Vec<(SweepRow, TrainConfig)> = Vec::with_capacity(cells.len());
    for (i, train) in cells.into_iter().enumerate() {
        let hash = train.hash();
        let row = match done.remove(&hash) {
            Some(r) => r,
            None => {
                log::info!("sweep cell {}: alpha {} beta {} layers {} seed {}", i + 1, train.alpha, train.beta, train.n_layers, train.seed);
                let cell = ExperimentConfig {
                    train: train.clone(),
                    ..cfg.clone()
                };
                let mut row = SweepRow {
                    config_hash: hash.clone(),
                    alpha: train.alpha,
                    beta: train.beta,
                    n_layers: train.n_layers,
                    seed: train.seed,
                    best_epoch: None,
                    metrics: Vec::new(),
                    error: None,
                };
                match train_run(&cell, prepared, &root.join("cells").join(&hash[..16])) {
                    Ok(run) => {
                        row.best_epoch = Some(run.best.epoch);
                        for c in &run.report.cutoffs {
                            for (m, v) in METRICS.iter().zip([c.recall, c.ndcg, c.phi_r, c.phi_n]) {
                                row.metrics.push((format!("{m}@{}", c.k), v));
                            }
                        }
                    }
                    Err(e) => {
                        log::warn!("sweep cell {} failed: {e}", i + 1);
                        row.error = Some(e.to_string());
                    }
                }
                row
            }
        };
        rows.push((row, train));
        let lines: Vec<String> = rows.iter().map(|(r, t)| to_line(r, t)).collect();
        write_table(&table, &cfg.train.eval_ks, &lines)?;
    }
    Ok(rows.into_iter().map(|(r, _)| r).collect())
}
