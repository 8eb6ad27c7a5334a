//! On-disk layout of one run: `metrics.jsonl`, `ckpt_<epoch>` files, a
//! `best` marker and optional debug dumps.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde_json::Value;

use super::checkpoint::{save_checkpoint, Checkpoint};
use super::EpochRecord;
use crate::dataset::InteractionGraph;
use crate::error::{Error, Result};
use crate::view_generative::{write_generative_dump, GenerativeSample};
use crate::view_recognition::{write_recognition_dump, RecognitionSample};

#[derive(Clone, Debug)]
pub struct RunDir {
    root: PathBuf,
    dump_views: bool,
}

impl RunDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(Self { root, dump_views: false })
    }

    /// Writes per-epoch view dumps under `dumps/`.
    pub fn with_view_dumps(mut self, on: bool) -> Self {
        self.dump_views = on;
        self
    }

    pub fn dumps_views(&self) -> bool {
        self.dump_views
    }

    pub fn path(&self) -> &Path {
        &self.root
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.root.join("metrics.jsonl")
    }

    pub fn checkpoint_path(&self, epoch: usize) -> PathBuf {
        self.root.join(format!("ckpt_{epoch}"))
    }

    fn dumps(&self) -> Result<PathBuf> {
        let d = self.root.join("dumps");
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        Ok(d)
    }

    /// Drops metric lines past `epoch` (all of them when `epoch` is 0).
    pub fn truncate_metrics(&self, epoch: usize) -> Result<()> {
        let path = self.metrics_path();
        if !path.exists() {
            return Ok(());
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let kept: String = text
            .lines()
            .filter(|line| {
                serde_json::from_str::<Value>(line)
                    .ok()
                    .and_then(|v| v.get("epoch").and_then(Value::as_u64))
                    .is_some_and(|e| e as usize <= epoch)
            })
            .map(|l| format!("{l}\n"))
            .collect();
        fs::write(&path, kept).map_err(|e| Error::io(&path, e))
    }

    pub fn append_metrics(&self, record: &EpochRecord) -> Result<()> {
        let path = self.metrics_path();
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        writeln!(f, "{}", record.to_json_line()).map_err(|e| Error::io(&path, e))
    }

    /// Epoch named by the `best` marker.
    pub fn best_epoch(&self) -> Option<usize> {
        let text = fs::read_to_string(self.root.join("best")).ok()?;
        text.trim().strip_prefix("ckpt_")?.parse().ok()
    }

    pub fn best_path(&self) -> Option<PathBuf> {
        self.best_epoch().map(|e| self.checkpoint_path(e))
    }

    /// Highest-numbered checkpoint present.
    pub fn latest_epoch(&self) -> Option<usize> {
        fs::read_dir(&self.root)
            .ok()?
            .filter_map(|e| e.ok())
            .filter_map(|e| e.file_name().to_str()?.strip_prefix("ckpt_")?.parse::<usize>().ok())
            .max()
    }

    /// Writes `ckpt_<epoch>`, moves the `best` marker when `is_best`, and
    /// deletes checkpoints that are neither best nor latest.
    pub fn save(&self, state: &Checkpoint, is_best: bool) -> Result<()> {
        save_checkpoint(state, &self.checkpoint_path(state.epoch))?;
        if is_best {
            let marker = self.root.join("best");
            fs::write(&marker, format!("ckpt_{}\n", state.epoch)).map_err(|e| Error::io(&marker, e))?;
        }
        let best = self.best_epoch();
        let entries = fs::read_dir(&self.root).map_err(|e| Error::io(&self.root, e))?;
        for entry in entries.filter_map(|e| e.ok()) {
            let name = entry.file_name();
            let Some(epoch) = name
                .to_str()
                .and_then(|n| n.strip_prefix("ckpt_"))
                .and_then(|n| n.parse::<usize>().ok())
            else {
                continue;
            };
            if epoch != state.epoch && Some(epoch) != best {
                fs::remove_file(entry.path()).map_err(|e| Error::io(entry.path(), e))?;
            }
        }
        Ok(())
    }

    pub fn write_json(&self, name: &str, value: &Value) -> Result<PathBuf> {
        let path = self.root.join(name);
        let text = serde_json::to_string_pretty(value).expect("json value");
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Diagnostic written when a loss becomes non-finite.
    pub fn write_abort(&self, epoch: usize, step: usize, err: &Error) -> Result<PathBuf> {
        let losses = match err {
            Error::Numeric(m) => serde_json::from_str::<Value>(m).unwrap_or(Value::String(m.clone())),
            other => Value::String(other.to_string()),
        };
        self.write_json(
            "abort.json",
            &serde_json::json!({ "epoch": epoch, "step": step, "losses": losses }),
        )
    }

    /// Kept edges of one random-drop epoch as `user,item` lines.
    pub fn write_dropped_graph(&self, epoch: usize, graph: &InteractionGraph) -> Result<()> {
        if !self.dump_views {
            return Ok(());
        }
        let path = self.dumps()?.join(format!("randomdrop_epoch_{epoch}.csv"));
        let mut out = String::from("user,item\n");
        for &(u, v) in graph.edges() {
            out.push_str(&format!("{u},{v}\n"));
        }
        fs::write(&path, out).map_err(|e| Error::io(&path, e))
    }

    pub fn write_view_dumps(&self, epoch: usize, g1: &RecognitionSample, g2: &GenerativeSample) -> Result<()> {
        if !self.dump_views {
            return Ok(());
        }
        let dir = self.dumps()?;
        write_recognition_dump(&dir.join(format!("epoch_{epoch}_g1.csv")), g1)?;
        write_generative_dump(&dir.join(format!("epoch_{epoch}_g2.csv")), g2)
    }
}
