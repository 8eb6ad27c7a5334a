//! Experiment configuration file and the prepared-data directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{
    load_generic_tsv, load_movielens_100k, read_attributes, split_interactions, write_attributes, write_id_map,
    AttributeMapping, ColumnMap, DataSplit, Dataset, SensitivePartition,
};
use crate::error::{Error, Result};
use crate::trainer::TrainConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
pub enum DatasetKind {
    #[default]
    #[serde(rename = "ml-100k")]
    #[value(name = "ml-100k")]
    Ml100k,
    #[serde(rename = "generic")]
    Generic,
}

impl std::fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DatasetKind::Ml100k => "ml-100k",
            DatasetKind::Generic => "generic",
        })
    }
}

/// Files of a generic dataset, relative to the data directory unless absolute.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenericFiles {
    pub interactions: PathBuf,
    pub attributes: PathBuf,
    pub columns: ColumnMap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub dataset: DatasetKind,
    /// Raw data directory; defaults to `$FAIRDGCL_DATA/<dataset>`.
    pub dir: Option<PathBuf>,
    /// A prepared `split.tsv`; when absent the split is built in memory.
    pub split: Option<PathBuf>,
    /// Seed of the train/valid/test split.
    pub seed: u64,
    pub ratios: [f64; 3],
    pub mapping: AttributeMapping,
    pub generic: Option<GenericFiles>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetKind::Ml100k,
            dir: None,
            split: None,
            seed: 2024,
            ratios: [0.8, 0.1, 0.1],
            mapping: AttributeMapping::default(),
            generic: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub name: Option<String>,
    pub out: PathBuf,
    pub dump_views: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            name: None,
            out: PathBuf::from("runs"),
            dump_views: false,
        }
    }
}

/// Grid of the sweep command; empty axes fall back to the train section.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub n_layers: Vec<usize>,
    pub seed: Vec<u64>,
}

/// Whole experiment: data source, hyperparameters, run location and grid.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub train: TrainConfig,
    pub run: RunConfig,
    pub sweep: SweepGrid,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

impl DataConfig {
    pub fn data_dir(&self) -> PathBuf {
        self.dir
            .clone()
            .unwrap_or_else(|| crate::dataset::default_data_root().join(self.dataset.to_string()))
    }

    /// Reads the raw dataset named by this section.
    pub fn load_raw(&self) -> Result<Dataset> {
        let dir = self.data_dir();
        if !dir.is_dir() {
            return Err(Error::Data(format!("data directory {} does not exist", dir.display())));
        }
        match self.dataset {
            DatasetKind::Ml100k => load_movielens_100k(&dir, &self.mapping),
            DatasetKind::Generic => {
                let g = self
                    .generic
                    .as_ref()
                    .ok_or_else(|| Error::Config("dataset `generic` needs a [data.generic] section".into()))?;
                let mut columns = g.columns.clone();
                columns.mapping = self.mapping.clone();
                load_generic_tsv(&dir.join(&g.interactions), &dir.join(&g.attributes), &columns)
            }
        }
    }
}

/// A split with its attribute partition and id maps, as written by the
/// prepare command.
#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    pub split: DataSplit,
    pub partition: SensitivePartition,
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
}

pub const SPLIT_FILE: &str = "split.tsv";
pub const ATTRIBUTE_FILE: &str = "attributes.tsv";
pub const USER_MAP_FILE: &str = "user_ids.tsv";
pub const ITEM_MAP_FILE: &str = "item_ids.tsv";

impl Prepared {
    pub fn from_dataset(ds: &Dataset, data: &DataConfig) -> Result<Self> {
        let [a, b, c] = data.ratios;
        Ok(Self {
            split: split_interactions(&ds.records, (a, b, c), data.seed)?,
            partition: ds.partition.clone(),
            user_ids: ds.user_ids.clone(),
            item_ids: ds.item_ids.clone(),
        })
    }

    pub fn n_users(&self) -> usize {
        self.user_ids.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_ids.len()
    }

    /// Writes the split, attributes and id maps into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.split.write(&dir.join(SPLIT_FILE))?;
        write_attributes(&dir.join(ATTRIBUTE_FILE), &self.partition)?;
        write_id_map(&dir.join(USER_MAP_FILE), &self.user_ids)?;
        write_id_map(&dir.join(ITEM_MAP_FILE), &self.item_ids)
    }

    /// Reads `split_path` and the files written next to it.
    pub fn read(split_path: &Path) -> Result<Self> {
        if !split_path.is_file() {
            return Err(Error::Data(format!("split file {} does not exist", split_path.display())));
        }
        let dir = split_path.parent().unwrap_or(Path::new("."));
        let partition = read_attributes(&dir.join(ATTRIBUTE_FILE))?;
        let user_ids = read_id_map(&dir.join(USER_MAP_FILE))?;
        let item_ids = read_id_map(&dir.join(ITEM_MAP_FILE))?;
        let split = DataSplit::read(split_path, 0)?;
        if user_ids.len() != partition.n_users() {
            return Err(Error::Data(format!(
                "{} lists {} users but {} has {}",
                USER_MAP_FILE,
                user_ids.len(),
                ATTRIBUTE_FILE,
                partition.n_users()
            )));
        }
        Ok(Self {
            split,
            partition,
            user_ids,
            item_ids,
        })
    }
}

fn read_id_map(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut ids = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let bad = || Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: "expected dense_id<TAB>raw_id with ascending dense ids".into(),
        };
        let (dense, raw) = line.split_once('\t').ok_or_else(bad)?;
        if dense.parse::<usize>().ok() != Some(ids.len()) {
            return Err(bad());
        }
        ids.push(raw.to_string());
    }
    Ok(ids)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_through_toml() {
        let mut cfg = ExperimentConfig::default();
        cfg.train.alpha = 0.5;
        cfg.sweep.alpha = vec![1e-4, 1e-2];
        cfg.data.dataset = DatasetKind::Generic;
        let back: ExperimentConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_config_uses_defaults() {
        let cfg: ExperimentConfig = toml::from_str("[train]\nalpha = 1.0\nmodel = \"lightgcn\"\n").unwrap();
        assert_eq!(cfg.train.alpha, 1.0);
        assert_eq!(cfg.train.dim, 64);
        assert_eq!(cfg.data.ratios, [0.8, 0.1, 0.1]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<ExperimentConfig>("[train]\nalhpa = 1.0\n").is_err());
    }

    #[test]
    fn generic_section_parses() {
        let text = r#"
[data]
dataset = "generic"
[data.generic]
interactions = "ratings.tsv"
attributes = "users.tsv"
[data.generic.columns]
user = 0
item = "item_id"
attr_user = 0
attr_value = 1
"#;
        let cfg: ExperimentConfig = toml::from_str(text).unwrap();
        let g = cfg.data.generic.unwrap();
        assert_eq!(g.columns.item, crate::dataset::ColumnRef::Name("item_id".into()));
        assert_eq!(g.columns.user, crate::dataset::ColumnRef::Index(0));
    }
}
