use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loader::InteractionRecord;
use crate::error::{Error, Result};

/// Which part of the split an interaction belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Part {
    Train,
    Valid,
    Test,
}

impl fmt::Display for Part {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Part::Train => "train",
            Part::Valid => "valid",
            Part::Test => "test",
        })
    }
}

impl FromStr for Part {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "train" => Ok(Part::Train),
            "valid" => Ok(Part::Valid),
            "test" => Ok(Part::Test),
            other => Err(format!("unknown split part {other:?}")),
        }
    }
}

/// Disjoint train/validation/test partition of the interaction set.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DataSplit {
    pub train: Vec<(usize, usize)>,
    pub valid: Vec<(usize, usize)>,
    pub test: Vec<(usize, usize)>,
    pub seed: u64,
}

impl DataSplit {
    pub fn len(&self) -> usize {
        self.train.len() + self.valid.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn part(&self, part: Part) -> &[(usize, usize)] {
        match part {
            Part::Train => &self.train,
            Part::Valid => &self.valid,
            Part::Test => &self.test,
        }
    }

    /// Users that have no training interaction.
    pub fn users_without_train(&self, n_users: usize) -> Vec<usize> {
        let mut has = vec![false; n_users];
        for &(u, _) in &self.train {
            has[u] = true;
        }
        (0..n_users).filter(|&u| !has[u]).collect()
    }

    /// Serializes as `user<TAB>item<TAB>{train|valid|test}` lines.
    pub fn to_tsv(&self) -> String {
        let mut out = String::with_capacity(self.len() * 16);
        for part in [Part::Train, Part::Valid, Part::Test] {
            for &(u, v) in self.part(part) {
                out.push_str(&format!("{u}\t{v}\t{part}\n"));
            }
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path, seed: u64) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, seed).map_err(|(line, msg)| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        })
    }

    fn parse(text: &str, seed: u64) -> std::result::Result<Self, (usize, String)> {
        let mut split = DataSplit {
            train: Vec::new(),
            valid: Vec::new(),
            test: Vec::new(),
            seed,
        };
        for (i, line) in text.lines().enumerate() {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 3 {
                return Err((i + 1, "expected user<TAB>item<TAB>part".into()));
            }
            let u = f[0].parse().map_err(|_| (i + 1, format!("bad user {:?}", f[0])))?;
            let v = f[1].parse().map_err(|_| (i + 1, format!("bad item {:?}", f[1])))?;
            let part: Part = f[2].parse().map_err(|e| (i + 1, e))?;
            match part {
                Part::Train => split.train.push((u, v)),
                Part::Valid => split.valid.push((u, v)),
                Part::Test => split.test.push((u, v)),
            }
        }
        Ok(split)
    }
}

/// Random global split of interactions into train/valid/test.
///
/// Part sizes are `round(ratio · n)` for train and validation; test takes the
/// remainder. Each part is returned sorted by (user, item).
pub fn split_interactions(
    records: &[InteractionRecord],
    ratios: (f64, f64, f64),
    seed: u64,
) -> Result<DataSplit> {
    let (rt, rv, rs) = ratios;
    if [rt, rv, rs].iter().any(|r| !(0.0..=1.0).contains(r)) || ((rt + rv + rs) - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split ratios must be in [0,1] and sum to 1, got ({rt}, {rv}, {rs})"
        )));
    }
    if records.len() < 3 {
        return Err(Error::Data(format!(
            "need at least 3 interactions to split, got {}",
            records.len()
        )));
    }
    let n = records.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let n_train = ((rt * n as f64).round() as usize).min(n);
    let n_valid = ((rv * n as f64).round() as usize).min(n - n_train);
    let pick = |range: std::ops::Range<usize>| {
        let mut v: Vec<(usize, usize)> = order[range]
            .iter()
            .map(|&i| (records[i].user_id, records[i].item_id))
            .collect();
        v.sort_unstable();
        v
    };
    let split = DataSplit {
        train: pick(0..n_train),
        valid: pick(n_train..n_train + n_valid),
        test: pick(n_train + n_valid..n),
        seed,
    };

    let n_users = records.iter().map(|r| r.user_id + 1).max().unwrap_or(0);
    let orphans = split.users_without_train(n_users).len();
    if orphans > 0 {
        log::warn!("{orphans} users have no training interactions after the split; they are excluded from evaluation");
    }
    Ok(split)
}
