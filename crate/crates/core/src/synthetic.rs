//! Planted-bias toy data: two equal user groups, each drawing its
//! interactions from its own half of the catalogue, with a small crossover
//! rate into the other half.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{partition_users, split_interactions, Dataset, InteractionRecord};
use crate::error::{Error, Result};
use crate::evaluation::{embedding_nmi, user_rows};
use crate::trainer::{final_embeddings, train, ModelKind, TrainConfig, TrainData};

#[derive(Clone, Debug, PartialEq)]
pub struct PlantedBias {
    pub n_users: usize,
    pub n_items: usize,
    pub per_user: usize,
    /// Probability that an interaction is drawn from the other group's half.
    pub crossover: f64,
}

impl Default for PlantedBias {
    fn default() -> Self {
        Self {
            n_users: 200,
            n_items: 100,
            per_user: 20,
            crossover: 0.1,
        }
    }
}

impl PlantedBias {
    /// Users `0..n/2` are group 0 and prefer items `0..m/2`; the rest are
    /// group 1 and prefer the upper half.
    pub fn generate(&self, seed: u64) -> Result<Dataset> {
        let half_u = self.n_users / 2;
        let half_i = self.n_items / 2;
        if half_u == 0 || half_i == 0 || !self.n_users.is_multiple_of(2) || !self.n_items.is_multiple_of(2) {
            return Err(Error::Config("planted bias needs an even, nonzero number of users and items".into()));
        }
        if !(0.0..=1.0).contains(&self.crossover) {
            return Err(Error::Config(format!("crossover must be in [0,1], got {}", self.crossover)));
        }
        let n_cross = (self.per_user as f64 * self.crossover).round() as usize;
        let n_own = self.per_user - n_cross;
        if n_own > half_i || n_cross > half_i {
            return Err(Error::Config(format!(
                "per_user {} does not fit into item halves of {half_i}",
                self.per_user
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut records = Vec::with_capacity(self.n_users * self.per_user);
        let mut labels = Vec::with_capacity(self.n_users);
        for u in 0..self.n_users {
            let group = u8::from(u >= half_u);
            labels.push(group);
            let (own, other) = if group == 0 { (0, half_i) } else { (half_i, 0) };
            let mut items: Vec<usize> = sample(&mut rng, half_i, n_own).into_iter().map(|i| own + i).collect();
            items.extend(sample(&mut rng, half_i, n_cross).into_iter().map(|i| other + i));
            items.sort_unstable();
            for item in items {
                records.push(InteractionRecord {
                    user_id: u,
                    item_id: item,
                    rating: None,
                    timestamp: Some(rng.gen_range(0..1_000_000)),
                });
            }
        }
        Ok(Dataset {
            records,
            partition: partition_users(&labels)?,
            user_ids: (0..self.n_users).map(|u| format!("u{u}")).collect(),
            item_ids: (0..self.n_items).map(|i| format!("i{i}")).collect(),
        })
    }
}

/// Hyperparameters of the planted-bias experiment. The adversarial weight is
/// far above the real-data grid: on a 200-user graph the group signal is the
/// whole structure, and small weights leave the discriminator at 1.0.
pub fn oracle_config(model: ModelKind, seed: u64) -> TrainConfig {
    TrainConfig {
        model,
        dim: 32,
        epochs: 50,
        batch_size: 64,
        learning_rate: 2e-2,
        beta: 30.0,
        disc_steps: 2,
        nce_batch: 256,
        scorer_hidden: 32,
        disc_hidden: 32,
        patience: 0,
        seed,
        ..TrainConfig::default()
    }
}

/// Outcome of one model on one planted-bias seed.
#[derive(Clone, Debug)]
pub struct OracleRun {
    pub model: ModelKind,
    /// Discriminator accuracy on the fused user embeddings after each epoch.
    pub disc_acc: Vec<f64>,
    /// NMI between 2-means clusters of the final user embeddings and the groups.
    pub nmi: f64,
}

impl OracleRun {
    pub fn first_acc(&self) -> f64 {
        self.disc_acc.first().copied().unwrap_or(f64::NAN)
    }

    pub fn last_acc(&self) -> f64 {
        self.disc_acc.last().copied().unwrap_or(f64::NAN)
    }
}

/// Trains `model` on the default planted-bias graph generated with `seed`.
pub fn run_oracle(model: ModelKind, seed: u64) -> Result<OracleRun> {
    let ds = PlantedBias::default().generate(seed)?;
    let split = split_interactions(&ds.records, (0.8, 0.1, 0.1), seed)?;
    let data = TrainData::new(&split, ds.partition.clone(), ds.n_users(), ds.n_items())?;
    let out = train(oracle_config(model, seed), &data)?;
    let h = final_embeddings(&out.last.params, &data.graph)?;
    Ok(OracleRun {
        model,
        disc_acc: out.history.iter().map(|r| r.disc_acc).collect(),
        nmi: embedding_nmi(user_rows(&h).view(), &data.partition, 2, 0)?,
    })
}

/// Writes `interactions.tsv` (`user<TAB>item<TAB>rating<TAB>timestamp`) and
/// `attributes.tsv` (`user<TAB>bit`) into `dir`, readable by the generic
/// loader with the mapping `"0" -> 0`, `"1" -> 1`.
pub fn write_tsv(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut inter = String::new();
    for r in &ds.records {
        let _ = writeln!(
            inter,
            "{}\t{}\t{}\t{}",
            ds.user_ids[r.user_id],
            ds.item_ids[r.item_id],
            r.rating.unwrap_or(1.0),
            r.timestamp.unwrap_or(0)
        );
    }
    let mut attrs = String::new();
    for (u, s) in ds.partition.labels().iter().enumerate() {
        let _ = writeln!(attrs, "{}\t{s}", ds.user_ids[u]);
    }
    for (name, body) in [("interactions.tsv", inter), ("attributes.tsv", attrs)] {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn groups_prefer_their_half() {
        let spec = PlantedBias::default();
        let ds = spec.generate(1).unwrap();
        assert_eq!(ds.records.len(), 200 * 20);
        assert_eq!(ds.partition.group0().len(), 100);
        let cross = ds
            .records
            .iter()
            .filter(|r| (r.user_id < 100) != (r.item_id < 50))
            .count();
        assert_eq!(cross, 200 * 2);
    }

    #[test]
    fn deterministic_and_unique() {
        let spec = PlantedBias::default();
        let a = spec.generate(3).unwrap();
        assert_eq!(a.records, spec.generate(3).unwrap().records);
        let mut pairs: Vec<_> = a.records.iter().map(|r| (r.user_id, r.item_id)).collect();
        pairs.dedup();
        assert_eq!(pairs.len(), a.records.len());
    }
}
