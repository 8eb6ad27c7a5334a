use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::objectives::NceDenominator;

/// Which training procedure to run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Both view generators, contrastive and adversarial terms.
    #[default]
    Fairdgcl,
    /// Plain BPR on the interaction graph.
    Lightgcn,
    /// BPR on a graph with edges dropped uniformly at random each epoch.
    Randomdrop,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Fairdgcl => "fairdgcl",
            ModelKind::Lightgcn => "lightgcn",
            ModelKind::Randomdrop => "randomdrop",
        })
    }
}

/// Hyperparameters of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub learning_rate: f64,
    pub dim: usize,
    pub n_layers: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub alpha: f64,
    pub beta: f64,
    /// InfoNCE temperature.
    pub tau: f64,
    /// Relaxation temperature of the recognition view.
    pub tau_r: f64,
    pub seed: u64,
    pub eval_ks: Vec<usize>,
    /// L2 weight on the base embeddings of each batch.
    pub reg: f64,
    /// Epochs without a validation NDCG@10 improvement before stopping;
    /// zero disables early stopping.
    pub patience: usize,
    pub clip_norm: f64,
    pub drop_rate: f64,
    /// Maximum number of nodes in the contrastive batch.
    pub nce_batch: usize,
    pub nce_denominator: NceDenominator,
    pub scorer_hidden: usize,
    pub disc_hidden: usize,
    /// Hidden GCN layers of the VGAE before the mean / log-variance heads.
    pub vgae_layers: usize,
    /// Sampled non-edges per observed edge in the reconstruction loss.
    pub vgae_negatives: usize,
    /// Discriminator updates per generator update.
    pub disc_steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Fairdgcl,
            learning_rate: 1e-3,
            dim: 64,
            n_layers: 2,
            epochs: 200,
            batch_size: 2048,
            alpha: 0.1,
            beta: 0.01,
            tau: 0.2,
            tau_r: 0.2,
            seed: 2024,
            eval_ks: vec![10, 20, 30],
            reg: 1e-4,
            patience: 20,
            clip_norm: 5.0,
            drop_rate: 0.1,
            nce_batch: 1024,
            nce_denominator: NceDenominator::Full,
            scorer_hidden: 64,
            disc_hidden: 64,
            vgae_layers: 1,
            vgae_negatives: 1,
            disc_steps: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("tau", self.tau),
            ("tau_r", self.tau_r),
            ("clip_norm", self.clip_norm),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("reg", self.reg)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        let counts = [
            ("dim", self.dim),
            ("batch_size", self.batch_size),
            ("nce_batch", self.nce_batch),
            ("scorer_hidden", self.scorer_hidden),
            ("disc_hidden", self.disc_hidden),
            ("vgae_negatives", self.vgae_negatives),
            ("disc_steps", self.disc_steps),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.n_layers == 0 {
            return Err(Error::Config("n_layers must be at least 1".into()));
        }
        if self.nce_batch < 2 {
            return Err(Error::Config("nce_batch must be at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.drop_rate) {
            return Err(Error::Config(format!("drop_rate must lie in [0, 1), got {}", self.drop_rate)));
        }
        if self.eval_ks.is_empty() || self.eval_ks.contains(&0) {
            return Err(Error::Config(format!("eval_ks must be non-empty and positive, got {:?}", self.eval_ks)));
        }
        if self.eval_ks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!("eval_ks must be strictly ascending, got {:?}", self.eval_ks)));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex(&Sha256::digest(json.as_bytes()))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        let bad = [
            TrainConfig {
                learning_rate: 0.0,
                ..Default::default()
            },
            TrainConfig {
                eval_ks: vec![20, 10],
                ..Default::default()
            },
            TrainConfig {
                alpha: -1.0,
                ..Default::default()
            },
            TrainConfig {
                drop_rate: 1.0,
                ..Default::default()
            },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(Error::Config(_))));
        }
    }

    #[test]
    fn hash_tracks_content() {
        let a = TrainConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.alpha = 0.2;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn toml_round_trip() {
        let c: TrainConfig = toml::from_str("model = \"lightgcn\"\nalpha = 0.5\n").unwrap();
        assert_eq!(c.model, ModelKind::Lightgcn);
        assert_eq!(c.alpha, 0.5);
        assert_eq!(c.dim, 64);
        assert!(toml::from_str::<TrainConfig>("alpah = 1.0").is_err());
    }
}
