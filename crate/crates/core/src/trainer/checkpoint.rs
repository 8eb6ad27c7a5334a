//! Binary checkpoint: magic, length-prefixed JSON header, little-endian
//! `f64` tensor data and a trailing SHA-256 of everything before it.

use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::TrainConfig;
use super::{EarlyStop, ModelParams, Optimizers, TrainData};
use crate::error::{Error, Result};
use crate::nn::Adam;

const MAGIC: &[u8; 8] = b"FDGCKPT\x01";

/// Complete training state: parameters of every network, optimizer moments,
/// random stream and early-stopping bookkeeping.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub data_hash: String,
    pub n_users: usize,
    pub n_items: usize,
    /// Completed epochs.
    pub epoch: usize,
    pub params: ModelParams,
    pub optim: Optimizers,
    pub rng: ChaCha8Rng,
    pub early: EarlyStop,
}

#[derive(Serialize, Deserialize)]
struct AdamHeader {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    clip_norm: Option<f64>,
    step: u64,
}

impl From<&Adam> for AdamHeader {
    fn from(a: &Adam) -> Self {
        Self {
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            clip_norm: a.clip_norm,
            step: a.step,
        }
    }
}

impl AdamHeader {
    fn apply(&self, a: &mut Adam) {
        a.lr = self.lr;
        a.beta1 = self.beta1;
        a.beta2 = self.beta2;
        a.eps = self.eps;
        a.clip_norm = self.clip_norm;
        a.step = self.step;
    }
}

#[derive(Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    shape: [usize; 2],
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: TrainConfig,
    config_hash: String,
    data_hash: String,
    n_users: usize,
    n_items: usize,
    epoch: usize,
    rng: ChaCha8Rng,
    early: EarlyStop,
    adam: [AdamHeader; 3],
    tensors: Vec<TensorHeader>,
}

impl Checkpoint {
    /// Freshly initialised state for `config` on `data`.
    pub fn init(config: TrainConfig, data: &TrainData) -> Self {
        let params = ModelParams::init(&config, data.n_users(), data.n_items());
        let optim = Optimizers::new(&config, &params);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(2);
        Self {
            data_hash: data.hash().to_string(),
            n_users: data.n_users(),
            n_items: data.n_items(),
            epoch: 0,
            params,
            optim,
            rng,
            early: EarlyStop::default(),
            config,
        }
    }

    pub fn config_hash(&self) -> String {
        self.config.hash()
    }

    /// Refuses a state trained under a different configuration.
    pub fn verify_config(&self, config: &TrainConfig) -> Result<()> {
        if self.config.hash() != config.hash() {
            return Err(Error::Checkpoint(format!(
                "configuration hash mismatch: checkpoint {}, current {}",
                &self.config.hash()[..12],
                &config.hash()[..12]
            )));
        }
        Ok(())
    }

    /// Refuses a state trained on a different split or attribute file.
    pub fn verify_data(&self, data: &TrainData) -> Result<()> {
        if self.data_hash != data.hash() {
            return Err(Error::Checkpoint(format!(
                "data hash mismatch: checkpoint {}, current {}",
                &self.data_hash[..12.min(self.data_hash.len())],
                &data.hash()[..12]
            )));
        }
        Ok(())
    }

    fn optim_tensors(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out = Vec::new();
        for (name, a) in [("f", &self.optim.f), ("g", &self.optim.g), ("d", &self.optim.d)] {
            for (i, m) in a.m.iter().enumerate() {
                out.push((format!("adam.{name}.m.{i}"), m));
            }
            for (i, v) in a.v.iter().enumerate() {
                out.push((format!("adam.{name}.v.{i}"), v));
            }
        }
        out
    }

    fn all_tensors(&self) -> Vec<(String, &Array2<f64>)> {
        let mut t = self.params.named_tensors();
        t.extend(self.optim_tensors());
        t
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let tensors = self.all_tensors();
        let header = Header {
            config: self.config.clone(),
            config_hash: self.config.hash(),
            data_hash: self.data_hash.clone(),
            n_users: self.n_users,
            n_items: self.n_items,
            epoch: self.epoch,
            rng: self.rng.clone(),
            early: self.early,
            adam: [(&self.optim.f).into(), (&self.optim.g).into(), (&self.optim.d).into()],
            tensors: tensors
                .iter()
                .map(|(name, t)| TensorHeader {
                    name: name.clone(),
                    shape: [t.nrows(), t.ncols()],
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let n_values: usize = tensors.iter().map(|(_, t)| t.len()).sum();
        let mut out = Vec::with_capacity(MAGIC.len() + 8 + json.len() + 8 * n_values + 32);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &tensors {
            for x in t.iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Checkpoint(msg.to_string());
        if bytes.len() < MAGIC.len() + 8 + 32 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(bad("checksum mismatch; the file is corrupted"));
        }
        let len = u64::from_le_bytes(body[8..16].try_into().expect("8 bytes")) as usize;
        let json = body.get(16..16 + len).ok_or_else(|| bad("truncated header"))?;
        let header: Header =
            serde_json::from_slice(json).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        if header.config_hash != header.config.hash() {
            return Err(bad("stored configuration does not match its hash"));
        }
        let params = ModelParams::init(&header.config, header.n_users, header.n_items);
        let optim = Optimizers::new(&header.config, &params);
        let mut state = Checkpoint {
            params,
            optim,
            config: header.config,
            data_hash: header.data_hash,
            n_users: header.n_users,
            n_items: header.n_items,
            epoch: header.epoch,
            rng: header.rng,
            early: header.early,
        };
        let mut data = &body[16 + len..];
        {
            let mut targets: Vec<&mut Array2<f64>> = state.params.tensors_mut();
            for a in [&mut state.optim.f, &mut state.optim.g, &mut state.optim.d] {
                targets.extend(a.m.iter_mut());
                targets.extend(a.v.iter_mut());
            }
            if targets.len() != header.tensors.len() {
                return Err(bad("tensor count does not match the configuration"));
            }
            for (t, h) in targets.into_iter().zip(&header.tensors) {
                if t.dim() != (h.shape[0], h.shape[1]) {
                    return Err(Error::Checkpoint(format!(
                        "tensor {} has shape {:?}, expected {:?}",
                        h.name,
                        h.shape,
                        t.dim()
                    )));
                }
                let n = t.len() * 8;
                if data.len() < n {
                    return Err(bad("truncated tensor data"));
                }
                for (x, chunk) in t.iter_mut().zip(data[..n].chunks_exact(8)) {
                    *x = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
                }
                data = &data[n..];
            }
        }
        if !data.is_empty() {
            return Err(bad("trailing bytes after tensor data"));
        }
        for (h, a) in header.adam.iter().zip([&mut state.optim.f, &mut state.optim.g, &mut state.optim.d]) {
            h.apply(a);
        }
        Ok(state)
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, ckpt.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}
