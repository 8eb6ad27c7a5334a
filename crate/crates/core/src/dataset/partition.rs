use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-user binary sensitive attribute and the two groups it induces.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensitivePartition {
    labels: Vec<u8>,
    group0: Vec<usize>,
    group1: Vec<usize>,
}

impl SensitivePartition {
    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn label(&self, user: usize) -> u8 {
        self.labels[user]
    }

    pub fn group0(&self) -> &[usize] {
        &self.group0
    }

    pub fn group1(&self) -> &[usize] {
        &self.group1
    }

    pub fn n_users(&self) -> usize {
        self.labels.len()
    }

    /// The same users with the attribute bit flipped.
    pub fn swapped(&self) -> Self {
        Self {
            labels: self.labels.iter().map(|&s| 1 - s).collect(),
            group0: self.group1.clone(),
            group1: self.group0.clone(),
        }
    }
}

/// Splits users by their attribute bit. Both groups must be non-empty.
pub fn partition_users(labels: &[u8]) -> Result<SensitivePartition> {
    let mut group0 = Vec::new();
    let mut group1 = Vec::new();
    for (u, &s) in labels.iter().enumerate() {
        match s {
            0 => group0.push(u),
            1 => group1.push(u),
            other => {
                return Err(Error::Data(format!(
                    "user {u} has attribute label {other}; expected 0 or 1"
                )))
            }
        }
    }
    if group0.is_empty() || group1.is_empty() {
        return Err(Error::Data(format!(
            "sensitive partition has an empty group ({} users with s=0, {} with s=1); \
             the fairness gap is undefined",
            group0.len(),
            group1.len()
        )));
    }
    Ok(SensitivePartition {
        labels: labels.to_vec(),
        group0,
        group1,
    })
}
