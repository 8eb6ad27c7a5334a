//! Fairness-aware graph contrastive recommendation with a learnable
//! recognition view, a generative (VGAE) view, and an adversarial
//! sensitive-attribute discriminator over a LightGCN backbone.

pub mod autograd;
pub mod cli;
pub mod dataset;
pub mod discriminator;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod nn;
pub mod objectives;
pub mod synthetic;
pub mod trainer;
pub mod view_generative;
pub mod view_recognition;

pub use error::{Error, Result};
