//! Unlearning proxy: a fresh model trained briefly on the retain set, and the
//! KL loss that distills its output distribution into the unlearned model.

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::model::{
    forward_probs, init_model, kl_divergence, train_logged, ArchitectureSpec, ClassifierState, TrainConfig, TrainReport,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyConfig {
    pub delta_epochs: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_lr() -> f64 {
    1e-2
}

fn default_batch() -> usize {
    128
}

impl Default for ProxyConfig {
    fn default() -> Self {
        Self {
            delta_epochs: 1,
            learning_rate: default_lr(),
            batch_size: default_batch(),
            seed: 0,
        }
    }
}

impl ProxyConfig {
    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.delta_epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            seed: self.seed,
        }
    }
}

pub fn train_proxy(arch: &ArchitectureSpec, retain: &LabeledDataset, cfg: &ProxyConfig) -> Result<ClassifierState> {
    train_proxy_logged(arch, retain, cfg).map(|(m, _)| m)
}

pub fn train_proxy_logged(
    arch: &ArchitectureSpec,
    retain: &LabeledDataset,
    cfg: &ProxyConfig,
) -> Result<(ClassifierState, TrainReport)> {
    if retain.is_empty() {
        return Err(Error::EmptyDataset("proxy needs a non-empty retain set".into()));
    }
    let fresh = init_model(arch, cfg.seed)?;
    train_logged(&fresh, retain, &cfg.train_config())
}

/// Mean over `batch` of `KL(teacher(x) || student(x))` in nats.
pub fn kl_loss(teacher: &ClassifierState, student: &ClassifierState, batch: &LabeledDataset) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset("KL over an empty batch".into()));
    }
    if teacher.arch().n_classes() != student.arch().n_classes() {
        return Err(Error::DimensionMismatch {
            expected: teacher.arch().n_classes(),
            found: student.arch().n_classes(),
        });
    }
    let p = forward_probs(teacher, batch)?;
    let q = forward_probs(student, batch)?;
    let total: f64 = p.iter().zip(&q).map(|(a, b)| kl_divergence(a, b)).sum();
    Ok(total / batch.len() as f64)
}
