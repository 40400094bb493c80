//! Gaussian obfuscation of the selected forget samples.
//!
//! `out = in + alpha * N` with one independent `N ~ Normal(noise_mean,
//! noise_std²)` per feature entry. The perturbation therefore has mean
//! `alpha * noise_mean` and variance `alpha² * noise_std²`. No clipping.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub alpha: f64,
    #[serde(default)]
    pub noise_mean: f64,
    #[serde(default = "one")]
    pub noise_std: f64,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            alpha: 3.0,
            noise_mean: 0.0,
            noise_std: 1.0,
            seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "alpha must be >= 0, got {}",
                self.alpha
            )));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "noise_std must be >= 0, got {}",
                self.noise_std
            )));
        }
        if !self.noise_mean.is_finite() {
            return Err(Error::InvalidArgument("noise_mean must be finite".into()));
        }
        Ok(())
    }
}

pub fn apply_noise(selected_forget: &LabeledDataset, cfg: &NoiseConfig) -> Result<LabeledDataset> {
    cfg.validate()?;
    if cfg.alpha == 0.0 {
        return Ok(selected_forget.clone());
    }
    let normal = Normal::new(cfg.noise_mean, cfg.noise_std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = rng::stream(cfg.seed);
    let features = selected_forget
        .features()
        .iter()
        .map(|&x| x + cfg.alpha * normal.sample(&mut rng))
        .collect();
    selected_forget.with_features(features)
}
