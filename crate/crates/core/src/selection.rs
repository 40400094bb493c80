//! Important-data selection by normed-loss score.
//!
//! Each sample gets `s(x) = ||softmax(f(θ, x)) - onehot(y)||₂`. For one
//! dataset, with `μ` the mean score and `σ` the population standard
//! deviation, the kept samples are those with
//! `μ - z_lower·σ <= s(x) <= μ + z_upper·σ`. Statistics are always computed
//! over the dataset being filtered, so the forget and retain sets are banded
//! independently.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::model::{forward_probs_with, ClassifierState};
use crate::par::Execution;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionBound {
    pub z_lower: f64,
    pub z_upper: f64,
}

impl SelectionBound {
    pub fn new(z_lower: f64, z_upper: f64) -> Result<Self> {
        let b = Self { z_lower, z_upper };
        b.validate()?;
        Ok(b)
    }

    /// Wide enough to keep every sample.
    pub fn unbounded() -> Self {
        Self {
            z_lower: 1e9,
            z_upper: 1e9,
        }
    }

    pub fn symmetric(z: f64) -> Self {
        Self { z_lower: z, z_upper: z }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("z_lower", self.z_lower), ("z_upper", self.z_upper)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// True if `self` contains `other` pointwise for any (μ, σ).
    pub fn contains(&self, other: &Self) -> bool {
        self.z_lower >= other.z_lower && self.z_upper >= other.z_upper
    }

    pub fn interval(&self, mu: f64, sigma: f64) -> (f64, f64) {
        (mu - self.z_lower * sigma, mu + self.z_upper * sigma)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub kept: LabeledDataset,
    /// Aligned with the input dataset, not with `kept`.
    pub scores: Vec<f64>,
    pub mu: f64,
    pub sigma: f64,
    pub kept_ids: Vec<u64>,
    pub bound: SelectionBound,
    input_ids: Vec<u64>,
}

impl SelectionResult {
    pub fn kept_fraction(&self) -> f64 {
        if self.scores.is_empty() {
            0.0
        } else {
            self.kept_ids.len() as f64 / self.scores.len() as f64
        }
    }

    pub fn is_kept(&self) -> Vec<bool> {
        let (lo, hi) = self.bound.interval(self.mu, self.sigma);
        self.scores.iter().map(|&s| s >= lo && s <= hi).collect()
    }

    /// Audit CSV with columns `sample_id,score,kept`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["sample_id", "score", "kept"])?;
        for ((id, s), k) in self.input_ids.iter().zip(&self.scores).zip(self.is_kept()) {
            w.write_record([id.to_string(), s.to_string(), u8::from(k).to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// L2 distance between each sample's predicted distribution and its one-hot
/// label; every score lies in `[0, √2]`.
pub fn el2n_scores(model: &ClassifierState, data: &LabeledDataset) -> Result<Vec<f64>> {
    el2n_scores_with(Execution::Auto, model, data)
}

pub fn el2n_scores_with(exec: Execution, model: &ClassifierState, data: &LabeledDataset) -> Result<Vec<f64>> {
    model.arch().check_data(data)?;
    let probs = forward_probs_with(exec, model, data)?;
    Ok(probs
        .iter()
        .zip(data.labels())
        .map(|(p, &y)| {
            p.iter()
                .enumerate()
                .map(|(c, &v)| {
                    let d = if c == y { v - 1.0 } else { v };
                    d * d
                })
                .sum::<f64>()
                .sqrt()
        })
        .collect())
}

/// Mean and population standard deviation.
pub fn mean_and_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mu = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
    (mu, var.sqrt())
}

/// Band filter over precomputed scores. Returns kept row indices in input
/// order together with `(μ, σ)`.
pub fn band_filter(scores: &[f64], bound: &SelectionBound) -> (Vec<usize>, f64, f64) {
    let (mu, sigma) = mean_and_std(scores);
    let (lo, hi) = bound.interval(mu, sigma);
    let kept = scores
        .iter()
        .enumerate()
        .filter(|(_, &s)| s >= lo && s <= hi)
        .map(|(i, _)| i)
        .collect();
    (kept, mu, sigma)
}

pub fn select_bounded(
    model: &ClassifierState,
    data: &LabeledDataset,
    bound: &SelectionBound,
) -> Result<SelectionResult> {
    bound.validate()?;
    let scores = el2n_scores(model, data)?;
    select_with_scores(data, scores, bound)
}

/// Same as [`select_bounded`] with scores computed by the caller.
pub fn select_with_scores(data: &LabeledDataset, scores: Vec<f64>, bound: &SelectionBound) -> Result<SelectionResult> {
    if scores.len() != data.len() {
        return Err(Error::DimensionMismatch {
            expected: data.len(),
            found: scores.len(),
        });
    }
    let (kept_idx, mu, sigma) = band_filter(&scores, bound);
    let kept = data.subset(&kept_idx);
    if kept.is_empty() && !data.is_empty() {
        log::warn!(
            "selection band [{:.4}, {:.4}] kept none of {} samples",
            mu - bound.z_lower * sigma,
            mu + bound.z_upper * sigma,
            data.len()
        );
    }
    Ok(SelectionResult {
        kept_ids: kept.sample_ids().to_vec(),
        kept,
        scores,
        mu,
        sigma,
        bound: *bound,
        input_ids: data.sample_ids().to_vec(),
    })
}

/// Smallest symmetric band (up to float rounding) that keeps at least
/// `ceil(fraction * n)` of the given scores.
///
/// This maps a "percentile of data included" onto the `(z, z)` band
/// parameterization; larger fractions always give wider bands.
pub fn band_for_fraction(scores: &[f64], fraction: f64) -> Result<SelectionBound> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "kept fraction must be in (0, 1], got {fraction}"
        )));
    }
    if scores.is_empty() {
        return Ok(SelectionBound::symmetric(0.0));
    }
    let (mu, sigma) = mean_and_std(scores);
    if sigma == 0.0 {
        return Ok(SelectionBound::symmetric(0.0));
    }
    let target = ((fraction * scores.len() as f64) - 1e-9).ceil().max(1.0) as usize;
    let mut dist: Vec<f64> = scores.iter().map(|s| (s - mu).abs() / sigma).collect();
    dist.sort_by(f64::total_cmp);
    let mut z = dist[target.min(dist.len()) - 1];
    // rounding in μ ± zσ can exclude the boundary sample
    while band_filter(scores, &SelectionBound::symmetric(z)).0.len() < target {
        z = z.next_up();
    }
    Ok(SelectionBound::symmetric(z))
}
