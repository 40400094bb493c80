//! Accuracy metrics, confidence-threshold membership inference, and the
//! Forget-Retain-MIA (FRM) score.
//!
//! Rates are stored as fractions in `[0, 1]`. [`frm_score`] takes
//! percentages, matching how reported tables are written; since it only
//! uses ratios the scale cancels.

use serde::{Deserialize, Serialize};

use crate::data::{ForgetMode, ForgetSplit, LabeledDataset};
use crate::error::{Error, Result};
use crate::model::{accuracy, forward_probs, ClassifierState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceFeature {
    MaxSoftmax,
    #[default]
    TrueClassProb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    #[default]
    ThresholdOnConfidence,
}

/// Predicts "member" when the confidence is strictly above `threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiaPredictor {
    pub kind: PredictorKind,
    pub threshold: f64,
    pub feature: ConfidenceFeature,
    /// Balanced accuracy on the pool the threshold was fitted on.
    pub balanced_accuracy: Option<f64>,
    /// Set when no threshold beats chance on the training pool.
    pub degenerate: bool,
}

impl MiaPredictor {
    pub fn with_threshold(threshold: f64, feature: ConfidenceFeature) -> Result<Self> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Error::InvalidArgument(format!(
                "threshold must be in [0, 1], got {threshold}"
            )));
        }
        Ok(Self {
            kind: PredictorKind::ThresholdOnConfidence,
            threshold,
            feature,
            balanced_accuracy: None,
            degenerate: false,
        })
    }

    pub fn is_member(&self, confidence: f64) -> bool {
        confidence > self.threshold
    }
}

pub fn confidences(model: &ClassifierState, data: &LabeledDataset, feature: ConfidenceFeature) -> Result<Vec<f64>> {
    let probs = forward_probs(model, data)?;
    Ok(probs
        .iter()
        .zip(data.labels())
        .map(|(p, &y)| match feature {
            ConfidenceFeature::TrueClassProb => p[y],
            ConfidenceFeature::MaxSoftmax => p.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
        .collect())
}

/// Candidate thresholds for a pool: 0, every midpoint between adjacent
/// distinct values, and 1.
pub fn candidate_thresholds(members: &[f64], non_members: &[f64]) -> Vec<f64> {
    let mut values: Vec<f64> = members.iter().chain(non_members).copied().collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let mut cuts = Vec::with_capacity(values.len() + 1);
    cuts.push(0.0);
    cuts.extend(values.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0));
    cuts.push(1.0);
    cuts.dedup();
    cuts
}

/// Threshold maximizing balanced accuracy (members above, non-members at or
/// below); ties go to the lowest threshold. Returns `(threshold, accuracy)`.
pub fn fit_threshold(members: &[f64], non_members: &[f64]) -> Result<(f64, f64)> {
    if members.is_empty() || non_members.is_empty() {
        return Err(Error::EmptyDataset("membership pools must be non-empty".into()));
    }
    let mut m = members.to_vec();
    let mut n = non_members.to_vec();
    m.sort_by(f64::total_cmp);
    n.sort_by(f64::total_cmp);
    let (mlen, nlen) = (m.len() as f64, n.len() as f64);
    let mut best = (0.0, f64::NEG_INFINITY);
    for t in candidate_thresholds(&m, &n) {
        let tp = m.len() - m.partition_point(|&c| c <= t);
        let tn = n.partition_point(|&c| c <= t);
        let ba = 0.5 * (tp as f64 / mlen + tn as f64 / nlen);
        if ba > best.1 {
            best = (t, ba);
        }
    }
    Ok(best)
}

const CHANCE_SLACK: f64 = 1e-12;

/// Fits the default (true-class probability) predictor on `retain`
/// (members) and `test` (non-members) under `model`.
pub fn train_mia(model: &ClassifierState, retain: &LabeledDataset, test: &LabeledDataset) -> Result<MiaPredictor> {
    train_mia_with(model, retain, test, ConfidenceFeature::default())
}

pub fn train_mia_with(
    model: &ClassifierState,
    retain: &LabeledDataset,
    test: &LabeledDataset,
    feature: ConfidenceFeature,
) -> Result<MiaPredictor> {
    if retain.is_empty() || test.is_empty() {
        return Err(Error::EmptyDataset(
            "MIA training needs non-empty retain and test sets".into(),
        ));
    }
    let members = confidences(model, retain, feature)?;
    let non_members = confidences(model, test, feature)?;
    let (threshold, balanced_accuracy) = fit_threshold(&members, &non_members)?;
    let degenerate = balanced_accuracy <= 0.5 + CHANCE_SLACK;
    if degenerate {
        log::warn!("membership predictor does not beat chance (balanced accuracy {balanced_accuracy})");
    }
    Ok(MiaPredictor {
        kind: PredictorKind::ThresholdOnConfidence,
        threshold,
        feature,
        balanced_accuracy: Some(balanced_accuracy),
        degenerate,
    })
}

/// Fraction of confidences predicted non-member (at or below threshold).
pub fn efficacy_from_confidences(threshold: f64, confidences: &[f64]) -> f64 {
    let tn = confidences.iter().filter(|&&c| c <= threshold).count();
    tn as f64 / confidences.len() as f64
}

/// `TN / |D_f|` for the forget set under `model`.
pub fn mia_efficacy(predictor: &MiaPredictor, model: &ClassifierState, forget: &LabeledDataset) -> Result<f64> {
    if forget.is_empty() {
        return Err(Error::EmptyDataset("MIA efficacy of an empty forget set".into()));
    }
    let c = confidences(model, forget, predictor.feature)?;
    Ok(efficacy_from_confidences(predictor.threshold, &c))
}

/// FA, RA and MIA on the percentage scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricTriple {
    pub fa: f64,
    pub ra: f64,
    pub mia: f64,
}

impl MetricTriple {
    pub fn from_fractions(fa: f64, ra: f64, mia: f64) -> Self {
        Self {
            fa: fa * 100.0,
            ra: ra * 100.0,
            mia: mia * 100.0,
        }
    }
}

/// `exp(-(|FA_u-FA_r|/FA_r + |RA_u-RA_r|/RA_r + |MIA_u-MIA_r|/MIA_r))`.
///
/// Argument order matters: the retrained triple supplies the denominators,
/// and each of them must be strictly positive.
pub fn frm_score(unlearned: &MetricTriple, retrained: &MetricTriple) -> Result<f64> {
    for (metric, value) in [("FA", retrained.fa), ("RA", retrained.ra), ("MIA", retrained.mia)] {
        if !(value > 0.0) {
            return Err(Error::DegenerateReference { metric, value });
        }
    }
    let gap = (unlearned.fa - retrained.fa).abs() / retrained.fa
        + (unlearned.ra - retrained.ra).abs() / retrained.ra
        + (unlearned.mia - retrained.mia).abs() / retrained.mia;
    Ok((-gap).exp())
}

/// Metrics for one unlearned (or reference) model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ta: f64,
    pub fa: f64,
    pub ra: f64,
    /// MIA-efficacy, `TN / |D_f|`.
    pub mia: f64,
    pub rte_seconds: f64,
    pub work_units: u64,
    pub frm: f64,
    #[serde(default)]
    pub mia_degenerate: bool,
}

impl MetricsReport {
    pub fn triple(&self) -> MetricTriple {
        MetricTriple::from_fractions(self.fa, self.ra, self.mia)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Timing {
    pub rte_seconds: f64,
    pub work_units: u64,
}

/// Test set used for TA: class-wise forgetting drops the target class.
pub fn ta_test_set(split: &ForgetSplit, test: &LabeledDataset) -> LabeledDataset {
    match (split.mode, split.target_class) {
        (ForgetMode::ClassWise, Some(c)) => test.without_class(c),
        _ => test.clone(),
    }
}

fn measure(
    model: &ClassifierState,
    split: &ForgetSplit,
    test: &LabeledDataset,
    predictor: &MiaPredictor,
    timing: Timing,
) -> Result<MetricsReport> {
    let ta_set = ta_test_set(split, test);
    if ta_set.is_empty() {
        return Err(Error::EmptyDataset(
            "test set is empty after excluding the forgotten class".into(),
        ));
    }
    Ok(MetricsReport {
        ta: accuracy(model, &ta_set)?,
        fa: accuracy(model, &split.forget)?,
        ra: accuracy(model, &split.retain)?,
        mia: mia_efficacy(predictor, model, &split.forget)?,
        rte_seconds: timing.rte_seconds,
        work_units: timing.work_units,
        frm: f64::NAN,
        mia_degenerate: predictor.degenerate,
    })
}

/// Metrics of the retrained model, scored against itself (FRM = 1).
pub fn evaluate_reference(
    retrained: &ClassifierState,
    split: &ForgetSplit,
    test: &LabeledDataset,
    predictor: &MiaPredictor,
    timing: Timing,
) -> Result<MetricsReport> {
    let mut r = measure(retrained, split, test, predictor, timing)?;
    r.frm = frm_score(&r.triple(), &r.triple())?;
    Ok(r)
}

pub fn evaluate(
    model: &ClassifierState,
    split: &ForgetSplit,
    test: &LabeledDataset,
    reference: &MetricsReport,
    predictor: &MiaPredictor,
    timing: Timing,
) -> Result<MetricsReport> {
    let mut r = measure(model, split, test, predictor, timing)?;
    r.frm = frm_score(&r.triple(), &reference.triple())?;
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frm_identical_is_one() {
        let t = MetricTriple {
            fa: 70.0,
            ra: 90.0,
            mia: 30.0,
        };
        assert_eq!(frm_score(&t, &t).unwrap(), 1.0);
    }

    #[test]
    fn frm_single_gap() {
        let r = MetricTriple {
            fa: 100.0,
            ra: 90.0,
            mia: 30.0,
        };
        let u = MetricTriple { fa: 50.0, ..r };
        assert!((frm_score(&u, &r).unwrap() - (-0.5f64).exp()).abs() < 1e-15);
        assert!((frm_score(&u, &r).unwrap() - 0.60653).abs() < 1e-5);
    }

    #[test]
    fn frm_direction_matters() {
        let a = MetricTriple {
            fa: 50.0,
            ra: 90.0,
            mia: 30.0,
        };
        let b = MetricTriple {
            fa: 100.0,
            ra: 90.0,
            mia: 30.0,
        };
        assert_ne!(frm_score(&a, &b).unwrap(), frm_score(&b, &a).unwrap());
    }

    #[test]
    fn frm_rejects_zero_reference() {
        let u = MetricTriple {
            fa: 50.0,
            ra: 90.0,
            mia: 30.0,
        };
        let r = MetricTriple { mia: 0.0, ..u };
        assert!(matches!(
            frm_score(&u, &r),
            Err(Error::DegenerateReference { metric: "MIA", .. })
        ));
    }

    #[test]
    fn separable_pools_pick_lowest_separating_cut() {
        let (t, ba) = fit_threshold(&[0.99, 0.99, 0.99], &[0.10, 0.10]).unwrap();
        assert_eq!(ba, 1.0);
        assert!(t > 0.10 && t <= 0.99);
        assert_eq!(t, 0.10 + (0.99 - 0.10) / 2.0);
    }

    #[test]
    fn identical_pools_are_chance() {
        let (t, ba) = fit_threshold(&[0.5, 0.6, 0.7], &[0.5, 0.6, 0.7]).unwrap();
        assert_eq!(ba, 0.5);
        assert_eq!(t, 0.0);
    }

    #[test]
    fn small_pool_brute_force() {
        let members = [0.9, 0.8];
        let non = [0.3, 0.7];
        let cands = candidate_thresholds(&members, &non);
        assert_eq!(cands.len(), 5);
        let (t, ba) = fit_threshold(&members, &non).unwrap();
        assert_eq!(ba, 1.0);
        assert!((t - 0.75).abs() < 1e-12);
    }

    #[test]
    fn efficacy_counts() {
        let c: Vec<f64> = (0..10).map(|i| if i < 7 { 0.2 } else { 0.9 }).collect();
        assert_eq!(efficacy_from_confidences(0.5, &c), 0.7);
        assert_eq!(efficacy_from_confidences(1.0, &c), 1.0);
        assert_eq!(efficacy_from_confidences(0.0, &c), 0.0);
    }

    #[test]
    fn empty_pools_rejected() {
        assert!(fit_threshold(&[], &[0.5]).is_err());
        assert!(MiaPredictor::with_threshold(1.5, ConfidenceFeature::MaxSoftmax).is_err());
    }
}
