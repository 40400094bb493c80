//! The controllable unlearning loop and the baseline unlearners.
//!
//! `conmu_unlearn` runs, in order:
//!
//! 1. optional one-shot magnitude pruning of the original model;
//! 2. band selection on `D_f` and on `D_r`, scored by the pruned model;
//! 3. Gaussian obfuscation of the kept forget samples;
//! 4. proxy training on the full retain set;
//! 5. fine-tuning of the pruned model on `D_new = D_f'' ∪ D_r'` with
//!    per-sample loss `CE + gamma * KL(proxy || model)`.
//!
//! `D_new` is ordered by sample id and reshuffled every epoch from the
//! fine-tune seed. With every knob at its identity value the loop reduces to
//! plain fine-tuning on `D_o`, bit for bit.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{ForgetSplit, LabeledDataset};
use crate::error::{Error, Result};
use crate::model::{
    fit, init_model, omp_prune, train_logged, ArchitectureSpec, ClassifierState, Objective, StepDirection, TrainConfig,
    TrainReport,
};
use crate::noise::{apply_noise, NoiseConfig};
use crate::proxy::{train_proxy_logged, ProxyConfig};
use crate::selection::{band_for_fraction, el2n_scores, select_with_scores, SelectionBound, SelectionResult};

/// Every tunable of the unlearning method. Fields missing from JSON take
/// their [`Default`] values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControlKnobs {
    pub forget_bound: SelectionBound,
    pub retain_bound: SelectionBound,
    pub noise: NoiseConfig,
    pub proxy: ProxyConfig,
    pub gamma: f64,
    pub finetune: TrainConfig,
    #[serde(default)]
    pub prune_sparsity: f64,
    /// When set, both bands are replaced by the narrowest symmetric band that
    /// keeps at least this fraction of each set (computed per set).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kept_fraction: Option<f64>,
}

impl Default for ControlKnobs {
    /// Random-forgetting defaults (ResNet-18 / CIFAR-10 column).
    fn default() -> Self {
        Self {
            forget_bound: SelectionBound {
                z_lower: 0.85,
                z_upper: 1.0,
            },
            retain_bound: SelectionBound {
                z_lower: 0.17,
                z_upper: 0.3,
            },
            noise: NoiseConfig {
                alpha: 3.0,
                noise_mean: 0.0,
                noise_std: 1.0,
                seed: 0,
            },
            proxy: ProxyConfig {
                delta_epochs: 1,
                learning_rate: 1e-2,
                batch_size: 128,
                seed: 0,
            },
            gamma: 0.5,
            finetune: TrainConfig {
                epochs: 5,
                learning_rate: 1e-2,
                batch_size: 128,
                seed: 0,
            },
            prune_sparsity: 0.0,
            kept_fraction: None,
        }
    }
}

impl ControlKnobs {
    /// Class-wise forgetting defaults (ResNet-18 / CIFAR-10 column).
    pub fn class_wise_defaults() -> Self {
        Self {
            forget_bound: SelectionBound {
                z_lower: 0.8,
                z_upper: 1.0,
            },
            retain_bound: SelectionBound {
                z_lower: 0.2,
                z_upper: 0.3,
            },
            noise: NoiseConfig {
                alpha: 12.0,
                ..NoiseConfig::default()
            },
            ..Self::default()
        }
    }

    /// Every stage degenerates to the identity: no pruning, keep-all bands,
    /// no noise, no KL term.
    pub fn identity(finetune: TrainConfig) -> Self {
        Self {
            forget_bound: SelectionBound::unbounded(),
            retain_bound: SelectionBound::unbounded(),
            noise: NoiseConfig {
                alpha: 0.0,
                ..NoiseConfig::default()
            },
            gamma: 0.0,
            finetune,
            prune_sparsity: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.forget_bound.validate()?;
        self.retain_bound.validate()?;
        self.noise.validate()?;
        self.finetune.validate()?;
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "gamma must be >= 0, got {}",
                self.gamma
            )));
        }
        if !(0.0..1.0).contains(&self.prune_sparsity) {
            return Err(Error::InvalidArgument(format!(
                "prune_sparsity must be in [0, 1), got {}",
                self.prune_sparsity
            )));
        }
        if let Some(f) = self.kept_fraction {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "kept_fraction must be in (0, 1], got {f}"
                )));
            }
        }
        Ok(())
    }
}

/// Everything built before the fine-tuning loop starts.
#[derive(Debug, Clone)]
pub struct PreparedSet {
    /// Pruned original; the starting point of the unlearned model.
    pub start: ClassifierState,
    pub forget_selection: SelectionResult,
    pub retain_selection: SelectionResult,
    /// `D_f''`: kept forget samples after noise.
    pub noised_forget: LabeledDataset,
    /// `D_new = D_f'' ∪ D_r'`, ordered by sample id.
    pub d_new: LabeledDataset,
    /// Forward passes spent on scoring.
    pub scoring_work: u64,
}

fn select_set(
    model: &ClassifierState,
    data: &LabeledDataset,
    bound: &SelectionBound,
    kept_fraction: Option<f64>,
) -> Result<SelectionResult> {
    let scores = el2n_scores(model, data)?;
    let bound = match kept_fraction {
        Some(f) => band_for_fraction(&scores, f)?,
        None => *bound,
    };
    select_with_scores(data, scores, &bound)
}

/// Steps 1-3: prune, select both sets, obfuscate the kept forget samples.
pub fn prepare_unlearning_set(
    original: &ClassifierState,
    split: &ForgetSplit,
    knobs: &ControlKnobs,
) -> Result<PreparedSet> {
    knobs.validate()?;
    original.arch().check_data(&split.forget)?;
    original.arch().check_data(&split.retain)?;
    let start = omp_prune(original, knobs.prune_sparsity)?;
    prepare_from_start(start, split, knobs)
}

fn prepare_from_start(start: ClassifierState, split: &ForgetSplit, knobs: &ControlKnobs) -> Result<PreparedSet> {
    let forget_selection = select_set(&start, &split.forget, &knobs.forget_bound, knobs.kept_fraction)?;
    let retain_selection = select_set(&start, &split.retain, &knobs.retain_bound, knobs.kept_fraction)?;
    let noised_forget = apply_noise(&forget_selection.kept, &knobs.noise)?;
    let d_new = noised_forget.union_by_id(&retain_selection.kept)?;
    Ok(PreparedSet {
        start,
        forget_selection,
        retain_selection,
        noised_forget,
        d_new,
        scoring_work: (split.forget.len() + split.retain.len()) as u64,
    })
}

/// Result of one unlearning run.
#[derive(Debug, Clone, PartialEq)]
pub struct UnlearnRun {
    pub unlearned: ClassifierState,
    pub d_new_size: usize,
    pub selected_forget_size: usize,
    pub selected_retain_size: usize,
    /// Wall-clock seconds for selection, noise, proxy and fine-tuning.
    pub wall_time_seconds: f64,
    /// Scoring passes + proxy gradient evaluations + fine-tune gradient
    /// evaluations. Hardware independent.
    pub work_units: u64,
    pub knob_snapshot: ControlKnobs,
}

/// Serializable summary of an [`UnlearnRun`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlearnRecord {
    pub knobs: ControlKnobs,
    pub d_new_size: usize,
    pub selected_forget_size: usize,
    pub selected_retain_size: usize,
    pub wall_time_seconds: f64,
    pub work_units: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snapshot: Option<String>,
}

impl UnlearnRun {
    pub fn record(&self, snapshot: Option<String>) -> UnlearnRecord {
        UnlearnRecord {
            knobs: self.knob_snapshot.clone(),
            d_new_size: self.d_new_size,
            selected_forget_size: self.selected_forget_size,
            selected_retain_size: self.selected_retain_size,
            wall_time_seconds: self.wall_time_seconds,
            work_units: self.work_units,
            snapshot,
        }
    }
}

pub fn conmu_unlearn(original: &ClassifierState, split: &ForgetSplit, knobs: &ControlKnobs) -> Result<UnlearnRun> {
    knobs.validate()?;
    original.arch().check_data(&split.forget)?;
    original.arch().check_data(&split.retain)?;
    let start = omp_prune(original, knobs.prune_sparsity)?;
    let started = Instant::now();
    let prepared = prepare_from_start(start, split, knobs)?;
    if prepared.d_new.is_empty() {
        return Err(Error::EmptySelection);
    }
    let (proxy, proxy_report) = train_proxy_logged(original.arch(), &split.retain, &knobs.proxy)?;
    let (unlearned, ft_report) = fit(
        &prepared.start,
        &prepared.d_new,
        &knobs.finetune,
        Objective::Distill {
            teacher: &proxy,
            gamma: knobs.gamma,
        },
        StepDirection::Descent,
    )?;
    Ok(UnlearnRun {
        unlearned,
        d_new_size: prepared.d_new.len(),
        selected_forget_size: prepared.noised_forget.len(),
        selected_retain_size: prepared.retain_selection.kept.len(),
        wall_time_seconds: started.elapsed().as_secs_f64(),
        work_units: prepared.scoring_work + proxy_report.work_units + ft_report.work_units,
        knob_snapshot: knobs.clone(),
    })
}

/// A baseline's model plus training bookkeeping.
#[derive(Debug, Clone)]
pub struct BaselineRun {
    pub model: ClassifierState,
    pub report: TrainReport,
    pub wall_time_seconds: f64,
}

fn timed(f: impl FnOnce() -> Result<(ClassifierState, TrainReport)>) -> Result<BaselineRun> {
    let started = Instant::now();
    let (model, report) = f()?;
    Ok(BaselineRun {
        model,
        report,
        wall_time_seconds: started.elapsed().as_secs_f64(),
    })
}

fn require_nonempty(data: &LabeledDataset, what: &str) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyDataset(format!("{what} set is empty")));
    }
    Ok(())
}

/// Fresh model trained on the retain set only; the gold standard.
pub fn retrain_baseline(
    arch: &ArchitectureSpec,
    retain: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<ClassifierState> {
    retrain_baseline_logged(arch, retain, cfg).map(|r| r.model)
}

pub fn retrain_baseline_logged(
    arch: &ArchitectureSpec,
    retain: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<BaselineRun> {
    require_nonempty(retain, "retain")?;
    timed(|| train_logged(&init_model(arch, cfg.seed)?, retain, cfg))
}

/// Continue SGD from the original model on the retain set.
pub fn finetune_baseline(
    original: &ClassifierState,
    retain: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<ClassifierState> {
    finetune_baseline_logged(original, retain, cfg).map(|r| r.model)
}

pub fn finetune_baseline_logged(
    original: &ClassifierState,
    retain: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<BaselineRun> {
    require_nonempty(retain, "retain")?;
    timed(|| train_logged(original, retain, cfg))
}

/// Sign-flipped SGD on the forget set: `θ ← θ + lr·∇CE`.
pub fn gradient_ascent_baseline(
    original: &ClassifierState,
    forget: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<ClassifierState> {
    gradient_ascent_baseline_logged(original, forget, cfg).map(|r| r.model)
}

pub fn gradient_ascent_baseline_logged(
    original: &ClassifierState,
    forget: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<BaselineRun> {
    require_nonempty(forget, "forget")?;
    timed(|| fit(original, forget, cfg, Objective::CrossEntropy, StepDirection::Ascent))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, split_random_forget, SyntheticSpec};
    use crate::model::{train, Activation};

    fn setup(seed: u64) -> (ClassifierState, ForgetSplit) {
        let d = gen_synthetic(&SyntheticSpec {
            n_samples: 200,
            n_features: 3,
            n_classes: 2,
            class_separation: 2.5,
            seed,
        })
        .unwrap();
        let arch = ArchitectureSpec::mlp(vec![3, 12, 2], Activation::Relu).unwrap();
        let cfg = TrainConfig {
            epochs: 10,
            learning_rate: 0.05,
            batch_size: 16,
            seed,
        };
        let original = train(&init_model(&arch, seed).unwrap(), &d, &cfg).unwrap();
        (original, split_random_forget(&d, 0.2, seed).unwrap())
    }

    #[test]
    fn d_new_sizes_add_up_and_are_disjoint() {
        let (m, split) = setup(1);
        let knobs = ControlKnobs::default();
        let prep = prepare_unlearning_set(&m, &split, &knobs).unwrap();
        assert_eq!(
            prep.d_new.len(),
            prep.noised_forget.len() + prep.retain_selection.kept.len()
        );
        let run = conmu_unlearn(&m, &split, &knobs).unwrap();
        assert_eq!(run.d_new_size, run.selected_forget_size + run.selected_retain_size);
        assert_eq!(run.knob_snapshot, knobs);
    }

    #[test]
    fn empty_forget_selection_trains_on_retain_only() {
        let (m, split) = setup(2);
        let knobs = ControlKnobs {
            forget_bound: SelectionBound::symmetric(0.0),
            retain_bound: SelectionBound::unbounded(),
            ..ControlKnobs::default()
        };
        let run = conmu_unlearn(&m, &split, &knobs).unwrap();
        assert_eq!(run.selected_forget_size, 0);
        assert_eq!(run.d_new_size, split.retain.len());
    }

    #[test]
    fn both_selections_empty_is_an_error() {
        let (m, split) = setup(3);
        let knobs = ControlKnobs {
            forget_bound: SelectionBound::symmetric(0.0),
            retain_bound: SelectionBound::symmetric(0.0),
            ..ControlKnobs::default()
        };
        assert!(matches!(conmu_unlearn(&m, &split, &knobs), Err(Error::EmptySelection)));
    }

    #[test]
    fn noised_forget_rows_in_d_new() {
        let (m, split) = setup(4);
        let prep = prepare_unlearning_set(&m, &split, &ControlKnobs::default()).unwrap();
        let forget_ids: std::collections::HashSet<u64> = split.forget.sample_ids().iter().copied().collect();
        for i in 0..prep.d_new.len() {
            let id = prep.d_new.sample_ids()[i];
            if forget_ids.contains(&id) {
                let j = prep.noised_forget.sample_ids().iter().position(|&x| x == id).unwrap();
                assert_eq!(prep.d_new.row(i), prep.noised_forget.row(j));
                let k = split.forget.sample_ids().iter().position(|&x| x == id).unwrap();
                assert_ne!(prep.d_new.row(i), split.forget.row(k));
            }
        }
    }

    #[test]
    fn retrain_never_sees_forget_ids() {
        let (m, split) = setup(5);
        let cfg = TrainConfig {
            epochs: 3,
            learning_rate: 0.05,
            batch_size: 16,
            seed: 0,
        };
        let run = retrain_baseline_logged(m.arch(), &split.retain, &cfg).unwrap();
        assert!(split
            .forget
            .sample_ids()
            .iter()
            .all(|id| !run.report.seen_ids.contains(id)));
        assert_eq!(run.report.seen_ids.len(), split.retain.len());
        assert_eq!(run.model, retrain_baseline(m.arch(), &split.retain, &cfg).unwrap());
    }

    #[test]
    fn zero_epoch_baselines_are_identity() {
        let (m, split) = setup(6);
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert_eq!(finetune_baseline(&m, &split.retain, &cfg).unwrap(), m);
        assert_eq!(gradient_ascent_baseline(&m, &split.forget, &cfg).unwrap(), m);
        let e = LabeledDataset::empty(3, 2).unwrap();
        assert!(finetune_baseline(&m, &e, &cfg).is_err());
        assert!(gradient_ascent_baseline(&m, &e, &cfg).is_err());
    }

    #[test]
    fn knobs_validation() {
        let mut k = ControlKnobs::default();
        k.gamma = -1.0;
        assert!(k.validate().is_err());
        let mut k = ControlKnobs::default();
        k.prune_sparsity = 1.0;
        assert!(k.validate().is_err());
        let mut k = ControlKnobs::default();
        k.kept_fraction = Some(0.0);
        assert!(k.validate().is_err());
    }

    #[test]
    fn knobs_json_round_trip() {
        let k = ControlKnobs::class_wise_defaults();
        let s = serde_json::to_string(&k).unwrap();
        assert_eq!(serde_json::from_str::<ControlKnobs>(&s).unwrap(), k);
    }
}
