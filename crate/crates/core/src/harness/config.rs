use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{ForgetMode, SyntheticSpec};
use crate::engine::ControlKnobs;
use crate::error::{Error, Result};
use crate::model::{ArchitectureSpec, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Retrain,
    /// The untouched original model; the do-nothing reference point.
    Original,
    Conmu,
    Finetune,
    GradientAscent,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Retrain => "retrain",
            Method::Original => "original",
            Method::Conmu => "conmu",
            Method::Finetune => "finetune",
            Method::GradientAscent => "gradient_ascent",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Csv(CsvSource),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSource {
    pub path: PathBuf,
    pub label_column: String,
    pub n_classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestSource {
    Csv(CsvSource),
    HeldOutFraction(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub source: DataSource,
    pub test: TestSource,
    /// Standardize columns using statistics of the training set.
    #[serde(default)]
    pub standardize: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgetConfig {
    pub mode: ForgetMode,
    /// Defaults to 0.2 for random and 0.5 for class-wise forgetting.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_class: Option<usize>,
}

impl ForgetConfig {
    pub fn effective_fraction(&self) -> f64 {
        self.fraction.unwrap_or(match self.mode {
            ForgetMode::Random => 0.2,
            ForgetMode::ClassWise => 0.5,
        })
    }
}

fn default_methods() -> Vec<Method> {
    vec![Method::Conmu, Method::Finetune, Method::GradientAscent]
}

fn default_trials() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub forget: ForgetConfig,
    pub arch: ArchitectureSpec,
    pub original_training: TrainConfig,
    #[serde(default)]
    pub knobs: ControlKnobs,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    /// Schedule for the fine-tune baseline; defaults to `knobs.finetune`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finetune_baseline: Option<TrainConfig>,
    /// Schedule for the gradient-ascent baseline; defaults to `knobs.finetune`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gradient_ascent_baseline: Option<TrainConfig>,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Record wall-clock RTE. Off by default so that results are a pure
    /// function of the config; `work_units` is always recorded.
    #[serde(default)]
    pub record_wall_clock: bool,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Loads a config file; relative CSV paths resolve against its directory.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let DataSource::Csv(c) = &mut self.dataset.source {
            fix(&mut c.path);
        }
        if let TestSource::Csv(c) = &mut self.dataset.test {
            fix(&mut c.path);
        }
    }

    /// Requested methods plus retrain, deduplicated, in canonical order.
    pub fn effective_methods(&self) -> Vec<Method> {
        let mut m = self.methods.clone();
        m.push(Method::Retrain);
        m.sort();
        m.dedup();
        m
    }

    pub fn finetune_schedule(&self) -> TrainConfig {
        self.finetune_baseline
            .clone()
            .unwrap_or_else(|| self.knobs.finetune.clone())
    }

    pub fn gradient_ascent_schedule(&self) -> TrainConfig {
        self.gradient_ascent_baseline
            .clone()
            .unwrap_or_else(|| self.knobs.finetune.clone())
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::config("trials", "must be at least 1"));
        }
        self.arch.validate().map_err(|e| Error::config("arch", e.to_string()))?;
        self.original_training
            .validate()
            .map_err(|e| Error::config("original_training", e.to_string()))?;
        self.knobs
            .validate()
            .map_err(|e| Error::config("knobs", e.to_string()))?;
        self.finetune_schedule()
            .validate()
            .map_err(|e| Error::config("finetune_baseline", e.to_string()))?;
        self.gradient_ascent_schedule()
            .validate()
            .map_err(|e| Error::config("gradient_ascent_baseline", e.to_string()))?;

        let f = self.forget.effective_fraction();
        match self.forget.mode {
            ForgetMode::Random => {
                if !(f > 0.0 && f < 1.0) {
                    return Err(Error::config(
                        "forget.fraction",
                        format!("must be in (0, 1) for random forgetting, got {f}"),
                    ));
                }
                if self.forget.target_class.is_some() {
                    return Err(Error::config("forget.target_class", "only valid for class_wise mode"));
                }
            }
            ForgetMode::ClassWise => {
                if !(f > 0.0 && f <= 1.0) {
                    return Err(Error::config(
                        "forget.fraction",
                        format!("must be in (0, 1] for class-wise forgetting, got {f}"),
                    ));
                }
                match self.forget.target_class {
                    None => return Err(Error::config("forget.target_class", "required for class_wise mode")),
                    Some(c) if c >= self.arch.n_classes() => {
                        return Err(Error::config(
                            "forget.target_class",
                            format!("{c} is not a class of a {}-way model", self.arch.n_classes()),
                        ))
                    }
                    _ => {}
                }
            }
        }

        if let TestSource::HeldOutFraction(h) = self.dataset.test {
            if !(h > 0.0 && h < 1.0) {
                return Err(Error::config(
                    "dataset.test.held_out_fraction",
                    format!("must be in (0, 1), got {h}"),
                ));
            }
        }
        let (n_features, n_classes) = match &self.dataset.source {
            DataSource::Synthetic(s) => (Some(s.n_features), s.n_classes),
            DataSource::Csv(c) => (None, c.n_classes),
        };
        if n_classes != self.arch.n_classes() {
            return Err(Error::config(
                "arch.layer_widths",
                format!(
                    "output width {} does not match {} classes",
                    self.arch.n_classes(),
                    n_classes
                ),
            ));
        }
        if let Some(d) = n_features {
            if d != self.arch.input_width() {
                return Err(Error::config(
                    "arch.layer_widths",
                    format!("input width {} does not match {} features", self.arch.input_width(), d),
                ));
            }
        }
        Ok(())
    }
}
