use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{
    gen_synthetic, holdout_split, load_csv, split_classwise_forget, split_random_forget, ForgetMode, ForgetSplit,
    LabeledDataset, Standardizer,
};
use crate::engine::{
    conmu_unlearn, finetune_baseline_logged, gradient_ascent_baseline_logged, retrain_baseline_logged, ControlKnobs,
};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, evaluate_reference, train_mia, MetricsReport, Timing};
use crate::model::{init_model, omp_prune, train, ClassifierState, TrainConfig};
use crate::par::{self, Execution};
use crate::rng::{derive_seed, mix};

use super::config::{DataSource, ExperimentConfig, Method, TestSource};

pub const RESULTS_FORMAT: &str = "conmu-results";
pub const RESULTS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: Method,
    pub trial: usize,
    pub metrics: MetricsReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected_forget_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selected_retain_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_new_size: Option<usize>,
}

/// One statistic of every numeric column of [`MetricsReport`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub ta: f64,
    pub fa: f64,
    pub ra: f64,
    pub mia: f64,
    pub rte_seconds: f64,
    pub work_units: f64,
    pub frm: f64,
}

impl MetricStats {
    fn columns(r: &MetricsReport) -> [f64; 7] {
        [r.ta, r.fa, r.ra, r.mia, r.rte_seconds, r.work_units as f64, r.frm]
    }

    fn from_columns(c: [f64; 7]) -> Self {
        Self {
            ta: c[0],
            fa: c[1],
            ra: c[2],
            mia: c[3],
            rte_seconds: c[4],
            work_units: c[5],
            frm: c[6],
        }
    }

    fn reduce(reports: &[&MetricsReport], f: impl Fn(&[f64]) -> f64) -> Self {
        let mut out = [0.0; 7];
        for (k, slot) in out.iter_mut().enumerate() {
            let col: Vec<f64> = reports.iter().map(|r| Self::columns(r)[k]).collect();
            *slot = f(&col);
        }
        Self::from_columns(out)
    }
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation; 0 for a single value.
pub fn sample_std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub trials: usize,
    pub mean: MetricStats,
    pub std: MetricStats,
    pub median: MetricStats,
}

impl MethodSummary {
    pub fn from_runs(method: Method, runs: &[RunRecord]) -> Option<Self> {
        let reports: Vec<&MetricsReport> = runs.iter().filter(|r| r.method == method).map(|r| &r.metrics).collect();
        if reports.is_empty() {
            return None;
        }
        Some(Self {
            method,
            trials: reports.len(),
            mean: MetricStats::reduce(&reports, mean),
            std: MetricStats::reduce(&reports, sample_std),
            median: MetricStats::reduce(&reports, median),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResults {
    pub format: String,
    pub version: u32,
    pub config: ExperimentConfig,
    /// Sorted by (method, trial).
    pub runs: Vec<RunRecord>,
    pub summary: Vec<MethodSummary>,
}

impl ExperimentResults {
    fn new(config: ExperimentConfig, mut runs: Vec<RunRecord>) -> Self {
        runs.sort_by_key(|r| (r.method, r.trial));
        let summary = config
            .effective_methods()
            .into_iter()
            .filter_map(|m| MethodSummary::from_runs(m, &runs))
            .collect();
        Self {
            format: RESULTS_FORMAT.into(),
            version: RESULTS_VERSION,
            config,
            runs,
            summary,
        }
    }

    pub fn summary_for(&self, method: Method) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.method == method)
    }

    pub fn runs_for(&self, method: Method) -> impl Iterator<Item = &RunRecord> {
        self.runs.iter().filter(move |r| r.method == method)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        if text.trim().is_empty() {
            return Err(Error::MalformedResults("file is empty".into()));
        }
        let r: Self = serde_json::from_str(text).map_err(|e| Error::MalformedResults(e.to_string()))?;
        if r.format != RESULTS_FORMAT {
            return Err(Error::MalformedResults(format!("unexpected format `{}`", r.format)));
        }
        if r.version != RESULTS_VERSION {
            return Err(Error::MalformedResults(format!("unsupported version {}", r.version)));
        }
        if r.runs.is_empty() {
            return Err(Error::MalformedResults("no runs recorded".into()));
        }
        Ok(r)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Writes the full JSON and, next to it, a per-run CSV.
    pub fn save(&self, json_path: impl AsRef<Path>) -> Result<()> {
        let json_path = json_path.as_ref();
        std::fs::write(json_path, self.to_json()? + "\n").map_err(|e| Error::io(json_path, e))?;
        self.write_runs_csv(json_path.with_extension("csv"))
    }

    pub fn write_runs_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::MalformedResults(format!("{other:?}")),
        })?;
        w.write_record([
            "method",
            "trial",
            "ta",
            "fa",
            "ra",
            "mia",
            "rte_seconds",
            "work_units",
            "frm",
            "mia_degenerate",
        ])?;
        for r in &self.runs {
            let m = &r.metrics;
            w.write_record([
                r.method.name().to_string(),
                r.trial.to_string(),
                m.ta.to_string(),
                m.fa.to_string(),
                m.ra.to_string(),
                m.mia.to_string(),
                m.rte_seconds.to_string(),
                m.work_units.to_string(),
                m.frm.to_string(),
                m.mia_degenerate.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Training and test data after optional standardization.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

pub fn load_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let source = match &cfg.dataset.source {
        DataSource::Synthetic(spec) => gen_synthetic(spec)?,
        DataSource::Csv(c) => load_csv(&c.path, &c.label_column, c.n_classes)?,
    };
    let (train, test) = match &cfg.dataset.test {
        TestSource::HeldOutFraction(f) => holdout_split(&source, *f, derive_seed(cfg.master_seed, 0, "holdout"))?,
        TestSource::Csv(c) => (source, load_csv(&c.path, &c.label_column, c.n_classes)?),
    };
    if cfg.dataset.standardize {
        let s = Standardizer::fit(&train)?;
        return Ok(PreparedData {
            train: s.apply(&train)?,
            test: s.apply(&test)?,
        });
    }
    Ok(PreparedData { train, test })
}

fn seeded(cfg: &TrainConfig, master: u64, trial: usize, stream: &str) -> TrainConfig {
    TrainConfig {
        seed: mix(derive_seed(master, trial as u64, stream), cfg.seed),
        ..cfg.clone()
    }
}

/// Knobs with every seed re-derived for this trial.
pub fn trial_knobs(knobs: &ControlKnobs, master: u64, trial: usize) -> ControlKnobs {
    let t = trial as u64;
    let mut k = knobs.clone();
    k.noise.seed = mix(derive_seed(master, t, "conmu.noise"), knobs.noise.seed);
    k.proxy.seed = mix(derive_seed(master, t, "conmu.proxy"), knobs.proxy.seed);
    k.finetune = seeded(&knobs.finetune, master, trial, "conmu.finetune");
    k
}

pub fn trial_split(cfg: &ExperimentConfig, data: &LabeledDataset, trial: usize) -> Result<ForgetSplit> {
    let seed = derive_seed(cfg.master_seed, trial as u64, "split");
    let f = cfg.forget.effective_fraction();
    match cfg.forget.mode {
        ForgetMode::Random => split_random_forget(data, f, seed),
        ForgetMode::ClassWise => {
            let c = cfg
                .forget
                .target_class
                .ok_or_else(|| Error::config("forget.target_class", "required"))?;
            split_classwise_forget(data, c, f, seed)
        }
    }
}

/// The original model of one trial, trained on all of `D_o`.
pub fn trial_original(cfg: &ExperimentConfig, split: &ForgetSplit, trial: usize) -> Result<ClassifierState> {
    let train_cfg = seeded(&cfg.original_training, cfg.master_seed, trial, "original");
    let init = init_model(
        &cfg.arch,
        mix(
            derive_seed(cfg.master_seed, trial as u64, "original.init"),
            cfg.original_training.seed,
        ),
    )?;
    train(&init, &split.original()?, &train_cfg)
}

/// Everything one trial produces before the method loop.
pub struct TrialContext {
    pub split: ForgetSplit,
    pub original: ClassifierState,
    pub retrained: ClassifierState,
    pub reference: MetricsReport,
}

fn timing(cfg: &ExperimentConfig, seconds: f64, work: u64) -> Timing {
    Timing {
        rte_seconds: if cfg.record_wall_clock { seconds } else { 0.0 },
        work_units: work,
    }
}

pub fn trial_context(cfg: &ExperimentConfig, data: &PreparedData, trial: usize) -> Result<TrialContext> {
    let split = trial_split(cfg, &data.train, trial)?;
    let original = trial_original(cfg, &split, trial)?;
    let retrain_cfg = seeded(&cfg.original_training, cfg.master_seed, trial, "retrain");
    let run = retrain_baseline_logged(&cfg.arch, &split.retain, &retrain_cfg)?;
    let predictor = train_mia(&run.model, &split.retain, &data.test)?;
    let reference = evaluate_reference(
        &run.model,
        &split,
        &data.test,
        &predictor,
        timing(cfg, run.wall_time_seconds, run.report.work_units),
    )?;
    Ok(TrialContext {
        split,
        original,
        retrained: run.model,
        reference,
    })
}

fn run_method(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    ctx: &TrialContext,
    method: Method,
    trial: usize,
) -> Result<RunRecord> {
    let score = |model: &ClassifierState, t: Timing| -> Result<MetricsReport> {
        let predictor = train_mia(model, &ctx.split.retain, &data.test)?;
        evaluate(model, &ctx.split, &data.test, &ctx.reference, &predictor, t)
    };
    let plain = |metrics| RunRecord {
        method,
        trial,
        metrics,
        selected_forget_size: None,
        selected_retain_size: None,
        d_new_size: None,
    };
    match method {
        Method::Retrain => Ok(plain(ctx.reference)),
        Method::Original => Ok(plain(score(&ctx.original, Timing::default())?)),
        Method::Conmu => {
            let knobs = trial_knobs(&cfg.knobs, cfg.master_seed, trial);
            let run = conmu_unlearn(&ctx.original, &ctx.split, &knobs)?;
            let metrics = score(&run.unlearned, timing(cfg, run.wall_time_seconds, run.work_units))?;
            Ok(RunRecord {
                selected_forget_size: Some(run.selected_forget_size),
                selected_retain_size: Some(run.selected_retain_size),
                d_new_size: Some(run.d_new_size),
                ..plain(metrics)
            })
        }
        Method::Finetune => {
            let start = omp_prune(&ctx.original, cfg.knobs.prune_sparsity)?;
            let sched = seeded(&cfg.finetune_schedule(), cfg.master_seed, trial, "finetune");
            let run = finetune_baseline_logged(&start, &ctx.split.retain, &sched)?;
            Ok(plain(score(
                &run.model,
                timing(cfg, run.wall_time_seconds, run.report.work_units),
            )?))
        }
        Method::GradientAscent => {
            let start = omp_prune(&ctx.original, cfg.knobs.prune_sparsity)?;
            let sched = seeded(
                &cfg.gradient_ascent_schedule(),
                cfg.master_seed,
                trial,
                "gradient_ascent",
            );
            let run = gradient_ascent_baseline_logged(&start, &ctx.split.forget, &sched)?;
            Ok(plain(score(
                &run.model,
                timing(cfg, run.wall_time_seconds, run.report.work_units),
            )?))
        }
    }
}

fn trial_error(trial: usize, method: &str) -> impl FnOnce(Error) -> Error {
    let method = method.to_string();
    move |e| Error::Trial {
        trial,
        method,
        source: Box::new(e),
    }
}

/// Runs `methods` against an already built trial context.
pub fn run_methods(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    ctx: &TrialContext,
    trial: usize,
    methods: &[Method],
) -> Result<Vec<RunRecord>> {
    methods
        .iter()
        .map(|&m| run_method(cfg, data, ctx, m, trial).map_err(trial_error(trial, m.name())))
        .collect()
}

/// Validates `cfg`, loads its data and builds every trial's context.
///
/// Contexts depend on the data, split, architecture, original training and
/// seeds, but not on the knobs, so sweeps build them once.
pub fn prepare_trials(cfg: &ExperimentConfig, exec: Execution) -> Result<(PreparedData, Vec<TrialContext>)> {
    cfg.validate()?;
    let data = load_data(cfg)?;
    cfg.arch.check_data(&data.train)?;
    cfg.arch.check_data(&data.test)?;
    let contexts = par::map_indices(exec, cfg.trials, |t| {
        trial_context(cfg, &data, t).map_err(trial_error(t, Method::Retrain.name()))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok((data, contexts))
}

/// Assembles results from per-trial run lists.
pub fn collect_results(cfg: &ExperimentConfig, per_trial: Vec<Result<Vec<RunRecord>>>) -> Result<ExperimentResults> {
    let mut runs = Vec::new();
    for r in per_trial {
        runs.extend(r?);
    }
    Ok(ExperimentResults::new(cfg.clone(), runs))
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResults> {
    run_experiment_with(cfg, Execution::Auto)
}

/// Runs every trial; trials execute concurrently under [`Execution::Auto`].
/// The output does not depend on the execution mode.
pub fn run_experiment_with(cfg: &ExperimentConfig, exec: Execution) -> Result<ExperimentResults> {
    let (data, contexts) = prepare_trials(cfg, exec)?;
    let methods = cfg.effective_methods();
    let per_trial = par::map_indices(exec, contexts.len(), |t| {
        run_methods(cfg, &data, &contexts[t], t, &methods)
    });
    collect_results(cfg, per_trial)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn median_and_std() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(sample_std(&[5.0]), 0.0);
        assert!((sample_std(&[1.0, 2.0, 3.0, 4.0]) - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn trial_knobs_keep_everything_but_seeds() {
        let k = ControlKnobs::default();
        let a = trial_knobs(&k, 7, 0);
        let b = trial_knobs(&k, 7, 1);
        assert_ne!(a.noise.seed, b.noise.seed);
        assert_eq!(a.noise.alpha, k.noise.alpha);
        assert_eq!(a.finetune.epochs, k.finetune.epochs);
        assert_eq!(a.forget_bound, k.forget_bound);
    }

    #[test]
    fn empty_and_foreign_results_are_rejected() {
        assert!(matches!(
            ExperimentResults::from_json("  "),
            Err(Error::MalformedResults(_))
        ));
        assert!(matches!(
            ExperimentResults::from_json("{\"a\": 1}"),
            Err(Error::MalformedResults(_))
        ));
    }
}
