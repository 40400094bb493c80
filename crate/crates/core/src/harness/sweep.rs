use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, Execution};

use super::config::{ExperimentConfig, Method};
use super::experiment::{
    collect_results, mean, median, prepare_trials, run_methods, ExperimentResults, MethodSummary, RunRecord,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Target kept fraction of each set; see [`SELECTION_FRACTION_NOTE`].
    SelectionFraction,
    Alpha,
    Delta,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::SelectionFraction => "selection_fraction",
            SweepAxis::Alpha => "alpha",
            SweepAxis::Delta => "delta",
        }
    }
}

pub const SELECTION_FRACTION_NOTE: &str = "selection_fraction: for each of D_f and D_r the band is widened \
symmetrically (z_lower = z_upper = z) around the mean score until at least ceil(fraction * n) samples are kept";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub base: ExperimentConfig,
}

impl SweepSpec {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut spec: Self = serde_json::from_str(&text)?;
        if let Some(dir) = path.parent() {
            spec.base.resolve_paths(dir);
        }
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::config("values", "must not be empty"));
        }
        if self.values.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::config("values", "must be strictly increasing"));
        }
        for &v in &self.values {
            let ok = match self.axis {
                SweepAxis::SelectionFraction => v > 0.0 && v <= 1.0,
                SweepAxis::Alpha => v >= 0.0 && v.is_finite(),
                SweepAxis::Delta => v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64,
            };
            if !ok {
                return Err(Error::config(
                    "values",
                    format!("{v} is not a valid {} value", self.axis.name()),
                ));
            }
        }
        self.base.validate()
    }

    /// The experiment config for one axis value: ConMU only, other knobs fixed.
    pub fn config_for(&self, value: f64) -> ExperimentConfig {
        let mut cfg = self.base.clone();
        cfg.methods = vec![Method::Conmu];
        match self.axis {
            SweepAxis::SelectionFraction => cfg.knobs.kept_fraction = Some(value),
            SweepAxis::Alpha => cfg.knobs.noise.alpha = value,
            SweepAxis::Delta => cfg.knobs.proxy.delta_epochs = value as usize,
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub conmu: MethodSummary,
    pub retrain: MethodSummary,
    pub mean_selected_forget: f64,
    pub mean_selected_retain: f64,
    pub median_selected_forget: f64,
    pub median_selected_retain: f64,
    pub runs: Vec<RunRecord>,
}

impl SweepPoint {
    fn from_results(value: f64, results: ExperimentResults) -> Result<Self> {
        let get = |m: Method| {
            results
                .summary_for(m)
                .cloned()
                .ok_or_else(|| Error::MalformedResults(format!("sweep point {value} has no {} runs", m.name())))
        };
        let sizes = |f: fn(&RunRecord) -> Option<usize>| -> Vec<f64> {
            results
                .runs_for(Method::Conmu)
                .filter_map(f)
                .map(|s| s as f64)
                .collect()
        };
        let forget = sizes(|r| r.selected_forget_size);
        let retain = sizes(|r| r.selected_retain_size);
        Ok(Self {
            value,
            conmu: get(Method::Conmu)?,
            retrain: get(Method::Retrain)?,
            mean_selected_forget: mean(&forget),
            mean_selected_retain: mean(&retain),
            median_selected_forget: median(&forget),
            median_selected_retain: median(&retain),
            runs: results.runs,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResults {
    pub spec: SweepSpec,
    pub points: Vec<SweepPoint>,
}

pub fn run_sweep(spec: &SweepSpec) -> Result<SweepResults> {
    run_sweep_with(spec, Execution::Auto)
}

/// One experiment per axis value. Trial contexts (data, split, original and
/// retrained models) are built once from the base config and shared by all
/// points; each point's output equals `run_experiment` on its config.
pub fn run_sweep_with(spec: &SweepSpec, exec: Execution) -> Result<SweepResults> {
    spec.validate()?;
    let (data, contexts) = prepare_trials(&spec.base, exec)?;
    let configs: Vec<ExperimentConfig> = spec.values.iter().map(|&v| spec.config_for(v)).collect();
    let (n_points, n_trials) = (configs.len(), contexts.len());
    let mut cells = par::map_indices(exec, n_points * n_trials, |k| {
        let (p, t) = (k / n_trials, k % n_trials);
        let cfg = &configs[p];
        run_methods(cfg, &data, &contexts[t], t, &cfg.effective_methods())
    })
    .into_iter();
    let mut points = Vec::with_capacity(n_points);
    for (cfg, &v) in configs.iter().zip(&spec.values) {
        let per_trial: Vec<_> = cells.by_ref().take(n_trials).collect();
        points.push(SweepPoint::from_results(v, collect_results(cfg, per_trial)?)?);
    }
    Ok(SweepResults {
        spec: spec.clone(),
        points,
    })
}

const STAT_COLUMNS: [&str; 7] = ["ta", "fa", "ra", "mia", "frm", "work_units", "rte_seconds"];

impl SweepResults {
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        if self.spec.axis == SweepAxis::SelectionFraction {
            let _ = writeln!(out, "# {SELECTION_FRACTION_NOTE}");
        }
        let mut header = vec![self.spec.axis.name().to_string(), "trials".into()];
        for stat in ["mean", "median"] {
            header.extend(STAT_COLUMNS.iter().map(|c| format!("{stat}_{c}")));
        }
        header.extend(
            [
                "mean_selected_forget",
                "mean_selected_retain",
                "median_selected_forget",
                "median_selected_retain",
            ]
            .map(String::from),
        );
        let _ = writeln!(out, "{}", header.join(","));
        for p in &self.points {
            let mut row = vec![p.value.to_string(), p.conmu.trials.to_string()];
            for s in [&p.conmu.mean, &p.conmu.median] {
                row.extend([s.ta, s.fa, s.ra, s.mia, s.frm, s.work_units, s.rte_seconds].map(|x| x.to_string()));
            }
            row.extend(
                [
                    p.mean_selected_forget,
                    p.mean_selected_retain,
                    p.median_selected_forget,
                    p.median_selected_retain,
                ]
                .map(|x| x.to_string()),
            );
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }

    /// Writes the full JSON and the summary CSV next to it.
    pub fn save(&self, json_path: impl AsRef<Path>) -> Result<()> {
        let json_path = json_path.as_ref();
        let json = serde_json::to_string_pretty(self)? + "\n";
        std::fs::write(json_path, json).map_err(|e| Error::io(json_path, e))?;
        let csv_path = json_path.with_extension("csv");
        std::fs::write(&csv_path, self.to_csv()).map_err(|e| Error::io(&csv_path, e))
    }

    /// Median of a ConMU metric at each axis value, in axis order.
    pub fn medians(&self, pick: impl Fn(&MethodSummary) -> f64) -> Vec<f64> {
        self.points.iter().map(|p| pick(&p.conmu)).collect()
    }
}

/// Number of adjacent pairs that move against a weakly increasing trend.
pub fn inversions_increasing(v: &[f64]) -> usize {
    v.windows(2).filter(|w| w[1] < w[0]).count()
}

pub fn inversions_decreasing(v: &[f64]) -> usize {
    v.windows(2).filter(|w| w[1] > w[0]).count()
}
