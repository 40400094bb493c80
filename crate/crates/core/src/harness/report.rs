use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::metrics::frm_score;

use super::config::Method;
use super::experiment::{mean, sample_std, ExperimentResults};

/// Allowed gap between a stored FRM and one recomputed from FA/RA/MIA.
pub const FRM_RECOMPUTE_TOL: f64 = 1e-9;

/// One method's row. Rates are percentages; `d_*` are `|mean - retrain mean|`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub method: String,
    pub trials: usize,
    pub ta: f64,
    pub fa: f64,
    pub ra: f64,
    pub mia: f64,
    pub d_ta: f64,
    pub d_fa: f64,
    pub d_ra: f64,
    pub d_mia: f64,
    pub rte_seconds: f64,
    pub work_units: f64,
    pub frm: f64,
    pub frm_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportTable {
    pub rows: Vec<ReportRow>,
}

/// Checks each stored FRM against the same-trial retrain metrics.
pub fn verify_frm(results: &ExperimentResults) -> Result<()> {
    let reference: BTreeMap<usize, _> = results
        .runs_for(Method::Retrain)
        .map(|r| (r.trial, r.metrics.triple()))
        .collect();
    for run in &results.runs {
        let Some(r) = reference.get(&run.trial) else {
            return Err(Error::MalformedResults(format!(
                "trial {} has no retrain run",
                run.trial
            )));
        };
        let recomputed = frm_score(&run.metrics.triple(), r)?;
        if (recomputed - run.metrics.frm).abs() > FRM_RECOMPUTE_TOL {
            return Err(Error::MalformedResults(format!(
                "trial {} {}: stored frm {} disagrees with recomputed {}",
                run.trial,
                run.method.name(),
                run.metrics.frm,
                recomputed
            )));
        }
    }
    Ok(())
}

pub fn build_report(results: &ExperimentResults) -> Result<ReportTable> {
    verify_frm(results)?;
    let column = |m: Method, f: &dyn Fn(&crate::metrics::MetricsReport) -> f64| -> Vec<f64> {
        results.runs_for(m).map(|r| f(&r.metrics)).collect()
    };
    let pct = |m: Method, f: &dyn Fn(&crate::metrics::MetricsReport) -> f64| mean(&column(m, f)) * 100.0;
    let r_ta = pct(Method::Retrain, &|x| x.ta);
    let r_fa = pct(Method::Retrain, &|x| x.fa);
    let r_ra = pct(Method::Retrain, &|x| x.ra);
    let r_mia = pct(Method::Retrain, &|x| x.mia);

    let mut methods: Vec<Method> = results.runs.iter().map(|r| r.method).collect();
    methods.sort();
    methods.dedup();
    let rows = methods
        .into_iter()
        .map(|m| {
            let (ta, fa, ra, mia) = (
                pct(m, &|x| x.ta),
                pct(m, &|x| x.fa),
                pct(m, &|x| x.ra),
                pct(m, &|x| x.mia),
            );
            let frm = column(m, &|x| x.frm);
            ReportRow {
                method: m.name().into(),
                trials: frm.len(),
                ta,
                fa,
                ra,
                mia,
                d_ta: (ta - r_ta).abs(),
                d_fa: (fa - r_fa).abs(),
                d_ra: (ra - r_ra).abs(),
                d_mia: (mia - r_mia).abs(),
                rte_seconds: mean(&column(m, &|x| x.rte_seconds)),
                work_units: mean(&column(m, &|x| x.work_units as f64)),
                frm: mean(&frm),
                frm_std: sample_std(&frm),
            }
        })
        .collect();
    Ok(ReportTable { rows })
}

pub fn load_report(path: impl AsRef<Path>) -> Result<ReportTable> {
    build_report(&ExperimentResults::load(path)?)
}

impl ReportTable {
    pub fn render(&self) -> String {
        let header = ["Method", "TA", "FA", "RA", "MIA", "RTE (s)", "Work", "FRM"];
        let cells: Vec<[String; 8]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.method.clone(),
                    format!("{:.2} ({:.2})", r.ta, r.d_ta),
                    format!("{:.2} ({:.2})", r.fa, r.d_fa),
                    format!("{:.2} ({:.2})", r.ra, r.d_ra),
                    format!("{:.2} ({:.2})", r.mia, r.d_mia),
                    format!("{:.3}", r.rte_seconds),
                    format!("{:.0}", r.work_units),
                    format!("{:.3} ± {:.3}", r.frm, r.frm_std),
                ]
            })
            .collect();
        let mut widths = header.map(|h| h.chars().count());
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.chars().count());
            }
        }
        let line = |cols: &[String]| {
            let parts: Vec<String> = cols
                .iter()
                .zip(widths)
                .enumerate()
                .map(|(i, (c, w))| {
                    let pad = w - c.chars().count();
                    if i == 0 {
                        format!("{c}{}", " ".repeat(pad))
                    } else {
                        format!("{}{c}", " ".repeat(pad))
                    }
                })
                .collect();
            parts.join("  ").trim_end().to_string()
        };
        let mut out = String::new();
        let _ = writeln!(out, "{}", line(&header.map(String::from)));
        let _ = writeln!(
            out,
            "{}",
            "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1))
        );
        for row in &cells {
            let _ = writeln!(out, "{}", line(row));
        }
        out
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::MalformedResults(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::MalformedResults(e.to_string()))
    }
}
