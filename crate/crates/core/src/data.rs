//! Labeled datasets, CSV ingestion, synthetic generation and forget splits.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Slack added before flooring `fraction * count`, so that e.g. `0.29 * 100`
/// yields 29 rather than 28.
const FLOOR_SLACK: f64 = 1e-9;

pub(crate) fn floor_count(fraction: f64, count: usize) -> usize {
    (fraction * count as f64 + FLOOR_SLACK).floor() as usize
}

/// Dense row-major feature matrix with integer labels and stable sample ids.
///
/// Every subset produced by the crate (splits, selections, noised copies)
/// carries the ids of the rows it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    features: Vec<f64>,
    n_features: usize,
    labels: Vec<usize>,
    n_classes: usize,
    sample_ids: Vec<u64>,
}

impl LabeledDataset {
    pub fn new(
        features: Vec<f64>,
        n_features: usize,
        labels: Vec<usize>,
        n_classes: usize,
        sample_ids: Vec<u64>,
    ) -> Result<Self> {
        if n_features == 0 {
            return Err(Error::InvalidDataset("n_features must be positive".into()));
        }
        if n_classes < 2 {
            return Err(Error::InvalidDataset(format!(
                "n_classes must be at least 2, got {n_classes}"
            )));
        }
        if features.len() != labels.len() * n_features {
            return Err(Error::InvalidDataset(format!(
                "feature buffer has {} values, expected {} rows x {} features",
                features.len(),
                labels.len(),
                n_features
            )));
        }
        if sample_ids.len() != labels.len() {
            return Err(Error::InvalidDataset(format!(
                "{} sample ids for {} rows",
                sample_ids.len(),
                labels.len()
            )));
        }
        if let Some((row, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= n_classes) {
            return Err(Error::LabelOutOfRange {
                row,
                label: label.to_string(),
                n_classes,
            });
        }
        let mut seen = HashSet::with_capacity(sample_ids.len());
        if let Some(dup) = sample_ids.iter().find(|id| !seen.insert(**id)) {
            return Err(Error::InvalidDataset(format!("duplicate sample id {dup}")));
        }
        Ok(Self {
            features,
            n_features,
            labels,
            n_classes,
            sample_ids,
        })
    }

    /// Rows get ids `0..n` in order.
    pub fn with_sequential_ids(
        features: Vec<f64>,
        n_features: usize,
        labels: Vec<usize>,
        n_classes: usize,
    ) -> Result<Self> {
        let ids = (0..labels.len() as u64).collect();
        Self::new(features, n_features, labels, n_classes, ids)
    }

    /// A dataset with no rows but the given shape.
    pub fn empty(n_features: usize, n_classes: usize) -> Result<Self> {
        Self::new(Vec::new(), n_features, Vec::new(), n_classes, Vec::new())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sample_ids(&self) -> &[u64] {
        &self.sample_ids
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Rows at `indices`, in the order given.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.n_features);
        let mut labels = Vec::with_capacity(indices.len());
        let mut ids = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
            ids.push(self.sample_ids[i]);
        }
        Self {
            features,
            n_features: self.n_features,
            labels,
            n_classes: self.n_classes,
            sample_ids: ids,
        }
    }

    /// Same labels and ids, new feature values.
    pub fn with_features(&self, features: Vec<f64>) -> Result<Self> {
        if features.len() != self.features.len() {
            return Err(Error::DimensionMismatch {
                expected: self.features.len(),
                found: features.len(),
            });
        }
        Ok(Self {
            features,
            ..self.clone()
        })
    }

    /// All rows whose label differs from `class`.
    pub fn without_class(&self, class: usize) -> Self {
        let keep: Vec<usize> = (0..self.len()).filter(|&i| self.labels[i] != class).collect();
        self.subset(&keep)
    }

    /// Union of two id-disjoint datasets, rows ordered by ascending sample id.
    ///
    /// Ordering by id makes the union of a split's two halves reproduce the
    /// source dataset's row order whenever the source ids were ascending.
    pub fn union_by_id(&self, other: &Self) -> Result<Self> {
        if self.n_features != other.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                found: other.n_features,
            });
        }
        if self.n_classes != other.n_classes {
            return Err(Error::InvalidDataset(format!(
                "cannot merge datasets with {} and {} classes",
                self.n_classes, other.n_classes
            )));
        }
        let mut order: Vec<(u64, bool, usize)> = self
            .sample_ids
            .iter()
            .enumerate()
            .map(|(i, &id)| (id, false, i))
            .chain(other.sample_ids.iter().enumerate().map(|(i, &id)| (id, true, i)))
            .collect();
        order.sort_unstable();
        if let Some(w) = order.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::InvalidDataset(format!(
                "sample id {} present in both datasets",
                w[0].0
            )));
        }
        let mut features = Vec::with_capacity(order.len() * self.n_features);
        let mut labels = Vec::with_capacity(order.len());
        let mut ids = Vec::with_capacity(order.len());
        for (id, from_other, i) in order {
            let src = if from_other { other } else { self };
            features.extend_from_slice(src.row(i));
            labels.push(src.labels[i]);
            ids.push(id);
        }
        Ok(Self {
            features,
            n_features: self.n_features,
            labels,
            n_classes: self.n_classes,
            sample_ids: ids,
        })
    }

    /// Writes `f0..f{d-1}` feature columns followed by the label column.
    pub fn write_csv(&self, path: impl AsRef<Path>, label_column: &str) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = (0..self.n_features).map(|j| format!("f{j}")).collect();
        header.push(label_column.to_string());
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            rec.push(self.labels[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Reads a headed CSV. Ids are assigned `0..n` in file order and the label
/// column is removed from the features. No scaling is applied.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str, n_classes: usize) -> Result<LabeledDataset> {
    let path = path.as_ref();
    if n_classes < 2 {
        return Err(Error::InvalidArgument(format!(
            "n_classes must be at least 2, got {n_classes}"
        )));
    }
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header = reader.headers()?.clone();
    let label_idx = header
        .iter()
        .position(|h| h.trim() == label_column)
        .ok_or_else(|| Error::MissingLabelColumn(label_column.to_string()))?;
    let n_features = header.len() - 1;
    if n_features == 0 {
        return Err(Error::InvalidDataset("no feature columns".into()));
    }

    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = r + 1;
        for (c, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            if c == label_idx {
                let label =
                    cell.parse::<usize>()
                        .ok()
                        .filter(|&l| l < n_classes)
                        .ok_or_else(|| Error::LabelOutOfRange {
                            row,
                            label: cell.to_string(),
                            n_classes,
                        })?;
                labels.push(label);
            } else {
                let v = cell.parse::<f64>().map_err(|_| Error::BadCell {
                    row,
                    column: header[c].to_string(),
                    value: cell.to_string(),
                })?;
                features.push(v);
            }
        }
    }
    if labels.is_empty() {
        return Err(Error::EmptyDataset(format!("{} has no data rows", path.display())));
    }
    LabeledDataset::with_sequential_ids(features, n_features, labels, n_classes)
}

/// Parameters of the Gaussian-cluster generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_samples: usize,
    pub n_features: usize,
    pub n_classes: usize,
    pub class_separation: f64,
    pub seed: u64,
}

/// Isotropic unit-variance Gaussian clusters, one per class.
///
/// Centers sit on distinct points of a grid with spacing `class_separation`,
/// so any two centers are at least that far apart. Class sizes differ by at
/// most one.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<LabeledDataset> {
    let &SyntheticSpec {
        n_samples,
        n_features,
        n_classes,
        class_separation,
        seed,
    } = spec;
    if n_classes < 2 {
        return Err(Error::InvalidArgument("n_classes must be at least 2".into()));
    }
    if n_features == 0 {
        return Err(Error::InvalidArgument("n_features must be positive".into()));
    }
    if n_samples < n_classes {
        return Err(Error::InvalidArgument(format!(
            "n_samples ({n_samples}) must be at least n_classes ({n_classes})"
        )));
    }
    if !(class_separation > 0.0 && class_separation.is_finite()) {
        return Err(Error::InvalidArgument(
            "class_separation must be positive and finite".into(),
        ));
    }

    // smallest base k with k^d >= C
    let mut base = 2usize;
    while (0..n_features)
        .try_fold(1usize, |acc, _| acc.checked_mul(base).filter(|&v| v < n_classes))
        .is_some()
    {
        base += 1;
    }
    let mut centers: Vec<Vec<f64>> = (0..n_classes)
        .map(|c| {
            let mut digits = c;
            (0..n_features)
                .map(|_| {
                    let d = digits % base;
                    digits /= base;
                    d as f64 * class_separation
                })
                .collect()
        })
        .collect();
    for j in 0..n_features {
        let mean = centers.iter().map(|c| c[j]).sum::<f64>() / n_classes as f64;
        for c in &mut centers {
            c[j] -= mean;
        }
    }

    let mut rng = rng::stream(seed);
    centers.shuffle(&mut rng);
    let mut labels: Vec<usize> = (0..n_samples).map(|i| i % n_classes).collect();
    labels.shuffle(&mut rng);
    let mut features = Vec::with_capacity(n_samples * n_features);
    for &label in &labels {
        for &c in &centers[label] {
            let z: f64 = StandardNormal.sample(&mut rng);
            features.push(c + z);
        }
    }
    LabeledDataset::with_sequential_ids(features, n_features, labels, n_classes)
}

/// Splits off a uniformly random `fraction` of rows as a held-out set.
/// Returns `(rest, held_out)`, both in source order.
pub fn holdout_split(data: &LabeledDataset, fraction: f64, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "held-out fraction must be in (0, 1), got {fraction}"
        )));
    }
    let k = floor_count(fraction, data.len());
    if k == 0 || k == data.len() {
        return Err(Error::InvalidArgument(format!(
            "held-out fraction {fraction} of {} rows leaves an empty side",
            data.len()
        )));
    }
    let (held, rest) = partition_random(data.len(), k, seed);
    Ok((data.subset(&rest), data.subset(&held)))
}

/// Chooses `k` of `0..n` uniformly; returns (chosen, rest), both ascending.
fn partition_random(n: usize, k: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = rng::stream(seed);
    let mut chosen = index::sample(&mut rng, n, k).into_vec();
    chosen.sort_unstable();
    let mut is_chosen = vec![false; n];
    for &i in &chosen {
        is_chosen[i] = true;
    }
    let rest = (0..n).filter(|&i| !is_chosen[i]).collect();
    (chosen, rest)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForgetMode {
    Random,
    ClassWise,
}

/// Partition of `D_o` into the forget set `D_f` and retain set `D_r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgetSplit {
    pub forget: LabeledDataset,
    pub retain: LabeledDataset,
    pub mode: ForgetMode,
    pub forget_fraction: f64,
    pub target_class: Option<usize>,
}

impl ForgetSplit {
    /// `D_f ∪ D_r`, ordered by sample id.
    pub fn original(&self) -> Result<LabeledDataset> {
        self.forget.union_by_id(&self.retain)
    }
}

pub fn split_random_forget(data: &LabeledDataset, fraction: f64, seed: u64) -> Result<ForgetSplit> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "random forget fraction must be in (0, 1), got {fraction}"
        )));
    }
    let k = floor_count(fraction, data.len());
    if k == 0 {
        return Err(Error::EmptyForgetSet(format!("floor({fraction} * {}) = 0", data.len())));
    }
    let (forget, retain) = partition_random(data.len(), k, seed);
    Ok(ForgetSplit {
        forget: data.subset(&forget),
        retain: data.subset(&retain),
        mode: ForgetMode::Random,
        forget_fraction: fraction,
        target_class: None,
    })
}

pub fn split_classwise_forget(
    data: &LabeledDataset,
    target_class: usize,
    fraction: f64,
    seed: u64,
) -> Result<ForgetSplit> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "class-wise forget fraction must be in (0, 1], got {fraction}"
        )));
    }
    let members: Vec<usize> = (0..data.len()).filter(|&i| data.labels()[i] == target_class).collect();
    if members.is_empty() {
        return Err(Error::ClassAbsent(target_class));
    }
    let k = floor_count(fraction, members.len()).min(members.len());
    if k == 0 {
        return Err(Error::EmptyForgetSet(format!(
            "floor({fraction} * {}) = 0 samples of class {target_class}",
            members.len()
        )));
    }
    let (chosen, _) = partition_random(members.len(), k, seed);
    let mut is_forget = vec![false; data.len()];
    for &c in &chosen {
        is_forget[members[c]] = true;
    }
    let (forget, retain): (Vec<usize>, Vec<usize>) = (0..data.len()).partition(|&i| is_forget[i]);
    Ok(ForgetSplit {
        forget: data.subset(&forget),
        retain: data.subset(&retain),
        mode: ForgetMode::ClassWise,
        forget_fraction: fraction,
        target_class: Some(target_class),
    })
}

/// Per-column affine standardization, fitted on one dataset and applied
/// explicitly to others. Constant columns are centered but not scaled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Standardizer {
    pub fn fit(data: &LabeledDataset) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyDataset("cannot fit a standardizer".into()));
        }
        let n = data.len() as f64;
        let d = data.n_features();
        let mut means = vec![0.0; d];
        for i in 0..data.len() {
            for (m, v) in means.iter_mut().zip(data.row(i)) {
                *m += v;
            }
        }
        means.iter_mut().for_each(|m| *m /= n);
        let mut vars = vec![0.0; d];
        for i in 0..data.len() {
            for ((s, v), m) in vars.iter_mut().zip(data.row(i)).zip(&means) {
                *s += (v - m) * (v - m);
            }
        }
        let scales = vars
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { means, scales })
    }

    pub fn apply(&self, data: &LabeledDataset) -> Result<LabeledDataset> {
        if data.n_features() != self.means.len() {
            return Err(Error::DimensionMismatch {
                expected: self.means.len(),
                found: data.n_features(),
            });
        }
        let d = self.means.len();
        let features = data
            .features()
            .iter()
            .enumerate()
            .map(|(k, v)| (v - self.means[k % d]) / self.scales[k % d])
            .collect();
        data.with_features(features)
    }
}
