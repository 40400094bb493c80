//! Desk-scale MLP classifier with exact, deterministic SGD.
//!
//! Parameters live in one flat `Vec<f64>`. Layer `l` stores its weight matrix
//! (`fan_out x fan_in`, row-major) followed by its bias vector; see
//! [`LayerLayout`]. A boolean prune mask runs parallel to the parameters and
//! masked entries are held at exactly `0.0` through every update.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{floor_count, LabeledDataset};
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    #[serde(default)]
    pub kind: ModelKind,
    /// Input width, hidden widths..., number of classes.
    pub layer_widths: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerLayout {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl ArchitectureSpec {
    pub fn mlp(layer_widths: Vec<usize>, activation: Activation) -> Result<Self> {
        let arch = Self {
            kind: ModelKind::Mlp,
            layer_widths,
            activation,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 3 {
            return Err(Error::InvalidArchitecture(
                "need input width, at least one hidden width, and an output width".into(),
            ));
        }
        if self.layer_widths.contains(&0) {
            return Err(Error::InvalidArchitecture("layer widths must be positive".into()));
        }
        if self.n_classes() < 2 {
            return Err(Error::InvalidArchitecture("output width must be at least 2".into()));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn n_classes(&self) -> usize {
        *self.layer_widths.last().expect("validated architecture")
    }

    pub fn layout(&self) -> Vec<LayerLayout> {
        let mut offset = 0;
        self.layer_widths
            .windows(2)
            .map(|w| {
                let l = LayerLayout {
                    fan_in: w[0],
                    fan_out: w[1],
                    weight_offset: offset,
                    bias_offset: offset + w[0] * w[1],
                };
                offset += w[0] * w[1] + w[1];
                l
            })
            .collect()
    }

    pub fn n_params(&self) -> usize {
        self.layer_widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Flat indices of weight (non-bias) entries.
    pub fn weight_indices(&self) -> Vec<usize> {
        self.layout()
            .iter()
            .flat_map(|l| l.weight_offset..l.bias_offset)
            .collect()
    }

    pub fn check_data(&self, data: &LabeledDataset) -> Result<()> {
        if data.n_features() != self.input_width() {
            return Err(Error::DimensionMismatch {
                expected: self.input_width(),
                found: data.n_features(),
            });
        }
        if data.n_classes() != self.n_classes() {
            return Err(Error::DimensionMismatch {
                expected: self.n_classes(),
                found: data.n_classes(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            learning_rate: 1e-2,
            batch_size: 128,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Parameters, prune mask and metadata of one model (original, unlearned,
/// retrained or proxy).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierState {
    arch: ArchitectureSpec,
    params: Vec<f64>,
    prune_mask: Vec<bool>,
    rng_seed: u64,
    trained_epochs: u64,
}

/// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights, zero biases.
pub fn init_model(arch: &ArchitectureSpec, seed: u64) -> Result<ClassifierState> {
    arch.validate()?;
    let mut params = vec![0.0; arch.n_params()];
    let mut rng = rng::stream(seed);
    for l in arch.layout() {
        let bound = 1.0 / (l.fan_in as f64).sqrt();
        for w in &mut params[l.weight_offset..l.bias_offset] {
            *w = rng.random_range(-bound..=bound);
        }
    }
    Ok(ClassifierState {
        arch: arch.clone(),
        prune_mask: vec![true; params.len()],
        params,
        rng_seed: seed,
        trained_epochs: 0,
    })
}

impl ClassifierState {
    pub fn from_parts(
        arch: ArchitectureSpec,
        params: Vec<f64>,
        prune_mask: Vec<bool>,
        rng_seed: u64,
        trained_epochs: u64,
    ) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.n_params() {
            return Err(Error::DimensionMismatch {
                expected: arch.n_params(),
                found: params.len(),
            });
        }
        if prune_mask.len() != params.len() {
            return Err(Error::DimensionMismatch {
                expected: params.len(),
                found: prune_mask.len(),
            });
        }
        if params.iter().zip(&prune_mask).any(|(&p, &active)| !active && p != 0.0) {
            return Err(Error::InvalidArgument(
                "masked-out parameters must be exactly zero".into(),
            ));
        }
        Ok(Self {
            arch,
            params,
            prune_mask,
            rng_seed,
            trained_epochs,
        })
    }

    pub fn arch(&self) -> &ArchitectureSpec {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn prune_mask(&self) -> &[bool] {
        &self.prune_mask
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn trained_epochs(&self) -> u64 {
        self.trained_epochs
    }

    pub fn n_active(&self) -> usize {
        self.prune_mask.iter().filter(|&&m| m).count()
    }

    /// Same model with replaced parameters; masked entries are forced to zero.
    pub fn with_params(&self, mut params: Vec<f64>) -> Result<Self> {
        if params.len() != self.params.len() {
            return Err(Error::DimensionMismatch {
                expected: self.params.len(),
                found: params.len(),
            });
        }
        for (p, &m) in params.iter_mut().zip(&self.prune_mask) {
            if !m {
                *p = 0.0;
            }
        }
        Ok(Self { params, ..self.clone() })
    }

    fn check_input(&self, n_features: usize) -> Result<()> {
        if n_features != self.arch.input_width() {
            return Err(Error::DimensionMismatch {
                expected: self.arch.input_width(),
                found: n_features,
            });
        }
        Ok(())
    }

    /// Forward pass keeping every layer's output in `ws`; returns the logits.
    fn forward_ws<'w>(&self, x: &[f64], ws: &'w mut Workspace) -> &'w [f64] {
        let layout = self.arch.layout();
        let last = layout.len() - 1;
        for (li, l) in layout.iter().enumerate() {
            let (prev, rest) = ws.acts.split_at_mut(li + 1);
            let input: &[f64] = if li == 0 { x } else { &prev[li] };
            let out = &mut rest[0];
            out.clear();
            for o in 0..l.fan_out {
                let w = &self.params[l.weight_offset + o * l.fan_in..l.weight_offset + (o + 1) * l.fan_in];
                let mut z = self.params[l.bias_offset + o];
                for (wi, xi) in w.iter().zip(input) {
                    z += wi * xi;
                }
                out.push(if li == last { z } else { self.arch.activation.apply(z) });
            }
        }
        &ws.acts[layout.len()]
    }

    /// Accumulates `d(loss)/d(params)` into `grad` given `d(loss)/d(logits)`
    /// for the sample whose activations are in `ws`.
    fn backward_ws(&self, x: &[f64], ws: &mut Workspace, dlogits: &[f64], grad: &mut [f64]) {
        let layout = self.arch.layout();
        ws.delta.clear();
        ws.delta.extend_from_slice(dlogits);
        for (li, l) in layout.iter().enumerate().rev() {
            let input: &[f64] = if li == 0 { x } else { &ws.acts[li] };
            for o in 0..l.fan_out {
                let d = ws.delta[o];
                if d == 0.0 {
                    continue;
                }
                let gw = &mut grad[l.weight_offset + o * l.fan_in..l.weight_offset + (o + 1) * l.fan_in];
                for (g, xi) in gw.iter_mut().zip(input) {
                    *g += d * xi;
                }
                grad[l.bias_offset + o] += d;
            }
            if li > 0 {
                ws.next_delta.clear();
                ws.next_delta.resize(l.fan_in, 0.0);
                for o in 0..l.fan_out {
                    let d = ws.delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    let w = &self.params[l.weight_offset + o * l.fan_in..l.weight_offset + (o + 1) * l.fan_in];
                    for (nd, wi) in ws.next_delta.iter_mut().zip(w) {
                        *nd += wi * d;
                    }
                }
                for (nd, &a) in ws.next_delta.iter_mut().zip(input) {
                    *nd *= self.arch.activation.derivative_from_output(a);
                }
                std::mem::swap(&mut ws.delta, &mut ws.next_delta);
            }
        }
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x.len())?;
        let mut ws = Workspace::new(&self.arch);
        Ok(self.forward_ws(x, &mut ws).to_vec())
    }

    pub fn probs(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(x)?))
    }
}

#[derive(Debug)]
struct Workspace {
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    next_delta: Vec<f64>,
}

impl Workspace {
    fn new(arch: &ArchitectureSpec) -> Self {
        Self {
            acts: arch.layer_widths.iter().map(|&w| Vec::with_capacity(w)).collect(),
            delta: Vec::new(),
            next_delta: Vec::new(),
        }
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `-ln softmax(logits)[label]`, computed without forming the probabilities.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln() + max;
    lse - logits[label]
}

/// Floor applied to probabilities before taking KL log-ratios.
pub const PROB_FLOOR: f64 = 1e-12;

/// Clamp to `[PROB_FLOOR, 1]` and renormalize.
pub fn smooth_probs(p: &[f64]) -> Vec<f64> {
    let clamped: Vec<f64> = p.iter().map(|v| v.clamp(PROB_FLOOR, 1.0)).collect();
    let s: f64 = clamped.iter().sum();
    clamped.into_iter().map(|v| v / s).collect()
}

/// `KL(p || q)` in nats, after smoothing both sides.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    let (p, q) = (smooth_probs(p), smooth_probs(q));
    p.iter().zip(&q).map(|(a, b)| a * (a / b).ln()).sum()
}

/// Gradient of `KL(teacher || softmax(z))` w.r.t. the student logits `z`,
/// including the clamp-and-renormalize smoothing of the student side.
/// `teacher` must already be smoothed. Adds `scale * grad` into `out`.
fn add_kl_logit_grad(teacher: &[f64], student_probs: &[f64], scale: f64, out: &mut [f64]) {
    let clamped: Vec<f64> = student_probs.iter().map(|v| v.clamp(PROB_FLOOR, 1.0)).collect();
    let total: f64 = clamped.iter().sum();
    // dL/dp_k, zero where the floor is active
    let g: Vec<f64> = teacher
        .iter()
        .zip(student_probs)
        .zip(&clamped)
        .map(|((a, &p), &c)| if p > PROB_FLOOR { -a / c + 1.0 / total } else { 0.0 })
        .collect();
    let pg: f64 = student_probs.iter().zip(&g).map(|(p, g)| p * g).sum();
    for ((o, p), gk) in out.iter_mut().zip(student_probs).zip(&g) {
        *o += scale * p * (gk - pg);
    }
}

/// What the minibatch loop minimizes.
#[derive(Debug, Clone, Copy)]
pub enum Objective<'a> {
    /// Mean cross-entropy.
    CrossEntropy,
    /// Mean of `CE + gamma * KL(teacher || student)` per sample.
    Distill { teacher: &'a ClassifierState, gamma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepDirection {
    Descent,
    Ascent,
}

struct LossKernel<'a> {
    model: &'a ClassifierState,
    objective: Objective<'a>,
    ws: Workspace,
    teacher_ws: Option<Workspace>,
    dlogits: Vec<f64>,
}

impl<'a> LossKernel<'a> {
    fn new(model: &'a ClassifierState, objective: Objective<'a>) -> Self {
        let teacher_ws = match objective {
            Objective::Distill { teacher, gamma } if gamma != 0.0 => Some(Workspace::new(&teacher.arch)),
            _ => None,
        };
        Self {
            model,
            objective,
            ws: Workspace::new(&model.arch),
            teacher_ws,
            dlogits: Vec::new(),
        }
    }

    fn teacher_probs(&mut self, x: &[f64]) -> Option<(Vec<f64>, f64)> {
        match (self.objective, self.teacher_ws.as_mut()) {
            (Objective::Distill { teacher, gamma }, Some(tws)) => {
                Some((smooth_probs(&softmax(teacher.forward_ws(x, tws))), gamma))
            }
            _ => None,
        }
    }

    fn loss(&mut self, x: &[f64], label: usize) -> f64 {
        let teacher = self.teacher_probs(x);
        let logits = self.model.forward_ws(x, &mut self.ws);
        let mut loss = cross_entropy(logits, label);
        if let Some((t, gamma)) = teacher {
            loss += gamma * kl_divergence(&t, &softmax(logits));
        }
        loss
    }

    /// Adds this sample's parameter gradient into `grad`.
    fn accumulate(&mut self, x: &[f64], label: usize, grad: &mut [f64]) {
        let teacher = self.teacher_probs(x);
        let probs = softmax(self.model.forward_ws(x, &mut self.ws));
        self.dlogits.clear();
        self.dlogits.extend_from_slice(&probs);
        self.dlogits[label] -= 1.0;
        if let Some((t, gamma)) = teacher {
            add_kl_logit_grad(&t, &probs, gamma, &mut self.dlogits);
        }
        let dl = std::mem::take(&mut self.dlogits);
        self.model.backward_ws(x, &mut self.ws, &dl, grad);
        self.dlogits = dl;
    }
}

fn check_objective(model: &ClassifierState, data: &LabeledDataset, objective: Objective) -> Result<()> {
    model.arch.check_data(data)?;
    if let Objective::Distill { teacher, gamma } = objective {
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!("gamma must be >= 0, got {gamma}")));
        }
        teacher.arch.check_data(data)?;
    }
    Ok(())
}

/// Mean objective value over `data`.
pub fn mean_loss(model: &ClassifierState, data: &LabeledDataset, objective: Objective) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset("loss over an empty dataset".into()));
    }
    check_objective(model, data, objective)?;
    let mut k = LossKernel::new(model, objective);
    let total: f64 = (0..data.len()).map(|i| k.loss(data.row(i), data.labels()[i])).sum();
    Ok(total / data.len() as f64)
}

/// Analytic gradient of [`mean_loss`] w.r.t. every parameter (masked
/// entries included, before masking).
pub fn mean_gradient(model: &ClassifierState, data: &LabeledDataset, objective: Objective) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::EmptyDataset("gradient over an empty dataset".into()));
    }
    check_objective(model, data, objective)?;
    let mut grad = vec![0.0; model.params.len()];
    let mut k = LossKernel::new(model, objective);
    for i in 0..data.len() {
        k.accumulate(data.row(i), data.labels()[i], &mut grad);
    }
    let inv = 1.0 / data.len() as f64;
    grad.iter_mut().for_each(|g| *g *= inv);
    Ok(grad)
}

/// Bookkeeping from one minibatch run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    /// Per-sample gradient evaluations performed.
    pub work_units: u64,
    /// Ids of every sample that contributed a gradient.
    pub seen_ids: BTreeSet<u64>,
    pub batch_size_used: usize,
    pub batch_clipped: bool,
}

/// Minibatch SGD with a seeded per-epoch shuffle. Single-threaded.
pub fn fit(
    model: &ClassifierState,
    data: &LabeledDataset,
    cfg: &TrainConfig,
    objective: Objective,
    direction: StepDirection,
) -> Result<(ClassifierState, TrainReport)> {
    if data.is_empty() {
        return Err(Error::EmptyDataset("cannot train on an empty dataset".into()));
    }
    cfg.validate()?;
    check_objective(model, data, objective)?;

    let batch = cfg.batch_size.min(data.len());
    let mut report = TrainReport {
        batch_size_used: batch,
        batch_clipped: batch < cfg.batch_size,
        ..Default::default()
    };
    if report.batch_clipped {
        log::info!("batch size {} clipped to dataset size {}", cfg.batch_size, data.len());
    }

    let mut current = model.clone();
    let mut rng = rng::stream(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grad = vec![0.0; current.params.len()];
    let sign = match direction {
        StepDirection::Descent => -1.0,
        StepDirection::Ascent => 1.0,
    };

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            {
                let mut k = LossKernel::new(&current, objective);
                for &i in chunk {
                    k.accumulate(data.row(i), data.labels()[i], &mut grad);
                }
            }
            let inv = 1.0 / chunk.len() as f64;
            let step = sign * cfg.learning_rate;
            for ((p, g), &m) in current.params.iter_mut().zip(&grad).zip(&current.prune_mask) {
                *p = if m { *p + step * (g * inv) } else { 0.0 };
            }
            report.work_units += chunk.len() as u64;
            report.seen_ids.extend(chunk.iter().map(|&i| data.sample_ids()[i]));
        }
        current.trained_epochs += 1;
    }
    Ok((current, report))
}

/// Cross-entropy SGD on `data`.
pub fn train(model: &ClassifierState, data: &LabeledDataset, cfg: &TrainConfig) -> Result<ClassifierState> {
    train_logged(model, data, cfg).map(|(m, _)| m)
}

pub fn train_logged(
    model: &ClassifierState,
    data: &LabeledDataset,
    cfg: &TrainConfig,
) -> Result<(ClassifierState, TrainReport)> {
    fit(model, data, cfg, Objective::CrossEntropy, StepDirection::Descent)
}

pub fn forward_probs(model: &ClassifierState, data: &LabeledDataset) -> Result<Vec<Vec<f64>>> {
    forward_probs_with(Execution::Auto, model, data)
}

pub fn forward_probs_with(exec: Execution, model: &ClassifierState, data: &LabeledDataset) -> Result<Vec<Vec<f64>>> {
    model.check_input(data.n_features())?;
    Ok(par::map_indices(exec, data.len(), |i| {
        let mut ws = Workspace::new(&model.arch);
        softmax(model.forward_ws(data.row(i), &mut ws))
    }))
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn predict(model: &ClassifierState, data: &LabeledDataset) -> Result<Vec<usize>> {
    Ok(forward_probs(model, data)?.iter().map(|p| argmax(p)).collect())
}

pub fn accuracy(model: &ClassifierState, data: &LabeledDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset("accuracy of an empty dataset".into()));
    }
    let preds = predict(model, data)?;
    let correct = preds.iter().zip(data.labels()).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / data.len() as f64)
}

/// One-shot global magnitude pruning over all weights (biases exempt).
/// Zeroes the `floor(sparsity * n_weights)` smallest-magnitude weights,
/// ties broken by lower flat index.
pub fn omp_prune(model: &ClassifierState, sparsity: f64) -> Result<ClassifierState> {
    if !(0.0..1.0).contains(&sparsity) {
        return Err(Error::InvalidArgument(format!(
            "sparsity must be in [0, 1), got {sparsity}"
        )));
    }
    let mut weights = model.arch.weight_indices();
    let k = floor_count(sparsity, weights.len());
    if k == 0 {
        return Ok(model.clone());
    }
    weights.sort_by(|&a, &b| model.params[a].abs().total_cmp(&model.params[b].abs()).then(a.cmp(&b)));
    let mut out = model.clone();
    for &i in &weights[..k] {
        out.params[i] = 0.0;
        out.prune_mask[i] = false;
    }
    Ok(out)
}

const SNAPSHOT_FORMAT: &str = "conmu-classifier";
const SNAPSHOT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Snapshot {
    format: String,
    version: u32,
    #[serde(flatten)]
    state: ClassifierState,
}

impl ClassifierState {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&Snapshot {
            format: SNAPSHOT_FORMAT.into(),
            version: SNAPSHOT_VERSION,
            state: self.clone(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let snap: Snapshot = serde_json::from_str(s)?;
        if snap.format != SNAPSHOT_FORMAT {
            return Err(Error::Snapshot(format!("unknown format `{}`", snap.format)));
        }
        if snap.version != SNAPSHOT_VERSION {
            return Err(Error::Snapshot(format!("unsupported version {}", snap.version)));
        }
        let s = snap.state;
        Self::from_parts(s.arch, s.params, s.prune_mask, s.rng_seed, s.trained_epochs)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, SyntheticSpec};

    fn arch(widths: &[usize]) -> ArchitectureSpec {
        ArchitectureSpec::mlp(widths.to_vec(), Activation::Relu).unwrap()
    }

    fn blobs(n: usize, sep: f64, seed: u64) -> LabeledDataset {
        gen_synthetic(&SyntheticSpec {
            n_samples: n,
            n_features: 2,
            n_classes: 2,
            class_separation: sep,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn architecture_validation() {
        assert!(ArchitectureSpec::mlp(vec![2, 2], Activation::Relu).is_err());
        assert!(ArchitectureSpec::mlp(vec![2, 0, 2], Activation::Relu).is_err());
        assert!(ArchitectureSpec::mlp(vec![2, 3, 1], Activation::Relu).is_err());
        let a = arch(&[3, 4, 2]);
        assert_eq!(a.n_params(), 3 * 4 + 4 + 4 * 2 + 2);
        assert_eq!(a.weight_indices().len(), 20);
    }

    #[test]
    fn init_is_seeded_with_zero_biases() {
        let a = arch(&[4, 8, 3]);
        let m = init_model(&a, 11).unwrap();
        assert_eq!(m, init_model(&a, 11).unwrap());
        assert_ne!(m.params(), init_model(&a, 12).unwrap().params());
        for l in a.layout() {
            assert!(m.params()[l.bias_offset..l.bias_offset + l.fan_out]
                .iter()
                .all(|&b| b == 0.0));
            let bound = 1.0 / (l.fan_in as f64).sqrt();
            assert!(m.params()[l.weight_offset..l.bias_offset]
                .iter()
                .all(|w| w.abs() <= bound));
        }
        assert!(m.prune_mask().iter().all(|&b| b));
    }

    #[test]
    fn probabilities_are_normalized() {
        let ds = blobs(50, 3.0, 1);
        let m = init_model(&arch(&[2, 5, 2]), 3).unwrap();
        for row in forward_probs(&m, &ds).unwrap() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&p| p > 0.0 && p < 1.0));
        }
    }

    #[test]
    fn zero_model_is_uniform() {
        let a = arch(&[2, 3, 4]);
        let zero =
            ClassifierState::from_parts(a.clone(), vec![0.0; a.n_params()], vec![true; a.n_params()], 0, 0).unwrap();
        let p = zero.probs(&[1.5, -2.0]).unwrap();
        assert!(p.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn hand_computed_forward() {
        // 2 -> 1 (tanh) -> 2
        let a = ArchitectureSpec::mlp(vec![2, 1, 2], Activation::Tanh).unwrap();
        // w1 = [0.5, -0.25], b1 = 0.1, w2 = [[2.0], [-1.0]], b2 = [0.0, 0.3]
        let params = vec![0.5, -0.25, 0.1, 2.0, -1.0, 0.0, 0.3];
        let m = ClassifierState::from_parts(a, params, vec![true; 7], 0, 0).unwrap();
        let x = [0.8, 0.4];
        let h = (0.5f64 * 0.8 - 0.25 * 0.4 + 0.1).tanh();
        let z0 = 2.0 * h;
        let z1 = -h + 0.3;
        let e0 = z0.exp();
        let e1 = z1.exp();
        let p = m.probs(&x).unwrap();
        assert!((p[0] - e0 / (e0 + e1)).abs() < 1e-12);
        assert!((p[1] - e1 / (e0 + e1)).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let m = init_model(&arch(&[3, 4, 2]), 0).unwrap();
        assert!(forward_probs(&m, &blobs(10, 3.0, 0)).is_err());
    }

    #[test]
    fn zero_epochs_is_identity() {
        let ds = blobs(40, 3.0, 2);
        let m = init_model(&arch(&[2, 6, 2]), 1).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        assert_eq!(train(&m, &ds, &cfg).unwrap(), m);
    }

    #[test]
    fn training_is_deterministic() {
        let ds = blobs(60, 3.0, 2);
        let m = init_model(&arch(&[2, 6, 2]), 1).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            learning_rate: 0.05,
            batch_size: 8,
            seed: 4,
        };
        let a = train(&m, &ds, &cfg).unwrap();
        assert_eq!(a, train(&m, &ds, &cfg).unwrap());
        assert_eq!(a.trained_epochs(), 3);
    }

    #[test]
    fn training_rejects_empty_data() {
        let m = init_model(&arch(&[2, 6, 2]), 1).unwrap();
        let empty = LabeledDataset::empty(2, 2).unwrap();
        assert!(matches!(
            train(&m, &empty, &TrainConfig::default()),
            Err(Error::EmptyDataset(_))
        ));
    }

    #[test]
    fn batch_is_clipped_to_dataset() {
        let ds = blobs(10, 3.0, 2);
        let m = init_model(&arch(&[2, 3, 2]), 1).unwrap();
        let (_, r) = train_logged(
            &m,
            &ds,
            &TrainConfig {
                epochs: 2,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(r.batch_clipped);
        assert_eq!(r.batch_size_used, 10);
        assert_eq!(r.work_units, 20);
    }

    #[test]
    fn single_logistic_step_matches_finite_difference() {
        // 1 -> 1 -> 2 network; only the first weight is free (the rest are
        // pruned to zero except a fixed output map), so one SGD step on one
        // sample moves exactly one coordinate.
        let a = ArchitectureSpec::mlp(vec![1, 1, 2], Activation::Tanh).unwrap();
        let params = vec![0.7, 0.0, 1.0, -1.0, 0.0, 0.0];
        let mask = vec![true, false, true, true, false, false];
        let m = ClassifierState::from_parts(a, params, mask, 0, 0).unwrap();
        let ds = LabeledDataset::with_sequential_ids(vec![0.9], 1, vec![1], 2).unwrap();
        let loss_at = |w: f64| {
            let mut p = m.params().to_vec();
            p[0] = w;
            mean_loss(&m.with_params(p).unwrap(), &ds, Objective::CrossEntropy).unwrap()
        };
        let h = 1e-5;
        let fd = (loss_at(0.7 + h) - loss_at(0.7 - h)) / (2.0 * h);
        let lr = 0.1;
        let cfg = TrainConfig {
            epochs: 1,
            learning_rate: lr,
            batch_size: 1,
            seed: 0,
        };
        let stepped = train(&m, &ds, &cfg).unwrap();
        let g = (0.7 - stepped.params()[0]) / lr;
        assert!(((g - fd) / fd).abs() < 1e-6, "g={g} fd={fd}");
    }

    #[test]
    fn prune_example() {
        // 2 -> 1 -> 2 has exactly four weights: [w0, w1 | v0, v1]
        let a = arch(&[2, 1, 2]);
        let params = vec![0.1, -0.5, 0.7, 0.3, 0.05, 0.2, -0.2];
        let m = ClassifierState::from_parts(a.clone(), params.clone(), vec![true; 7], 0, 0).unwrap();
        let p = omp_prune(&m, 0.5).unwrap();
        let weights: Vec<f64> = a.weight_indices().iter().map(|&i| p.params()[i]).collect();
        assert_eq!(weights, vec![0.0, -0.5, 0.3, 0.0]);
        // biases untouched
        assert_eq!(p.params()[2], 0.7);
        assert_eq!(&p.params()[5..], &[0.2, -0.2]);
        assert_eq!(p.n_active(), 5);

        // sort-by-magnitude oracle
        let mut idx = a.weight_indices();
        idx.sort_by(|&x, &y| params[x].abs().partial_cmp(&params[y].abs()).unwrap().then(x.cmp(&y)));
        for &i in &idx[..2] {
            assert!(!p.prune_mask()[i]);
        }

        assert_eq!(omp_prune(&m, 0.0).unwrap(), m);
        assert!(omp_prune(&m, 1.0).is_err());
    }

    #[test]
    fn prune_ties_break_by_index() {
        let a = arch(&[1, 2, 2]);
        let params = vec![0.3, 0.3, 0.0, 0.0, 0.3, 0.3, 0.3, 0.3, 0.0, 0.0];
        let m = ClassifierState::from_parts(a, params, vec![true; 10], 0, 0).unwrap();
        let p = omp_prune(&m, 0.34).unwrap(); // floor(0.34 * 6) = 2
        assert_eq!(&p.params()[..2], &[0.0, 0.0]);
        assert_eq!(p.params()[4], 0.3);
    }

    #[test]
    fn mask_survives_training() {
        let ds = blobs(64, 3.0, 5);
        let m = init_model(&arch(&[2, 8, 2]), 2).unwrap();
        let pruned = omp_prune(&m, 0.6).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            learning_rate: 0.1,
            batch_size: 16,
            seed: 1,
        };
        let t = train(&pruned, &ds, &cfg).unwrap();
        for (p, &active) in t.params().iter().zip(t.prune_mask()) {
            if !active {
                assert_eq!(p.to_bits(), 0.0f64.to_bits());
            }
        }
        let ga = fit(&pruned, &ds, &cfg, Objective::CrossEntropy, StepDirection::Ascent)
            .unwrap()
            .0;
        assert!(ga.params().iter().zip(ga.prune_mask()).all(|(p, &a)| a || *p == 0.0));
    }

    #[test]
    fn accuracy_cases() {
        // identity-ish net: x = onehot(label), logits = 10 * relu(x)
        let a = arch(&[2, 2, 2]);
        let params = vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 10.0, 0.0, 0.0, 10.0, 0.0, 0.0];
        let m = ClassifierState::from_parts(a.clone(), params, vec![true; 12], 0, 0).unwrap();
        let ds = LabeledDataset::with_sequential_ids(vec![1.0, 0.0, 0.0, 1.0, 0.0, 1.0], 2, vec![0, 1, 1], 2).unwrap();
        assert_eq!(accuracy(&m, &ds).unwrap(), 1.0);

        // all-zero model predicts class 0 everywhere
        let zero = ClassifierState::from_parts(a, vec![0.0; 12], vec![true; 12], 0, 0).unwrap();
        let bal = blobs(40, 3.0, 1);
        let frac0 = bal.labels().iter().filter(|&&l| l == 0).count() as f64 / 40.0;
        assert_eq!(accuracy(&zero, &bal).unwrap(), frac0);
        assert!(accuracy(&zero, &LabeledDataset::empty(2, 2).unwrap()).is_err());
    }

    #[test]
    fn argmax_ties_take_lowest() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.1, 0.3, 0.3, 0.3]), 1);
    }

    #[test]
    fn kl_closed_form() {
        let v = kl_divergence(&[0.5, 0.5], &[0.9, 0.1]);
        let expect = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln();
        assert!((v - expect).abs() < 1e-12);
        assert!((expect - 0.51083).abs() < 1e-5);
        assert!(kl_divergence(&[0.3, 0.7], &[0.3, 0.7]).abs() < 1e-15);
    }

    #[test]
    fn snapshot_round_trip_is_bit_exact() {
        let ds = blobs(30, 3.0, 2);
        let m = init_model(&arch(&[2, 5, 2]), 9).unwrap();
        let m = train(
            &omp_prune(&m, 0.3).unwrap(),
            &ds,
            &TrainConfig {
                epochs: 2,
                learning_rate: 0.1,
                batch_size: 4,
                seed: 0,
            },
        )
        .unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        m.save(f.path()).unwrap();
        let back = ClassifierState::load(f.path()).unwrap();
        assert_eq!(back, m);
        assert!(back
            .params()
            .iter()
            .zip(m.params())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(ClassifierState::from_json(r#"{"format":"other","version":1}"#).is_err());
    }

    #[test]
    fn parallel_and_sequential_forward_agree() {
        let ds = blobs(300, 3.0, 2);
        let m = init_model(&arch(&[2, 16, 2]), 9).unwrap();
        assert_eq!(
            forward_probs_with(Execution::Auto, &m, &ds).unwrap(),
            forward_probs_with(Execution::Sequential, &m, &ds).unwrap()
        );
    }
}
