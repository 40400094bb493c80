//! Brute-force reference implementations shared by the integration suites.
//! None of these call into the library's numeric code.

#![allow(dead_code)]

use conmu::model::{init_model, mean_gradient, mean_loss, Activation, ArchitectureSpec, ClassifierState, Objective};
use conmu::LabeledDataset;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Forward pass straight from the flat parameter layout: per layer, a
/// row-major `fan_out x fan_in` weight block followed by `fan_out` biases.
pub fn oracle_logits(widths: &[usize], act: Activation, params: &[f64], x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    let mut off = 0;
    let last = widths.len() - 2;
    for (l, pair) in widths.windows(2).enumerate() {
        let (fin, fout) = (pair[0], pair[1]);
        let w = &params[off..off + fin * fout];
        let b = &params[off + fin * fout..off + fin * fout + fout];
        off += fin * fout + fout;
        let mut z = vec![0.0; fout];
        for o in 0..fout {
            let mut s = b[o];
            for i in 0..fin {
                s += w[o * fin + i] * h[i];
            }
            z[o] = if l == last {
                s
            } else {
                match act {
                    Activation::Relu => {
                        if s > 0.0 {
                            s
                        } else {
                            0.0
                        }
                    }
                    Activation::Tanh => s.tanh(),
                }
            };
        }
        h = z;
    }
    assert_eq!(off, params.len(), "oracle layout disagrees with parameter count");
    h
}

pub fn oracle_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::MIN, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn oracle_probs(model: &ClassifierState, x: &[f64]) -> Vec<f64> {
    let a = model.arch();
    oracle_softmax(&oracle_logits(&a.layer_widths, a.activation, model.params(), x))
}

/// `sqrt(sum_c (p_c - [c == y])^2)` by direct summation.
pub fn oracle_el2n(p: &[f64], y: usize) -> f64 {
    let mut s = 0.0;
    for (c, &pc) in p.iter().enumerate() {
        let t = if c == y { 1.0 } else { 0.0 };
        s += (pc - t) * (pc - t);
    }
    s.sqrt()
}

/// Indices with `mu - zl*sigma <= s <= mu + zu*sigma`, population sigma from
/// the raw second moment.
pub fn oracle_band(scores: &[f64], zl: f64, zu: f64) -> Vec<usize> {
    let n = scores.len() as f64;
    let mu = scores.iter().sum::<f64>() / n;
    let m2 = scores.iter().map(|s| s * s).sum::<f64>() / n;
    let sigma = (m2 - mu * mu).max(0.0).sqrt();
    (0..scores.len())
        .filter(|&i| scores[i] >= mu - zl * sigma && scores[i] <= mu + zu * sigma)
        .collect()
}

/// Clamp to `[1e-12, 1]` and renormalize.
pub fn oracle_smooth(p: &[f64]) -> Vec<f64> {
    let c: Vec<f64> = p.iter().map(|v| v.clamp(1e-12, 1.0)).collect();
    let s: f64 = c.iter().sum();
    c.iter().map(|v| v / s).collect()
}

/// `sum_i p_i ln(p_i / q_i)` after smoothing both sides.
pub fn oracle_kl(p: &[f64], q: &[f64]) -> f64 {
    let (p, q) = (oracle_smooth(p), oracle_smooth(q));
    let mut s = 0.0;
    for i in 0..p.len() {
        s += p[i] * (p[i].ln() - q[i].ln());
    }
    s
}

/// Product of per-metric exponentials; algebraically equal to the FRM.
pub fn oracle_frm(u: [f64; 3], r: [f64; 3]) -> f64 {
    (0..3).map(|i| (-(u[i] - r[i]).abs() / r[i]).exp()).product()
}

/// Exhaustive threshold search: every pairwise midpoint of the pooled
/// values plus 0 and 1; members are `> t`. Ties keep the lowest threshold.
pub fn oracle_threshold(members: &[f64], non: &[f64]) -> (f64, f64) {
    let pool: Vec<f64> = members.iter().chain(non).copied().collect();
    let mut cands = vec![0.0, 1.0];
    for &a in &pool {
        for &b in &pool {
            if a < b {
                let between = pool.iter().any(|&c| c > a && c < b);
                if !between {
                    cands.push(a + (b - a) / 2.0);
                }
            }
        }
    }
    let ba = |t: f64| {
        let tp = members.iter().filter(|&&c| c > t).count() as f64 / members.len() as f64;
        let tn = non.iter().filter(|&&c| c <= t).count() as f64 / non.len() as f64;
        0.5 * (tp + tn)
    };
    let mut best = (f64::INFINITY, f64::NEG_INFINITY);
    for t in cands {
        let b = ba(t);
        if b > best.1 || (b == best.1 && t < best.0) {
            best = (t, b);
        }
    }
    best
}

/// Mean CE (+ gamma * KL to the teacher) over `data`, through the oracle
/// forward pass.
pub fn oracle_loss(
    model_params: &[f64],
    arch: &ArchitectureSpec,
    data: &LabeledDataset,
    teacher: Option<(&ClassifierState, f64)>,
) -> f64 {
    let mut total = 0.0;
    for i in 0..data.len() {
        let x = data.row(i);
        let q = oracle_softmax(&oracle_logits(&arch.layer_widths, arch.activation, model_params, x));
        let mut l = -q[data.labels()[i]].ln();
        if let Some((t, gamma)) = teacher {
            l += gamma * oracle_kl(&oracle_probs(t, x), &q);
        }
        total += l;
    }
    total / data.len() as f64
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    if d == 0.0 {
        return 0.0;
    }
    d / a.abs().max(b.abs()).max(1e-6)
}

/// Random dataset with gaussian features and uniform labels.
pub fn random_data(r: &mut impl Rng, n: usize, d: usize, c: usize) -> LabeledDataset {
    let features = (0..n * d).map(|_| r.random_range(-2.0..2.0)).collect();
    let labels = (0..n).map(|_| r.random_range(0..c)).collect();
    LabeledDataset::with_sequential_ids(features, d, labels, c).unwrap()
}

pub fn random_probs(r: &mut impl Rng, c: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..c).map(|_| r.random_range(0.01..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

/// Random MLP shape with 1 or 2 hidden layers.
pub fn random_arch(r: &mut impl Rng, d: usize, c: usize) -> ArchitectureSpec {
    let mut widths = vec![d];
    for _ in 0..r.random_range(1..=2) {
        widths.push(r.random_range(2..=6));
    }
    widths.push(c);
    let act = if r.random_bool(0.5) {
        Activation::Relu
    } else {
        Activation::Tanh
    };
    ArchitectureSpec::mlp(widths, act).unwrap()
}

pub const FD_STEP: f64 = 1e-5;
pub const GRADIENT_TOL: f64 = 1e-4;

/// Central differences of the oracle loss against the analytic gradient at
/// one random coordinate per probe. Returns the worst relative error.
pub fn gradient_probe(seed: u64, distill: bool) -> f64 {
    let mut r = rng(seed);
    let d = r.random_range(1..=4);
    let c = r.random_range(2..=4);
    let arch = random_arch(&mut r, d, c);
    let model = init_model(&arch, seed).unwrap();
    let params: Vec<f64> = model.params().iter().map(|p| p + r.random_range(-0.3..0.3)).collect();
    let model = model.with_params(params.clone()).unwrap();
    let teacher = init_model(&arch, seed ^ 0xABCD).unwrap();
    let n = r.random_range(1..=6);
    let data = random_data(&mut r, n, d, c);
    let gamma = r.random_range(0.1..2.0);

    let objective = if distill {
        Objective::Distill {
            teacher: &teacher,
            gamma,
        }
    } else {
        Objective::CrossEntropy
    };
    let t = distill.then_some((&teacher, gamma));
    let grad = mean_gradient(&model, &data, objective).unwrap();
    let lib_loss = mean_loss(&model, &data, objective).unwrap();
    assert!((lib_loss - oracle_loss(&params, &arch, &data, t)).abs() < 1e-12 * lib_loss.abs().max(1.0));

    let k = r.random_range(0..params.len());
    let mut plus = params.clone();
    plus[k] += FD_STEP;
    let mut minus = params.clone();
    minus[k] -= FD_STEP;
    let fd = (oracle_loss(&plus, &arch, &data, t) - oracle_loss(&minus, &arch, &data, t)) / (2.0 * FD_STEP);
    rel_err(grad[k], fd)
}
