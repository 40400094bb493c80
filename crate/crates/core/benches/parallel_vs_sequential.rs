//! Rayon-backed evaluation against the sequential fallback.
//!
//! Build with `--no-default-features` to compile rayon out entirely; both
//! variants then run sequentially.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use conmu::data::gen_synthetic;
use conmu::harness::{run_experiment_with, ExperimentConfig};
use conmu::model::{forward_probs_with, init_model};
use conmu::selection::el2n_scores_with;
use conmu::{Activation, ArchitectureSpec, Execution, SyntheticSpec};

const MODES: [(&str, Execution); 2] = [("auto", Execution::Auto), ("sequential", Execution::Sequential)];

fn batch_eval(c: &mut Criterion) {
    let data = gen_synthetic(&SyntheticSpec {
        n_samples: 20_000,
        n_features: 32,
        n_classes: 4,
        class_separation: 1.0,
        seed: 1,
    })
    .unwrap();
    let arch = ArchitectureSpec::mlp(vec![32, 128, 4], Activation::Relu).unwrap();
    let model = init_model(&arch, 0).unwrap();

    let mut g = c.benchmark_group("forward_probs");
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &e| {
            b.iter(|| forward_probs_with(e, black_box(&model), black_box(&data)).unwrap())
        });
    }
    g.finish();

    let mut g = c.benchmark_group("el2n_scores");
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &e| {
            b.iter(|| el2n_scores_with(e, black_box(&model), black_box(&data)).unwrap())
        });
    }
    g.finish();
}

fn trials(c: &mut Criterion) {
    let cfg = ExperimentConfig::from_json(
        r#"{
        "dataset": {
            "source": {"synthetic": {"n_samples": 600, "n_features": 8, "n_classes": 2, "class_separation": 1.5, "seed": 3}},
            "test": {"held_out_fraction": 0.3},
            "standardize": true
        },
        "forget": {"mode": "random"},
        "arch": {"layer_widths": [8, 32, 2]},
        "original_training": {"epochs": 10, "learning_rate": 0.05, "batch_size": 32, "seed": 0},
        "master_seed": 1,
        "trials": 4
    }"#,
    )
    .unwrap();
    let mut g = c.benchmark_group("run_experiment");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &e| {
            b.iter(|| run_experiment_with(black_box(&cfg), e).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, batch_eval, trials);
criterion_main!(benches);
