//! Sequential fallback against the rayon path on the two hot loops:
//! greedy evaluation episodes and TD gradient accumulation.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use spa_marl_core::code::build_toy_css;
use spa_marl_core::env::{self, EpisodeConfig};
use spa_marl_core::eval::{self, EvalConfig};
use spa_marl_core::hardware::HardwareConfig;
use spa_marl_core::par::Execution;
use spa_marl_core::policy::{DecoderPolicy, Widths};
use spa_marl_core::rng;
use spa_marl_core::trainer::{self, TdParams};
use std::hint::black_box;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn stage1(c: &mut Criterion) {
    let code = build_toy_css(3).unwrap();
    let policy = DecoderPolicy::new(&code, Widths::default(), 0);
    let qmix = policy.clone().pinned(1.0);
    let mut group = c.benchmark_group("stage1_d3_300_per_rate");
    group.sample_size(10);
    for (name, exec) in MODES {
        let cfg = EvalConfig {
            execution: exec,
            ..EvalConfig::new(0, 300)
        };
        group.bench_with_input(BenchmarkId::from_parameter(name), &cfg, |b, cfg| {
            b.iter(|| black_box(eval::run_stage1(&policy, &qmix, None, &code, cfg).unwrap()))
        });
    }
    group.finish();
}

fn td_gradients(c: &mut Criterion) {
    let code = build_toy_css(5).unwrap();
    let policy = DecoderPolicy::new(&code, Widths::default(), 1);
    let ep_cfg = EpisodeConfig {
        eps: 0.5,
        ..EpisodeConfig::new(0.02, HardwareConfig::randomized())
    };
    let mut batch = Vec::new();
    let mut i = 0;
    while batch.len() < 96 {
        let mut r = rng::stream(3, rng::domain::ROLLOUT, i);
        batch.extend(env::run_episode(&policy, &code, &ep_cfg, &mut r).unwrap().transitions);
        i += 1;
    }
    batch.truncate(96);
    let targets: Vec<f64> = batch.iter().map(|t| t.reward).collect();
    let params = TdParams {
        gamma_rl: 0.95,
        reg_weight: 0.02,
        reference_weight: trainer::synergy_reference_weight(&code),
    };
    let mut group = c.benchmark_group("td_gradients_d5_batch96");
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| black_box(trainer::td_gradients(&policy, &code, &batch, &targets, &params, exec).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, stage1, td_gradients);
criterion_main!(benches);
