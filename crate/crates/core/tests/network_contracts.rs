//! Mixer endpoint and monotonicity contracts, and gradient checks on random
//! networks including the full TD objective.

use rand::Rng;
use spa_marl_core::code::{build_toy_css, CodeInstance, Syndrome};
use spa_marl_core::gf2::BitVector;
use spa_marl_core::nn::{grad_check, Activation, Mlp};
use spa_marl_core::policy::{global_state, DecoderPolicy, Widths};
use spa_marl_core::rng;
use spa_marl_core::trainer;

fn random_syndrome(code: &CodeInstance, r: &mut rng::Rng) -> Syndrome {
    let bits = |n: usize, r: &mut rng::Rng| BitVector::from_indices(n, (0..n).filter(|_| r.random::<bool>()).collect::<Vec<_>>());
    Syndrome {
        sx: bits(code.num_x_checks(), r),
        sz: bits(code.num_z_checks(), r),
    }
}

#[test]
fn mixer_endpoints_and_monotonicity() {
    let code = build_toy_css(3).unwrap();
    let mut r = rng::stream(100, 0, 0);
    let h = 1e-6;
    for probe in 0..1000 {
        let p = DecoderPolicy::new(&code, Widths::tiny(), probe);
        let s = random_syndrome(&code, &mut r);
        let (qx, qz) = (r.random_range(-5.0..5.0), r.random_range(-5.0..5.0));
        let f = p.mixer.mix(&global_state(&s), qx, qz).unwrap();
        assert!((p.mix_with_lambda(&s, 0.0, qx, qz).unwrap() - (qx + qz)).abs() < 1e-12);
        assert!((p.mix_with_lambda(&s, 1.0, qx, qz).unwrap() - f).abs() < 1e-12);
        let q = |a: f64, b: f64| p.mix_qtot(&s, a, b).unwrap();
        assert!((q(qx + h, qz) - q(qx - h, qz)) / (2.0 * h) >= -1e-9);
        assert!((q(qx, qz + h) - q(qx, qz - h)) / (2.0 * h) >= -1e-9);
    }
}

#[test]
fn random_mlps_pass_grad_check() {
    let mut r = rng::stream(101, 0, 0);
    let acts = [Activation::Relu, Activation::Sigmoid, Activation::Identity];
    for _ in 0..90 {
        // Redraw until every relu pre-activation clears the finite-difference step.
        let (net, input) = loop {
            let depth = r.random_range(1..4);
            let widths: Vec<usize> = (0..=depth).map(|_| r.random_range(1..7)).collect();
            let layer_acts: Vec<Activation> = (0..depth).map(|_| acts[r.random_range(0..acts.len())]).collect();
            let net = Mlp::random(&widths, &layer_acts, &mut r);
            let input: Vec<f64> = (0..widths[0]).map(|_| r.random_range(-1.0..1.0)).collect();
            let margin = net.forward_trace(&input).unwrap().min_relu_margin(&net);
            if margin.is_none_or(|m| m > 1e-3) {
                break (net, input);
            }
        };
        let check = grad_check(&net, &input, 1e-4).unwrap();
        assert!(check.passed, "{net:?}: {check:?}");
    }
}

#[test]
fn random_policies_pass_td_grad_check() {
    let code = build_toy_css(3).unwrap();
    for seed in 0..10 {
        let policy = DecoderPolicy::new(&code, Widths::tiny(), 1000 + seed);
        let check = trainer::td_gradient_check(&policy, &code, 6, seed, 1e-4).unwrap();
        assert!(check.passed, "seed {seed}: {check:?}");
    }
}
