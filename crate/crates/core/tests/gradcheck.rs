//! Reverse-mode gradients against central finite differences in f64.

mod common;

use common::check_with;
use s2o_core::diffcore::{LayerSpec, Network};

const INSTANCES: usize = 100;

fn check(label: &str, in_dim: usize, specs: &[LayerSpec], seed: u64) {
    check_with(label, seed, INSTANCES, |rng| Network::<f64>::new(in_dim, specs, rng).unwrap()).unwrap();
}

#[test]
fn linear_layer() {
    check("linear", 3, &[LayerSpec::Linear { inputs: 3, outputs: 2 }], 1);
}

#[test]
fn tanh_layer() {
    check(
        "tanh",
        3,
        &[LayerSpec::Linear { inputs: 3, outputs: 4 }, LayerSpec::Tanh],
        2,
    );
}

#[test]
fn relu_layer() {
    check(
        "relu",
        3,
        &[LayerSpec::Linear { inputs: 3, outputs: 4 }, LayerSpec::Relu],
        3,
    );
}

#[test]
fn layer_norm() {
    check(
        "layernorm",
        3,
        &[LayerSpec::Linear { inputs: 3, outputs: 5 }, LayerSpec::LayerNorm { dim: 5 }],
        4,
    );
}

#[test]
fn residual_block() {
    check(
        "residual",
        4,
        &[LayerSpec::Residual(vec![
            LayerSpec::LayerNorm { dim: 4 },
            LayerSpec::Relu,
            LayerSpec::Linear { inputs: 4, outputs: 4 },
            LayerSpec::LayerNorm { dim: 4 },
            LayerSpec::Relu,
            LayerSpec::Linear { inputs: 4, outputs: 4 },
        ])],
        5,
    );
}

#[test]
fn actor_stack() {
    check_with("actor", 7, INSTANCES, |rng| Network::tanh_mlp(5, 6, 4, rng).unwrap()).unwrap();
}

#[test]
fn critic_stack() {
    check_with("critic", 8, INSTANCES, |rng| Network::residual_critic(7, 6, 2, rng).unwrap()).unwrap();
}
