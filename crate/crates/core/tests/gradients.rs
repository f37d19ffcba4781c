mod common;

use common::*;

const TOL: f64 = 1e-4;

#[test]
fn conv_gradients() {
    for seed in 0..3 {
        let r = conv_check(seed);
        assert!(r.probes >= 50 && r.max_rel_error < TOL, "{r:?}");
    }
}

#[test]
fn batchnorm_gradients() {
    for seed in 0..3 {
        let r = batchnorm_check(seed);
        assert!(r.probes >= 50 && r.max_rel_error < TOL, "{r:?}");
    }
}

#[test]
fn relu_gradients() {
    let r = relu_check(4);
    assert!(r.probes >= 50 && r.max_rel_error < TOL, "{r:?}");
}

#[test]
fn pool_gradients() {
    let r = pool_check(5);
    assert!(r.probes >= 50 && r.max_rel_error < TOL, "{r:?}");
}

#[test]
fn linear_gradients_are_exact() {
    let r = linear_check(6);
    assert!(r.probes >= 50 && r.max_rel_error < 1e-9, "{r:?}");
}

#[test]
fn loss_gradient_matches_finite_differences() {
    assert!(loss_check(7, 20) < 1e-6);
}

#[test]
fn model_and_loss_gradients() {
    let (params, input, bias_zero) = model_check(8);
    assert!(params.probes >= 50 && params.max_rel_error < TOL, "{params:?}");
    assert!(input.probes >= 50 && input.max_rel_error < TOL, "{input:?}");
    assert!(bias_zero);
}
