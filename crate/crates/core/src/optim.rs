//! Stochastic gradient descent with classical momentum.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// One momentum SGD update: `v <- momentum * v + grad; p <- p - lr * v`.
///
/// `velocity` is lazily sized to match `params` on first use.
pub fn sgd_step<T: Scalar>(
    params: &mut [&mut Tensor<T>],
    grads: &[Tensor<T>],
    lr: T,
    momentum: T,
    velocity: &mut Vec<Tensor<T>>,
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Shape {
            op: "sgd_step",
            dim: "parameter count",
            expected: params.len(),
            actual: grads.len(),
        });
    }
    if velocity.is_empty() {
        *velocity = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
    }
    if velocity.len() != params.len() {
        return Err(Error::Shape {
            op: "sgd_step",
            dim: "velocity count",
            expected: params.len(),
            actual: velocity.len(),
        });
    }
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        if p.shape() != g.shape() || p.shape() != v.shape() {
            return Err(Error::Shape {
                op: "sgd_step",
                dim: "parameter elements",
                expected: p.len(),
                actual: g.len(),
            });
        }
        for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vv = momentum * *vv + gv;
            *pv -= lr * *vv;
        }
    }
    Ok(())
}
