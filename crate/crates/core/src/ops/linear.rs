//! Fully connected layer: `out = input * weightsᵀ + bias`.

use crate::error::{Error, Result};
use crate::ops::LayerGrads;
use crate::tensor::{gemm, Scalar, Tensor};

fn dims<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>) -> Result<(usize, usize, usize)> {
    input.expect_rank("linear input", 2)?;
    weights.expect_rank("linear weights", 2)?;
    let (n, d_in) = (input.shape()[0], input.shape()[1]);
    let d_out = weights.shape()[0];
    if weights.shape()[1] != d_in {
        return Err(Error::Shape {
            op: "linear",
            dim: "input width",
            expected: weights.shape()[1],
            actual: d_in,
        });
    }
    Ok((n, d_in, d_out))
}

pub fn linear_forward<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, d_in, d_out) = dims(input, weights)?;
    bias.expect_shape("linear bias", &["output width"], &[d_out])?;
    let mut out = Vec::with_capacity(n * d_out);
    for _ in 0..n {
        out.extend_from_slice(bias.data());
    }
    gemm(n, d_in, d_out, input.data(), false, weights.data(), true, T::one(), &mut out);
    Tensor::from_vec(&[n, d_out], out)
}

/// `params` is `[weights, bias]`.
pub fn linear_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<LayerGrads<T>> {
    let (n, d_in, d_out) = dims(input, weights)?;
    grad_out.expect_shape("linear grad_out", &["batch", "output width"], &[n, d_out])?;
    let mut dx = vec![T::zero(); n * d_in];
    gemm(n, d_out, d_in, grad_out.data(), false, weights.data(), false, T::zero(), &mut dx);
    let mut dw = vec![T::zero(); d_out * d_in];
    gemm(d_out, n, d_in, grad_out.data(), true, input.data(), false, T::zero(), &mut dw);
    let mut db = vec![T::zero(); d_out];
    for row in grad_out.data().chunks_exact(d_out) {
        for (b, &g) in db.iter_mut().zip(row) {
            *b += g;
        }
    }
    Ok(LayerGrads {
        input: Some(Tensor::from_vec(&[n, d_in], dx)?),
        params: vec![Tensor::from_vec(&[d_out, d_in], dw)?, Tensor::from_vec(&[d_out], db)?],
    })
}
