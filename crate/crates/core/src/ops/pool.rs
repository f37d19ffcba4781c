//! 2x2 max pooling, stride 2.

use crate::error::{Error, Result};
use crate::ops::split_batch;
use crate::tensor::{Scalar, Tensor};

/// Argmax routing recorded by [`maxpool2_forward`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PoolIndices {
    input_shape: Vec<usize>,
    /// Flat input index of the winning cell for each output cell.
    argmax: Vec<usize>,
}

impl PoolIndices {
    pub fn argmax(&self) -> &[usize] {
        &self.argmax
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }
}

/// Max over each non-overlapping 2x2 block. Ties go to the first cell in row-major order.
pub fn maxpool2_forward<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, PoolIndices)> {
    let (n, c, h, w) = split_batch("maxpool2", input)?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::invalid(format!(
            "maxpool2 needs even spatial extents, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let top = base + 2 * oy * w + 2 * ox;
                let mut best = top;
                for cand in [top + 1, top + w, top + w + 1] {
                    if x[cand] > x[best] {
                        best = cand;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
    }
    let shape = if input.rank() == 3 {
        vec![c, oh, ow]
    } else {
        vec![n, c, oh, ow]
    };
    Ok((
        Tensor::from_vec(&shape, out)?,
        PoolIndices {
            input_shape: input.shape().to_vec(),
            argmax,
        },
    ))
}

/// Routes every output gradient to the input cell that won the forward max.
pub fn maxpool2_backward<T: Scalar>(grad_out: &Tensor<T>, indices: &PoolIndices) -> Result<Tensor<T>> {
    if grad_out.len() != indices.argmax.len() {
        return Err(Error::Shape {
            op: "maxpool2 backward",
            dim: "element count",
            expected: indices.argmax.len(),
            actual: grad_out.len(),
        });
    }
    let mut dx = Tensor::zeros(&indices.input_shape);
    let d = dx.data_mut();
    for (&g, &i) in grad_out.data().iter().zip(&indices.argmax) {
        d[i] += g;
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_input_halves() {
        let (out, _) = maxpool2_forward(&Tensor::<f32>::full(&[3, 8, 6], 2.5)).unwrap();
        assert_eq!(out.shape(), &[3, 4, 3]);
        assert!(out.data().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn first_table_pool() {
        let (out, _) = maxpool2_forward(&Tensor::<f32>::zeros(&[1, 64, 96, 96])).unwrap();
        assert_eq!(out.shape(), &[1, 64, 48, 48]);
    }

    #[test]
    fn block_max_and_argmax() {
        let t = Tensor::<f32>::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (out, idx) = maxpool2_forward(&t).unwrap();
        assert_eq!(out.data(), &[4.0]);
        // flat index 3 is row 1, column 1
        assert_eq!(idx.argmax(), &[3]);
    }

    #[test]
    fn odd_extent_is_rejected() {
        assert!(maxpool2_forward(&Tensor::<f32>::zeros(&[1, 3, 4])).is_err());
        assert!(maxpool2_forward(&Tensor::<f32>::zeros(&[1, 4, 5])).is_err());
    }

    #[test]
    fn backward_routes_each_gradient_once() {
        let data: Vec<f64> = (0..2 * 3 * 4 * 6).map(|i| ((i * 31) % 17) as f64).collect();
        let t = Tensor::from_vec(&[2, 3, 4, 6], data).unwrap();
        let (out, idx) = maxpool2_forward(&t).unwrap();
        let g = Tensor::from_vec(out.shape(), (0..out.len()).map(|i| i as f64 + 1.0).collect()).unwrap();
        let dx = maxpool2_backward(&g, &idx).unwrap();
        assert_eq!(dx.shape(), t.shape());
        assert_eq!(dx.sum(), g.sum());
        assert_eq!(dx.data().iter().filter(|&&v| v != 0.0).count(), out.len());
    }
}
