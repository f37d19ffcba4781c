//! The five layer types of the network, each with a hand-written backward pass.

mod batchnorm;
mod conv;
mod linear;
mod pool;
mod relu;

pub use batchnorm::{batchnorm_backward, batchnorm_forward, BatchNormCache, BnConfig, Mode, RunningStats};
pub use conv::{conv3x3_backward, conv3x3_forward};
pub(crate) use conv::conv3x3_sample_into;
pub use linear::{linear_backward, linear_forward};
pub use pool::{maxpool2_backward, maxpool2_forward, PoolIndices};
pub use relu::{relu_backward, relu_forward};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Gradients produced by one layer's backward pass.
///
/// `params` follows the layer's parameter order (e.g. `[weights, bias]`);
/// `input` is absent when the caller did not request it.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrads<T = f32> {
    pub input: Option<Tensor<T>>,
    pub params: Vec<Tensor<T>>,
}

/// Interprets a rank-3 tensor as a batch of one, rank-4 as `N x C x H x W`.
pub(crate) fn split_batch<T: Scalar>(op: &'static str, t: &Tensor<T>) -> Result<(usize, usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] => Ok((1, c, h, w)),
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(Error::Rank {
            op,
            expected: 4,
            actual: t.shape().to_vec(),
        }),
    }
}
