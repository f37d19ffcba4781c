//! The one-positive-class network: four conv blocks (conv3x3, batch norm,
//! ReLU, 2x2 max pool) with 64/32/16/8 channels, then fully connected layers
//! of width 288, 128 and 16. There is no softmax; the score of an input is
//! the Euclidean norm of the 16-dimensional output (see [`output_module`]).
//!
//! Spatial trace for a 96x96 input: 96 -> 48 -> 24 -> 12 -> 6, so the
//! flattened feature width is `8 * 6 * 6 = 288`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::ops::{
    batchnorm_backward, batchnorm_forward, conv3x3_backward, conv3x3_forward, linear_backward,
    linear_forward, maxpool2_backward, maxpool2_forward, relu_backward, relu_forward, BatchNormCache,
    BnConfig, Mode, PoolIndices, RunningStats,
};
use crate::ops::conv3x3_sample_into;
use crate::tensor::{gemm, Scalar, Tensor};

pub const INPUT_SIZE: usize = 96;
pub const INPUT_CHANNELS: usize = 3;
pub const CONV_CHANNELS: [usize; 4] = [64, 32, 16, 8];
pub const DENSE_WIDTHS: [usize; 3] = [288, 128, 16];
pub const FLATTEN_WIDTH: usize = 8 * 6 * 6;
pub const OUTPUT_DIM: usize = 16;
/// Weight variance times fan-in for the dense layers, which have no rectifiers between them.
const DENSE_GAIN: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub struct ConvBlock<T = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running: Option<RunningStats<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DisCnn<T = f32> {
    pub blocks: Vec<ConvBlock<T>>,
    pub dense: Vec<Dense<T>>,
    pub bn: BnConfig,
}

/// Builds the network from `seed`: He fan-in normal conv weights, LeCun fan-in normal dense weights,
/// zero biases, `gamma = 1`, `beta = 0` and identity running statistics.
pub fn build_discnn(seed: u64) -> DisCnn<f32> {
    DisCnn::new(seed)
}

/// Euclidean norm of an output vector.
pub fn output_module<T: Scalar>(v: &[T]) -> T {
    v.iter().map(|&x| x * x).sum::<T>().sqrt()
}

struct BlockCache<T> {
    input: Tensor<T>,
    bn: BatchNormCache<T>,
    bn_out: Tensor<T>,
    pool: PoolIndices,
}

/// Activations kept by [`DisCnn::forward_train`] for [`DisCnn::backward`].
pub struct ForwardCache<T = f32> {
    blocks: Vec<BlockCache<T>>,
    /// Inputs of the dense layers (the first is the flattened feature map).
    dense_inputs: Vec<Tensor<T>>,
    pool_shape: Vec<usize>,
}

impl<T: Scalar> DisCnn<T> {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut normal_init = |shape: &[usize], variance: f64| {
            let normal = Normal::new(0.0f64, variance.sqrt()).expect("positive std");
            let len: usize = shape.iter().product();
            let data = (0..len).map(|_| T::of(normal.sample(&mut rng))).collect();
            Tensor::from_vec(shape, data).expect("length matches shape")
        };
        let mut blocks = Vec::with_capacity(CONV_CHANNELS.len());
        let mut in_ch = INPUT_CHANNELS;
        for &out_ch in &CONV_CHANNELS {
            blocks.push(ConvBlock {
                weight: normal_init(&[out_ch, in_ch, 3, 3], 2.0 / (in_ch * 9) as f64),
                bias: Tensor::zeros(&[out_ch]),
                gamma: Tensor::full(&[out_ch], T::one()),
                beta: Tensor::zeros(&[out_ch]),
                running: Some(RunningStats::identity(out_ch)),
            });
            in_ch = out_ch;
        }
        let mut dense = Vec::with_capacity(DENSE_WIDTHS.len());
        let mut d_in = FLATTEN_WIDTH;
        for &d_out in &DENSE_WIDTHS {
            dense.push(Dense {
                weight: normal_init(&[d_out, d_in], DENSE_GAIN / d_in as f64),
                bias: Tensor::zeros(&[d_out]),
            });
            d_in = d_out;
        }
        DisCnn {
            blocks,
            dense,
            bn: BnConfig::default(),
        }
    }

    /// Every trainable parameter (and bias) set to zero.
    pub fn zeroed() -> Self {
        let mut m = Self::new(0);
        for p in m.params_mut() {
            p.data_mut().fill(T::zero());
        }
        m
    }

    /// Trainable tensors in canonical order: per block `conv weight, conv bias,
    /// gamma, beta`, then per dense layer `weight, bias`.
    pub fn params(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::with_capacity(4 * self.blocks.len() + 2 * self.dense.len());
        for b in &self.blocks {
            out.extend([&b.weight, &b.bias, &b.gamma, &b.beta]);
        }
        for d in &self.dense {
            out.extend([&d.weight, &d.bias]);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::with_capacity(4 * self.blocks.len() + 2 * self.dense.len());
        for b in &mut self.blocks {
            out.extend([&mut b.weight, &mut b.bias, &mut b.gamma, &mut b.beta]);
        }
        for d in &mut self.dense {
            out.extend([&mut d.weight, &mut d.bias]);
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> DisCnn<U> {
        DisCnn {
            blocks: self
                .blocks
                .iter()
                .map(|b| ConvBlock {
                    weight: b.weight.cast(),
                    bias: b.bias.cast(),
                    gamma: b.gamma.cast(),
                    beta: b.beta.cast(),
                    running: b.running.as_ref().map(|r| RunningStats {
                        mean: r.mean.cast(),
                        var: r.var.cast(),
                    }),
                })
                .collect(),
            dense: self
                .dense
                .iter()
                .map(|d| Dense {
                    weight: d.weight.cast(),
                    bias: d.bias.cast(),
                })
                .collect(),
            bn: self.bn,
        }
    }

    fn check_input(batch: &Tensor<T>) -> Result<usize> {
        batch.expect_rank("DisCnn input", 4)?;
        batch.expect_shape(
            "DisCnn input",
            &["batch", "channels", "height", "width"],
            &[batch.shape()[0], INPUT_CHANNELS, INPUT_SIZE, INPUT_SIZE],
        )?;
        Ok(batch.shape()[0])
    }

    /// Infer-mode forward pass of an `N x 3 x 96 x 96` batch, returning `N x 16`.
    ///
    /// Runs through [`InferenceNet`]; see there for the batch-independence guarantee.
    pub fn infer(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        InferenceNet::new(self)?.infer(batch)
    }

    /// Layer-by-layer infer-mode forward pass (batch norm not folded), reporting
    /// the shape after every pool and after flattening.
    pub fn infer_traced(&self, batch: &Tensor<T>, trace: &mut dyn FnMut(&[usize])) -> Result<Tensor<T>> {
        let n = Self::check_input(batch)?;
        let mut x = batch.clone();
        for block in &self.blocks {
            let y = conv3x3_forward(&x, &block.weight, &block.bias)?;
            let mut running = block.running.clone();
            let (y, _) = batchnorm_forward(&y, &block.gamma, &block.beta, self.bn, Mode::Infer, &mut running)?;
            let y = relu_forward(&y);
            let (y, _) = maxpool2_forward(&y)?;
            trace(y.shape());
            x = y;
        }
        let mut h = x.reshape(&[n, FLATTEN_WIDTH])?;
        trace(h.shape());
        for d in &self.dense {
            h = linear_forward(&h, &d.weight, &d.bias)?;
        }
        Ok(h)
    }

    /// Train-mode forward pass; batch statistics are used and running statistics updated.
    pub fn forward_train(&mut self, batch: &Tensor<T>) -> Result<(Tensor<T>, ForwardCache<T>)> {
        let n = Self::check_input(batch)?;
        let mut x = batch.clone();
        let mut caches = Vec::with_capacity(self.blocks.len());
        let bn = self.bn;
        for block in &mut self.blocks {
            let y = conv3x3_forward(&x, &block.weight, &block.bias)?;
            let (y, cache) = batchnorm_forward(&y, &block.gamma, &block.beta, bn, Mode::Train, &mut block.running)?;
            let r = relu_forward(&y);
            let (p, idx) = maxpool2_forward(&r)?;
            caches.push(BlockCache {
                input: x,
                bn: cache.expect("train mode yields a cache"),
                bn_out: y,
                pool: idx,
            });
            x = p;
        }
        let pool_shape = x.shape().to_vec();
        let mut h = x.reshape(&[n, FLATTEN_WIDTH])?;
        let mut dense_inputs = Vec::with_capacity(self.dense.len());
        for d in &self.dense {
            let next = linear_forward(&h, &d.weight, &d.bias)?;
            dense_inputs.push(h);
            h = next;
        }
        Ok((
            h,
            ForwardCache {
                blocks: caches,
                dense_inputs,
                pool_shape,
            },
        ))
    }

    /// Gradients of all trainable parameters (canonical order) given `dL/d output`.
    pub fn backward(&self, cache: &ForwardCache<T>, grad_out: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        self.backward_with_input(cache, grad_out, false).map(|(g, _)| g)
    }

    /// Like [`DisCnn::backward`], optionally also returning `dL/d input`.
    pub fn backward_with_input(
        &self,
        cache: &ForwardCache<T>,
        grad_out: &Tensor<T>,
        need_input_grad: bool,
    ) -> Result<(Vec<Tensor<T>>, Option<Tensor<T>>)> {
        if cache.blocks.len() != self.blocks.len() || cache.dense_inputs.len() != self.dense.len() {
            return Err(Error::invalid("forward cache does not belong to this network"));
        }
        let mut dense_grads = Vec::with_capacity(2 * self.dense.len());
        let mut g = grad_out.clone();
        for (d, input) in self.dense.iter().zip(&cache.dense_inputs).rev() {
            let lg = linear_backward(input, &d.weight, &g)?;
            let mut params = lg.params.into_iter();
            let (dw, db) = (params.next().expect("weights"), params.next().expect("bias"));
            dense_grads.push((dw, db));
            g = lg.input.expect("linear backward yields input grad");
        }
        let mut g = g.reshape(&cache.pool_shape)?;
        let mut block_grads = Vec::with_capacity(self.blocks.len());
        for (i, (block, bc)) in self.blocks.iter().zip(&cache.blocks).enumerate().rev() {
            let d_relu = maxpool2_backward(&g, &bc.pool)?;
            let d_bn = relu_backward(&bc.bn_out, &d_relu)?;
            let bn_g = batchnorm_backward(&bc.bn, &block.gamma, &d_bn)?;
            let d_conv = bn_g.input.expect("batchnorm backward yields input grad");
            let want_input = i > 0 || need_input_grad;
            let conv_g = conv3x3_backward(&bc.input, &block.weight, &d_conv, want_input)?;
            let mut bn_params = bn_g.params.into_iter();
            let mut conv_params = conv_g.params.into_iter();
            block_grads.push([
                conv_params.next().expect("weights"),
                conv_params.next().expect("bias"),
                bn_params.next().expect("gamma"),
                bn_params.next().expect("beta"),
            ]);
            if let Some(dx) = conv_g.input {
                g = dx;
            }
        }
        let input_grad = need_input_grad.then_some(g);
        let mut grads = Vec::with_capacity(4 * self.blocks.len() + 2 * self.dense.len());
        for bg in block_grads.into_iter().rev() {
            grads.extend(bg);
        }
        for (dw, db) in dense_grads.into_iter().rev() {
            grads.push(dw);
            grads.push(db);
        }
        Ok((grads, input_grad))
    }
}

/// Infer-mode network with batch norm folded into the convolutions and ReLU
/// fused with pooling.
///
/// Every sample is pushed through the whole network on its own, so a sample's
/// output does not depend on what else is in the batch, and activation memory
/// is bounded by a single sample.
#[derive(Clone, Debug)]
pub struct InferenceNet<T = f32> {
    convs: Vec<(Vec<T>, Vec<T>)>,
    dense: Vec<Dense<T>>,
}

/// Reusable activation buffers for [`InferenceNet::forward_sample`].
#[derive(Default)]
pub struct Scratch<T> {
    cols: Vec<T>,
    conv: Vec<T>,
    act: Vec<T>,
    row: Vec<T>,
}

impl<T: Scalar> InferenceNet<T> {
    pub fn new(model: &DisCnn<T>) -> Result<Self> {
        let eps = T::of(model.bn.eps);
        let mut convs = Vec::with_capacity(model.blocks.len());
        for b in &model.blocks {
            let stats = b.running.as_ref().ok_or(Error::UninitializedRunningStats)?;
            let out_ch = b.gamma.len();
            let per = b.weight.len() / out_ch;
            let mut w = b.weight.data().to_vec();
            let mut bias = Vec::with_capacity(out_ch);
            for ch in 0..out_ch {
                let scale = b.gamma.data()[ch] / (stats.var.data()[ch] + eps).sqrt();
                for v in &mut w[ch * per..(ch + 1) * per] {
                    *v *= scale;
                }
                bias.push((b.bias.data()[ch] - stats.mean.data()[ch]) * scale + b.beta.data()[ch]);
            }
            convs.push((w, bias));
        }
        Ok(InferenceNet {
            convs,
            dense: model.dense.clone(),
        })
    }

    /// Scores one `3 x 96 x 96` sample (flat, channel-major) into `out` (16 values).
    pub fn forward_sample(&self, input: &[T], scratch: &mut Scratch<T>, out: &mut Vec<T>) {
        debug_assert_eq!(input.len(), INPUT_CHANNELS * INPUT_SIZE * INPUT_SIZE);
        let Scratch { cols, conv, act, row } = scratch;
        act.clear();
        act.extend_from_slice(input);
        let (mut c, mut side) = (INPUT_CHANNELS, INPUT_SIZE);
        for (w, bias) in &self.convs {
            conv3x3_sample_into(act, c, side, side, w, bias, cols, conv);
            c = bias.len();
            relu_pool_into(conv, c, side, act);
            side /= 2;
        }
        for d in &self.dense {
            row.clear();
            row.extend_from_slice(d.bias.data());
            gemm(1, act.len(), row.len(), act, false, d.weight.data(), true, T::one(), row);
            std::mem::swap(act, row);
        }
        out.clear();
        out.extend_from_slice(act);
    }

    pub fn infer(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let n = DisCnn::check_input(batch)?;
        let per = INPUT_CHANNELS * INPUT_SIZE * INPUT_SIZE;
        let mut scratch = Scratch::default();
        let mut row = Vec::with_capacity(OUTPUT_DIM);
        let mut out = Vec::with_capacity(n * OUTPUT_DIM);
        for sample in batch.data().chunks_exact(per) {
            self.forward_sample(sample, &mut scratch, &mut row);
            out.extend_from_slice(&row);
        }
        Tensor::from_vec(&[n, OUTPUT_DIM], out)
    }
}

/// `max(0, max of 2x2 block)` over a `C x S x S` map.
fn relu_pool_into<T: Scalar>(x: &[T], c: usize, side: usize, out: &mut Vec<T>) {
    let half = side / 2;
    out.clear();
    out.resize(c * half * half, T::zero());
    for (plane, dst) in x.chunks_exact(side * side).zip(out.chunks_exact_mut(half * half)) {
        for (rows, drow) in plane.chunks_exact(2 * side).zip(dst.chunks_exact_mut(half)) {
            let (r0, r1) = rows.split_at(side);
            for ((d, a), b) in drow.iter_mut().zip(r0.chunks_exact(2)).zip(r1.chunks_exact(2)) {
                *d = a[0].max(a[1]).max(b[0].max(b[1])).max(T::zero());
            }
        }
    }
}
