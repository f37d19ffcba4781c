//! 3x3 same-padded convolution (stride 1, zero padding 1) via im2col + GEMM.

use crate::error::{Error, Result};
use crate::ops::{split_batch, LayerGrads};
use crate::tensor::{gemm, Scalar, Tensor};

const K: usize = 3;
const TAPS: usize = K * K;

/// Expands one `C x H x W` sample into a `(C*9) x (H*W)` column matrix.
fn im2col<T: Scalar>(input: &[T], c: usize, h: usize, w: usize, cols: &mut [T]) {
    let hw = h * w;
    for ch in 0..c {
        let plane = &input[ch * hw..(ch + 1) * hw];
        for dy in 0..K {
            for dx in 0..K {
                let row = &mut cols[(ch * TAPS + dy * K + dx) * hw..][..hw];
                for y in 0..h {
                    let dst = &mut row[y * w..(y + 1) * w];
                    let sy = y as isize + dy as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    match dx {
                        0 => {
                            dst[0] = T::zero();
                            dst[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            dst[..w - 1].copy_from_slice(&src[1..]);
                            dst[w - 1] = T::zero();
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds a column matrix back onto a `C x H x W` gradient buffer.
fn col2im<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize, out: &mut [T]) {
    let hw = h * w;
    for ch in 0..c {
        let plane = &mut out[ch * hw..(ch + 1) * hw];
        for dy in 0..K {
            for dx in 0..K {
                let row = &cols[(ch * TAPS + dy * K + dx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + dy as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &row[y * w..(y + 1) * w];
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    match dx {
                        0 => {
                            for (d, &s) in dst[..w - 1].iter_mut().zip(&src[1..]) {
                                *d += s;
                            }
                        }
                        1 => {
                            for (d, &s) in dst.iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                        _ => {
                            for (d, &s) in dst[1..].iter_mut().zip(&src[..w - 1]) {
                                *d += s;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Single-sample convolution into caller-owned buffers (`cols` and `out` are resized).
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv3x3_sample_into<T: Scalar>(
    input: &[T],
    c: usize,
    h: usize,
    w: usize,
    weights: &[T],
    bias: &[T],
    cols: &mut Vec<T>,
    out: &mut Vec<T>,
) {
    let hw = h * w;
    let o = bias.len();
    debug_assert_eq!(weights.len(), o * c * TAPS);
    cols.resize(c * TAPS * hw, T::zero());
    out.resize(o * hw, T::zero());
    im2col(input, c, h, w, cols);
    for (row, &b) in out.chunks_exact_mut(hw).zip(bias) {
        row.fill(b);
    }
    gemm(o, c * TAPS, hw, weights, false, cols, false, T::one(), out);
}

fn check_params<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<(usize, usize, usize, usize, usize)> {
    let (n, c, h, w) = split_batch("conv3x3", input)?;
    weights.expect_rank("conv3x3 weights", 4)?;
    let o = weights.shape()[0];
    weights.expect_shape(
        "conv3x3 weights",
        &["out channels", "in channels", "kernel height", "kernel width"],
        &[o, c, K, K],
    )?;
    bias.expect_shape("conv3x3 bias", &["out channels"], &[o])?;
    Ok((n, c, h, w, o))
}

fn with_batch_rank<T: Scalar>(like: &Tensor<T>, n: usize, c: usize, h: usize, w: usize, data: Vec<T>) -> Tensor<T> {
    let shape: Vec<usize> = if like.rank() == 3 {
        vec![c, h, w]
    } else {
        vec![n, c, h, w]
    };
    Tensor::from_vec(&shape, data).expect("shape computed from checked input")
}

/// Same-padded 3x3 convolution.
///
/// Accepts a single `C x H x W` sample or an `N x C x H x W` batch and returns
/// a tensor of the same rank with `O` channels and unchanged spatial size.
pub fn conv3x3_forward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (n, c, h, w, o) = check_params(input, weights, bias)?;
    let hw = h * w;
    let mut cols = vec![T::zero(); c * TAPS * hw];
    let mut out = vec![T::zero(); n * o * hw];
    for (sample, dst) in input
        .data()
        .chunks_exact(c * hw)
        .zip(out.chunks_exact_mut(o * hw))
    {
        im2col(sample, c, h, w, &mut cols);
        for (row, &b) in dst.chunks_exact_mut(hw).zip(bias.data()) {
            row.fill(b);
        }
        gemm(o, c * TAPS, hw, weights.data(), false, &cols, false, T::one(), dst);
    }
    Ok(with_batch_rank(input, n, o, h, w, out))
}

/// Gradients of a 3x3 convolution; `params` is `[weights, bias]`.
///
/// The input gradient is skipped when `need_input_grad` is false (first layer).
pub fn conv3x3_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
    need_input_grad: bool,
) -> Result<LayerGrads<T>> {
    let o = weights.shape().first().copied().unwrap_or(0);
    let bias_like = Tensor::zeros(&[o.max(1)]);
    let (n, c, h, w, o) = check_params(input, weights, &bias_like)?;
    let (gn, go, gh, gw) = split_batch("conv3x3 backward", grad_out)?;
    for (dim, exp, got) in [("batch", n, gn), ("out channels", o, go), ("height", h, gh), ("width", w, gw)] {
        if exp != got {
            return Err(Error::Shape {
                op: "conv3x3 backward grad_out",
                dim,
                expected: exp,
                actual: got,
            });
        }
    }
    let hw = h * w;
    let c9 = c * TAPS;
    let mut cols = vec![T::zero(); c9 * hw];
    let mut dcols = vec![T::zero(); if need_input_grad { c9 * hw } else { 0 }];
    let mut dweights = vec![T::zero(); o * c9];
    let mut dbias = vec![T::zero(); o];
    let mut dinput = vec![T::zero(); if need_input_grad { n * c * hw } else { 0 }];

    for (i, (sample, g)) in input
        .data()
        .chunks_exact(c * hw)
        .zip(grad_out.data().chunks_exact(o * hw))
        .enumerate()
    {
        im2col(sample, c, h, w, &mut cols);
        gemm(o, hw, c9, g, false, &cols, true, T::one(), &mut dweights);
        for (db, row) in dbias.iter_mut().zip(g.chunks_exact(hw)) {
            *db += row.iter().copied().sum::<T>();
        }
        if need_input_grad {
            gemm(c9, o, hw, weights.data(), true, g, false, T::zero(), &mut dcols);
            col2im(&dcols, c, h, w, &mut dinput[i * c * hw..(i + 1) * c * hw]);
        }
    }

    let input_grad = need_input_grad.then(|| with_batch_rank(input, n, c, h, w, dinput));
    Ok(LayerGrads {
        input: input_grad,
        params: vec![
            Tensor::from_vec(weights.shape(), dweights)?,
            Tensor::from_vec(&[o], dbias)?,
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct sliding-sum reference, independent of im2col.
    fn direct_conv(input: &[f64], c: usize, h: usize, w: usize, wts: &[f64], bias: &[f64]) -> Vec<f64> {
        let o = bias.len();
        let mut out = vec![0.0; o * h * w];
        for oc in 0..o {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = bias[oc];
                    for ic in 0..c {
                        for dy in 0..3 {
                            for dx in 0..3 {
                                let sy = y as isize + dy as isize - 1;
                                let sx = x as isize + dx as isize - 1;
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                acc += input[(ic * h + sy as usize) * w + sx as usize]
                                    * wts[((oc * c + ic) * 3 + dy) * 3 + dx];
                            }
                        }
                    }
                    out[(oc * h + y) * w + x] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let input = Tensor::<f32>::full(&[2, 5, 7], 3.5);
        let out = conv3x3_forward(&input, &Tensor::zeros(&[4, 2, 3, 3]), &Tensor::zeros(&[4])).unwrap();
        assert_eq!(out.shape(), &[4, 5, 7]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn center_tap_is_identity() {
        let input = Tensor::<f64>::from_vec(&[1, 3, 4], (0..12).map(|v| v as f64 * 0.5 - 1.0).collect()).unwrap();
        let mut k = Tensor::<f64>::zeros(&[1, 1, 3, 3]);
        k.data_mut()[4] = 1.0;
        let out = conv3x3_forward(&input, &k, &Tensor::zeros(&[1])).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn ramp_with_ones_kernel_matches_direct_sum() {
        let ramp: Vec<f64> = (0..16).map(f64::from).collect();
        let input = Tensor::from_vec(&[1, 4, 4], ramp.clone()).unwrap();
        let k = Tensor::full(&[1, 1, 3, 3], 1.0);
        let out = conv3x3_forward(&input, &k, &Tensor::zeros(&[1])).unwrap();
        let oracle = direct_conv(&ramp, 1, 4, 4, k.data(), &[0.0]);
        assert_eq!(out.data(), &oracle[..]);
        // corner (0,0) sums {0,1,4,5}; interior (1,1) sums the 3x3 block around 5
        assert_eq!(oracle[0], 10.0);
        assert_eq!(oracle[5], 45.0);
    }

    #[test]
    fn multichannel_batch_matches_direct_sum() {
        let (n, c, h, w, o) = (2, 3, 5, 6, 4);
        let input: Vec<f64> = (0..n * c * h * w).map(|i| ((i * 37 % 23) as f64) / 7.0 - 1.5).collect();
        let wts: Vec<f64> = (0..o * c * 9).map(|i| ((i * 11 % 17) as f64) / 9.0 - 0.9).collect();
        let bias: Vec<f64> = (0..o).map(|i| i as f64 * 0.25).collect();
        let out = conv3x3_forward(
            &Tensor::from_vec(&[n, c, h, w], input.clone()).unwrap(),
            &Tensor::from_vec(&[o, c, 3, 3], wts.clone()).unwrap(),
            &Tensor::from_vec(&[o], bias.clone()).unwrap(),
        )
        .unwrap();
        assert_eq!(out.shape(), &[n, o, h, w]);
        for s in 0..n {
            let oracle = direct_conv(&input[s * c * h * w..(s + 1) * c * h * w], c, h, w, &wts, &bias);
            for (a, b) in out.data()[s * o * h * w..(s + 1) * o * h * w].iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mismatched_channels_name_the_dimension() {
        let input = Tensor::<f32>::zeros(&[2, 4, 4]);
        let err = conv3x3_forward(&input, &Tensor::zeros(&[1, 3, 3, 3]), &Tensor::zeros(&[1])).unwrap_err();
        match err {
            Error::Shape { dim, expected, actual, .. } => {
                assert_eq!(dim, "in channels");
                assert_eq!((expected, actual), (2, 3));
            }
            other => panic!("unexpected {other:?}"),
        }
        let err = conv3x3_forward(&input, &Tensor::zeros(&[1, 2, 3, 3]), &Tensor::zeros(&[2])).unwrap_err();
        assert!(matches!(err, Error::Shape { dim: "out channels", .. }));
    }

    #[test]
    fn backward_shapes_match() {
        let input = Tensor::<f64>::full(&[2, 3, 4, 4], 0.5);
        let wts = Tensor::<f64>::full(&[5, 3, 3, 3], 0.1);
        let g = Tensor::<f64>::full(&[2, 5, 4, 4], 1.0);
        let grads = conv3x3_backward(&input, &wts, &g, true).unwrap();
        assert_eq!(grads.input.as_ref().unwrap().shape(), input.shape());
        assert_eq!(grads.params[0].shape(), wts.shape());
        assert_eq!(grads.params[1].shape(), &[5]);
        // bias gradient is the spatial+batch sum of the output gradient
        assert!(grads.params[1].data().iter().all(|&v| v == 32.0));
        let no_input = conv3x3_backward(&input, &wts, &g, false).unwrap();
        assert!(no_input.input.is_none());
        assert_eq!(no_input.params, grads.params);
    }
}
