//! Per-channel batch normalization over `N x H x W`.

use crate::error::{Error, Result};
use crate::ops::{split_batch, LayerGrads};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, running statistics updated.
    Train,
    /// Running statistics only.
    Infer,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BnConfig {
    pub eps: f64,
    /// Weight of the new batch statistic in the running average.
    pub momentum: f64,
}

impl Default for BnConfig {
    fn default() -> Self {
        BnConfig {
            eps: 1e-5,
            momentum: 0.1,
        }
    }
}

/// Running mean and (unbiased) variance per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T = f32> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

impl<T: Scalar> RunningStats<T> {
    /// Mean 0, variance 1.
    pub fn identity(channels: usize) -> Self {
        RunningStats {
            mean: Tensor::zeros(&[channels]),
            var: Tensor::full(&[channels], T::one()),
        }
    }
}

/// State kept from a train-mode forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct BatchNormCache<T = f32> {
    normalized: Tensor<T>,
    inv_std: Vec<T>,
}

/// Batch normalization forward pass.
///
/// In [`Mode::Train`] the batch statistics normalize the input and are folded
/// into `running` with an exponential moving average; an uninitialized
/// `running` is seeded directly from the first batch. In [`Mode::Infer`]
/// `running` must be present.
pub fn batchnorm_forward<T: Scalar>(
    batch: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    config: BnConfig,
    mode: Mode,
    running: &mut Option<RunningStats<T>>,
) -> Result<(Tensor<T>, Option<BatchNormCache<T>>)> {
    let (n, c, h, w) = split_batch("batchnorm", batch)?;
    gamma.expect_shape("batchnorm gamma", &["channels"], &[c])?;
    beta.expect_shape("batchnorm beta", &["channels"], &[c])?;
    let hw = h * w;
    let count = n * hw;
    let x = batch.data();
    let (g, b) = (gamma.data(), beta.data());
    let mut out = vec![T::zero(); x.len()];

    match mode {
        Mode::Infer => {
            let stats = running.as_ref().ok_or(Error::UninitializedRunningStats)?;
            stats.mean.expect_shape("batchnorm running mean", &["channels"], &[c])?;
            for ch in 0..c {
                let mean = stats.mean.data()[ch];
                let inv_std = T::one() / (stats.var.data()[ch] + T::of(config.eps)).sqrt();
                let scale = g[ch] * inv_std;
                for s in 0..n {
                    let base = (s * c + ch) * hw;
                    for (o, &v) in out[base..base + hw].iter_mut().zip(&x[base..base + hw]) {
                        *o = (v - mean) * scale + b[ch];
                    }
                }
            }
            Ok((Tensor::from_vec(batch.shape(), out)?, None))
        }
        Mode::Train => {
            let mut normalized = vec![T::zero(); x.len()];
            let mut inv_stds = Vec::with_capacity(c);
            let mut means = Vec::with_capacity(c);
            let mut vars = Vec::with_capacity(c);
            for ch in 0..c {
                let planes = || (0..n).map(move |s| (s * c + ch) * hw);
                let mut sum = 0.0f64;
                for base in planes() {
                    sum += x[base..base + hw].iter().map(|v| v.as_f64()).sum::<f64>();
                }
                let mean = sum / count as f64;
                let mut sq = 0.0f64;
                for base in planes() {
                    sq += x[base..base + hw]
                        .iter()
                        .map(|v| {
                            let d = v.as_f64() - mean;
                            d * d
                        })
                        .sum::<f64>();
                }
                let var = sq / count as f64;
                let inv_std = 1.0 / (var + config.eps).sqrt();
                let (mean_t, inv_t) = (T::of(mean), T::of(inv_std));
                let (gc, bc) = (g[ch], b[ch]);
                for base in planes() {
                    let src = &x[base..base + hw];
                    let norm = &mut normalized[base..base + hw];
                    let dst = &mut out[base..base + hw];
                    for ((xh, o), &v) in norm.iter_mut().zip(dst.iter_mut()).zip(src) {
                        *xh = (v - mean_t) * inv_t;
                        *o = *xh * gc + bc;
                    }
                }
                inv_stds.push(inv_t);
                means.push(mean);
                vars.push(if count > 1 {
                    var * count as f64 / (count - 1) as f64
                } else {
                    var
                });
            }
            match running {
                Some(stats) => {
                    stats.mean.expect_shape("batchnorm running mean", &["channels"], &[c])?;
                    let m = config.momentum;
                    for ch in 0..c {
                        let rm = &mut stats.mean.data_mut()[ch];
                        *rm = T::of((1.0 - m) * rm.as_f64() + m * means[ch]);
                        let rv = &mut stats.var.data_mut()[ch];
                        *rv = T::of((1.0 - m) * rv.as_f64() + m * vars[ch]);
                    }
                }
                None => {
                    *running = Some(RunningStats {
                        mean: Tensor::from_vec(&[c], means.into_iter().map(T::of).collect())?,
                        var: Tensor::from_vec(&[c], vars.into_iter().map(T::of).collect())?,
                    });
                }
            }
            let cache = BatchNormCache {
                normalized: Tensor::from_vec(batch.shape(), normalized)?,
                inv_std: inv_stds,
            };
            Ok((Tensor::from_vec(batch.shape(), out)?, Some(cache)))
        }
    }
}

/// Backward pass through a train-mode batch normalization; `params` is `[gamma, beta]`.
pub fn batchnorm_backward<T: Scalar>(
    cache: &BatchNormCache<T>,
    gamma: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<LayerGrads<T>> {
    let (n, c, h, w) = split_batch("batchnorm backward", &cache.normalized)?;
    if grad_out.shape() != cache.normalized.shape() {
        return Err(Error::Shape {
            op: "batchnorm backward",
            dim: "element count",
            expected: cache.normalized.len(),
            actual: grad_out.len(),
        });
    }
    gamma.expect_shape("batchnorm gamma", &["channels"], &[c])?;
    let hw = h * w;
    let count = T::of((n * hw) as f64);
    let xh = cache.normalized.data();
    let dy = grad_out.data();
    let mut dx = vec![T::zero(); xh.len()];
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ch in 0..c {
        let bases: Vec<usize> = (0..n).map(|s| (s * c + ch) * hw).collect();
        let (mut sum_dy, mut sum_dy_xh) = (T::zero(), T::zero());
        for &base in &bases {
            for i in base..base + hw {
                sum_dy += dy[i];
                sum_dy_xh += dy[i] * xh[i];
            }
        }
        dgamma[ch] = sum_dy_xh;
        dbeta[ch] = sum_dy;
        let k = gamma.data()[ch] * cache.inv_std[ch] / count;
        for &base in &bases {
            for i in base..base + hw {
                dx[i] = k * (count * dy[i] - sum_dy - xh[i] * sum_dy_xh);
            }
        }
    }
    Ok(LayerGrads {
        input: Some(Tensor::from_vec(grad_out.shape(), dx)?),
        params: vec![Tensor::from_vec(&[c], dgamma)?, Tensor::from_vec(&[c], dbeta)?],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ones(c: usize) -> Tensor<f64> {
        Tensor::full(&[c], 1.0)
    }

    #[test]
    fn constant_channels_normalize_to_zero() {
        let mut data = vec![0.0f64; 2 * 3 * 4];
        for (i, v) in data.iter_mut().enumerate() {
            *v = ((i / 4) % 3) as f64 * 10.0 + 2.0;
        }
        let batch = Tensor::from_vec(&[2, 3, 2, 2], data).unwrap();
        let mut rs = None;
        let (out, _) = batchnorm_forward(&batch, &ones(3), &Tensor::zeros(&[3]), BnConfig::default(), Mode::Train, &mut rs).unwrap();
        assert!(out.data().iter().all(|v| v.abs() <= 1e-9));
    }

    #[test]
    fn zero_gamma_yields_beta() {
        let batch = Tensor::from_vec(&[3, 2, 1, 2], (0..12).map(|v| v as f64 * 1.7).collect()).unwrap();
        let beta = Tensor::from_vec(&[2], vec![0.25, -4.0]).unwrap();
        for mode in [Mode::Train, Mode::Infer] {
            let mut rs = Some(RunningStats::identity(2));
            let (out, _) = batchnorm_forward(&batch, &Tensor::zeros(&[2]), &beta, BnConfig::default(), mode, &mut rs).unwrap();
            for s in 0..3 {
                for ch in 0..2 {
                    for x in 0..2 {
                        assert_eq!(out.data()[(s * 2 + ch) * 2 + x], beta.data()[ch]);
                    }
                }
            }
        }
    }

    #[test]
    fn two_point_statistics() {
        let eps = 1e-5;
        let batch = Tensor::from_vec(&[2, 1, 1, 1], vec![0.0, 2.0]).unwrap();
        let mut rs = None;
        let cfg = BnConfig { eps, momentum: 0.1 };
        let (out, _) = batchnorm_forward(&batch, &ones(1), &Tensor::zeros(&[1]), cfg, Mode::Train, &mut rs).unwrap();
        // mean 1, biased variance 1
        let e = 1.0 / (1.0f64 + eps).sqrt();
        assert!((out.data()[0] + e).abs() < 1e-12);
        assert!((out.data()[1] - e).abs() < 1e-12);
        // first batch seeds running stats with the unbiased variance (2)
        let stats = rs.unwrap();
        assert_eq!(stats.mean.data(), &[1.0]);
        assert_eq!(stats.var.data(), &[2.0]);
    }

    #[test]
    fn running_stats_follow_ema() {
        let batch = Tensor::from_vec(&[2, 1, 1, 1], vec![0.0f64, 2.0]).unwrap();
        let mut rs = Some(RunningStats::identity(1));
        batchnorm_forward(&batch, &ones(1), &Tensor::zeros(&[1]), BnConfig::default(), Mode::Train, &mut rs).unwrap();
        let stats = rs.unwrap();
        assert!((stats.mean.data()[0] - 0.1).abs() < 1e-12);
        assert!((stats.var.data()[0] - (0.9 + 0.1 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn infer_requires_running_stats() {
        let batch = Tensor::<f32>::zeros(&[1, 2, 2, 2]);
        let err = batchnorm_forward(
            &batch,
            &Tensor::full(&[2], 1.0),
            &Tensor::zeros(&[2]),
            BnConfig::default(),
            Mode::Infer,
            &mut None,
        )
        .unwrap_err();
        assert!(matches!(err, Error::UninitializedRunningStats));
    }

    #[test]
    fn train_output_moments() {
        let eps = 1e-5;
        let n = 4;
        let data: Vec<f64> = (0..n * 2 * 9).map(|i| ((i * 7919) % 101) as f64 / 13.0).collect();
        let batch = Tensor::from_vec(&[n, 2, 3, 3], data.clone()).unwrap();
        let (out, _) = batchnorm_forward(&batch, &ones(2), &Tensor::zeros(&[2]), BnConfig { eps, momentum: 0.1 }, Mode::Train, &mut None).unwrap();
        for ch in 0..2 {
            let pick = |src: &[f64]| -> Vec<f64> {
                (0..n).flat_map(|s| src[(s * 2 + ch) * 9..(s * 2 + ch + 1) * 9].to_vec()).collect()
            };
            let moments = |v: &[f64]| {
                let m = v.iter().sum::<f64>() / v.len() as f64;
                (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64)
            };
            let (_, in_var) = moments(&pick(&data));
            let (m, var) = moments(&pick(out.data()));
            assert!(m.abs() <= 1e-6);
            assert!((var - in_var / (in_var + eps)).abs() <= 1e-4);
        }
    }
}
