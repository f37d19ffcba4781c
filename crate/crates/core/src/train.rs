//! Mini-batch SGD training with the negatives-to-origin objective, separation
//! statistics and threshold calibration.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::loss::{LossVariant, DEFAULT_LAMBDA};
use crate::model::{output_module, DisCnn, InferenceNet, Scratch, INPUT_CHANNELS, INPUT_SIZE, OUTPUT_DIM};
use crate::optim::sgd_step;
use crate::tensor::Tensor;

/// Training hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct N2OConfig {
    pub lambda: f64,
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for N2OConfig {
    fn default() -> Self {
        N2OConfig {
            lambda: DEFAULT_LAMBDA,
            lr: 0.001,
            momentum: 0.9,
            epochs: 30,
            batch_size: 16,
            seed: 0,
        }
    }
}

impl N2OConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss().validate()?;
        if self.batch_size < 2 {
            return Err(Error::invalid(format!("batch_size must be at least 2, got {}", self.batch_size)));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::invalid(format!("lr must be a finite value >= 0, got {}", self.lr)));
        }
        if !(self.momentum.is_finite() && (0.0..1.0).contains(&self.momentum)) {
            return Err(Error::invalid(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        Ok(())
    }

    pub fn loss(&self) -> LossVariant {
        LossVariant::N2o { lambda: self.lambda }
    }
}

/// Infer-mode module statistics per label.
///
/// `ratio` is `neg_mean / pos_mean`; NaN (serialised as `null`) when undefined.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Separation {
    pub pos_mean: f64,
    pub pos_max: f64,
    pub neg_mean: f64,
    pub neg_max: f64,
    pub ratio: f64,
}

/// Per-epoch training record.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean training loss over the epoch's mini-batches.
    pub loss: f64,
    #[serde(flatten)]
    pub separation: Separation,
}

impl EpochMetrics {
    /// One whitespace-separated `key=value` log record.
    pub fn log_line(&self) -> String {
        let s = &self.separation;
        format!(
            "epoch={} loss={:.6} pos_mean={:.6} pos_max={:.6} neg_mean={:.6} neg_max={:.6} ratio={}",
            self.epoch,
            self.loss,
            s.pos_mean,
            s.pos_max,
            s.neg_mean,
            s.neg_max,
            if s.ratio.is_nan() {
                "undefined".to_string()
            } else {
                format!("{:.6}", s.ratio)
            }
        )
    }
}

/// Channel-major `[0, 1]` pixels of a 96 x 96 image.
pub fn normalized_input(image: &Image) -> Result<Vec<f32>> {
    if image.width() != INPUT_SIZE || image.height() != INPUT_SIZE {
        return Err(Error::invalid(format!(
            "network input must be {INPUT_SIZE}x{INPUT_SIZE}, got {}x{}",
            image.width(),
            image.height()
        )));
    }
    let mut v = Vec::with_capacity(INPUT_CHANNELS * INPUT_SIZE * INPUT_SIZE);
    image.write_normalized_chw(&mut v);
    Ok(v)
}

/// Infer-mode output modules of every sample, in order.
pub fn sample_modules(model: &DisCnn, samples: &[Sample]) -> Result<Vec<f32>> {
    let net = InferenceNet::new(model)?;
    let mut scratch = Scratch::default();
    let mut out = Vec::with_capacity(OUTPUT_DIM);
    samples
        .iter()
        .map(|s| {
            let x = normalized_input(&s.image)?;
            net.forward_sample(&x, &mut scratch, &mut out);
            Ok(output_module(&out))
        })
        .collect()
}

fn summarize(modules: &[f32], samples: &[Sample]) -> Separation {
    let (mut ps, mut pn, mut pm, mut ns, mut nn, mut nm) = (0.0, 0usize, 0.0f64, 0.0, 0usize, 0.0f64);
    for (&m, s) in modules.iter().zip(samples) {
        let m = f64::from(m);
        if s.positive {
            ps += m;
            pn += 1;
            pm = pm.max(m);
        } else {
            ns += m;
            nn += 1;
            nm = nm.max(m);
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { f64::NAN } else { s / n as f64 };
    let (pos_mean, neg_mean) = (mean(ps, pn), mean(ns, nn));
    let ratio = if pos_mean > 0.0 { neg_mean / pos_mean } else { f64::NAN };
    Separation {
        pos_mean,
        pos_max: pm,
        neg_mean,
        neg_max: nm,
        ratio,
    }
}

/// Infer-mode module statistics of `model` on `samples`.
pub fn separation_report(model: &DisCnn, samples: &[Sample]) -> Result<Separation> {
    Ok(summarize(&sample_modules(model, samples)?, samples))
}

/// Suggested detection threshold from labelled validation samples.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Calibration {
    pub pos_mean: f64,
    pub neg_mean: f64,
    /// Midpoint of the two means.
    pub thr: f64,
}

pub fn calibrate_threshold(model: &DisCnn, samples: &[Sample]) -> Result<Calibration> {
    check_labels(samples)?;
    let s = separation_report(model, samples)?;
    Ok(Calibration {
        pos_mean: s.pos_mean,
        neg_mean: s.neg_mean,
        thr: 0.5 * (s.pos_mean + s.neg_mean),
    })
}

fn check_labels(samples: &[Sample]) -> Result<()> {
    let pos = samples.iter().any(|s| s.positive);
    let neg = samples.iter().any(|s| !s.positive);
    if pos && neg {
        Ok(())
    } else {
        Err(Error::SingleLabel)
    }
}

/// Mini-batch partition of `n` shuffled indices; a trailing batch of one is
/// folded into its predecessor so every batch has at least two samples.
fn batches(order: &[usize], batch_size: usize) -> Vec<&[usize]> {
    let mut out: Vec<&[usize]> = order.chunks(batch_size).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        out.pop();
        let start = (out.len() - 1) * batch_size;
        *out.last_mut().expect("at least one batch") = &order[start..];
    }
    out
}

/// Owns the model, optimiser state and the epoch counter.
pub struct Trainer {
    pub model: DisCnn,
    pub config: N2OConfig,
    velocity: Vec<Tensor>,
    epoch: usize,
}

impl Trainer {
    pub fn new(model: DisCnn, config: N2OConfig) -> Result<Self> {
        config.validate()?;
        Ok(Trainer {
            model,
            config,
            velocity: Vec::new(),
            epoch: 0,
        })
    }

    /// Epochs completed so far.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// One shuffled pass over `samples`, then infer-mode metrics on the same set.
    pub fn train_epoch(&mut self, samples: &[Sample]) -> Result<EpochMetrics> {
        check_labels(samples)?;
        if samples.len() < 2 {
            return Err(Error::invalid("training needs at least two samples"));
        }
        let inputs = samples
            .iter()
            .map(|s| normalized_input(&s.image))
            .collect::<Result<Vec<_>>>()?;
        self.epoch_on(&inputs, samples)
    }

    fn epoch_on(&mut self, inputs: &[Vec<f32>], samples: &[Sample]) -> Result<EpochMetrics> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(self.epoch as u64 + 1);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut rng);
        let loss = self.config.loss();
        let (lr, momentum) = (self.config.lr as f32, self.config.momentum as f32);
        let plane = INPUT_CHANNELS * INPUT_SIZE * INPUT_SIZE;
        let mut total = 0.0f64;
        for batch in batches(&order, self.config.batch_size) {
            let mut data = Vec::with_capacity(batch.len() * plane);
            for &i in batch {
                data.extend_from_slice(&inputs[i]);
            }
            let x = Tensor::from_vec(&[batch.len(), INPUT_CHANNELS, INPUT_SIZE, INPUT_SIZE], data)?;
            let labels: Vec<bool> = batch.iter().map(|&i| samples[i].positive).collect();
            let (out, cache) = self.model.forward_train(&x)?;
            let (l, grad) = loss.batch(&out, &labels)?;
            if !l.is_finite() {
                return Err(Error::NonFinite("training loss"));
            }
            total += f64::from(l) * batch.len() as f64;
            let grads = self.model.backward(&cache, &grad)?;
            sgd_step(&mut self.model.params_mut(), &grads, lr, momentum, &mut self.velocity)?;
        }
        self.epoch += 1;
        let modules = {
            let net = InferenceNet::new(&self.model)?;
            let mut scratch = Scratch::default();
            let mut out = Vec::with_capacity(OUTPUT_DIM);
            inputs
                .iter()
                .map(|x| {
                    net.forward_sample(x, &mut scratch, &mut out);
                    output_module(&out)
                })
                .collect::<Vec<f32>>()
        };
        Ok(EpochMetrics {
            epoch: self.epoch,
            loss: total / samples.len() as f64,
            separation: summarize(&modules, samples),
        })
    }

    /// Runs `config.epochs` epochs, calling `on_epoch` after each.
    /// Stops early once `stop` returns true for an epoch's metrics.
    pub fn fit(
        &mut self,
        samples: &[Sample],
        mut on_epoch: impl FnMut(&EpochMetrics),
        stop: impl Fn(&EpochMetrics) -> bool,
    ) -> Result<Vec<EpochMetrics>> {
        check_labels(samples)?;
        let inputs = samples
            .iter()
            .map(|s| normalized_input(&s.image))
            .collect::<Result<Vec<_>>>()?;
        let mut history = Vec::with_capacity(self.config.epochs);
        for _ in 0..self.config.epochs {
            let m = self.epoch_on(&inputs, samples)?;
            on_epoch(&m);
            history.push(m);
            if stop(&m) {
                break;
            }
        }
        Ok(history)
    }
}

/// Trains a freshly seeded model for `config.epochs` epochs.
pub fn train(samples: &[Sample], config: N2OConfig, on_epoch: impl FnMut(&EpochMetrics)) -> Result<(DisCnn, Vec<EpochMetrics>)> {
    let mut t = Trainer::new(DisCnn::new(config.seed), config)?;
    let history = t.fit(samples, on_epoch, |_| false)?;
    Ok((t.model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::generate_synthetic_dataset;

    #[test]
    fn batches_never_leave_a_single_sample() {
        let order: Vec<usize> = (0..9).collect();
        let b = batches(&order, 4);
        assert_eq!(b.iter().map(|s| s.len()).collect::<Vec<_>>(), vec![4, 5]);
        let b = batches(&order[..8], 4);
        assert_eq!(b.iter().map(|s| s.len()).collect::<Vec<_>>(), vec![4, 4]);
        assert_eq!(batches(&order[..3], 4)[0].len(), 3);
    }

    #[test]
    fn config_validation() {
        assert!(N2OConfig::default().validate().is_ok());
        assert!(N2OConfig { batch_size: 1, ..Default::default() }.validate().is_err());
        assert!(N2OConfig { lambda: -1.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn zero_model_ratio_is_undefined() {
        let data = generate_synthetic_dataset(1, 2, 2);
        let s = separation_report(&DisCnn::zeroed(), &data).unwrap();
        assert_eq!((s.pos_mean, s.neg_mean), (0.0, 0.0));
        assert!(s.ratio.is_nan());
        let line = EpochMetrics { epoch: 1, loss: 0.0, separation: s }.log_line();
        assert!(line.ends_with("ratio=undefined"), "{line}");
    }

    #[test]
    fn single_label_is_rejected() {
        let data = generate_synthetic_dataset(1, 0, 3);
        let mut t = Trainer::new(DisCnn::new(0), N2OConfig::default()).unwrap();
        assert!(matches!(t.train_epoch(&data), Err(Error::SingleLabel)));
    }

    #[test]
    fn training_is_deterministic() {
        let data = generate_synthetic_dataset(2, 3, 3);
        let cfg = N2OConfig { epochs: 1, batch_size: 4, seed: 9, ..Default::default() };
        let (a, ha) = train(&data, cfg, |_| {}).unwrap();
        let (b, hb) = train(&data, cfg, |_| {}).unwrap();
        assert_eq!(ha, hb);
        for (p, q) in a.params().iter().zip(b.params()) {
            assert_eq!(p.data(), q.data());
        }
        assert_ne!(a.params()[0].data(), DisCnn::<f32>::new(9).params()[0].data());
    }
}
