//! Shared oracles for the integration suites.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};

use discnn::detect::PatchRecord;
use discnn::gradcheck::{grad_check, grad_check_with_step, GradCheck};
use discnn::loss::LossVariant;
use discnn::ops::{
    batchnorm_backward, batchnorm_forward, conv3x3_backward, conv3x3_forward, linear_backward, linear_forward,
    maxpool2_backward, maxpool2_forward, relu_backward, relu_forward, BnConfig, Mode,
};
use discnn::{BBox, DisCnn, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const PROBES: usize = 60;
const MODEL_STEP: f64 = 1e-5;
/// Coordinates with smaller analytic gradients are dominated by cancellation
/// error in the difference quotient and are not probed in the network check.
pub const MIN_PROBED_GRAD: f64 = 1e-4;

pub fn random_tensor(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn split(point: &[f64], shapes: &[&[usize]]) -> Vec<Tensor<f64>> {
    let mut off = 0;
    shapes
        .iter()
        .map(|s| {
            let n: usize = s.iter().product();
            let t = Tensor::from_vec(s, point[off..off + n].to_vec()).unwrap();
            off += n;
            t
        })
        .collect()
}

fn concat(ts: &[&Tensor<f64>]) -> Vec<f64> {
    ts.iter().flat_map(|t| t.data().iter().copied()).collect()
}

pub fn conv_check(seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (xs, ws, bs): (&[usize], &[usize], &[usize]) = (&[2, 3, 6, 6], &[4, 3, 3, 3], &[4]);
    let x = random_tensor(xs, -1.0, 1.0, &mut rng);
    let w = random_tensor(ws, -1.0, 1.0, &mut rng);
    let b = random_tensor(bs, -1.0, 1.0, &mut rng);
    let r = random_tensor(&[2, 4, 6, 6], -1.0, 1.0, &mut rng);
    let g = conv3x3_backward(&x, &w, &r, true).unwrap();
    let analytic = concat(&[g.input.as_ref().unwrap(), &g.params[0], &g.params[1]]);
    let f = |p: &[f64]| {
        let t = split(p, &[xs, ws, bs]);
        Ok(dot(&conv3x3_forward(&t[0], &t[1], &t[2])?, &r))
    };
    grad_check(f, &concat(&[&x, &w, &b]), &analytic, PROBES, seed).unwrap()
}

pub fn batchnorm_check(seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (xs, cs): (&[usize], &[usize]) = (&[4, 3, 5, 5], &[3]);
    let x = random_tensor(xs, -2.0, 2.0, &mut rng);
    let gamma = random_tensor(cs, 0.5, 1.5, &mut rng);
    let beta = random_tensor(cs, -0.5, 0.5, &mut rng);
    let r = random_tensor(xs, -1.0, 1.0, &mut rng);
    let cfg = BnConfig::default();
    let (_, cache) = batchnorm_forward(&x, &gamma, &beta, cfg, Mode::Train, &mut None).unwrap();
    let g = batchnorm_backward(&cache.unwrap(), &gamma, &r).unwrap();
    let analytic = concat(&[g.input.as_ref().unwrap(), &g.params[0], &g.params[1]]);
    let f = |p: &[f64]| {
        let t = split(p, &[xs, cs, cs]);
        let (y, _) = batchnorm_forward(&t[0], &t[1], &t[2], cfg, Mode::Train, &mut None)?;
        Ok(dot(&y, &r))
    };
    grad_check(f, &concat(&[&x, &gamma, &beta]), &analytic, PROBES, seed).unwrap()
}

pub fn relu_check(seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = [2, 3, 4, 4];
    // keep every input away from the kink at zero
    let x = random_tensor(&shape, 0.05, 1.0, &mut rng).map(|v| if v * 1e4 % 2.0 < 1.0 { -v } else { v });
    let r = random_tensor(&shape, -1.0, 1.0, &mut rng);
    let analytic = relu_backward(&x, &r).unwrap();
    let f = |p: &[f64]| Ok(dot(&relu_forward(&Tensor::from_vec(&shape, p.to_vec())?), &r));
    grad_check(f, x.data(), analytic.data(), PROBES, seed).unwrap()
}

pub fn pool_check(seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = [2, 3, 6, 6];
    let x = random_tensor(&shape, -1.0, 1.0, &mut rng);
    let r = random_tensor(&[2, 3, 3, 3], -1.0, 1.0, &mut rng);
    let (_, idx) = maxpool2_forward(&x).unwrap();
    let analytic = maxpool2_backward(&r, &idx).unwrap();
    let f = |p: &[f64]| Ok(dot(&maxpool2_forward(&Tensor::from_vec(&shape, p.to_vec())?)?.0, &r));
    grad_check(f, x.data(), analytic.data(), PROBES, seed).unwrap()
}

pub fn linear_check(seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (xs, ws, bs): (&[usize], &[usize], &[usize]) = (&[3, 7], &[5, 7], &[5]);
    let x = random_tensor(xs, -1.0, 1.0, &mut rng);
    let w = random_tensor(ws, -1.0, 1.0, &mut rng);
    let b = random_tensor(bs, -1.0, 1.0, &mut rng);
    let r = random_tensor(&[3, 5], -1.0, 1.0, &mut rng);
    let g = linear_backward(&x, &w, &r).unwrap();
    let analytic = concat(&[g.input.as_ref().unwrap(), &g.params[0], &g.params[1]]);
    let f = |p: &[f64]| {
        let t = split(p, &[xs, ws, bs]);
        Ok(dot(&linear_forward(&t[0], &t[1], &t[2])?, &r))
    };
    // the probe is affine in every single coordinate, so a wide step is exact
    grad_check_with_step(f, &concat(&[&x, &w, &b]), &analytic, PROBES, seed, 0.1).unwrap()
}

/// Worst relative error of the loss gradient over random outputs of both labels.
pub fn loss_check(seed: u64, trials: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for t in 0..trials {
        let z: Vec<f64> = (0..16).map(|_| rng.random_range(-0.8..0.8)).collect();
        let positive = t % 2 == 0;
        let lambda = rng.random_range(0.0..3.0);
        let (_, g) = discnn::loss::n2o_loss(&z, positive, lambda);
        let f = |p: &[f64]| Ok(discnn::loss::n2o_loss(p, positive, lambda).0);
        worst = worst.max(grad_check(f, &z, &g, 16, seed).unwrap().max_rel_error);
    }
    worst
}

fn flat_params(m: &DisCnn<f64>) -> Vec<f64> {
    m.params().iter().flat_map(|t| t.data().iter().copied()).collect()
}

fn set_params(m: &mut DisCnn<f64>, flat: &[f64]) {
    let mut off = 0;
    for t in m.params_mut() {
        let n = t.len();
        t.data_mut().copy_from_slice(&flat[off..off + n]);
        off += n;
    }
}

/// Full network plus mean loss on a two-sample batch with one sample of each label.
///
/// Returns the parameter check and the input check. Conv biases are excluded
/// from the parameter probes: batch normalisation cancels them, so their true
/// gradient is zero and the returned flag reports whether the analytic value is too.
pub fn model_check(seed: u64) -> (GradCheck, GradCheck, bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = DisCnn::<f64>::new(seed);
    let x = random_tensor(&[2, 3, 96, 96], 0.0, 1.0, &mut rng);
    let labels = [true, false];
    let loss = LossVariant::default();
    let mut m = model.clone();
    let (out, cache) = m.forward_train(&x).unwrap();
    let (_, dout) = loss.batch(&out, &labels).unwrap();
    let (grads, dx) = m.backward_with_input(&cache, &dout, true).unwrap();
    let analytic: Vec<f64> = grads.iter().flat_map(|t| t.data().iter().copied()).collect();

    // canonical order: per block [weight, bias, gamma, beta], then dense [weight, bias]
    let mut bias_ranges = Vec::new();
    let mut keep = Vec::new();
    let mut off = 0;
    for (k, t) in model.params().iter().enumerate() {
        let range = off..off + t.len();
        if k < 16 && k % 4 == 1 {
            bias_ranges.push(range);
        } else {
            keep.extend(range.filter(|&i| analytic[i].abs() >= MIN_PROBED_GRAD));
        }
        off += t.len();
    }
    let bias_zero = bias_ranges.iter().all(|r| analytic[r.clone()].iter().all(|g| g.abs() < 1e-10));

    // probe a random subset of the kept coordinates
    let point_all = flat_params(&model);
    let chosen: Vec<usize> = rand::seq::index::sample(&mut rng, keep.len(), PROBES)
        .into_iter()
        .map(|i| keep[i])
        .collect();
    let sub_point: Vec<f64> = chosen.iter().map(|&i| point_all[i]).collect();
    let sub_analytic: Vec<f64> = chosen.iter().map(|&i| analytic[i]).collect();
    let f = |p: &[f64]| {
        let mut full = point_all.clone();
        for (&i, &v) in chosen.iter().zip(p) {
            full[i] = v;
        }
        let mut mm = model.clone();
        set_params(&mut mm, &full);
        let (o, _) = mm.forward_train(&x)?;
        Ok(loss.batch(&o, &labels)?.0)
    };
    let params = grad_check_with_step(f, &sub_point, &sub_analytic, PROBES, seed, MODEL_STEP).unwrap();

    let dx = dx.unwrap();
    let live: Vec<usize> = (0..dx.len()).filter(|&i| dx.data()[i].abs() >= MIN_PROBED_GRAD).collect();
    let picked: Vec<usize> = rand::seq::index::sample(&mut rng, live.len(), PROBES)
        .into_iter()
        .map(|i| live[i])
        .collect();
    let fx = |p: &[f64]| {
        let mut full = x.data().to_vec();
        for (&i, &v) in picked.iter().zip(p) {
            full[i] = v;
        }
        let mut mm = model.clone();
        let (o, _) = mm.forward_train(&Tensor::from_vec(x.shape(), full)?)?;
        Ok(loss.batch(&o, &labels)?.0)
    };
    let xp: Vec<f64> = picked.iter().map(|&i| x.data()[i]).collect();
    let xa: Vec<f64> = picked.iter().map(|&i| dx.data()[i]).collect();
    let input = grad_check_with_step(fx, &xp, &xa, PROBES, seed + 1, MODEL_STEP).unwrap();
    (params, input, bias_zero)
}

pub fn random_records(rng: &mut impl Rng) -> Vec<PatchRecord> {
    let n = rng.random_range(0..60);
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    while out.len() < n {
        let sws = rng.random_range(4..40usize);
        let (x, y) = (rng.random_range(0..200i64), rng.random_range(0..200i64));
        if seen.insert((x, y, sws)) {
            out.push(PatchRecord {
                xmin: x,
                ymin: y,
                xmax: x + sws as i64,
                ymax: y + sws as i64,
                sws,
                module: rng.random_range(0.0..5.0f32),
            });
        }
    }
    out
}

/// Connected components by depth-first search over the explicit link graph.
pub fn component_oracle(records: &[PatchRecord], link: f64) -> BTreeSet<Vec<(i64, i64, usize)>> {
    let n = records.len();
    let near = |a: &PatchRecord, b: &PatchRecord| {
        let (p, q) = (a.center(), b.center());
        (p.0 - q.0).hypot(p.1 - q.1) <= link
    };
    let mut label = vec![usize::MAX; n];
    for start in 0..n {
        if label[start] != usize::MAX {
            continue;
        }
        let mut stack = vec![start];
        label[start] = start;
        while let Some(i) = stack.pop() {
            for j in 0..n {
                if label[j] == usize::MAX && near(&records[i], &records[j]) {
                    label[j] = start;
                    stack.push(j);
                }
            }
        }
    }
    let mut groups: HashMap<usize, Vec<(i64, i64, usize)>> = HashMap::new();
    for (i, r) in records.iter().enumerate() {
        groups.entry(label[i]).or_default().push((r.xmin, r.ymin, r.sws));
    }
    groups
        .into_values()
        .map(|mut g| {
            g.sort();
            g
        })
        .collect()
}

pub fn fold_box(records: &[PatchRecord]) -> BBox {
    let mut b = BBox {
        xmin: i64::MAX,
        ymin: i64::MAX,
        xmax: i64::MIN,
        ymax: i64::MIN,
    };
    for r in records {
        b.xmin = b.xmin.min(r.xmin);
        b.ymin = b.ymin.min(r.ymin);
        b.xmax = b.xmax.max(r.xmax);
        b.ymax = b.ymax.max(r.ymax);
    }
    b
}
