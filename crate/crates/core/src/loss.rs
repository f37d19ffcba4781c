//! Negatives-to-origin objective on the 16-dimensional network output.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Lower bound on the positive-class probability inside the logarithm.
pub const P_FLOOR: f64 = 1e-12;

pub const DEFAULT_LAMBDA: f64 = 1.0;

/// Selectable training objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossVariant {
    /// Cross-entropy on `p = 1 - exp(-|z|^2)` with an extra `lambda * |z|^2` pull on negatives.
    N2o { lambda: f64 },
}

impl Default for LossVariant {
    fn default() -> Self {
        LossVariant::N2o {
            lambda: DEFAULT_LAMBDA,
        }
    }
}

impl LossVariant {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LossVariant::N2o { lambda } if !(lambda >= 0.0 && lambda.is_finite()) => {
                Err(Error::invalid(format!("lambda must be a finite value >= 0, got {lambda}")))
            }
            _ => Ok(()),
        }
    }

    pub fn sample<T: Scalar>(&self, z: &[T], positive: bool) -> (T, Vec<T>) {
        match *self {
            LossVariant::N2o { lambda } => n2o_loss(z, positive, lambda),
        }
    }

    /// Mean loss over a `N x D` batch and its gradient with respect to the batch.
    pub fn batch<T: Scalar>(&self, outputs: &Tensor<T>, labels: &[bool]) -> Result<(T, Tensor<T>)> {
        outputs.expect_rank("loss", 2)?;
        let (n, d) = (outputs.shape()[0], outputs.shape()[1]);
        if labels.len() != n {
            return Err(Error::Shape {
                op: "loss",
                dim: "batch",
                expected: n,
                actual: labels.len(),
            });
        }
        let scale = T::one() / T::of(n as f64);
        let mut total = T::zero();
        let mut grad = Vec::with_capacity(n * d);
        for (row, &y) in outputs.data().chunks_exact(d).zip(labels) {
            let (l, g) = self.sample(row, y);
            total += l;
            grad.extend(g.into_iter().map(|v| v * scale));
        }
        Ok((total * scale, Tensor::from_vec(outputs.shape(), grad)?))
    }
}

/// Loss and gradient for one output vector `z` with label `positive`.
///
/// With `s2 = |z|^2` and `p = 1 - exp(-s2)`:
/// positives pay `-ln(max(p, P_FLOOR))`, negatives pay `(1 + lambda) * s2`.
pub fn n2o_loss<T: Scalar>(z: &[T], positive: bool, lambda: f64) -> (T, Vec<T>) {
    let s2: f64 = z.iter().map(|v| v.as_f64() * v.as_f64()).sum();
    if positive {
        let p = -(-s2).exp_m1();
        if p <= P_FLOOR {
            return (T::of(-P_FLOOR.ln()), vec![T::zero(); z.len()]);
        }
        let coef = -2.0 / s2.exp_m1();
        (T::of(-p.ln()), z.iter().map(|v| T::of(coef * v.as_f64())).collect())
    } else {
        let w = 1.0 + lambda;
        (T::of(w * s2), z.iter().map(|v| T::of(2.0 * w * v.as_f64())).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn closed_forms() {
        for lambda in [0.0, 1.0, 7.5] {
            let (l, g) = n2o_loss(&[0.0f64; 16], false, lambda);
            assert_eq!(l, 0.0);
            assert!(g.iter().all(|&v| v == 0.0));
        }
        let mut z = [0.0f64; 16];
        z[3] = 2.0;
        assert!((n2o_loss(&z, false, 0.0).0 - 4.0).abs() < 1e-9);
        z[3] = 2.0f64.ln().sqrt();
        assert!((n2o_loss(&z, true, 1.0).0 - std::f64::consts::LN_2).abs() < 1e-9);
    }

    #[test]
    fn positive_at_origin_is_finite() {
        let (l, g) = n2o_loss(&[0.0f32; 16], true, 1.0);
        assert!(l.is_finite() && l > 0.0);
        assert!(g.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn batch_is_mean() {
        let t = Tensor::<f64>::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 3.0]).unwrap();
        let v = LossVariant::N2o { lambda: 0.0 };
        let (l, g) = v.batch(&t, &[false, false]).unwrap();
        assert!((l - 5.0).abs() < 1e-12);
        assert_eq!(g.data(), &[1.0, 0.0, 0.0, 3.0]);
        assert!(v.batch(&t, &[false]).is_err());
    }

    #[test]
    fn rejects_negative_lambda() {
        assert!(LossVariant::N2o { lambda: -0.1 }.validate().is_err());
        assert!(LossVariant::default().validate().is_ok());
    }

    proptest! {
        #[test]
        fn loss_is_nonnegative(z in prop::collection::vec(-5.0f64..5.0, 16), y: bool, lambda in 0.0f64..10.0) {
            prop_assert!(n2o_loss(&z, y, lambda).0 >= 0.0);
        }
    }
}
