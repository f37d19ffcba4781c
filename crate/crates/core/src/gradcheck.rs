//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Finite-difference step.
pub const STEP: f64 = 1e-5;
/// Denominator floor of the relative error.
pub const FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// Coordinate achieving `max_rel_error`.
    pub worst_index: usize,
    pub probes: usize,
}

/// Compares `analytic` against central differences of `f` at `point`.
///
/// Probes `probes` distinct coordinates chosen from `seed` (all of them if
/// `probes >= point.len()`). The error at each coordinate is
/// `|a - fd| / max(|a|, |fd|, FLOOR)`.
pub fn grad_check<F>(f: F, point: &[f64], analytic: &[f64], probes: usize, seed: u64) -> Result<GradCheck>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    grad_check_with_step(f, point, analytic, probes, seed, STEP)
}

/// [`grad_check`] with an explicit step. Large steps are exact for functions
/// that are affine in each coordinate and avoid cancellation error.
pub fn grad_check_with_step<F>(mut f: F, point: &[f64], analytic: &[f64], probes: usize, seed: u64, step: f64) -> Result<GradCheck>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::invalid("grad_check step must be positive"));
    }
    if point.len() != analytic.len() {
        return Err(Error::Shape {
            op: "grad_check",
            dim: "gradient length",
            expected: point.len(),
            actual: analytic.len(),
        });
    }
    if point.is_empty() {
        return Err(Error::invalid("grad_check needs at least one coordinate"));
    }
    let indices: Vec<usize> = if probes >= point.len() {
        (0..point.len()).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v = sample(&mut rng, point.len(), probes).into_vec();
        v.sort_unstable();
        v
    };

    let mut x = point.to_vec();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst_index: indices[0],
        probes: indices.len(),
    };
    for &i in &indices {
        let orig = x[i];
        x[i] = orig + step;
        let plus = f(&x)?;
        x[i] = orig - step;
        let minus = f(&x)?;
        x[i] = orig;
        let fd = (plus - minus) / (2.0 * step);
        let a = analytic[i];
        if !(fd.is_finite() && a.is_finite()) {
            return Err(Error::NonFinite("grad_check"));
        }
        let err = (a - fd).abs() / a.abs().max(fd.abs()).max(FLOOR);
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = i;
        }
    }
    Ok(report)
}
