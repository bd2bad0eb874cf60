use std::f64::consts::TAU;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;

use super::CholeskyFactor;
use crate::error::{Error, Result};

/// Bracket shrinks before the step gives up and returns the current state.
/// The bracket halves in expectation each shrink, so this is only reached
/// when the accepted angle would be below floating-point resolution.
pub const ESS_MAX_SHRINKS: usize = 200;

/// Gaussian prior `N(prior_mean, Q⁻¹)` times an arbitrary likelihood.
pub struct EssTarget<'a> {
    pub log_likelihood: &'a dyn Fn(&[f64]) -> f64,
    pub prior_mean: DVector<f64>,
    /// Factor of the prior precision `Q`.
    pub prior_precision_chol: CholeskyFactor,
}

/// One elliptical slice sampling transition.
///
/// Draws an auxiliary prior point, a log-likelihood threshold below the
/// current value, then proposes on the ellipse through the current state and
/// the auxiliary point, shrinking the angle bracket towards the current state
/// until a proposal clears the threshold.
pub fn ess_step<R: Rng + ?Sized>(
    current: &DVector<f64>,
    target: &EssTarget<'_>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let dim = current.len();
    if target.prior_mean.len() != dim || target.prior_precision_chol.dim() != dim {
        return Err(Error::InvalidInput(format!(
            "ESS state has length {dim} but prior has dimension {}",
            target.prior_mean.len()
        )));
    }
    let current_ll = (target.log_likelihood)(current.as_slice());
    if !current_ll.is_finite() {
        return Err(Error::Numerical(format!(
            "log-likelihood at the current ESS state is {current_ll}"
        )));
    }

    let z = DVector::from_fn(dim, |_, _| rng.sample(StandardNormal));
    let nu = target.prior_precision_chol.solve_upper(&z);
    let offset = current - &target.prior_mean;

    let u: f64 = 1.0 - rng.random::<f64>();
    let threshold = current_ll + u.ln();

    let mut angle = rng.random::<f64>() * TAU;
    let (mut lo, mut hi) = (angle - TAU, angle);
    let mut proposal = DVector::zeros(dim);
    for _ in 0..ESS_MAX_SHRINKS {
        let (s, c) = angle.sin_cos();
        for k in 0..dim {
            proposal[k] = target.prior_mean[k] + offset[k] * c + nu[k] * s;
        }
        let ll = (target.log_likelihood)(proposal.as_slice());
        if ll > threshold {
            return Ok(proposal);
        }
        if angle < 0.0 {
            lo = angle;
        } else {
            hi = angle;
        }
        angle = lo + rng.random::<f64>() * (hi - lo);
    }
    Ok(current.clone())
}
