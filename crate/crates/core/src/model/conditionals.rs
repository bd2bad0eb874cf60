//! Full conditional updates of the Poisson-lognormal pseudo-posterior.
//!
//! With normalised weights `w̃_i` (all ones for the unweighted posterior):
//!
//! ```text
//! ψ_i | ·  ∝ exp(w̃_i Σ_d [y_id ψ_id − e^ψ_id]) · N_D(ψ_i; Bᵀx_i, (w̃_i Λ)⁻¹)
//! B | ·    ~ MN(Φ⁻¹XᵀW̃Ψ, row precision Φ = XᵀW̃X + τ_B M, column precision Λ)
//! Λ | ·    ~ W_D(D + 1 + Σw̃ + P, (I + Σ w̃_i r_i r_iᵀ + τ_B BᵀMB)⁻¹)
//! τ_B | ·  ~ Gamma(1 + PD/2, rate 1 + tr(Λ BᵀMB)/2)
//! M | ·    ~ W_P(P + 1 + D, (I + τ_B BΛBᵀ)⁻¹)
//! ```
//!
//! where `r_i = ψ_i − Bᵀx_i`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;

use super::McmcState;
use crate::design::ObservedSample;
use crate::error::{Error, Result};
use crate::mcmc::{ess_step, sample_matrix_normal, sample_wishart, CholeskyFactor, EssTarget};
use crate::rng;

/// Log-means above this make the Poisson log-likelihood `-∞`.
pub const PSI_OVERFLOW: f64 = 700.0;

/// The weights the sampler uses: normalised weights, or ones when unweighted.
pub fn fit_weights(sample: &ObservedSample, weighted: bool) -> Vec<f64> {
    if weighted {
        sample.normalized_weights.clone()
    } else {
        vec![1.0; sample.n()]
    }
}

/// Sample data in the form the conditionals consume.
pub(crate) struct FitData {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub w: Vec<f64>,
    pub xtwx: DMatrix<f64>,
}

impl FitData {
    pub fn new(sample: &ObservedSample, weighted: bool) -> Self {
        let w = fit_weights(sample, weighted);
        let x = sample.covariates.clone();
        let y = sample.responses.map(|v| v as f64);
        let xtwx = weighted_gram(&x, &w);
        FitData { x, y, w, xtwx }
    }
}

/// `Xᵀ diag(w) X`
pub(crate) fn weighted_gram(x: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let mut xw = x.clone();
    for (i, wi) in w.iter().enumerate() {
        xw.row_mut(i).scale_mut(*wi);
    }
    x.tr_mul(&xw)
}

/// `Xᵀ diag(w) Y`
pub(crate) fn weighted_cross(x: &DMatrix<f64>, w: &[f64], y: &DMatrix<f64>) -> DMatrix<f64> {
    let mut yw = y.clone();
    for (i, wi) in w.iter().enumerate() {
        yw.row_mut(i).scale_mut(*wi);
    }
    x.tr_mul(&yw)
}

/// Weighted Poisson log-likelihood of one unit, up to a constant.
fn unit_log_lik(psi: &[f64], y: &[f64], w: f64) -> f64 {
    let mut acc = 0.0;
    for (p, yv) in psi.iter().zip(y) {
        if *p > PSI_OVERFLOW || !p.is_finite() {
            return f64::NEG_INFINITY;
        }
        acc += yv * p - p.exp();
    }
    w * acc
}

pub(crate) fn update_psi_with(state: &McmcState, data: &FitData, seed: u64) -> Result<DMatrix<f64>> {
    let (n, d) = state.psi.shape();
    let lambda_chol = CholeskyFactor::new(&state.lambda, "Lambda in the psi update")?;
    let mean_all = &data.x * &state.b;
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let mut stream = rng::stream(seed, &[i as u64]);
            let y: Vec<f64> = data.y.row(i).iter().copied().collect();
            let w = data.w[i];
            let ll = move |psi: &[f64]| unit_log_lik(psi, &y, w);
            let target = EssTarget {
                log_likelihood: &ll,
                prior_mean: mean_all.row(i).transpose(),
                prior_precision_chol: lambda_chol.scaled(w),
            };
            let current = state.psi.row(i).transpose();
            let next = ess_step(&current, &target, &mut stream)
                .map_err(|e| Error::Numerical(format!("unit {i}: {e}")))?;
            Ok(next.iter().copied().collect())
        })
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(n, d, |i, k| rows[i][k]))
}

/// One elliptical slice step for every sampled unit's log-mean vector.
///
/// Unit `i` draws from the stream `(seed, i)`, so the result does not depend
/// on the thread count.
pub fn update_psi(state: &McmcState, sample: &ObservedSample, weighted: bool, seed: u64) -> Result<DMatrix<f64>> {
    update_psi_with(state, &FitData::new(sample, weighted), seed)
}

/// Row precision `Φ` and mean `Φ⁻¹XᵀW̃Ψ` of the conditional for `B`.
pub(crate) fn b_conditional(
    state: &McmcState,
    data: &FitData,
) -> Result<(CholeskyFactor, DMatrix<f64>)> {
    let phi = &data.xtwx + &state.m * state.tau_b;
    let phi_chol = CholeskyFactor::new(&phi, "B conditional precision X'WX + tau_B M is ill-conditioned")?;
    let rhs = weighted_cross(&data.x, &data.w, &state.psi);
    let mean = phi_chol.solve_mat(&rhs);
    Ok((phi_chol, mean))
}

/// Mean of the conditional for `B`, `(XᵀW̃X + τ_B M)⁻¹ XᵀW̃Ψ`.
pub fn b_conditional_mean(state: &McmcState, sample: &ObservedSample, weighted: bool) -> Result<DMatrix<f64>> {
    Ok(b_conditional(state, &FitData::new(sample, weighted))?.1)
}

pub(crate) fn update_b_with<R: Rng + ?Sized>(state: &McmcState, data: &FitData, rng: &mut R) -> Result<DMatrix<f64>> {
    let (phi_chol, mean) = b_conditional(state, data)?;
    let lambda_chol = CholeskyFactor::new(&state.lambda, "Lambda in the B update")?;
    sample_matrix_normal(&mean, &phi_chol, &lambda_chol, rng)
}

pub fn update_b<R: Rng + ?Sized>(
    state: &McmcState,
    sample: &ObservedSample,
    weighted: bool,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    update_b_with(state, &FitData::new(sample, weighted), rng)
}

/// `Σ_i w_i r_i r_iᵀ` with `r_i = ψ_i − Bᵀx_i`.
pub(crate) fn residual_scatter(state: &McmcState, x: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let resid = &state.psi - x * &state.b;
    weighted_cross(&resid, w, &resid)
}

/// Degrees of freedom and scale of the Wishart conditional for `Λ`.
pub fn lambda_conditional(state: &McmcState, x: &DMatrix<f64>, w: &[f64]) -> Result<(f64, DMatrix<f64>)> {
    let (p, d) = state.b.shape();
    let scatter = residual_scatter(state, x, w);
    let btmb = state.b.tr_mul(&(&state.m * &state.b));
    let inv_scale = DMatrix::identity(d, d) + scatter + btmb * state.tau_b;
    let scale = CholeskyFactor::new(&inv_scale, "Lambda conditional scale")?.inverse();
    let w_sum: f64 = w.iter().sum();
    Ok(((d + 1) as f64 + w_sum + p as f64, scale))
}

pub(crate) fn update_lambda_with<R: Rng + ?Sized>(state: &McmcState, data: &FitData, rng: &mut R) -> Result<DMatrix<f64>> {
    let (df, scale) = lambda_conditional(state, &data.x, &data.w)?;
    sample_wishart(df, &scale, rng)
}

pub fn update_lambda<R: Rng + ?Sized>(
    state: &McmcState,
    sample: &ObservedSample,
    weighted: bool,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    update_lambda_with(state, &FitData::new(sample, weighted), rng)
}

/// Shape and rate of the gamma conditional for `τ_B`.
pub fn tau_b_conditional(state: &McmcState) -> (f64, f64) {
    let (p, d) = state.b.shape();
    let btmb = state.b.tr_mul(&(&state.m * &state.b));
    let trace = (&state.lambda * btmb).trace();
    (1.0 + 0.5 * (p * d) as f64, 1.0 + 0.5 * trace)
}

pub fn update_tau_b<R: Rng + ?Sized>(state: &McmcState, rng: &mut R) -> Result<f64> {
    let (shape, rate) = tau_b_conditional(state);
    let g = Gamma::new(shape, 1.0 / rate)
        .map_err(|e| Error::Numerical(format!("tau_B conditional Gamma({shape}, {rate}): {e}")))?;
    Ok(g.sample(rng))
}

/// Degrees of freedom and scale of the Wishart conditional for `M`.
pub fn m_conditional(state: &McmcState) -> Result<(f64, DMatrix<f64>)> {
    let (p, d) = state.b.shape();
    let bl = &state.b * &state.lambda;
    let inv_scale = DMatrix::identity(p, p) + (bl * state.b.transpose()) * state.tau_b;
    let scale = CholeskyFactor::new(&inv_scale, "M conditional scale")?.inverse();
    Ok(((p + 1 + d) as f64, scale))
}

pub fn update_m<R: Rng + ?Sized>(state: &McmcState, rng: &mut R) -> Result<DMatrix<f64>> {
    let (df, scale) = m_conditional(state)?;
    sample_wishart(df, &scale, rng)
}

/// Weighted least squares `(XᵀWX)⁻¹XᵀWY`.
pub(crate) fn weighted_least_squares(x: &DMatrix<f64>, w: &[f64], y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = CholeskyFactor::new(&weighted_gram(x, w), "weighted least squares Gram matrix")?;
    Ok(chol.solve_mat(&weighted_cross(x, w, y)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::FinitePopulation;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn sample_from(x: DMatrix<f64>, y: DMatrix<u64>, raw_weights: Vec<f64>) -> ObservedSample {
        let n = x.nrows();
        let pop = FinitePopulation::new(y, x, vec![1.0; n]).unwrap();
        ObservedSample::census(&pop).with_raw_weights(raw_weights).unwrap()
    }

    fn random_matrix<R: Rng>(r: usize, c: usize, rng: &mut R) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
    }

    fn random_spd<R: Rng>(k: usize, rng: &mut R) -> DMatrix<f64> {
        let a = random_matrix(k, k, rng);
        &a * a.transpose() + DMatrix::identity(k, k) * 0.5
    }

    fn state_for(n: usize, p: usize, d: usize, seed: u64) -> McmcState {
        let mut r = rng::stream(seed, &[]);
        McmcState {
            psi: random_matrix(n, d, &mut r),
            b: random_matrix(p, d, &mut r),
            lambda: random_spd(d, &mut r),
            m: random_spd(p, &mut r),
            tau_b: 0.3 + r.random::<f64>(),
        }
    }

    fn intercept_sample(n: usize, d: usize) -> ObservedSample {
        sample_from(DMatrix::from_element(n, 1, 1.0), DMatrix::from_element(n, d, 1), vec![1.0; n])
    }

    #[test]
    fn b_mean_matches_dense_solve() {
        let mut r = rng::stream(10, &[]);
        let (n, p, d) = (20, 3, 2);
        let x = random_matrix(n, p, &mut r);
        let w: Vec<f64> = (0..n).map(|_| 0.2 + 3.0 * r.random::<f64>()).collect();
        let sample = sample_from(x.clone(), DMatrix::zeros(n, d), w);
        let state = state_for(n, p, d, 11);
        let got = b_conditional_mean(&state, &sample, true).unwrap();

        let wt = &sample.normalized_weights;
        let mut lhs = DMatrix::zeros(p, p);
        let mut rhs = DMatrix::zeros(p, d);
        for i in 0..n {
            for a in 0..p {
                for b in 0..p {
                    lhs[(a, b)] += wt[i] * x[(i, a)] * x[(i, b)];
                }
                for k in 0..d {
                    rhs[(a, k)] += wt[i] * x[(i, a)] * state.psi[(i, k)];
                }
            }
        }
        lhs += &state.m * state.tau_b;
        let oracle = lhs.lu().solve(&rhs).unwrap();
        assert!((got - oracle).amax() < 1e-10);
    }

    #[test]
    fn vanishing_prior_gives_least_squares() {
        let mut r = rng::stream(12, &[]);
        let x = random_matrix(15, 3, &mut r);
        let b0 = random_matrix(3, 2, &mut r);
        let sample = sample_from(x.clone(), DMatrix::zeros(15, 2), vec![1.0; 15]);
        let mut state = state_for(15, 3, 2, 13);
        state.tau_b = 1e-14;
        state.psi = &x * &b0;
        let got = b_conditional_mean(&state, &sample, false).unwrap();
        assert!((got - b0).amax() < 1e-9);
    }

    #[test]
    fn pinned_prior_holds_psi_at_its_mean() {
        let sample = sample_from(DMatrix::from_element(3, 1, 1.0), DMatrix::from_element(3, 1, 4), vec![1.0; 3]);
        let state = McmcState {
            psi: DMatrix::from_element(3, 1, 0.25),
            b: DMatrix::from_element(1, 1, 0.25),
            lambda: DMatrix::from_element(1, 1, 1e300),
            m: DMatrix::identity(1, 1),
            tau_b: 1.0,
        };
        let psi = update_psi(&state, &sample, false, 1).unwrap();
        assert!(psi.iter().all(|v| (v - 0.25).abs() < 1e-140));
    }

    #[test]
    fn overflowing_log_means_are_rejected() {
        assert_eq!(unit_log_lik(&[701.0], &[1.0], 1.0), f64::NEG_INFINITY);
        assert!(unit_log_lik(&[699.0], &[1e300], 1.0).is_finite());
    }

    #[test]
    fn lambda_with_zero_residuals_has_identity_scale() {
        let (n, d) = (7, 2);
        let sample = intercept_sample(n, d);
        let state = McmcState {
            psi: DMatrix::zeros(n, d),
            b: DMatrix::zeros(1, d),
            lambda: DMatrix::identity(d, d),
            m: DMatrix::identity(1, 1),
            tau_b: 1.0,
        };
        let (df, scale) = lambda_conditional(&state, &sample.covariates, &sample.normalized_weights).unwrap();
        assert_eq!(df, (d + 1 + n + 1) as f64);
        assert!((scale - DMatrix::<f64>::identity(d, d)).amax() < 1e-15);
        let mut r = rng::stream(14, &[]);
        let draws = 40_000;
        let mut sum = DMatrix::zeros(d, d);
        for _ in 0..draws {
            sum += update_lambda(&state, &sample, true, &mut r).unwrap();
        }
        let mean = sum / draws as f64;
        let se = (2.0 * df / draws as f64).sqrt();
        assert!((mean[(0, 0)] - df).abs() < 3.0 * se);
        assert!((mean[(1, 1)] - df).abs() < 3.0 * se);
        assert!(mean[(0, 1)].abs() < 3.0 * (df / draws as f64).sqrt());
    }

    #[test]
    fn residual_scatter_scales_quadratically() {
        let mut state = state_for(9, 1, 2, 15);
        state.b = DMatrix::zeros(1, 2);
        let x = DMatrix::from_element(9, 1, 1.0);
        let w = vec![1.3; 9];
        let s1 = residual_scatter(&state, &x, &w);
        state.psi *= 3.0;
        let s3 = residual_scatter(&state, &x, &w);
        assert!((s3 - s1 * 9.0).amax() < 1e-12);
    }

    #[test]
    fn tau_b_conditional_moments() {
        let (p, d) = (3, 2);
        let mut state = state_for(4, p, d, 16);
        state.b = DMatrix::zeros(p, d);
        assert_eq!(tau_b_conditional(&state), (1.0 + 3.0, 1.0));
        // tr(Λ BᵀMB) = 2
        state.b[(0, 0)] = 1.0;
        state.m = DMatrix::identity(p, p);
        state.lambda = DMatrix::identity(d, d) * 2.0;
        let (shape, rate) = tau_b_conditional(&state);
        assert_eq!(rate, 2.0);
        let mut r = rng::stream(17, &[]);
        let draws: Vec<f64> = (0..100_000).map(|_| update_tau_b(&state, &mut r).unwrap()).collect();
        let target = shape / rate;
        let se = (shape / (rate * rate) / draws.len() as f64).sqrt();
        assert!((crate::stats::mean(&draws) - target).abs() < 3.0 * se);
    }

    #[test]
    fn m_conditional_without_coefficients() {
        let (p, d) = (3, 2);
        let mut state = state_for(4, p, d, 18);
        state.b = DMatrix::zeros(p, d);
        let (df, scale) = m_conditional(&state).unwrap();
        assert_eq!(df, (p + 1 + d) as f64);
        assert!((scale - DMatrix::<f64>::identity(p, p)).amax() < 1e-15);
        let mut state0 = state_for(4, p, d, 19);
        state0.tau_b = 0.0;
        let (df0, scale0) = m_conditional(&state0).unwrap();
        assert_eq!(df0, df);
        assert!((scale0 - DMatrix::<f64>::identity(p, p)).amax() < 1e-15);
    }

    /// Mean of a density on `(lo, hi)` given its log up to a constant (Simpson's rule).
    fn quadrature_mean(log_f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
        let n = 20_000;
        let h = (hi - lo) / n as f64;
        let xs: Vec<f64> = (0..=n).map(|i| lo + i as f64 * h).collect();
        let logs: Vec<f64> = xs.iter().map(|&x| log_f(x)).collect();
        let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (mut z, mut m) = (0.0, 0.0);
        for (i, (&x, &l)) in xs.iter().zip(&logs).enumerate() {
            let c = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            let f = (l - top).exp() * c;
            z += f;
            m += f * x;
        }
        m / z
    }

    // P = D = 1 joint density written from the priors: τ ~ G(1,1), M ~ W(2, 1),
    // B | τ, Λ, M ~ N(0, (τ Λ M)⁻¹).
    fn ln_b_prior(b: f64, tau: f64, lambda: f64, m: f64) -> f64 {
        0.5 * (tau * lambda * m).ln() - 0.5 * tau * lambda * m * b * b
    }

    fn scalar_state(b: f64, lambda: f64, m: f64, tau: f64) -> McmcState {
        McmcState {
            psi: DMatrix::zeros(1, 1),
            b: DMatrix::from_element(1, 1, b),
            lambda: DMatrix::from_element(1, 1, lambda),
            m: DMatrix::from_element(1, 1, m),
            tau_b: tau,
        }
    }

    #[test]
    fn tau_b_matches_quadrature_in_one_dimension() {
        let (b, lambda, m) = (1.3, 2.0, 0.7);
        let state = scalar_state(b, lambda, m, 1.0);
        let oracle = quadrature_mean(|t| -t + ln_b_prior(b, t, lambda, m), 1e-12, 30.0);
        let mut r = rng::stream(20, &[]);
        let draws: Vec<f64> = (0..100_000).map(|_| update_tau_b(&state, &mut r).unwrap()).collect();
        assert!((crate::stats::mean(&draws) / oracle - 1.0).abs() < 0.02);
    }

    #[test]
    fn m_matches_quadrature_in_one_dimension() {
        let (b, lambda, tau) = (0.8, 1.5, 2.0);
        let state = scalar_state(b, lambda, 1.0, tau);
        // W_1(2, 1) density ∝ m^{(2-2)/2} e^{-m/2}
        let oracle = quadrature_mean(|m| -0.5 * m + ln_b_prior(b, tau, lambda, m), 1e-12, 60.0);
        let mut r = rng::stream(21, &[]);
        let draws: Vec<f64> = (0..100_000)
            .map(|_| update_m(&state, &mut r).unwrap()[(0, 0)])
            .collect();
        assert!((crate::stats::mean(&draws) / oracle - 1.0).abs() < 0.02);
    }
}
