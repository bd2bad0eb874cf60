//! Gibbs sampler for the multivariate Poisson-lognormal regression under the
//! sampling-weighted pseudo-posterior.
//!
//! Each unit's likelihood contribution, and the Gaussian prior on its latent
//! log-mean, is raised to its normalised sampling weight. Setting
//! `weighted = false` replaces every weight by one, which gives the ordinary
//! posterior for the observed units.

mod conditionals;
mod draws;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use conditionals::{
    b_conditional_mean, fit_weights, lambda_conditional, m_conditional, tau_b_conditional, update_b,
    update_lambda, update_m, update_psi, update_tau_b, PSI_OVERFLOW,
};
pub use draws::{ParamSummary, PosteriorDraws};

use crate::design::ObservedSample;
use crate::error::{Error, Result};
use crate::mcmc::CholeskyFactor;
use crate::rng;
use conditionals::FitData;

/// Offset added to counts before taking logs for the initial log-means.
pub const INIT_COUNT_OFFSET: f64 = 0.5;

/// Current values of every block of the sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct McmcState {
    /// `n×D` latent log-means of the sampled units.
    pub psi: DMatrix<f64>,
    /// `P×D` coefficients.
    pub b: DMatrix<f64>,
    /// `D×D` precision of the latent log-means.
    pub lambda: DMatrix<f64>,
    /// `P×P` prior row precision of `B`.
    pub m: DMatrix<f64>,
    pub tau_b: f64,
}

impl McmcState {
    pub fn validate(&self) -> Result<()> {
        CholeskyFactor::new(&self.lambda, "Lambda")?;
        CholeskyFactor::new(&self.m, "M")?;
        if !(self.tau_b > 0.0 && self.tau_b.is_finite()) {
            return Err(Error::Numerical(format!("tau_B = {} is not positive", self.tau_b)));
        }
        if self.psi.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite latent log-mean".into()));
        }
        Ok(())
    }
}

/// Starting state: `ψ = log(y + 0.5)`, `B` from weighted least squares of
/// `ψ` on `X` (weights as used by the fit), `Λ = I`, `M = I`, `τ_B = 1`.
pub fn init_state(sample: &ObservedSample, weighted: bool) -> Result<McmcState> {
    if sample.n() == 0 {
        return Err(Error::InvalidInput("cannot initialise from an empty sample".into()));
    }
    let (d, p) = (sample.d(), sample.p());
    let psi = sample.responses.map(|y| (y as f64 + INIT_COUNT_OFFSET).ln());
    let w = fit_weights(sample, weighted);
    let b = conditionals::weighted_least_squares(&sample.covariates, &w, &psi)?;
    Ok(McmcState {
        psi,
        b,
        lambda: DMatrix::identity(d, d),
        m: DMatrix::identity(p, p),
        tau_b: 1.0,
    })
}

/// Which blocks are resampled; blocks switched off stay at their initial value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GibbsBlocks {
    pub psi: bool,
    pub b: bool,
    pub lambda: bool,
    pub tau_b: bool,
    pub m: bool,
}

impl Default for GibbsBlocks {
    fn default() -> Self {
        GibbsBlocks {
            psi: true,
            b: true,
            lambda: true,
            tau_b: true,
            m: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Pseudo-posterior with normalised weights when true, ordinary posterior otherwise.
    pub weighted: bool,
    pub blocks: GibbsBlocks,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            n_iter: 5000,
            burn_in: 2500,
            thin: 1,
            seed: 1,
            weighted: true,
            blocks: GibbsBlocks::default(),
        }
    }
}

/// Retained draws below this count are too few for reported intervals.
pub const MIN_REPORTED_DRAWS: usize = 100;

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_iter == 0 {
            return Err(Error::InvalidInput("n_iter must be positive".into()));
        }
        if self.burn_in >= self.n_iter {
            return Err(Error::InvalidInput(format!(
                "burn_in ({}) must be smaller than n_iter ({})",
                self.burn_in, self.n_iter
            )));
        }
        if self.thin == 0 {
            return Err(Error::InvalidInput("thin must be positive".into()));
        }
        Ok(())
    }

    /// Also requires at least [`MIN_REPORTED_DRAWS`] retained draws.
    pub fn validate_for_report(&self) -> Result<()> {
        self.validate()?;
        if self.retained() < MIN_REPORTED_DRAWS {
            return Err(Error::InvalidInput(format!(
                "only {} retained draws; reported runs need at least {MIN_REPORTED_DRAWS}",
                self.retained()
            )));
        }
        Ok(())
    }

    pub fn retained(&self) -> usize {
        (self.n_iter - self.burn_in).div_ceil(self.thin)
    }
}

const TAG_PSI: u64 = 1;
const TAG_B: u64 = 2;
const TAG_LAMBDA: u64 = 3;
const TAG_TAU: u64 = 4;
const TAG_M: u64 = 5;

/// Runs the sampler from [`init_state`].
pub fn fit(sample: &ObservedSample, config: &FitConfig) -> Result<PosteriorDraws> {
    config.validate()?;
    let state = init_state(sample, config.weighted)?;
    fit_from(sample, config, state)
}

/// Runs the sampler from a given starting state.
///
/// Each scan updates `Ψ → B → Λ → τ_B → M`. Iteration `t` of block `k`
/// draws from the stream `(seed, k, t)`.
pub fn fit_from(sample: &ObservedSample, config: &FitConfig, mut state: McmcState) -> Result<PosteriorDraws> {
    config.validate()?;
    if state.psi.shape() != (sample.n(), sample.d()) || state.b.shape() != (sample.p(), sample.d()) {
        return Err(Error::InvalidInput("starting state does not match the sample dimensions".into()));
    }
    state.validate()?;
    let data = FitData::new(sample, config.weighted);
    let mut draws = PosteriorDraws::new(sample.p(), sample.d(), config.retained());
    let blocks = config.blocks;
    let seed = config.seed;

    for t in 0..config.n_iter {
        let it = t as u64;
        let step = |state: &mut McmcState| -> Result<()> {
            if blocks.psi {
                state.psi = conditionals::update_psi_with(state, &data, rng::derive_seed(seed, &[TAG_PSI, it]))?;
            }
            if blocks.b {
                state.b = conditionals::update_b_with(state, &data, &mut rng::stream(seed, &[TAG_B, it]))?;
            }
            if blocks.lambda {
                state.lambda =
                    conditionals::update_lambda_with(state, &data, &mut rng::stream(seed, &[TAG_LAMBDA, it]))?;
            }
            if blocks.tau_b {
                state.tau_b = update_tau_b(state, &mut rng::stream(seed, &[TAG_TAU, it]))?;
            }
            if blocks.m {
                state.m = update_m(state, &mut rng::stream(seed, &[TAG_M, it]))?;
            }
            Ok(())
        };
        step(&mut state).map_err(|e| Error::AtIteration {
            iteration: t,
            source: Box::new(e),
        })?;
        if t >= config.burn_in && (t - config.burn_in).is_multiple_of(config.thin) {
            draws.push(&state);
        }
    }
    Ok(draws)
}
