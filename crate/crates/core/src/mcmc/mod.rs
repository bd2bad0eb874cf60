//! Sampling kernels: Cholesky factors, Gaussian and Wishart draws, and the
//! elliptical slice sampler.
//!
//! Every sampler is a pure function of its arguments and the RNG stream it is
//! handed, so fixed seeds reproduce draws bit-for-bit.

mod cholesky;
mod ess;
mod gaussian;
mod wishart;

pub use cholesky::{CholeskyFactor, JITTER_ATTEMPTS, JITTER_SCALE};
pub use ess::{ess_step, EssTarget, ESS_MAX_SHRINKS};
pub use gaussian::{sample_matrix_normal, sample_mvn, standard_normal_matrix};
pub use wishart::sample_wishart;

#[cfg(test)]
pub(crate) mod testutil {
    use nalgebra::{DMatrix, DVector};

    /// Sample mean and (n−1) covariance of the rows.
    pub fn moments(draws: &[DVector<f64>]) -> (DVector<f64>, DMatrix<f64>) {
        let n = draws.len() as f64;
        let dim = draws[0].len();
        let mean = draws.iter().fold(DVector::zeros(dim), |acc, d| acc + d) / n;
        let mut cov = DMatrix::zeros(dim, dim);
        for d in draws {
            let c = d - &mean;
            cov += &c * c.transpose();
        }
        (mean, cov / (n - 1.0))
    }

    /// Standard error of the mean of a correlated series by batch means.
    pub fn batch_means_se(xs: &[f64], batches: usize) -> f64 {
        let size = xs.len() / batches;
        let means: Vec<f64> = (0..batches)
            .map(|b| xs[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
            .collect();
        crate::stats::std_dev(&means) / (batches as f64).sqrt()
    }
}
