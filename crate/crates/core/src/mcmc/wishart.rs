use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use super::cholesky::{symmetrize, CholeskyFactor};
use crate::error::{Error, Result};

/// Draws `W ~ Wishart(df, scale)` by the Bartlett decomposition
/// `W = L A Aᵀ Lᵀ`, `scale = L Lᵀ`.
///
/// `A` is lower triangular with `A_ii² ~ χ²(df - i)` (0-based `i`) and
/// standard normal entries below the diagonal. The chi-square diagonal is
/// drawn as `Gamma(shape = (df - i)/2, scale = 2)`, which admits any real
/// `df > dim - 1`.
pub fn sample_wishart<R: Rng + ?Sized>(df: f64, scale: &DMatrix<f64>, rng: &mut R) -> Result<DMatrix<f64>> {
    let dim = scale.nrows();
    if !scale.is_square() || dim == 0 {
        return Err(Error::InvalidInput("Wishart scale must be a non-empty square matrix".into()));
    }
    if !(df > (dim as f64) - 1.0) || !df.is_finite() {
        return Err(Error::InvalidInput(format!(
            "Wishart degrees of freedom {df} must exceed dim - 1 = {}",
            dim - 1
        )));
    }
    let l = CholeskyFactor::new(scale, "Wishart scale")?;
    let mut a = DMatrix::<f64>::zeros(dim, dim);
    for i in 0..dim {
        let shape = 0.5 * (df - i as f64);
        let chi2 = Gamma::new(shape, 2.0)
            .map_err(|e| Error::Numerical(format!("Bartlett gamma: {e}")))?
            .sample(rng);
        a[(i, i)] = chi2.sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let la = l.lower() * a;
    Ok(symmetrize(&(&la * la.transpose())))
}
