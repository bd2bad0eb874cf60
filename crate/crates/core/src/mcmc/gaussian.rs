use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::CholeskyFactor;
use crate::error::{Error, Result};

/// Matrix of iid standard normals, filled column by column.
pub fn standard_normal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Draws `x ~ N(mean, Q⁻¹)` where `precision_chol` factors `Q = L Lᵀ`,
/// via `x = mean + L⁻ᵀ z`.
pub fn sample_mvn<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    precision_chol: &CholeskyFactor,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if mean.len() != precision_chol.dim() {
        return Err(Error::InvalidInput(format!(
            "mean has length {} but precision is {}x{}",
            mean.len(),
            precision_chol.dim(),
            precision_chol.dim()
        )));
    }
    if mean.iter().any(|m| !m.is_finite()) {
        return Err(Error::InvalidInput("non-finite mean".into()));
    }
    let z = DVector::from_fn(mean.len(), |_, _| rng.sample(StandardNormal));
    Ok(mean + precision_chol.solve_upper(&z))
}

/// Draws a `P×D` matrix-normal with row precision `R` (P×P) and column
/// precision `C` (D×D), so that the vectorised draw has precision `C ⊗ R`.
///
/// With `R = L_r L_rᵀ` and `C = L_c L_cᵀ` the draw is `mean + L_r⁻ᵀ Z L_c⁻¹`.
pub fn sample_matrix_normal<R: Rng + ?Sized>(
    mean: &DMatrix<f64>,
    row_prec_chol: &CholeskyFactor,
    col_prec_chol: &CholeskyFactor,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let (p, d) = mean.shape();
    if row_prec_chol.dim() != p || col_prec_chol.dim() != d {
        return Err(Error::InvalidInput(format!(
            "matrix normal mean is {p}x{d} but precisions are {0}x{0} and {1}x{1}",
            row_prec_chol.dim(),
            col_prec_chol.dim()
        )));
    }
    if mean.iter().any(|m| !m.is_finite()) {
        return Err(Error::InvalidInput("non-finite mean".into()));
    }
    let z = standard_normal_matrix(p, d, rng);
    // Z L_c⁻¹ = (L_c⁻ᵀ Zᵀ)ᵀ
    let right = col_prec_chol.solve_upper_mat(&z.transpose()).transpose();
    Ok(mean + row_prec_chol.solve_upper_mat(&right))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mcmc::testutil::moments;
    use crate::rng;

    const DRAWS: usize = 100_000;

    #[test]
    fn identity_precision_gives_standard_normal() {
        let chol = CholeskyFactor::identity(3);
        let mut s = rng::stream(1, &[]);
        let draws: Vec<DVector<f64>> = (0..DRAWS)
            .map(|_| sample_mvn(&DVector::zeros(3), &chol, &mut s).unwrap())
            .collect();
        let (mean, cov) = moments(&draws);
        let se = 1.0 / (DRAWS as f64).sqrt();
        for i in 0..3 {
            assert!(mean[i].abs() < 3.0 * se);
            for j in 0..3 {
                let target = if i == j { 1.0 } else { 0.0 };
                let sd = if i == j { 2f64.sqrt() * se } else { se };
                assert!((cov[(i, j)] - target).abs() < 3.0 * sd, "{i},{j}: {}", cov[(i, j)]);
            }
        }
    }

    #[test]
    fn huge_precision_pins_the_mean() {
        let mu = DVector::from_vec(vec![1.5, -2.0]);
        let chol = CholeskyFactor::new(&(DMatrix::identity(2, 2) * 1e14), "t").unwrap();
        let x = sample_mvn(&mu, &chol, &mut rng::stream(2, &[])).unwrap();
        assert!((x - mu).amax() < 1e-5);
    }

    #[test]
    fn correlated_precision_inverts_by_hand() {
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let chol = CholeskyFactor::new(&q, "t").unwrap();
        let mut s = rng::stream(3, &[]);
        let draws: Vec<DVector<f64>> = (0..DRAWS)
            .map(|_| sample_mvn(&DVector::zeros(2), &chol, &mut s).unwrap())
            .collect();
        let (_, cov) = moments(&draws);
        let expected = DMatrix::<f64>::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]) / 3.0;
        // var of a sample covariance entry: (σ_ij² + σ_ii σ_jj) / n
        for i in 0..2 {
            for j in 0..2 {
                let sd = ((expected[(i, j)].powi(2) + expected[(i, i)] * expected[(j, j)]) / DRAWS as f64).sqrt();
                assert!((cov[(i, j)] - expected[(i, j)]).abs() < 3.0 * sd);
            }
        }
    }

    #[test]
    fn non_finite_mean_is_rejected() {
        let chol = CholeskyFactor::identity(2);
        let mu = DVector::from_vec(vec![f64::NAN, 0.0]);
        assert!(sample_mvn(&mu, &chol, &mut rng::stream(4, &[])).is_err());
        let bad = DMatrix::from_element(3, 2, 0.0);
        assert!(sample_matrix_normal(&bad, &CholeskyFactor::identity(2), &chol, &mut rng::stream(4, &[])).is_err());
    }

    fn vec_draws(mean: &DMatrix<f64>, r: &DMatrix<f64>, c: &DMatrix<f64>, seed: u64) -> Vec<DVector<f64>> {
        let rc = CholeskyFactor::new(r, "row").unwrap();
        let cc = CholeskyFactor::new(c, "col").unwrap();
        let mut s = rng::stream(seed, &[]);
        (0..DRAWS)
            .map(|_| {
                let b = sample_matrix_normal(mean, &rc, &cc, &mut s).unwrap();
                DVector::from_column_slice(b.as_slice())
            })
            .collect()
    }

    #[test]
    fn matrix_normal_scaled_row_precision() {
        let mean = DMatrix::zeros(2, 3);
        let draws = vec_draws(&mean, &(DMatrix::identity(2, 2) * 2.0), &DMatrix::identity(3, 3), 5);
        let (_, cov) = moments(&draws);
        let sd = (2.0 * 0.25 / DRAWS as f64).sqrt();
        for i in 0..6 {
            assert!((cov[(i, i)] - 0.5).abs() < 3.0 * sd);
        }
    }

    #[test]
    fn matrix_normal_matches_kronecker_oracle() {
        let r = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let c = DMatrix::from_row_slice(2, 2, &[1.5, -0.6, -0.6, 1.0]);
        let mean = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 0.5, 2.0]);
        let draws = vec_draws(&mean, &r, &c, 6);
        let (m, cov) = moments(&draws);
        // explicit Kronecker product of the inverses
        let ri = r.clone().try_inverse().unwrap();
        let ci = c.clone().try_inverse().unwrap();
        let mut oracle = DMatrix::zeros(4, 4);
        for a in 0..2 {
            for b in 0..2 {
                for i in 0..2 {
                    for j in 0..2 {
                        oracle[(a * 2 + i, b * 2 + j)] = ci[(a, b)] * ri[(i, j)];
                    }
                }
            }
        }
        for k in 0..4 {
            let se = (oracle[(k, k)] / DRAWS as f64).sqrt();
            assert!((m[k] - mean.as_slice()[k]).abs() < 3.0 * se);
            for l in 0..4 {
                let sd = ((oracle[(k, l)].powi(2) + oracle[(k, k)] * oracle[(l, l)]) / DRAWS as f64).sqrt();
                // 3.5 SDs: family-wise bound over the 10 distinct entries
                assert!((cov[(k, l)] - oracle[(k, l)]).abs() < 3.5 * sd, "{k},{l}: {}", cov[(k, l)]);
            }
        }
        // each column is an mvn with precision C_kk⁻¹-scaled R
        let col_draws: Vec<DVector<f64>> = draws.iter().map(|v| v.rows(2, 2).into_owned()).collect();
        let mvn_chol = CholeskyFactor::new(&(&r / ci[(1, 1)]), "col").unwrap();
        let mut s = rng::stream(7, &[]);
        let mvn: Vec<DVector<f64>> = (0..DRAWS)
            .map(|_| sample_mvn(&mean.column(1).into_owned(), &mvn_chol, &mut s).unwrap())
            .collect();
        let (_, c1) = moments(&col_draws);
        let (_, c2) = moments(&mvn);
        for i in 0..2 {
            for j in 0..2 {
                let sd = ((oracle[(2 + i, 2 + j)].powi(2) + oracle[(2 + i, 2 + i)] * oracle[(2 + j, 2 + j)]) / DRAWS as f64).sqrt();
                assert!((c1[(i, j)] - c2[(i, j)]).abs() < 3.0 * 2f64.sqrt() * sd);
            }
        }
    }

    #[test]
    fn fixed_seed_reproduces() {
        let mean = DMatrix::zeros(3, 2);
        let rc = CholeskyFactor::identity(3);
        let cc = CholeskyFactor::identity(2);
        let a = sample_matrix_normal(&mean, &rc, &cc, &mut rng::stream(9, &[])).unwrap();
        let b = sample_matrix_normal(&mean, &rc, &cc, &mut rng::stream(9, &[])).unwrap();
        assert_eq!(a, b);
    }
}
