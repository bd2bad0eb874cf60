use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative diagonal jitter added per retry, as a fraction of the mean diagonal.
pub const JITTER_SCALE: f64 = 1e-8;
pub const JITTER_ATTEMPTS: usize = 3;

/// Lower-triangular `L` with `A = L Lᵀ` for the (possibly jittered) source `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    lower: DMatrix<f64>,
    jitter: f64,
}

impl CholeskyFactor {
    /// Factorises a symmetric positive-definite matrix. On failure adds
    /// `JITTER_SCALE * mean(diag)` to the diagonal and retries, up to
    /// `JITTER_ATTEMPTS` times.
    pub fn new(a: &DMatrix<f64>, context: &str) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::InvalidInput(format!(
                "{context}: cannot factor a {}x{} matrix",
                a.nrows(),
                a.ncols()
            )));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("{context}: non-finite matrix entry")));
        }
        let sym = symmetrize(a);
        if let Some(c) = sym.clone().cholesky() {
            return Ok(CholeskyFactor {
                lower: c.unpack(),
                jitter: 0.0,
            });
        }
        let dim = sym.nrows().max(1) as f64;
        let step = JITTER_SCALE * sym.diagonal().iter().map(|d| d.abs()).sum::<f64>() / dim;
        let step = if step > 0.0 { step } else { JITTER_SCALE };
        let mut jittered = sym;
        for attempt in 1..=JITTER_ATTEMPTS {
            for i in 0..jittered.nrows() {
                jittered[(i, i)] += step;
            }
            if let Some(c) = jittered.clone().cholesky() {
                return Ok(CholeskyFactor {
                    lower: c.unpack(),
                    jitter: step * attempt as f64,
                });
            }
        }
        Err(Error::NotPositiveDefinite {
            attempts: JITTER_ATTEMPTS,
            context: context.to_string(),
        })
    }

    /// Wraps an existing lower-triangular factor with positive diagonal.
    pub fn from_lower(lower: DMatrix<f64>) -> Result<Self> {
        if !lower.is_square() || lower.diagonal().iter().any(|&d| !(d > 0.0 && d.is_finite())) {
            return Err(Error::InvalidInput(
                "factor must be square with a positive finite diagonal".into(),
            ));
        }
        Ok(CholeskyFactor {
            lower: lower.lower_triangle(),
            jitter: 0.0,
        })
    }

    pub fn identity(dim: usize) -> Self {
        CholeskyFactor {
            lower: DMatrix::identity(dim, dim),
            jitter: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    /// Total diagonal jitter that was needed, zero when the matrix factored cleanly.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Factor of `c · A`.
    pub fn scaled(&self, c: f64) -> Self {
        CholeskyFactor {
            lower: &self.lower * c.sqrt(),
            jitter: self.jitter * c,
        }
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.lower * self.lower.transpose()
    }

    /// Solves `A x = b`.
    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let y = self.solve_lower(b);
        self.solve_upper(&y)
    }

    /// Solves `A X = B` column-wise.
    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let y = self
            .lower
            .solve_lower_triangular(b)
            .expect("positive diagonal");
        self.lower
            .tr_solve_lower_triangular(&y)
            .expect("positive diagonal")
    }

    /// `L⁻¹ b`
    pub fn solve_lower(&self, b: &DVector<f64>) -> DVector<f64> {
        self.lower
            .solve_lower_triangular(b)
            .expect("positive diagonal")
    }

    /// `L⁻ᵀ b`
    pub fn solve_upper(&self, b: &DVector<f64>) -> DVector<f64> {
        self.lower
            .tr_solve_lower_triangular(b)
            .expect("positive diagonal")
    }

    /// `L⁻ᵀ B`
    pub fn solve_upper_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.lower
            .tr_solve_lower_triangular(b)
            .expect("positive diagonal")
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.dim();
        symmetrize(&self.solve_mat(&DMatrix::identity(n, n)))
    }

    pub fn ln_det(&self) -> f64 {
        2.0 * self.lower.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }
}

pub(crate) fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_abs(m: &DMatrix<f64>) -> f64 {
        m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
    }

    #[test]
    fn reconstructs_spd_matrix() {
        let a = DMatrix::from_row_slice(3, 3, &[4.0, 2.0, 0.6, 2.0, 5.0, 1.5, 0.6, 1.5, 3.0]);
        let c = CholeskyFactor::new(&a, "test").unwrap();
        assert_eq!(c.jitter(), 0.0);
        assert!(c.lower().diagonal().iter().all(|&d| d > 0.0));
        assert!(max_abs(&(c.reconstruct() - &a)) <= 1e-10 * max_abs(&a));
    }

    #[test]
    fn singular_psd_matrix_is_rescued_by_jitter() {
        // rank one
        let v = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let a = &v * v.transpose();
        let c = CholeskyFactor::new(&a, "rank one").unwrap();
        assert!(c.jitter() > 0.0);
        let mut jittered = a.clone();
        for i in 0..3 {
            jittered[(i, i)] += c.jitter();
        }
        assert!(max_abs(&(c.reconstruct() - &jittered)) <= 1e-10 * max_abs(&jittered));
    }

    #[test]
    fn indefinite_matrix_fails_after_retries() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        match CholeskyFactor::new(&a, "indefinite") {
            Err(Error::NotPositiveDefinite { attempts, context }) => {
                assert_eq!(attempts, JITTER_ATTEMPTS);
                assert_eq!(context, "indefinite");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn solve_and_inverse_agree() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let c = CholeskyFactor::new(&a, "t").unwrap();
        let inv = c.inverse();
        let expected = DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]) / 3.0;
        assert!(max_abs(&(inv - expected)) < 1e-14);
        let x = c.solve_vec(&DVector::from_vec(vec![1.0, 0.0]));
        assert!((x[0] - 2.0 / 3.0).abs() < 1e-14 && (x[1] + 1.0 / 3.0).abs() < 1e-14);
        assert!((c.ln_det() - 3.0f64.ln()).abs() < 1e-14);
    }
}
