//! Design conditions, Hellinger-type distances and contraction summaries.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{DesignKind, ObservedSample};
use crate::error::{Error, Result};
use crate::population::FinitePopulation;
use crate::quadrature::{GaussHermite, PoissonLognormal};

/// Tolerance on the total mass of each density handed to [`hellinger_sq`].
pub const MASS_TOLERANCE: f64 = 1e-6;
/// Upper-tail mass dropped when truncating Poisson-lognormal supports.
pub const COUNT_TAIL: f64 = 1e-8;
/// Gauss-Hermite order for Poisson-lognormal probabilities.
pub const HERMITE_ORDER: usize = 24;

/// Table-style characteristics of a design and the computable parts of the
/// design conditions (positivity, pairwise independence, sampling fraction).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignDiagnosticsReport {
    pub kind: DesignKind,
    pub target_n: usize,
    pub population_size: usize,
    pub n_samples: usize,
    pub realized_n_mean: f64,
    pub realized_n_min: usize,
    pub realized_n_max: usize,
    pub certainty_count: usize,
    pub min_pi: f64,
    pub max_pi: f64,
    pub cv_pi: f64,
    /// Correlation of each population response with π.
    pub cor_y_pi: Vec<f64>,
    pub response_names: Vec<String>,
    /// `1 / min π`; finite exactly when every unit can be selected.
    pub gamma: f64,
    /// `max |π_ij / (π_i π_j) - 1|`, when joint probabilities are known.
    pub a5_max_ratio: Option<f64>,
    /// `max N π_ij / (π_i π_j)`, a finite-population proxy for the bounding constant.
    pub a5_c3_proxy: Option<f64>,
    pub a5_note: String,
    /// `n / N`.
    pub sampling_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HellingerVariant {
    /// Unweighted average over all population units.
    Population,
    /// Horvitz-Thompson weighted average over sampled units.
    Pseudo,
    /// Single pair of densities.
    Analytic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HellingerResult {
    /// Squared distance, in `[0, 2]`.
    pub value: f64,
    pub variant: HellingerVariant,
}

/// `Σ_k (√p1(k) − √p2(k))²` over a discrete support.
///
/// Both densities must carry unit mass on `support` to within
/// [`MASS_TOLERANCE`].
pub fn hellinger_sq<F, G>(p1: F, p2: G, support: &[u64]) -> Result<f64>
where
    F: Fn(u64) -> f64,
    G: Fn(u64) -> f64,
{
    let mut mass1 = 0.0;
    let mut mass2 = 0.0;
    let mut acc = 0.0;
    for &k in support {
        let (a, b) = (p1(k), p2(k));
        if !(a >= 0.0 && b >= 0.0) {
            return Err(Error::InvalidInput(format!("negative or NaN density at {k}: {a}, {b}")));
        }
        mass1 += a;
        mass2 += b;
        acc += (a.sqrt() - b.sqrt()).powi(2);
    }
    for (name, mass) in [("p1", mass1), ("p2", mass2)] {
        if (mass - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidInput(format!(
                "{name} is not normalised on the support: mass {mass:.9}"
            )));
        }
    }
    Ok(acc.clamp(0.0, 2.0))
}

/// Squared Hellinger distance between two univariate Poisson-lognormal
/// laws, on the union of their truncated supports.
pub fn poisson_lognormal_hellinger_sq(a: PoissonLognormal, b: PoissonLognormal, rule: &GaussHermite) -> Result<f64> {
    let pa = a.truncated_pmf(COUNT_TAIL, rule);
    let pb = b.truncated_pmf(COUNT_TAIL, rule);
    let len = pa.len().max(pb.len());
    let support: Vec<u64> = (0..len as u64).collect();
    let at = |v: &Vec<f64>, k: u64| v.get(k as usize).copied().unwrap_or(0.0);
    hellinger_sq(|k| at(&pa, k), |k| at(&pb, k), &support)
}

/// Regression parameters used as a plug-in for the per-unit count law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlugInModel {
    #[serde(with = "crate::serde_matrix")]
    pub b: DMatrix<f64>,
    #[serde(with = "crate::serde_matrix")]
    pub lambda: DMatrix<f64>,
}

impl PlugInModel {
    pub fn new(b: DMatrix<f64>, lambda: DMatrix<f64>) -> Result<Self> {
        if lambda.nrows() != b.ncols() || !lambda.is_square() {
            return Err(Error::InvalidInput("Lambda must be D×D for a P×D coefficient matrix".into()));
        }
        Ok(PlugInModel { b, lambda })
    }

    /// Marginal Poisson-lognormal law of each response for covariate row `x`.
    pub fn marginals(&self, x: &DVector<f64>) -> Result<Vec<PoissonLognormal>> {
        let cov = self
            .lambda
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Numerical("Lambda is singular".into()))?;
        let mean = self.b.tr_mul(x);
        Ok((0..self.b.ncols())
            .map(|d| PoissonLognormal::new(mean[d], cov[(d, d)].max(0.0).sqrt()))
            .collect())
    }
}

/// Per-unit squared distance between two plug-in models: the average over
/// responses of the squared Hellinger distance between marginal count laws.
pub fn unit_distance_sq(
    a: &PlugInModel,
    b: &PlugInModel,
    x: &DVector<f64>,
    rule: &GaussHermite,
) -> Result<f64> {
    let ma = a.marginals(x)?;
    let mb = b.marginals(x)?;
    let mut acc = 0.0;
    for (pa, pb) in ma.into_iter().zip(mb) {
        acc += poisson_lognormal_hellinger_sq(pa, pb, rule)?;
    }
    Ok(acc / a.b.ncols() as f64)
}

/// `(1/N) Σ_i d²(i)` over every population unit.
pub fn population_hellinger_sq<F>(n_units: usize, unit_sq: F) -> Result<HellingerResult>
where
    F: Fn(usize) -> Result<f64> + Sync,
{
    let total: f64 = (0..n_units)
        .into_par_iter()
        .map(&unit_sq)
        .collect::<Result<Vec<f64>>>()?
        .iter()
        .sum();
    Ok(HellingerResult {
        value: total / n_units as f64,
        variant: HellingerVariant::Population,
    })
}

/// `(1/N) Σ_{i ∈ S} d²(i) / π_i`, the Horvitz-Thompson estimate of the
/// population average; `unit_sq` is indexed by population row.
pub fn pseudo_hellinger_sq<F>(pop: &FinitePopulation, sample: &ObservedSample, unit_sq: F) -> Result<HellingerResult>
where
    F: Fn(usize) -> Result<f64> + Sync,
{
    let big_n = pop.n_units();
    if let Some(ns) = sample.population_size {
        if ns != big_n {
            return Err(Error::InvalidInput(format!(
                "sample was drawn from a population of {ns} units, not {big_n}"
            )));
        }
    }
    let total: f64 = sample
        .indices
        .par_iter()
        .zip(sample.pi.par_iter())
        .map(|(&i, &p)| unit_sq(i).map(|d| d / p))
        .collect::<Result<Vec<f64>>>()?
        .iter()
        .sum();
    Ok(HellingerResult {
        value: total / big_n as f64,
        variant: HellingerVariant::Pseudo,
    })
}

/// One fitted estimator at one sample size, as input to [`contraction_curve`].
#[derive(Debug, Clone)]
pub struct ContractionInput {
    pub method: String,
    pub n: usize,
    pub fitted: PlugInModel,
    /// Bias of the focus coefficient for each response.
    pub bias: Vec<f64>,
    pub ci_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionRow {
    pub n: usize,
    pub method: String,
    pub hellinger_sq: f64,
    pub bias: Vec<f64>,
    pub ci_width: f64,
}

/// Average squared distance between each fit and the reference per-unit
/// laws over the population, alongside the coefficient bias.
pub fn contraction_curve(
    pop: &FinitePopulation,
    reference: &PlugInModel,
    fits: &[ContractionInput],
) -> Result<Vec<ContractionRow>> {
    let rule = GaussHermite::new(HERMITE_ORDER);
    let rows: Vec<DVector<f64>> = (0..pop.n_units())
        .map(|i| pop.covariates.row(i).transpose())
        .collect();
    fits.iter()
        .map(|fit| {
            let h = population_hellinger_sq(pop.n_units(), |i| {
                unit_distance_sq(&fit.fitted, reference, &rows[i], &rule)
            })?;
            Ok(ContractionRow {
                n: fit.n,
                method: fit.method.clone(),
                hellinger_sq: h.value,
                bias: fit.bias.clone(),
                ci_width: fit.ci_width,
            })
        })
        .collect()
}

/// True when both the distance and every |bias| for `method` are strictly
/// smaller at the largest sample size than at the smallest.
pub fn contracts(rows: &[ContractionRow], method: &str) -> bool {
    let mut mine: Vec<&ContractionRow> = rows.iter().filter(|r| r.method == method).collect();
    mine.sort_by_key(|r| r.n);
    match (mine.first(), mine.last()) {
        (Some(small), Some(large)) if small.n < large.n => {
            large.hellinger_sq < small.hellinger_sq
                && large
                    .bias
                    .iter()
                    .zip(&small.bias)
                    .all(|(l, s)| l.abs() < s.abs())
        }
        _ => false,
    }
}

/// Writes `n, method, hellinger_sq, bias_<cov>_<resp>..., ci_width`.
pub fn write_contraction_csv(
    rows: &[ContractionRow],
    focus_name: &str,
    response_names: &[String],
    path: &Path,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(BufWriter::new(file));
    let mut header = vec!["n".to_string(), "method".into(), "hellinger_sq".into()];
    header.extend(
        response_names
            .iter()
            .map(|r| format!("bias_{}_{}", focus_name.to_lowercase(), r.to_lowercase())),
    );
    header.push("ci_width".into());
    w.write_record(&header).map_err(|e| Error::csv(path, e))?;
    for r in rows {
        let mut rec = vec![r.n.to_string(), r.method.clone(), r.hellinger_sq.to_string()];
        rec.extend(r.bias.iter().map(|b| b.to_string()));
        rec.push(r.ci_width.to_string());
        w.write_record(&rec).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{Discrete, Poisson};

    fn poisson(lambda: f64) -> impl Fn(u64) -> f64 {
        let d = Poisson::new(lambda).unwrap();
        move |k| d.pmf(k)
    }

    #[test]
    fn identical_densities_have_zero_distance() {
        let support: Vec<u64> = (0..100).collect();
        assert_eq!(hellinger_sq(poisson(3.0), poisson(3.0), &support).unwrap(), 0.0);
    }

    #[test]
    fn disjoint_point_masses_are_maximally_apart() {
        let support = [0, 1];
        let h = hellinger_sq(|k| (k == 0) as u8 as f64, |k| (k == 1) as u8 as f64, &support).unwrap();
        assert_eq!(h, 2.0);
    }

    #[test]
    fn poisson_pair_matches_bhattacharyya_closed_form() {
        let support: Vec<u64> = (0..=200).collect();
        let h = hellinger_sq(poisson(1.0), poisson(4.0), &support).unwrap();
        let closed = 2.0 * (1.0 - (-(1.0f64 - 2.0).powi(2) / 2.0).exp());
        assert!((h - closed).abs() < 1e-10, "{h} vs {closed}");
        assert!((closed - 0.7869).abs() < 1e-4);
    }

    #[test]
    fn unnormalised_density_reports_mass() {
        let support: Vec<u64> = (0..3).collect();
        let err = hellinger_sq(poisson(1.0), poisson(1.0), &support).unwrap_err();
        assert!(err.to_string().contains("mass"));
    }

    #[test]
    fn poisson_lognormal_distance_vanishes_with_equal_laws() {
        let gh = GaussHermite::new(HERMITE_ORDER);
        let a = PoissonLognormal::new(1.5, 0.5);
        assert!(poisson_lognormal_hellinger_sq(a, a, &gh).unwrap().abs() < 1e-15);
        let b = PoissonLognormal::new(1.8, 0.5);
        let h = poisson_lognormal_hellinger_sq(a, b, &gh).unwrap();
        let h_rev = poisson_lognormal_hellinger_sq(b, a, &gh).unwrap();
        assert!(h > 0.0 && h < 2.0);
        assert!((h - h_rev).abs() < 1e-12);
    }

    #[test]
    fn contraction_flags_monotone_method() {
        let row = |n, method: &str, h, b| ContractionRow {
            n,
            method: method.into(),
            hellinger_sq: h,
            bias: vec![b, b],
            ci_width: 0.1,
        };
        let rows = vec![
            row(500, "pseudo", 0.02, 0.05),
            row(2500, "pseudo", 0.01, -0.01),
            row(500, "unweighted", 0.02, 0.05),
            row(2500, "unweighted", 0.03, 0.06),
        ];
        assert!(contracts(&rows, "pseudo"));
        assert!(!contracts(&rows, "unweighted"));
        assert!(!contracts(&rows, "srs"));
    }
}
