//! Finite populations drawn from the multivariate Poisson-lognormal
//! regression
//!
//! ```text
//! ψ_i ~ N_D(Bᵀx_i, Λ⁻¹),   y_id | ψ_id ~ Poisson(exp ψ_id)
//! ```
//!
//! together with a positive size measure used by pps designs. Covariates
//! come from a [`CovariateRecipe`]; the synthetic-JOLTS recipe mimics an
//! establishment frame with a heavily skewed employment distribution, region
//! and ownership dummies and log job openings.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mcmc::{sample_mvn, CholeskyFactor};
use crate::rng;

/// Generation refuses Poisson means above this value.
pub const DEFAULT_MEAN_CAP: f64 = 1e9;

/// Parameters of the generating model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratingParams {
    /// `P×D` regression coefficients.
    #[serde(with = "crate::serde_matrix")]
    pub b: DMatrix<f64>,
    /// `D×D` precision of the latent log-means.
    #[serde(with = "crate::serde_matrix")]
    pub lambda: DMatrix<f64>,
    pub tau_b: f64,
    /// `P×P` prior precision for the rows of `B`.
    #[serde(with = "crate::serde_matrix")]
    pub m: DMatrix<f64>,
}

impl GeneratingParams {
    pub fn new(b: DMatrix<f64>, lambda: DMatrix<f64>, tau_b: f64, m: DMatrix<f64>) -> Result<Self> {
        let params = GeneratingParams { b, lambda, tau_b, m };
        params.validate()?;
        Ok(params)
    }

    pub fn p(&self) -> usize {
        self.b.nrows()
    }

    pub fn d(&self) -> usize {
        self.b.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let (p, d) = self.b.shape();
        if self.lambda.shape() != (d, d) || self.m.shape() != (p, p) {
            return Err(Error::InvalidInput(format!(
                "B is {p}x{d}, Lambda is {:?}, M is {:?}",
                self.lambda.shape(),
                self.m.shape()
            )));
        }
        if !(self.tau_b > 0.0) {
            return Err(Error::InvalidInput(format!("tau_B must be positive, got {}", self.tau_b)));
        }
        spd_without_jitter(&self.lambda, "Lambda")?;
        spd_without_jitter(&self.m, "M")?;
        Ok(())
    }

    /// Coefficients of the default synthetic-JOLTS population, in the column
    /// order of [`JoltsRecipe::covariate_names`] and responses (Hires, Seps).
    pub fn synthetic_jolts() -> Self {
        #[rustfmt::skip]
        let b = DMatrix::from_row_slice(9, 2, &[
            // Hires  Seps
            -1.00, -1.10, // Int
             0.10,  0.05, // West
             0.05,  0.10, // Midw
             0.08,  0.02, // South
            -0.30, -0.20, // State
            -0.20, -0.10, // Local
             0.30,  0.20, // Private
             0.40,  0.42, // Emp
             0.10,  0.05, // Opens
        ]);
        let (sd_h, sd_s, rho) = (0.5, 0.5, 0.6);
        let cov = DMatrix::from_row_slice(2, 2, &[sd_h * sd_h, rho * sd_h * sd_s, rho * sd_h * sd_s, sd_s * sd_s]);
        let lambda = cov.try_inverse().expect("2x2 covariance is invertible");
        GeneratingParams::new(b, lambda, 1.0, DMatrix::identity(9, 9)).expect("valid defaults")
    }
}

fn spd_without_jitter(a: &DMatrix<f64>, name: &str) -> Result<()> {
    if a.clone().cholesky().is_none() || (a - a.transpose()).amax() > 1e-12 * a.amax().max(1.0) {
        return Err(Error::InvalidInput(format!("{name} is not symmetric positive definite")));
    }
    Ok(())
}

/// Synthetic establishment frame.
///
/// log-employment is normal with a floor at zero (one employee); region and
/// ownership are categorical; log-openings are log-employment plus an offset
/// and normal noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JoltsRecipe {
    pub log_emp_mean: f64,
    pub log_emp_sd: f64,
    /// Northeast (baseline), West, Midwest, South.
    pub region_probs: [f64; 4],
    /// Federal (baseline), State, Local, Private.
    pub ownership_probs: [f64; 4],
    pub log_open_offset: f64,
    pub log_open_sd: f64,
}

impl Default for JoltsRecipe {
    fn default() -> Self {
        JoltsRecipe {
            log_emp_mean: -0.5,
            log_emp_sd: 3.4,
            region_probs: [0.18, 0.23, 0.22, 0.37],
            ownership_probs: [0.03, 0.04, 0.08, 0.85],
            log_open_offset: 0.03f64.ln(),
            log_open_sd: 0.8,
        }
    }
}

impl JoltsRecipe {
    pub const EMP_COLUMN: usize = 7;

    pub fn covariate_names() -> Vec<String> {
        ["Int", "West", "Midw", "South", "State", "Local", "Private", "Emp", "Opens"]
            .iter()
            .map(|s| s.to_string())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CovariateRecipe {
    InterceptOnly,
    /// Intercept plus `p - 1` iid standard normal columns.
    Gaussian { p: usize },
    SyntheticJolts(#[serde(default)] JoltsRecipe),
}

impl CovariateRecipe {
    pub fn p(&self) -> usize {
        match self {
            CovariateRecipe::InterceptOnly => 1,
            CovariateRecipe::Gaussian { p } => *p,
            CovariateRecipe::SyntheticJolts(_) => 9,
        }
    }

    pub fn covariate_names(&self) -> Vec<String> {
        match self {
            CovariateRecipe::SyntheticJolts(_) => JoltsRecipe::covariate_names(),
            other => (1..=other.p()).map(|j| format!("x_{j}")).collect(),
        }
    }

    /// Draws one covariate row; returns it with the unit's log-employment
    /// when the recipe has one.
    fn draw<R: Rng>(&self, rng: &mut R) -> (Vec<f64>, Option<f64>) {
        match self {
            CovariateRecipe::InterceptOnly => (vec![1.0], None),
            CovariateRecipe::Gaussian { p } => {
                let mut row = vec![1.0];
                row.extend((1..*p).map(|_| rng.sample::<f64, _>(StandardNormal)));
                (row, None)
            }
            CovariateRecipe::SyntheticJolts(j) => {
                let z: f64 = rng.sample(StandardNormal);
                let log_emp = (j.log_emp_mean + j.log_emp_sd * z).max(0.0);
                let region = categorical(&j.region_probs, rng);
                let owner = categorical(&j.ownership_probs, rng);
                let z_open: f64 = rng.sample(StandardNormal);
                let log_open = log_emp + j.log_open_offset + j.log_open_sd * z_open;
                let mut row = vec![0.0; 9];
                row[0] = 1.0;
                if region > 0 {
                    row[region] = 1.0;
                }
                if owner > 0 {
                    row[3 + owner] = 1.0;
                }
                row[7] = log_emp;
                row[8] = log_open;
                (row, Some(log_emp))
            }
        }
    }
}

fn categorical<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let total: f64 = probs.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (k, p) in probs.iter().enumerate() {
        if u < *p {
            return k;
        }
        u -= p;
    }
    probs.len() - 1
}

/// How the pps size measure is constructed.
///
/// `log size = base + residual_loading · r_{i,residual_dim}` where `r_i` is
/// the unit's latent residual `ψ_i - Bᵀx_i`. A non-zero loading makes the
/// design informative beyond the covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SizeRecipe {
    pub base: SizeBase,
    #[serde(default)]
    pub residual_loading: f64,
    #[serde(default)]
    pub residual_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SizeBase {
    /// Base is log-employment (requires the synthetic-JOLTS recipe).
    Employment,
    /// Base is an independent normal draw.
    Lognormal { log_mean: f64, log_sd: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationConfig {
    pub n_units: usize,
    pub covariates: CovariateRecipe,
    pub size: SizeRecipe,
    #[serde(default = "default_mean_cap")]
    pub mean_cap: f64,
}

fn default_mean_cap() -> f64 {
    DEFAULT_MEAN_CAP
}

impl PopulationConfig {
    /// Synthetic-JOLTS frame with `n_units` establishments and informative sizes.
    pub fn synthetic_jolts(n_units: usize) -> Self {
        PopulationConfig {
            n_units,
            covariates: CovariateRecipe::SyntheticJolts(JoltsRecipe::default()),
            size: SizeRecipe {
                base: SizeBase::Employment,
                residual_loading: 1.0,
                residual_dim: 0,
            },
            mean_cap: DEFAULT_MEAN_CAP,
        }
    }

    pub fn validate(&self, params: &GeneratingParams) -> Result<()> {
        params.validate()?;
        if self.n_units == 0 {
            return Err(Error::InvalidInput("n_units must be positive".into()));
        }
        if self.covariates.p() != params.p() {
            return Err(Error::InvalidInput(format!(
                "covariate recipe has {} columns but B has {} rows",
                self.covariates.p(),
                params.p()
            )));
        }
        if self.size.residual_dim >= params.d() {
            return Err(Error::InvalidInput(format!(
                "size.residual_dim {} out of range for D = {}",
                self.size.residual_dim,
                params.d()
            )));
        }
        if matches!(self.size.base, SizeBase::Employment)
            && !matches!(self.covariates, CovariateRecipe::SyntheticJolts(_))
        {
            return Err(Error::InvalidInput(
                "size.base = employment requires the synthetic-jolts covariate recipe".into(),
            ));
        }
        if !(self.mean_cap > 0.0) {
            return Err(Error::InvalidInput("mean_cap must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinitePopulation {
    /// `N×D` counts.
    pub responses: DMatrix<u64>,
    /// `N×P` design matrix including the intercept.
    pub covariates: DMatrix<f64>,
    pub size_measure: Vec<f64>,
    pub true_params: Option<GeneratingParams>,
    pub covariate_names: Vec<String>,
    pub response_names: Vec<String>,
    /// Seed the population was generated from, if known.
    pub seed: Option<u64>,
}

impl FinitePopulation {
    /// Assembles a population and checks its invariants: matching row counts,
    /// strictly positive sizes, full column rank covariates.
    pub fn new(
        responses: DMatrix<u64>,
        covariates: DMatrix<f64>,
        size_measure: Vec<f64>,
    ) -> Result<Self> {
        let n = responses.nrows();
        let d = responses.ncols();
        let p = covariates.ncols();
        let pop = FinitePopulation {
            responses,
            covariates,
            size_measure,
            true_params: None,
            covariate_names: (1..=p).map(|j| format!("x_{j}")).collect(),
            response_names: (1..=d).map(|j| format!("y_{j}")).collect(),
            seed: None,
        };
        if pop.covariates.nrows() != n || pop.size_measure.len() != n {
            return Err(Error::InvalidInput(format!(
                "row mismatch: {n} response rows, {} covariate rows, {} sizes",
                pop.covariates.nrows(),
                pop.size_measure.len()
            )));
        }
        if n == 0 || d == 0 || p == 0 {
            return Err(Error::InvalidInput("population must have units, responses and covariates".into()));
        }
        if let Some(i) = pop.size_measure.iter().position(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::Schema(format!(
                "size measure must be strictly positive: unit {i} has {}",
                pop.size_measure[i]
            )));
        }
        if let Some(v) = pop.covariates.iter().find(|v| !v.is_finite()) {
            return Err(Error::Schema(format!("non-finite covariate value {v}")));
        }
        let rank = numerical_rank(&pop.covariates);
        if rank < p {
            return Err(Error::RankDeficient { rank, columns: p });
        }
        Ok(pop)
    }

    pub fn n_units(&self) -> usize {
        self.responses.nrows()
    }

    pub fn d(&self) -> usize {
        self.responses.ncols()
    }

    pub fn p(&self) -> usize {
        self.covariates.ncols()
    }

    /// Response column `d` as reals.
    pub fn response_column(&self, d: usize) -> Vec<f64> {
        self.responses.column(d).iter().map(|&y| y as f64).collect()
    }

    /// JSON sidecar path paired with a population CSV.
    pub fn sidecar_path(csv_path: &Path) -> PathBuf {
        csv_path.with_extension("json")
    }
}

/// Rank from a column-pivoted QR: number of `|R_kk|` above
/// `max(N, P) · ε · |R_00|`.
pub fn numerical_rank(x: &DMatrix<f64>) -> usize {
    let (n, p) = x.shape();
    if n == 0 || p == 0 {
        return 0;
    }
    let qr = x.clone().col_piv_qr();
    let r = qr.r();
    let diag: Vec<f64> = (0..n.min(p)).map(|k| r[(k, k)].abs()).collect();
    let top = diag.iter().cloned().fold(0.0f64, f64::max);
    if top == 0.0 {
        return 0;
    }
    let tol = (n.max(p) as f64) * f64::EPSILON * top;
    diag.iter().filter(|&&v| v > tol).count()
}

/// Draws a finite population.
///
/// Unit `i` uses its own random stream derived from `(seed, i)`, so the
/// result does not depend on the number of worker threads.
pub fn generate_population(
    config: &PopulationConfig,
    params: &GeneratingParams,
    seed: u64,
) -> Result<FinitePopulation> {
    config.validate(params)?;
    let p = params.p();
    let d = params.d();
    let lambda_chol = CholeskyFactor::new(&params.lambda, "Lambda")?;

    struct Unit {
        y: Vec<u64>,
        x: Vec<f64>,
        size: f64,
    }

    let units: Vec<Unit> = (0..config.n_units)
        .into_par_iter()
        .map(|i| -> Result<Unit> {
            let mut rng = rng::stream(seed, &[i as u64]);
            let (x, log_emp) = config.covariates.draw(&mut rng);
            let xv = DVector::from_column_slice(&x);
            let mean = params.b.tr_mul(&xv);
            let psi = sample_mvn(&mean, &lambda_chol, &mut rng)?;
            let mut y = Vec::with_capacity(d);
            for (k, &psi_k) in psi.iter().enumerate() {
                let rate = psi_k.exp();
                if !(rate <= config.mean_cap) {
                    return Err(Error::Generation {
                        unit: i,
                        message: format!(
                            "Poisson mean exp({psi_k:.3}) for response {} exceeds cap {:e}",
                            k + 1,
                            config.mean_cap
                        ),
                    });
                }
                let count = if rate > 0.0 {
                    Poisson::new(rate)
                        .map_err(|e| Error::Generation { unit: i, message: e.to_string() })?
                        .sample(&mut rng)
                } else {
                    0.0
                };
                y.push(count as u64);
            }
            let residual = psi[config.size.residual_dim] - mean[config.size.residual_dim];
            let base = match &config.size.base {
                SizeBase::Employment => log_emp.expect("validated recipe"),
                SizeBase::Lognormal { log_mean, log_sd } => {
                    log_mean + log_sd * rng.sample::<f64, _>(StandardNormal)
                }
            };
            let size = (base + config.size.residual_loading * residual).exp();
            if !(size > 0.0 && size.is_finite()) {
                return Err(Error::Generation {
                    unit: i,
                    message: format!("size measure {size} is not positive and finite"),
                });
            }
            Ok(Unit { y, x, size })
        })
        .collect::<Result<_>>()?;

    let n = units.len();
    let responses = DMatrix::from_fn(n, d, |i, k| units[i].y[k]);
    let covariates = DMatrix::from_fn(n, p, |i, j| units[i].x[j]);
    let size_measure = units.iter().map(|u| u.size).collect();
    let mut pop = FinitePopulation::new(responses, covariates, size_measure)?;
    pop.true_params = Some(params.clone());
    pop.covariate_names = config.covariates.covariate_names();
    if matches!(config.covariates, CovariateRecipe::SyntheticJolts(_)) && d == 2 {
        pop.response_names = vec!["Hires".into(), "Seps".into()];
    }
    pop.seed = Some(seed);
    Ok(pop)
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    seed: Option<u64>,
    params: Option<GeneratingParams>,
    covariate_names: Vec<String>,
    response_names: Vec<String>,
}

pub(crate) fn csv_header(d: usize, p: usize) -> Vec<String> {
    let mut h = vec!["unit_id".to_string()];
    h.extend((1..=d).map(|k| format!("y_{k}")));
    h.extend((1..=p).map(|j| format!("x_{j}")));
    h.push("size".into());
    h
}

pub(crate) fn csv_row(pop: &FinitePopulation, i: usize) -> Vec<String> {
    let mut row = vec![i.to_string()];
    row.extend(pop.responses.row(i).iter().map(|y| y.to_string()));
    row.extend(pop.covariates.row(i).iter().map(|x| x.to_string()));
    row.push(pop.size_measure[i].to_string());
    row
}

/// Writes the population CSV and its JSON sidecar.
pub fn save_population(pop: &FinitePopulation, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(BufWriter::new(file));
    w.write_record(csv_header(pop.d(), pop.p()))
        .map_err(|e| Error::csv(path, e))?;
    for i in 0..pop.n_units() {
        w.write_record(csv_row(pop, i)).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;

    let sidecar = Sidecar {
        seed: pop.seed,
        params: pop.true_params.clone(),
        covariate_names: pop.covariate_names.clone(),
        response_names: pop.response_names.clone(),
    };
    let side_path = FinitePopulation::sidecar_path(path);
    let mut f = BufWriter::new(File::create(&side_path).map_err(|e| Error::io(&side_path, e))?);
    serde_json::to_writer_pretty(&mut f, &sidecar).map_err(|e| Error::json(&side_path, e))?;
    f.write_all(b"\n").map_err(|e| Error::io(&side_path, e))?;
    f.flush().map_err(|e| Error::io(&side_path, e))?;
    Ok(())
}

/// Column layout parsed from a `unit_id, y_1..y_D, x_1..x_P, size[, extra...]` header.
pub(crate) struct CsvLayout {
    pub d: usize,
    pub p: usize,
    pub extra: Vec<String>,
}

pub(crate) fn parse_header(path: &Path, header: &csv::StringRecord) -> Result<CsvLayout> {
    let cols: Vec<&str> = header.iter().map(str::trim).collect();
    let bad = |msg: String| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        message: msg,
    };
    if cols.first() != Some(&"unit_id") {
        return Err(bad("first column must be unit_id".into()));
    }
    let d = cols[1..].iter().take_while(|c| c.starts_with("y_")).count();
    let p = cols[1 + d..].iter().take_while(|c| c.starts_with("x_")).count();
    if d == 0 || p == 0 {
        return Err(bad("header needs at least one y_ and one x_ column".into()));
    }
    for (k, c) in cols[1..1 + d].iter().enumerate() {
        if *c != format!("y_{}", k + 1) {
            return Err(bad(format!("expected y_{} but found {c}", k + 1)));
        }
    }
    for (j, c) in cols[1 + d..1 + d + p].iter().enumerate() {
        if *c != format!("x_{}", j + 1) {
            return Err(bad(format!("expected x_{} but found {c}", j + 1)));
        }
    }
    if cols.get(1 + d + p) != Some(&"size") {
        return Err(bad("expected size column after covariates".into()));
    }
    Ok(CsvLayout {
        d,
        p,
        extra: cols[2 + d + p..].iter().map(|s| s.to_string()).collect(),
    })
}

/// One parsed data row: unit id, counts, covariates, size, trailing extras.
pub(crate) struct CsvRow {
    pub unit_id: usize,
    pub y: Vec<u64>,
    pub x: Vec<f64>,
    pub size: f64,
    pub extra: Vec<f64>,
}

pub(crate) fn parse_row(path: &Path, layout: &CsvLayout, rec: &csv::StringRecord) -> Result<CsvRow> {
    let line = rec.position().map_or(0, |p| p.line());
    let parse_err = |message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let width = 2 + layout.d + layout.p + layout.extra.len();
    if rec.len() != width {
        return Err(parse_err(format!("expected {width} fields, found {}", rec.len())));
    }
    let field = |k: usize| rec.get(k).unwrap_or("").trim();
    let unit_id = field(0)
        .parse::<usize>()
        .map_err(|e| parse_err(format!("unit_id {:?}: {e}", field(0))))?;
    let mut y = Vec::with_capacity(layout.d);
    for k in 0..layout.d {
        let raw = field(1 + k);
        let v: i128 = raw.parse().map_err(|_| {
            if raw.parse::<f64>().is_ok() {
                Error::Schema(format!("line {line}, column y_{}: count {raw:?} is not an integer", k + 1))
            } else {
                parse_err(format!("column y_{}: cannot parse {raw:?}", k + 1))
            }
        })?;
        if v < 0 {
            return Err(Error::Schema(format!(
                "line {line} (unit {unit_id}), column y_{}: negative count {v}",
                k + 1
            )));
        }
        y.push(u64::try_from(v).map_err(|_| parse_err(format!("count {v} out of range")))?);
    }
    let real = |k: usize, name: &str| -> Result<f64> {
        field(k)
            .parse::<f64>()
            .map_err(|e| parse_err(format!("column {name}: {e}")))
    };
    let mut x = Vec::with_capacity(layout.p);
    for j in 0..layout.p {
        x.push(real(1 + layout.d + j, &format!("x_{}", j + 1))?);
    }
    let size = real(1 + layout.d + layout.p, "size")?;
    if !(size > 0.0) {
        return Err(Error::Schema(format!(
            "line {line} (unit {unit_id}), column size: size measure must be positive, got {size}"
        )));
    }
    let mut extra = Vec::with_capacity(layout.extra.len());
    for (k, name) in layout.extra.iter().enumerate() {
        extra.push(real(2 + layout.d + layout.p + k, name)?);
    }
    Ok(CsvRow {
        unit_id,
        y,
        x,
        size,
        extra,
    })
}

/// Reads a population CSV (and its sidecar, when present).
pub fn load_population(path: &Path) -> Result<FinitePopulation> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let header = r.headers().map_err(|e| Error::csv(path, e))?.clone();
    let layout = parse_header(path, &header)?;
    if !layout.extra.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("unexpected trailing columns {:?}", layout.extra),
        });
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let row = parse_row(path, &layout, &rec)?;
        if row.unit_id != rows.len() {
            return Err(Error::Schema(format!(
                "unit_id must equal the row index: expected {} found {}",
                rows.len(),
                row.unit_id
            )));
        }
        rows.push(row);
    }
    let n = rows.len();
    let responses = DMatrix::from_fn(n, layout.d, |i, k| rows[i].y[k]);
    let covariates = DMatrix::from_fn(n, layout.p, |i, j| rows[i].x[j]);
    let sizes = rows.iter().map(|r| r.size).collect();
    let mut pop = FinitePopulation::new(responses, covariates, sizes)?;

    let side_path = FinitePopulation::sidecar_path(path);
    if side_path.exists() {
        let f = File::open(&side_path).map_err(|e| Error::io(&side_path, e))?;
        let side: Sidecar = serde_json::from_reader(f).map_err(|e| Error::json(&side_path, e))?;
        if let Some(params) = &side.params {
            if params.p() != pop.p() || params.d() != pop.d() {
                return Err(Error::Schema(format!(
                    "sidecar parameters are {}x{} but the CSV has P = {}, D = {}",
                    params.p(),
                    params.d(),
                    pop.p(),
                    pop.d()
                )));
            }
        }
        pop.true_params = side.params;
        pop.seed = side.seed;
        if side.covariate_names.len() == pop.p() {
            pop.covariate_names = side.covariate_names;
        }
        if side.response_names.len() == pop.d() {
            pop.response_names = side.response_names;
        }
    }
    Ok(pop)
}
