//! Sampling designs, inclusion probabilities and observed samples.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diagnostics::DesignDiagnosticsReport;
use crate::error::{Error, Result};
use crate::population::{csv_header, csv_row, parse_header, parse_row, FinitePopulation};
use crate::{rng, stats};

/// Default exponent on the size measure: inclusion proportional to its square root.
pub const DEFAULT_SIZE_POWER: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DesignKind {
    /// Fixed-size pps without replacement (systematic on a random order).
    #[serde(alias = "pps")]
    PpsFixedSize,
    /// Independent Bernoulli inclusions with pps marginals.
    Poisson,
    /// Simple random sampling without replacement.
    Srs,
}

impl DesignKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DesignKind::PpsFixedSize => "pps-fixed-size",
            DesignKind::Poisson => "poisson",
            DesignKind::Srs => "srs",
        }
    }
}

impl std::str::FromStr for DesignKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pps" | "pps-fixed-size" => Ok(DesignKind::PpsFixedSize),
            "poisson" => Ok(DesignKind::Poisson),
            "srs" => Ok(DesignKind::Srs),
            other => Err(Error::InvalidInput(format!("unknown design kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingDesign {
    pub kind: DesignKind,
    pub target_n: usize,
    pub size_power: f64,
}

impl SamplingDesign {
    pub fn new(kind: DesignKind, target_n: usize) -> Self {
        SamplingDesign {
            kind,
            target_n,
            size_power: DEFAULT_SIZE_POWER,
        }
    }

    pub fn pps(target_n: usize) -> Self {
        Self::new(DesignKind::PpsFixedSize, target_n)
    }

    pub fn srs(target_n: usize) -> Self {
        Self::new(DesignKind::Srs, target_n)
    }

    pub fn poisson(target_n: usize) -> Self {
        Self::new(DesignKind::Poisson, target_n)
    }

    pub fn with_power(mut self, size_power: f64) -> Self {
        self.size_power = size_power;
        self
    }

    pub fn validate(&self, population_size: usize) -> Result<()> {
        if self.target_n == 0 {
            return Err(Error::InvalidInput("sample size n must be positive".into()));
        }
        if self.target_n > population_size {
            return Err(Error::InvalidInput(format!(
                "sample size n = {} exceeds population size N = {population_size}",
                self.target_n
            )));
        }
        if !(self.size_power >= 0.0) || !self.size_power.is_finite() {
            return Err(Error::InvalidInput(format!(
                "size power must be a finite non-negative number, got {}",
                self.size_power
            )));
        }
        Ok(())
    }
}

/// Joint inclusion structure where it is known in closed form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PairwiseInclusion {
    /// `π_ij = π_i π_j`.
    Independent,
    /// `π_ij = n(n-1) / (N(N-1))`.
    SimpleRandom { n: usize, population_size: usize },
}

impl PairwiseInclusion {
    /// `max_{i≠j} |π_ij / (π_i π_j) - 1|`.
    pub fn max_dependence_ratio(&self) -> f64 {
        match *self {
            PairwiseInclusion::Independent => 0.0,
            PairwiseInclusion::SimpleRandom { n, population_size } => {
                if population_size < 2 {
                    return 0.0;
                }
                let (n, big) = (n as f64, population_size as f64);
                ((n - 1.0) * big / (n * (big - 1.0)) - 1.0).abs()
            }
        }
    }

    /// `max_{i≠j} N π_ij / (π_i π_j)`, the empirical stand-in for the
    /// constant bounding pairwise dependence.
    pub fn c3_proxy(&self, population_size: usize) -> f64 {
        population_size as f64 * (1.0 + self.max_dependence_ratio_signed())
    }

    fn max_dependence_ratio_signed(&self) -> f64 {
        match *self {
            PairwiseInclusion::Independent => 0.0,
            PairwiseInclusion::SimpleRandom { n, population_size } => {
                if population_size < 2 {
                    return 0.0;
                }
                let (n, big) = (n as f64, population_size as f64);
                (n - 1.0) * big / (n * (big - 1.0)) - 1.0
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InclusionProbabilities {
    pub pi: Vec<f64>,
    pub certainty_count: usize,
    pub pairwise: Option<PairwiseInclusion>,
}

impl InclusionProbabilities {
    pub fn min(&self) -> f64 {
        self.pi.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.pi.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sum(&self) -> f64 {
        self.pi.iter().sum()
    }
}

/// Inclusion probabilities proportional to `size^power`, summing to `n`.
///
/// Units whose share exceeds one are fixed at one (certainty units) and the
/// remaining budget is re-proportioned over the others, repeating until no
/// probability exceeds one.
pub fn pps_probabilities(sizes: &[f64], n: usize, power: f64) -> Result<(Vec<f64>, usize)> {
    let big_n = sizes.len();
    if n == 0 || n > big_n {
        return Err(Error::InvalidInput(format!(
            "cannot allocate a budget of n = {n} over N = {big_n} units"
        )));
    }
    let measure: Vec<f64> = sizes.iter().map(|s| s.powf(power)).collect();
    if let Some(i) = measure.iter().position(|m| !(*m > 0.0 && m.is_finite())) {
        return Err(Error::InvalidInput(format!(
            "unit {i} has size {} which gives a non-positive pps measure",
            sizes[i]
        )));
    }
    let mut certain = vec![false; big_n];
    let mut n_certain = 0usize;
    let mut pi = vec![0.0; big_n];
    loop {
        let budget = (n - n_certain) as f64;
        let total: f64 = measure
            .iter()
            .zip(&certain)
            .filter(|(_, c)| !**c)
            .map(|(m, _)| m)
            .sum();
        let mut newly = 0;
        for i in 0..big_n {
            if certain[i] {
                pi[i] = 1.0;
                continue;
            }
            pi[i] = if total > 0.0 { budget * measure[i] / total } else { 0.0 };
            if pi[i] > 1.0 {
                newly += 1;
            }
        }
        if newly == 0 {
            break;
        }
        for i in 0..big_n {
            if !certain[i] && pi[i] > 1.0 {
                certain[i] = true;
                pi[i] = 1.0;
            }
        }
        n_certain += newly;
        if n_certain >= n {
            // remaining budget would be zero; only possible when n == N
            break;
        }
    }
    // units sitting exactly at one without being capped are certainties too
    let certainty_count = pi.iter().filter(|&&p| p >= 1.0).count();
    Ok((pi, certainty_count))
}

pub fn compute_inclusion_probs(pop: &FinitePopulation, design: &SamplingDesign) -> Result<InclusionProbabilities> {
    let big_n = pop.n_units();
    design.validate(big_n)?;
    let n = design.target_n;
    let (pi, certainty_count, pairwise) = match design.kind {
        DesignKind::Srs => {
            let p = n as f64 / big_n as f64;
            let cu = if n == big_n { big_n } else { 0 };
            (
                vec![p; big_n],
                cu,
                Some(PairwiseInclusion::SimpleRandom {
                    n,
                    population_size: big_n,
                }),
            )
        }
        DesignKind::PpsFixedSize | DesignKind::Poisson => {
            let (pi, cu) = pps_probabilities(&pop.size_measure, n, design.size_power)?;
            let pairwise = (design.kind == DesignKind::Poisson).then_some(PairwiseInclusion::Independent);
            (pi, cu, pairwise)
        }
    };
    let probs = InclusionProbabilities {
        pi,
        certainty_count,
        pairwise,
    };
    if let Some(i) = probs.pi.iter().position(|p| !(*p > 0.0 && *p <= 1.0)) {
        return Err(Error::Numerical(format!(
            "inclusion probability {} for unit {i} is outside (0, 1]",
            probs.pi[i]
        )));
    }
    Ok(probs)
}

/// Rescales positive weights to sum to their count: `w̃_i = n w_i / Σ w_j`.
pub fn normalize_weights(raw: &[f64]) -> Result<Vec<f64>> {
    if let Some(i) = raw.iter().position(|w| !(*w > 0.0 && w.is_finite())) {
        return Err(Error::InvalidInput(format!(
            "weight {i} is {} but weights must be positive and finite",
            raw[i]
        )));
    }
    let n = raw.len() as f64;
    let total: f64 = raw.iter().sum();
    Ok(raw.iter().map(|w| n * w / total).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservedSample {
    /// Population row indices of the sampled units, ascending.
    pub indices: Vec<usize>,
    pub responses: DMatrix<u64>,
    pub covariates: DMatrix<f64>,
    pub size_measure: Vec<f64>,
    pub pi: Vec<f64>,
    pub raw_weights: Vec<f64>,
    pub normalized_weights: Vec<f64>,
    pub population_size: Option<usize>,
}

impl ObservedSample {
    /// Builds a sample from population rows and their inclusion probabilities.
    pub fn from_indices(pop: &FinitePopulation, indices: Vec<usize>, pi_all: &[f64]) -> Result<Self> {
        let pi: Vec<f64> = indices.iter().map(|&i| pi_all[i]).collect();
        let raw_weights: Vec<f64> = pi.iter().map(|p| 1.0 / p).collect();
        let normalized_weights = normalize_weights(&raw_weights)?;
        Ok(ObservedSample {
            responses: pop.responses.select_rows(indices.iter()),
            covariates: pop.covariates.select_rows(indices.iter()),
            size_measure: indices.iter().map(|&i| pop.size_measure[i]).collect(),
            pi,
            raw_weights,
            normalized_weights,
            population_size: Some(pop.n_units()),
            indices,
        })
    }

    /// Every unit with `π = 1`.
    pub fn census(pop: &FinitePopulation) -> Self {
        let ones = vec![1.0; pop.n_units()];
        Self::from_indices(pop, (0..pop.n_units()).collect(), &ones).expect("unit weights are valid")
    }

    pub fn n(&self) -> usize {
        self.indices.len()
    }

    pub fn d(&self) -> usize {
        self.responses.ncols()
    }

    pub fn p(&self) -> usize {
        self.covariates.ncols()
    }

    /// Replaces the raw weights and recomputes the normalised ones.
    pub fn with_raw_weights(mut self, raw: Vec<f64>) -> Result<Self> {
        if raw.len() != self.n() {
            return Err(Error::InvalidInput("weight vector length differs from sample size".into()));
        }
        self.normalized_weights = normalize_weights(&raw)?;
        self.raw_weights = raw;
        Ok(self)
    }
}

/// Systematic pps selection over a uniformly permuted unit order.
fn systematic_pps<R: Rng>(pi: &[f64], rng: &mut R) -> Vec<usize> {
    let mut order: Vec<usize> = (0..pi.len()).collect();
    order.shuffle(rng);
    let total: f64 = pi.iter().sum();
    let n = total.round() as usize;
    let start: f64 = rng.random();
    let mut picks = Vec::with_capacity(n);
    let mut cum = 0.0;
    let mut next = start;
    for &unit in &order {
        cum += pi[unit];
        // each interval has length ≤ 1, so it can hold at most one point
        if picks.len() < n && next < cum {
            picks.push(unit);
            next += 1.0;
        }
    }
    // rounding in the running sum can leave the last point just past the end
    if picks.len() < n {
        if let Some(&unit) = order.iter().rev().find(|u| !picks.contains(u)) {
            picks.push(unit);
        }
    }
    picks.sort_unstable();
    picks
}

pub fn draw_sample(
    pop: &FinitePopulation,
    probs: &InclusionProbabilities,
    design: &SamplingDesign,
    seed: u64,
) -> Result<ObservedSample> {
    let big_n = pop.n_units();
    if probs.pi.len() != big_n {
        return Err(Error::InvalidInput(format!(
            "{} inclusion probabilities for {big_n} units",
            probs.pi.len()
        )));
    }
    let mut rng = rng::stream(seed, &[rng::label_tag(design.kind.as_str())]);
    let indices = match design.kind {
        DesignKind::PpsFixedSize => systematic_pps(&probs.pi, &mut rng),
        DesignKind::Poisson => (0..big_n)
            .filter(|&i| rng.random::<f64>() < probs.pi[i])
            .collect(),
        DesignKind::Srs => {
            let mut idx = rand::seq::index::sample(&mut rng, big_n, design.target_n).into_vec();
            idx.sort_unstable();
            idx
        }
    };
    if indices.is_empty() {
        return Err(Error::Numerical("realised sample is empty".into()));
    }
    ObservedSample::from_indices(pop, indices, &probs.pi)
}

/// Table-style design summary plus the computable design conditions.
pub fn design_report(
    pop: &FinitePopulation,
    design: &SamplingDesign,
    probs: &InclusionProbabilities,
    samples: &[ObservedSample],
) -> Result<DesignDiagnosticsReport> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("design report needs at least one sample".into()));
    }
    let big_n = pop.n_units();
    let min_pi = probs.min();
    let realized: Vec<f64> = samples.iter().map(|s| s.n() as f64).collect();
    let cor = (0..pop.d())
        .map(|d| stats::correlation(&pop.response_column(d), &probs.pi))
        .collect();
    let (a5, c3, note) = match probs.pairwise {
        Some(pw) => (
            Some(pw.max_dependence_ratio()),
            Some(pw.c3_proxy(big_n)),
            match pw {
                PairwiseInclusion::Independent => "exact: independent inclusions",
                PairwiseInclusion::SimpleRandom { .. } => "exact: simple random sampling",
            }
            .to_string(),
        ),
        None => (
            None,
            None,
            "not computed: joint inclusion probabilities of systematic pps are not available in closed form"
                .to_string(),
        ),
    };
    Ok(DesignDiagnosticsReport {
        kind: design.kind,
        target_n: design.target_n,
        population_size: big_n,
        n_samples: samples.len(),
        realized_n_mean: stats::mean(&realized),
        realized_n_min: samples.iter().map(|s| s.n()).min().unwrap_or(0),
        realized_n_max: samples.iter().map(|s| s.n()).max().unwrap_or(0),
        certainty_count: probs.certainty_count,
        min_pi,
        max_pi: probs.max(),
        cv_pi: stats::coef_of_variation(&probs.pi),
        cor_y_pi: cor,
        response_names: pop.response_names.clone(),
        gamma: 1.0 / min_pi,
        a5_max_ratio: a5,
        a5_c3_proxy: c3,
        a5_note: note,
        sampling_fraction: design.target_n as f64 / big_n as f64,
    })
}

/// Writes a sample as population-schema rows plus `pi, w_raw, w_norm`.
pub fn save_sample(pop: &FinitePopulation, sample: &ObservedSample, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(BufWriter::new(file));
    let mut header = csv_header(pop.d(), pop.p());
    header.extend(["pi", "w_raw", "w_norm"].map(String::from));
    w.write_record(&header).map_err(|e| Error::csv(path, e))?;
    for (k, &i) in sample.indices.iter().enumerate() {
        let mut row = csv_row(pop, i);
        row.push(sample.pi[k].to_string());
        row.push(sample.raw_weights[k].to_string());
        row.push(sample.normalized_weights[k].to_string());
        w.write_record(&row).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads a sample CSV. Normalised weights are recomputed from `w_raw` and
/// checked against the stored column.
pub fn load_sample(path: &Path) -> Result<ObservedSample> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let header = r.headers().map_err(|e| Error::csv(path, e))?.clone();
    let layout = parse_header(path, &header)?;
    if layout.extra != ["pi", "w_raw", "w_norm"] {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("expected trailing columns pi, w_raw, w_norm, found {:?}", layout.extra),
        });
    }
    let rows = r
        .records()
        .map(|rec| {
            let rec = rec.map_err(|e| Error::csv(path, e))?;
            parse_row(path, &layout, &rec)
        })
        .collect::<Result<Vec<_>>>()?;
    if rows.is_empty() {
        return Err(Error::Schema("sample file has no rows".into()));
    }
    let n = rows.len();
    for r in &rows {
        if !(r.extra[0] > 0.0 && r.extra[0] <= 1.0) {
            return Err(Error::Schema(format!("unit {}: pi = {} outside (0, 1]", r.unit_id, r.extra[0])));
        }
    }
    let raw: Vec<f64> = rows.iter().map(|r| r.extra[1]).collect();
    let normalized = normalize_weights(&raw)?;
    for (r, w) in rows.iter().zip(&normalized) {
        if (r.extra[2] - w).abs() > 1e-9 * w.max(1.0) {
            return Err(Error::Schema(format!(
                "unit {}: stored w_norm {} disagrees with normalised w_raw {w}",
                r.unit_id, r.extra[2]
            )));
        }
    }
    Ok(ObservedSample {
        indices: rows.iter().map(|r| r.unit_id).collect(),
        responses: DMatrix::from_fn(n, layout.d, |i, k| rows[i].y[k]),
        covariates: DMatrix::from_fn(n, layout.p, |i, j| rows[i].x[j]),
        size_measure: rows.iter().map(|r| r.size).collect(),
        pi: rows.iter().map(|r| r.extra[0]).collect(),
        raw_weights: raw,
        normalized_weights: normalized,
        population_size: None,
    })
}
