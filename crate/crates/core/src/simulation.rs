//! Monte Carlo comparison of the population posterior, the pseudo-posterior,
//! the unweighted posterior under informative sampling, and the posterior
//! under simple random sampling.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{compute_inclusion_probs, draw_sample, DesignKind, ObservedSample, SamplingDesign, DEFAULT_SIZE_POWER};
use crate::diagnostics::{ContractionInput, PlugInModel};
use crate::error::{Error, Result};
use crate::model::{fit, FitConfig, ParamSummary, PosteriorDraws};
use crate::population::{generate_population, load_population, FinitePopulation, GeneratingParams, PopulationConfig, JoltsRecipe};
use crate::{rng, stats};

/// Share of failed replicate fits above which the study is abandoned.
pub const MAX_FAILURE_RATE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Unweighted fit on every population unit.
    PopulationPosterior,
    /// Weighted fit on an informative pps sample.
    Pseudo,
    /// Unweighted fit on the same pps sample.
    Unweighted,
    /// Unweighted fit on a simple random sample of the same size.
    Srs,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::PopulationPosterior, Method::Pseudo, Method::Unweighted, Method::Srs];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::PopulationPosterior => "population-posterior",
            Method::Pseudo => "pseudo",
            Method::Unweighted => "unweighted",
            Method::Srs => "srs",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PopulationSource {
    Generate {
        config: PopulationConfig,
        params: GeneratingParams,
        seed: u64,
    },
    Load {
        path: PathBuf,
    },
}

impl PopulationSource {
    /// The synthetic-JOLTS frame with its default generating parameters.
    pub fn synthetic_jolts(n_units: usize, seed: u64) -> Self {
        PopulationSource::Generate {
            config: PopulationConfig::synthetic_jolts(n_units),
            params: GeneratingParams::synthetic_jolts(),
            seed,
        }
    }

    pub fn resolve(&self) -> Result<FinitePopulation> {
        match self {
            PopulationSource::Generate { config, params, seed } => generate_population(config, params, *seed),
            PopulationSource::Load { path } => load_population(path),
        }
    }
}

/// Coefficient tracked for bias and interval width: covariate row, response column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FocusCoefficient {
    pub covariate: usize,
    pub response: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub population: PopulationSource,
    pub sample_sizes: Vec<usize>,
    pub n_replicates: usize,
    pub methods: Vec<Method>,
    pub fit: FitConfig,
    pub master_seed: u64,
    pub size_power: f64,
    pub focus: FocusCoefficient,
    /// Evenly spaced draws kept per replicate for the pooled intervals.
    pub pooled_draws_per_replicate: usize,
}

/// Frame size of the synthetic-JOLTS population.
pub const JOLTS_FRAME_SIZE: usize = 8595;

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            population: PopulationSource::synthetic_jolts(JOLTS_FRAME_SIZE, 20_190_601),
            sample_sizes: vec![500, 1000, 1500, 2500],
            n_replicates: 100,
            methods: Method::ALL.to_vec(),
            fit: FitConfig::default(),
            master_seed: 2019,
            size_power: DEFAULT_SIZE_POWER,
            focus: FocusCoefficient {
                covariate: JoltsRecipe::EMP_COLUMN,
                response: 0,
            },
            pooled_draws_per_replicate: 250,
        }
    }
}

impl StudyConfig {
    /// 20 replicates at n = 500 and 2500 with 2000 iterations per fit.
    pub fn desk_scale() -> Self {
        StudyConfig {
            sample_sizes: vec![500, 2500],
            n_replicates: 20,
            fit: FitConfig {
                n_iter: 2000,
                burn_in: 1000,
                ..FitConfig::default()
            },
            ..StudyConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.fit.validate()?;
        if self.n_replicates == 0 {
            return Err(Error::InvalidInput("n_replicates must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidInput("no methods selected".into()));
        }
        if self.sample_sizes.contains(&0) {
            return Err(Error::InvalidInput("sample sizes must be positive".into()));
        }
        if self.pooled_draws_per_replicate == 0 {
            return Err(Error::InvalidInput("pooled_draws_per_replicate must be positive".into()));
        }
        if !(self.size_power >= 0.0 && self.size_power.is_finite()) {
            return Err(Error::InvalidInput("size_power must be finite and non-negative".into()));
        }
        Ok(())
    }

    fn validate_against(&self, pop: &FinitePopulation) -> Result<()> {
        self.validate()?;
        if let Some(&n) = self.sample_sizes.iter().find(|&&n| n > pop.n_units()) {
            return Err(Error::InvalidInput(format!(
                "sample size {n} exceeds the population size {}",
                pop.n_units()
            )));
        }
        if self.focus.covariate >= pop.p() || self.focus.response >= pop.d() {
            return Err(Error::InvalidInput(format!(
                "focus coefficient ({}, {}) out of range for P = {}, D = {}",
                self.focus.covariate,
                self.focus.response,
                pop.p(),
                pop.d()
            )));
        }
        Ok(())
    }

    fn sampled_methods(&self) -> Vec<Method> {
        let mut m: Vec<Method> = self
            .methods
            .iter()
            .copied()
            .filter(|m| *m != Method::PopulationPosterior)
            .collect();
        m.sort();
        m.dedup();
        m
    }
}

/// Summaries of one fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub method: Method,
    pub n: usize,
    pub replicate: usize,
    pub seed: u64,
    pub realized_n: usize,
    pub summaries: Vec<ParamSummary>,
    /// Thinned draws of every coefficient, `[coef][draw]` with coefficients in `B_p_d` order.
    #[serde(skip)]
    pub pooled_b: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub method: Method,
    pub n: usize,
    pub replicate: usize,
    pub seed: u64,
    pub message: String,
}

/// Pooled results of one method at one sample size for one parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: Method,
    pub n: usize,
    pub param: String,
    pub replicates: usize,
    pub pooled_mean: f64,
    pub pooled_q025: f64,
    pub pooled_q975: f64,
    /// Pooled mean minus the population-posterior mean, when that fit ran.
    pub bias: Option<f64>,
    /// Average per-replicate 95% interval width.
    pub mean_ci_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub config: StudyConfig,
    pub population_size: usize,
    pub covariate_names: Vec<String>,
    pub response_names: Vec<String>,
    pub replicates: Vec<ReplicateResult>,
    pub failures: Vec<ReplicateFailure>,
    pub aggregates: Vec<AggregateRow>,
}

const TAG_PPS: u64 = 11;
const TAG_SRS: u64 = 12;

fn coefficient_name(j: usize, k: usize) -> String {
    format!("B_{}_{}", j + 1, k + 1)
}

fn thin_b(draws: &PosteriorDraws, keep: usize) -> Vec<Vec<f64>> {
    let total = draws.n_draws();
    let keep = keep.min(total);
    let idx: Vec<usize> = (0..keep).map(|i| i * total / keep).collect();
    let mut out = Vec::with_capacity(draws.p() * draws.d());
    for j in 0..draws.p() {
        for k in 0..draws.d() {
            let col = draws.b_draws(j, k);
            out.push(idx.iter().map(|&t| col[t]).collect());
        }
    }
    out
}

fn run_fit(
    method: Method,
    n: usize,
    replicate: usize,
    sample: &ObservedSample,
    config: &StudyConfig,
) -> std::result::Result<ReplicateResult, ReplicateFailure> {
    let seed = rng::derive_seed(
        config.master_seed,
        &[rng::label_tag(method.as_str()), n as u64, replicate as u64],
    );
    let fit_config = FitConfig {
        seed,
        weighted: method == Method::Pseudo,
        ..config.fit.clone()
    };
    match fit(sample, &fit_config) {
        Ok(draws) => Ok(ReplicateResult {
            method,
            n,
            replicate,
            seed,
            realized_n: sample.n(),
            summaries: draws.summaries(),
            pooled_b: thin_b(&draws, config.pooled_draws_per_replicate),
        }),
        Err(e) => Err(ReplicateFailure {
            method,
            n,
            replicate,
            seed,
            message: e.to_string(),
        }),
    }
}

type FitOutcome = std::result::Result<ReplicateResult, ReplicateFailure>;

fn replicate_fits(pop: &FinitePopulation, config: &StudyConfig, n: usize, replicate: usize) -> Vec<FitOutcome> {
    let methods = config.sampled_methods();
    let mut out = Vec::new();
    let fail_all = |ms: &[Method], seed: u64, e: Error| -> Vec<FitOutcome> {
        ms.iter()
            .map(|&method| {
                Err(ReplicateFailure {
                    method,
                    n,
                    replicate,
                    seed,
                    message: format!("sampling failed: {e}"),
                })
            })
            .collect()
    };
    let informative: Vec<Method> = methods
        .iter()
        .copied()
        .filter(|m| matches!(m, Method::Pseudo | Method::Unweighted))
        .collect();
    if !informative.is_empty() {
        let seed = rng::derive_seed(config.master_seed, &[TAG_PPS, n as u64, replicate as u64]);
        let design = SamplingDesign::pps(n).with_power(config.size_power);
        let sample = compute_inclusion_probs(pop, &design).and_then(|p| draw_sample(pop, &p, &design, seed));
        match sample {
            Ok(s) => out.extend(informative.iter().map(|&m| run_fit(m, n, replicate, &s, config))),
            Err(e) => out.extend(fail_all(&informative, seed, e)),
        }
    }
    if methods.contains(&Method::Srs) {
        let seed = rng::derive_seed(config.master_seed, &[TAG_SRS, n as u64, replicate as u64]);
        let design = SamplingDesign::srs(n);
        let sample = compute_inclusion_probs(pop, &design).and_then(|p| draw_sample(pop, &p, &design, seed));
        match sample {
            Ok(s) => out.push(run_fit(Method::Srs, n, replicate, &s, config)),
            Err(e) => out.extend(fail_all(&[Method::Srs], seed, e)),
        }
    }
    out
}

/// Resolves the population source and runs the study on it.
pub fn run_study(config: &StudyConfig) -> Result<StudyResult> {
    config.validate()?;
    let pop = config.population.resolve()?;
    run_study_on(config, &pop)
}

/// Runs every replicate on a given population.
///
/// Work items are `(n, replicate)` pairs with seeds derived from the master
/// seed, the method, `n` and the replicate, so results do not depend on
/// scheduling. A failed fit is recorded and the study continues unless more
/// than [`MAX_FAILURE_RATE`] of all fits fail.
pub fn run_study_on(config: &StudyConfig, pop: &FinitePopulation) -> Result<StudyResult> {
    config.validate_against(pop)?;
    let items: Vec<(usize, usize)> = config
        .sample_sizes
        .iter()
        .flat_map(|&n| (0..config.n_replicates).map(move |r| (n, r)))
        .collect();

    let mut outcomes: Vec<FitOutcome> = Vec::new();
    if config.methods.contains(&Method::PopulationPosterior) {
        let census = ObservedSample::census(pop);
        outcomes.push(run_fit(Method::PopulationPosterior, pop.n_units(), 0, &census, config));
    }
    let per_item: Vec<Vec<FitOutcome>> = items
        .par_iter()
        .map(|&(n, r)| replicate_fits(pop, config, n, r))
        .collect();
    outcomes.extend(per_item.into_iter().flatten());

    let total = outcomes.len();
    let mut replicates = Vec::new();
    let mut failures = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => replicates.push(r),
            Err(f) => failures.push(f),
        }
    }
    if failures.len() as f64 > MAX_FAILURE_RATE * total as f64 {
        return Err(Error::StudyAborted {
            failed: failures.len(),
            total,
        });
    }
    let aggregates = aggregate(&replicates, pop.p(), pop.d());
    Ok(StudyResult {
        config: config.clone(),
        population_size: pop.n_units(),
        covariate_names: pop.covariate_names.clone(),
        response_names: pop.response_names.clone(),
        replicates,
        failures,
        aggregates,
    })
}

fn aggregate(replicates: &[ReplicateResult], p: usize, d: usize) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(Method, usize), Vec<&ReplicateResult>> = BTreeMap::new();
    for r in replicates {
        groups.entry((r.method, r.n)).or_default().push(r);
    }
    let reference: Option<Vec<f64>> = groups
        .iter()
        .find(|((m, _), _)| *m == Method::PopulationPosterior)
        .map(|(_, reps)| (0..p * d).map(|c| stats::mean(&reps[0].pooled_b[c])).collect());

    let mut rows = Vec::new();
    for ((method, n), reps) in &groups {
        for c in 0..p * d {
            let mut pooled: Vec<f64> = reps.iter().flat_map(|r| r.pooled_b[c].iter().copied()).collect();
            let mean = stats::mean(&pooled);
            pooled.sort_by(f64::total_cmp);
            let widths: Vec<f64> = reps
                .iter()
                .map(|r| {
                    let s = &r.summaries[c];
                    s.q975 - s.q025
                })
                .collect();
            rows.push(AggregateRow {
                method: *method,
                n: *n,
                param: coefficient_name(c / d, c % d),
                replicates: reps.len(),
                pooled_mean: mean,
                pooled_q025: stats::quantile_sorted(&pooled, 0.025),
                pooled_q975: stats::quantile_sorted(&pooled, 0.975),
                bias: reference.as_ref().map(|r| mean - r[c]),
                mean_ci_width: stats::mean(&widths),
            });
        }
    }
    rows
}

impl StudyResult {
    pub fn aggregate_row(&self, method: Method, n: usize, param: &str) -> Option<&AggregateRow> {
        self.aggregates
            .iter()
            .find(|r| r.method == method && r.n == n && r.param == param)
    }

    /// Aggregate row of the configured focus coefficient.
    pub fn focus_row(&self, method: Method, n: usize) -> Option<&AggregateRow> {
        let f = self.config.focus;
        self.aggregate_row(method, n, &coefficient_name(f.covariate, f.response))
    }

    /// Tidy per-replicate summaries: `method,n,replicate,param,mean,q025,q975`.
    pub fn write_tidy_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(BufWriter::new(file));
        w.write_record(["method", "n", "replicate", "param", "mean", "q025", "q975"])
            .map_err(|e| Error::csv(path, e))?;
        for r in &self.replicates {
            for s in &r.summaries {
                w.write_record([
                    r.method.as_str().to_string(),
                    r.n.to_string(),
                    r.replicate.to_string(),
                    s.name.clone(),
                    s.mean.to_string(),
                    s.q025.to_string(),
                    s.q975.to_string(),
                ])
                .map_err(|e| Error::csv(path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Aggregates, failures and the configuration as JSON.
    pub fn write_aggregate_json(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Out<'a> {
            config: &'a StudyConfig,
            population_size: usize,
            covariate_names: &'a [String],
            response_names: &'a [String],
            fits: usize,
            failures: &'a [ReplicateFailure],
            aggregates: &'a [AggregateRow],
        }
        let out = Out {
            config: &self.config,
            population_size: self.population_size,
            covariate_names: &self.covariate_names,
            response_names: &self.response_names,
            fits: self.replicates.len(),
            failures: &self.failures,
            aggregates: &self.aggregates,
        };
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, &out).map_err(|e| Error::json(path, e))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Plug-in model from the population-posterior fit, when it ran.
    pub fn reference_model(&self) -> Option<Result<PlugInModel>> {
        let reps: Vec<&ReplicateResult> = self
            .replicates
            .iter()
            .filter(|r| r.method == Method::PopulationPosterior)
            .collect();
        (!reps.is_empty()).then(|| self.plug_in(&reps))
    }

    fn plug_in(&self, reps: &[&ReplicateResult]) -> Result<PlugInModel> {
        let p = self.covariate_names.len();
        let d = self.response_names.len();
        let mean_of = |name: &str| -> f64 {
            let v: Vec<f64> = reps
                .iter()
                .map(|r| r.summaries.iter().find(|s| s.name == name).map_or(f64::NAN, |s| s.mean))
                .collect();
            stats::mean(&v)
        };
        let b = nalgebra::DMatrix::from_fn(p, d, |j, k| mean_of(&coefficient_name(j, k)));
        let lambda = nalgebra::DMatrix::from_fn(d, d, |i, j| {
            let (a, c) = if i <= j { (i, j) } else { (j, i) };
            mean_of(&format!("Lambda_{}_{}", a + 1, c + 1))
        });
        PlugInModel::new(b, lambda)
    }

    /// Plug-in models from the replicate posterior means of each sampled
    /// method, for [`crate::diagnostics::contraction_curve`].
    pub fn contraction_inputs(&self) -> Result<Vec<ContractionInput>> {
        let d = self.response_names.len();
        let f = self.config.focus;
        let mut groups: BTreeMap<(Method, usize), Vec<&ReplicateResult>> = BTreeMap::new();
        for r in self.replicates.iter().filter(|r| r.method != Method::PopulationPosterior) {
            groups.entry((r.method, r.n)).or_default().push(r);
        }
        groups
            .into_iter()
            .map(|((method, n), reps)| {
                let bias = (0..d)
                    .map(|k| {
                        self.aggregate_row(method, n, &coefficient_name(f.covariate, k))
                            .and_then(|r| r.bias)
                            .unwrap_or(f64::NAN)
                    })
                    .collect();
                let ci_width = self
                    .focus_row(method, n)
                    .map_or(f64::NAN, |r| r.mean_ci_width);
                Ok(ContractionInput {
                    method: method.as_str().to_string(),
                    n,
                    fitted: self.plug_in(&reps)?,
                    bias,
                    ci_width,
                })
            })
            .collect()
    }
}

/// Quartiles of one response.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
}

impl Quartiles {
    pub fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Quartiles {
            q25: stats::quantile_sorted(&v, 0.25),
            median: stats::quantile_sorted(&v, 0.5),
            q75: stats::quantile_sorted(&v, 0.75),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionRow {
    /// `"population"` or the design label of the sample.
    pub source: String,
    /// Sample size; the population size for the population row.
    pub n: usize,
    /// One entry per response.
    pub quartiles: Vec<Quartiles>,
}

/// Response quartiles of the population followed by each sample.
pub fn summarize_distributions(pop: &FinitePopulation, samples: &[(String, ObservedSample)]) -> Vec<DistributionRow> {
    let mut rows = vec![DistributionRow {
        source: "population".into(),
        n: pop.n_units(),
        quartiles: (0..pop.d()).map(|k| Quartiles::of(&pop.response_column(k))).collect(),
    }];
    for (label, s) in samples {
        rows.push(DistributionRow {
            source: label.clone(),
            n: s.n(),
            quartiles: (0..s.d())
                .map(|k| {
                    let col: Vec<f64> = s.responses.column(k).iter().map(|&y| y as f64).collect();
                    Quartiles::of(&col)
                })
                .collect(),
        });
    }
    rows
}

/// Draws one informative pps sample at each size, for [`summarize_distributions`].
pub fn informative_samples(
    pop: &FinitePopulation,
    sizes: &[usize],
    size_power: f64,
    seed: u64,
) -> Result<Vec<(String, ObservedSample)>> {
    sizes
        .iter()
        .map(|&n| {
            let design = SamplingDesign::pps(n).with_power(size_power);
            let probs = compute_inclusion_probs(pop, &design)?;
            let s = draw_sample(pop, &probs, &design, rng::derive_seed(seed, &[TAG_PPS, n as u64]))?;
            Ok((format!("{}-{n}", DesignKind::PpsFixedSize.as_str()), s))
        })
        .collect()
}
