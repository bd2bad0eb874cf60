//! Subcommands of the `pseudopost` binary as plain functions.
//!
//! Each command reads its inputs, runs the library code, writes its outputs
//! and returns a [`RunManifest`] listing every file with its SHA-256 digest.
//! The manifest records the full invocation, so [`replay`] can re-run it and
//! compare digests.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use pseudopost::design::{
    compute_inclusion_probs, design_report, draw_sample, load_sample, save_sample, DesignKind, SamplingDesign,
    DEFAULT_SIZE_POWER,
};
use pseudopost::diagnostics::{contraction_curve, write_contraction_csv};
use pseudopost::model::{fit, FitConfig};
use pseudopost::population::{generate_population, load_population, save_population, FinitePopulation, GeneratingParams, PopulationConfig};
use pseudopost::simulation::{informative_samples, run_study, summarize_distributions, StudyConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Io(_) => EXIT_IO,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }
}

impl From<pseudopost::Error> for CliError {
    fn from(e: pseudopost::Error) -> Self {
        if e.is_io() {
            CliError::Io(e.to_string())
        } else if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            match e {
                pseudopost::Error::Csv { .. } | pseudopost::Error::Json { .. } => CliError::Io(e.to_string()),
                other => CliError::Config(other.to_string()),
            }
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

pub fn digest_file(path: &Path) -> CliResult<FileDigest> {
    let mut file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let k = file.read(&mut buf).map_err(|e| io_err(path, e))?;
        if k == 0 {
            break;
        }
        hasher.update(&buf[..k]);
    }
    Ok(FileDigest {
        path: path.to_path_buf(),
        sha256: hex::encode(hasher.finalize()),
    })
}

/// A fully resolved command: everything needed to reproduce its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Invocation {
    Generate {
        config: GenerateConfig,
        out: PathBuf,
    },
    Sample {
        population: PathBuf,
        design: SamplingDesign,
        seed: u64,
        out: PathBuf,
    },
    Fit {
        sample: PathBuf,
        config: FitConfig,
        out_dir: PathBuf,
    },
    Diagnose {
        population: PathBuf,
        sizes: Vec<usize>,
        size_power: f64,
        replicates: usize,
        seed: u64,
        out_dir: PathBuf,
    },
    Study {
        config: StudyConfig,
        out_dir: PathBuf,
    },
}

impl Invocation {
    pub fn name(&self) -> &'static str {
        match self {
            Invocation::Generate { .. } => "generate",
            Invocation::Sample { .. } => "sample",
            Invocation::Fit { .. } => "fit",
            Invocation::Diagnose { .. } => "diagnose",
            Invocation::Study { .. } => "study",
        }
    }

    fn master_seed(&self) -> u64 {
        match self {
            Invocation::Generate { config, .. } => config.seed,
            Invocation::Sample { seed, .. } | Invocation::Diagnose { seed, .. } => *seed,
            Invocation::Fit { config, .. } => config.seed,
            Invocation::Study { config, .. } => config.master_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub invocation: Invocation,
    pub master_seed: u64,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub started: String,
    pub finished: String,
    pub version: String,
    pub workers: usize,
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::Io(e.to_string()))?;
        fs::write(path, text + "\n").map_err(|e| io_err(path, e))
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// Population generation settings read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateConfig {
    pub seed: u64,
    pub population: PopulationConfig,
    /// Generating parameters; the synthetic-JOLTS values when omitted.
    #[serde(default = "GeneratingParams::synthetic_jolts")]
    pub params: GeneratingParams,
}

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

pub fn parse_toml<T: serde::de::DeserializeOwned>(text: &str, origin: &Path) -> CliResult<T> {
    toml::from_str(text).map_err(|e| CliError::Config(format!("{}: {}", origin.display(), e.message())))
}

pub fn read_generate_config(path: &Path) -> CliResult<GenerateConfig> {
    parse_toml(&read_text(path)?, path)
}

/// Reads a study file. An optional `preset = "desk-scale"` key selects the
/// starting point; every other key overrides it.
pub fn read_study_config(path: &Path) -> CliResult<StudyConfig> {
    let mut table: toml::Table = parse_toml(&read_text(path)?, path)?;
    let base = match table.remove("preset") {
        None => StudyConfig::default(),
        Some(toml::Value::String(s)) if s == "default" => StudyConfig::default(),
        Some(toml::Value::String(s)) if s == "desk-scale" => StudyConfig::desk_scale(),
        Some(other) => {
            return Err(CliError::Config(format!(
                "{}: unknown preset {other}; expected \"default\" or \"desk-scale\"",
                path.display()
            )))
        }
    };
    let mut merged = toml::Table::try_from(&base).map_err(|e| CliError::Config(e.to_string()))?;
    merge_tables(&mut merged, table);
    merged
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(format!("{}: {}", path.display(), e.message())))
}

fn merge_tables(base: &mut toml::Table, overrides: toml::Table) {
    for (k, v) in overrides {
        // tagged tables (population source, covariate recipe) are replaced whole
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) if !o.contains_key("source") && !o.contains_key("kind") => {
                merge_tables(b, o)
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Reads an optional fit configuration file; defaults otherwise.
pub fn read_fit_config(path: Option<&Path>) -> CliResult<FitConfig> {
    match path {
        Some(p) => parse_toml(&read_text(p)?, p),
        None => Ok(FitConfig::default()),
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339()
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn ensure_parent(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => ensure_dir(p),
        _ => Ok(()),
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

/// Where a command writes its manifest.
pub fn manifest_path(inv: &Invocation) -> PathBuf {
    match inv {
        Invocation::Generate { out, .. } | Invocation::Sample { out, .. } => with_suffix(out, "manifest.json"),
        Invocation::Fit { out_dir, .. } | Invocation::Diagnose { out_dir, .. } | Invocation::Study { out_dir, .. } => {
            out_dir.join("manifest.json")
        }
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{suffix}"))
}

/// Runs an invocation, writes its manifest and returns it.
pub fn execute(inv: &Invocation) -> CliResult<RunManifest> {
    let started = now();
    let (inputs, outputs) = match inv {
        Invocation::Generate { config, out } => run_generate(config, out)?,
        Invocation::Sample {
            population,
            design,
            seed,
            out,
        } => run_sample(population, design, *seed, out)?,
        Invocation::Fit { sample, config, out_dir } => run_fit(sample, config, out_dir)?,
        Invocation::Diagnose {
            population,
            sizes,
            size_power,
            replicates,
            seed,
            out_dir,
        } => run_diagnose(population, sizes, *size_power, *replicates, *seed, out_dir)?,
        Invocation::Study { config, out_dir } => run_study_files(config, out_dir)?,
    };
    let manifest = RunManifest {
        command: inv.name().to_string(),
        invocation: inv.clone(),
        master_seed: inv.master_seed(),
        inputs: inputs.iter().map(|p| digest_file(p)).collect::<CliResult<_>>()?,
        outputs: outputs.iter().map(|p| digest_file(p)).collect::<CliResult<_>>()?,
        started,
        finished: now(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        workers: rayon::current_num_threads(),
    };
    manifest.write(&manifest_path(inv))?;
    Ok(manifest)
}

type FileLists = (Vec<PathBuf>, Vec<PathBuf>);

fn run_generate(config: &GenerateConfig, out: &Path) -> CliResult<FileLists> {
    config.population.validate(&config.params)?;
    let pop = generate_population(&config.population, &config.params, config.seed)?;
    ensure_parent(out)?;
    save_population(&pop, out)?;
    Ok((vec![], vec![out.to_path_buf(), FinitePopulation::sidecar_path(out)]))
}

fn run_sample(population: &Path, design: &SamplingDesign, seed: u64, out: &Path) -> CliResult<FileLists> {
    let pop = load_population(population)?;
    design.validate(pop.n_units())?;
    let probs = compute_inclusion_probs(&pop, design)?;
    let sample = draw_sample(&pop, &probs, design, seed)?;
    let report = design_report(&pop, design, &probs, std::slice::from_ref(&sample))?;
    ensure_parent(out)?;
    save_sample(&pop, &sample, out)?;
    let report_path = with_suffix(out, "design.json");
    write_json(&report, &report_path)?;
    Ok((
        vec![population.to_path_buf(), FinitePopulation::sidecar_path(population)],
        vec![out.to_path_buf(), report_path],
    ))
}

fn run_fit(sample_path: &Path, config: &FitConfig, out_dir: &Path) -> CliResult<FileLists> {
    config.validate()?;
    let sample = load_sample(sample_path)?;
    let draws = fit(&sample, config)?;
    ensure_dir(out_dir)?;
    let draws_path = out_dir.join("draws.csv");
    let summary_path = out_dir.join("summary.json");
    draws.write_csv(&draws_path)?;
    #[derive(Serialize)]
    struct Context<'a> {
        seed: u64,
        sample: &'a Path,
        n: usize,
        config: &'a FitConfig,
    }
    let ctx = Context {
        seed: config.seed,
        sample: sample_path,
        n: sample.n(),
        config,
    };
    draws.write_summary_json(&ctx, &summary_path)?;
    Ok((vec![sample_path.to_path_buf()], vec![draws_path, summary_path]))
}

fn run_diagnose(
    population: &Path,
    sizes: &[usize],
    size_power: f64,
    replicates: usize,
    seed: u64,
    out_dir: &Path,
) -> CliResult<FileLists> {
    if sizes.is_empty() || replicates == 0 {
        return Err(CliError::Config("diagnose needs at least one size and one replicate".into()));
    }
    let pop = load_population(population)?;
    let mut reports = Vec::new();
    for &n in sizes {
        let design = SamplingDesign::pps(n).with_power(size_power);
        design.validate(pop.n_units())?;
        let probs = compute_inclusion_probs(&pop, &design)?;
        let samples = (0..replicates)
            .map(|r| draw_sample(&pop, &probs, &design, pseudopost::rng::derive_seed(seed, &[n as u64, r as u64])))
            .collect::<Result<Vec<_>, _>>()?;
        reports.push(design_report(&pop, &design, &probs, &samples)?);
    }
    let distributions = summarize_distributions(&pop, &informative_samples(&pop, sizes, size_power, seed)?);
    ensure_dir(out_dir)?;
    let design_path = out_dir.join("design_report.json");
    let dist_path = out_dir.join("distributions.json");
    write_json(&reports, &design_path)?;
    write_json(&distributions, &dist_path)?;
    let outputs = vec![design_path, dist_path];
    Ok((vec![population.to_path_buf(), FinitePopulation::sidecar_path(population)], outputs))
}

fn run_study_files(config: &StudyConfig, out_dir: &Path) -> CliResult<FileLists> {
    config.validate()?;
    let inputs = match &config.population {
        pseudopost::simulation::PopulationSource::Load { path } => {
            vec![path.clone(), FinitePopulation::sidecar_path(path)]
        }
        _ => vec![],
    };
    let result = run_study(config)?;
    ensure_dir(out_dir)?;
    let tidy = out_dir.join("replicates.csv");
    let agg = out_dir.join("aggregate.json");
    result.write_tidy_csv(&tidy)?;
    result.write_aggregate_json(&agg)?;
    let mut outputs = vec![tidy, agg];
    if let Some(reference) = result.reference_model() {
        let reference = reference?;
        let pop = config.population.resolve()?;
        let rows = contraction_curve(&pop, &reference, &result.contraction_inputs()?)?;
        let path = out_dir.join("contraction.csv");
        let focus = &result.covariate_names[config.focus.covariate];
        write_contraction_csv(&rows, focus, &result.response_names, &path)?;
        outputs.push(path);
    }
    if !result.failures.is_empty() {
        let path = out_dir.join("failures.json");
        write_json(&result.failures, &path)?;
        outputs.push(path);
    }
    Ok((inputs, outputs))
}

pub fn cmd_generate(config_path: &Path, out: &Path) -> CliResult<RunManifest> {
    let config = read_generate_config(config_path)?;
    execute(&Invocation::Generate {
        config,
        out: out.to_path_buf(),
    })
}

/// Design flags of the `sample` command.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleArgs {
    pub kind: DesignKind,
    pub n: usize,
    pub power: f64,
    pub seed: u64,
}

impl Default for SampleArgs {
    fn default() -> Self {
        SampleArgs {
            kind: DesignKind::PpsFixedSize,
            n: 500,
            power: DEFAULT_SIZE_POWER,
            seed: 1,
        }
    }
}

pub fn cmd_sample(population: &Path, args: SampleArgs, out: &Path) -> CliResult<RunManifest> {
    let design = SamplingDesign::new(args.kind, args.n).with_power(args.power);
    execute(&Invocation::Sample {
        population: population.to_path_buf(),
        design,
        seed: args.seed,
        out: out.to_path_buf(),
    })
}

pub fn cmd_fit(sample: &Path, config: FitConfig, out_dir: &Path) -> CliResult<RunManifest> {
    execute(&Invocation::Fit {
        sample: sample.to_path_buf(),
        config,
        out_dir: out_dir.to_path_buf(),
    })
}

pub fn cmd_diagnose(
    population: &Path,
    sizes: Vec<usize>,
    size_power: f64,
    replicates: usize,
    seed: u64,
    out_dir: &Path,
) -> CliResult<RunManifest> {
    execute(&Invocation::Diagnose {
        population: population.to_path_buf(),
        sizes,
        size_power,
        replicates,
        seed,
        out_dir: out_dir.to_path_buf(),
    })
}

pub fn cmd_study(config_path: &Path, out_dir: &Path) -> CliResult<RunManifest> {
    let config = read_study_config(config_path)?;
    execute(&Invocation::Study {
        config,
        out_dir: out_dir.to_path_buf(),
    })
}

/// Digests that differ between two manifests, as `(path, old, new)`.
/// An output whose digest changed: path, recorded digest, new digest.
pub type DigestMismatch = (PathBuf, String, String);

pub fn digest_mismatches(old: &RunManifest, new: &RunManifest) -> Vec<DigestMismatch> {
    let mut out = Vec::new();
    for a in &old.outputs {
        match new.outputs.iter().find(|b| b.path == a.path) {
            Some(b) if b.sha256 == a.sha256 => {}
            Some(b) => out.push((a.path.clone(), a.sha256.clone(), b.sha256.clone())),
            None => out.push((a.path.clone(), a.sha256.clone(), String::new())),
        }
    }
    out
}

/// Re-runs the invocation recorded in a manifest and reports digest mismatches.
pub fn replay(manifest_path: &Path) -> CliResult<(RunManifest, Vec<DigestMismatch>)> {
    let old = RunManifest::read(manifest_path)?;
    let new = execute(&old.invocation)?;
    let diff = digest_mismatches(&old, &new);
    Ok((new, diff))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suffix_replaces_extension() {
        assert_eq!(with_suffix(Path::new("a/b/pop.csv"), "manifest.json"), PathBuf::from("a/b/pop.manifest.json"));
    }

    #[test]
    fn missing_size_names_the_field() {
        let text = r#"
seed = 1
[population]
n_units = 10
[population.covariates]
kind = "intercept-only"
"#;
        let err = parse_toml::<GenerateConfig>(text, Path::new("g.toml")).unwrap_err();
        assert_eq!(err.exit_code(), EXIT_CONFIG);
        assert!(err.to_string().contains("size"), "{err}");
    }

    #[test]
    fn study_overrides_merge_onto_preset() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.toml");
        fs::write(&p, "preset = \"desk-scale\"\nn_replicates = 3\n[fit]\nn_iter = 300\n").unwrap();
        let c = read_study_config(&p).unwrap();
        assert_eq!(c.n_replicates, 3);
        assert_eq!(c.fit.n_iter, 300);
        assert_eq!(c.fit.burn_in, 1000);
        assert_eq!(c.sample_sizes, vec![500, 2500]);
        fs::write(&p, "preset = \"huge\"\n").unwrap();
        assert_eq!(read_study_config(&p).unwrap_err().exit_code(), EXIT_CONFIG);
    }

    #[test]
    fn error_mapping() {
        let e: CliError = pseudopost::Error::InvalidInput("x".into()).into();
        assert_eq!(e.exit_code(), EXIT_CONFIG);
        let e: CliError = pseudopost::Error::Numerical("x".into()).into();
        assert_eq!(e.exit_code(), EXIT_NUMERICAL);
        let e: CliError = pseudopost::population::load_population(Path::new("/nonexistent/p.csv"))
            .map(|_| ())
            .unwrap_err()
            .into();
        assert_eq!(e.exit_code(), EXIT_IO);
    }
}
