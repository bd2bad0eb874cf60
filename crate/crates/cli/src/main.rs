use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pseudopost::design::{DesignKind, DEFAULT_SIZE_POWER};
use pseudopost_cli::{
    cmd_diagnose, cmd_fit, cmd_generate, cmd_sample, cmd_study, read_fit_config, replay, CliError, CliResult,
    RunManifest, SampleArgs, EXIT_CONFIG,
};

#[derive(Parser)]
#[command(name = "pseudopost", version, about = "Pseudo-posterior inference under informative sampling")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "PSEUDOPOST_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a finite population from a TOML config.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw a sample from a population CSV.
    Sample {
        #[arg(long)]
        population: PathBuf,
        /// pps, poisson or srs.
        #[arg(long, default_value = "pps")]
        kind: String,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = DEFAULT_SIZE_POWER)]
        power: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the Gibbs sampler on a sample CSV.
    Fit(FitArgs),
    /// Design characteristics and response quartiles of pps samples.
    Diagnose {
        #[arg(long)]
        population: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "500,1000,1500,2500")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = DEFAULT_SIZE_POWER)]
        power: f64,
        #[arg(long, default_value_t = 20)]
        replicates: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run the Monte Carlo study described by a TOML config.
    Study {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Re-run the command recorded in a manifest and compare output digests.
    Replay { manifest: PathBuf },
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    sample: PathBuf,
    /// TOML fit configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, conflicts_with = "unweighted")]
    weighted: bool,
    #[arg(long)]
    unweighted: bool,
    #[arg(long)]
    n_iter: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: PathBuf,
}

fn run(cli: Cli) -> CliResult<RunManifest> {
    match cli.command {
        Command::Generate { config, out } => cmd_generate(&config, &out),
        Command::Sample {
            population,
            kind,
            n,
            power,
            seed,
            out,
        } => {
            let kind: DesignKind = kind.parse()?;
            cmd_sample(&population, SampleArgs { kind, n, power, seed }, &out)
        }
        Command::Fit(a) => {
            let mut config = read_fit_config(a.config.as_deref())?;
            if a.weighted {
                config.weighted = true;
            }
            if a.unweighted {
                config.weighted = false;
            }
            config.n_iter = a.n_iter.unwrap_or(config.n_iter);
            config.burn_in = a.burn_in.unwrap_or(config.burn_in);
            config.thin = a.thin.unwrap_or(config.thin);
            config.seed = a.seed.unwrap_or(config.seed);
            cmd_fit(&a.sample, config, &a.out_dir)
        }
        Command::Diagnose {
            population,
            sizes,
            power,
            replicates,
            seed,
            out_dir,
        } => cmd_diagnose(&population, sizes, power, replicates, seed, &out_dir),
        Command::Study { config, out_dir } => cmd_study(&config, &out_dir),
        Command::Replay { manifest } => {
            let (m, diff) = replay(&manifest)?;
            for (path, old, new) in &diff {
                eprintln!("digest mismatch {}: {old} -> {new}", path.display());
            }
            if diff.is_empty() {
                Ok(m)
            } else {
                Err(CliError::Numerical(format!("{} output(s) differ from the manifest", diff.len())))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(w) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(w).build_global() {
            eprintln!("error: cannot set worker count: {e}");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    }
    match run(cli) {
        Ok(m) => {
            for f in &m.outputs {
                println!("{}  {}", f.sha256, f.path.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
