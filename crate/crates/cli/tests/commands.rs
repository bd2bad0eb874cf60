use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use pseudopost::design::{load_sample, DesignKind};
use pseudopost::model::FitConfig;
use pseudopost_cli::*;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pseudopost"))
}

fn small_population(dir: &Path) -> PathBuf {
    let out = dir.join("pop.csv");
    cmd_generate(&configs().join("small_gaussian.toml"), &out).unwrap();
    out
}

fn short_fit(weighted: bool) -> FitConfig {
    FitConfig {
        n_iter: 200,
        burn_in: 100,
        seed: 9,
        weighted,
        ..FitConfig::default()
    }
}

#[test]
fn generate_writes_population_sidecar_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let m = cmd_generate(&configs().join("small_gaussian.toml"), &dir.path().join("pop.csv")).unwrap();
    assert_eq!(m.command, "generate");
    assert_eq!(m.master_seed, 11);
    assert_eq!(m.outputs.len(), 2);
    assert!(dir.path().join("pop.json").exists());
    let manifest = RunManifest::read(&dir.path().join("pop.manifest.json")).unwrap();
    assert_eq!(manifest.outputs, m.outputs);
}

#[test]
fn generate_twice_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    small_population(a.path());
    small_population(b.path());
    let da = digest_file(&a.path().join("pop.csv")).unwrap();
    let db = digest_file(&b.path().join("pop.csv")).unwrap();
    assert_eq!(da.sha256, db.sha256);
}

#[test]
fn missing_size_recipe_exits_2_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(
        &cfg,
        "seed = 1\n[population]\nn_units = 10\n[population.covariates]\nkind = \"intercept-only\"\n",
    )
    .unwrap();
    let out = bin()
        .args(["generate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("p.csv"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_CONFIG));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("size"), "{err}");
}

#[test]
fn srs_of_full_size_is_a_census() {
    let dir = tempfile::tempdir().unwrap();
    let pop = small_population(dir.path());
    let out = dir.path().join("census.csv");
    let args = SampleArgs {
        kind: DesignKind::Srs,
        n: 400,
        ..SampleArgs::default()
    };
    cmd_sample(&pop, args, &out).unwrap();
    let s = load_sample(&out).unwrap();
    assert_eq!(s.n(), 400);
    assert!(s.raw_weights.iter().all(|&w| w == 1.0));
    assert!(s.normalized_weights.iter().all(|&w| w == 1.0));
    assert!(dir.path().join("census.design.json").exists());
}

#[test]
fn pps_report_on_synthetic_jolts() {
    let dir = tempfile::tempdir().unwrap();
    let pop = dir.path().join("jolts.csv");
    cmd_generate(&configs().join("synthetic_jolts.toml"), &pop).unwrap();
    let out = dir.path().join("s.csv");
    let args = SampleArgs {
        n: 500,
        ..SampleArgs::default()
    };
    cmd_sample(&pop, args, &out).unwrap();
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("s.design.json")).unwrap()).unwrap();
    assert!(report["certainty_count"].as_u64().unwrap() > 0);
    assert!(report["cv_pi"].as_f64().unwrap() > 1.0);
    assert_eq!(report["realized_n_min"].as_u64(), Some(500));

    // default run lengths on the n = 500 sample
    let fit_dir = dir.path().join("fit");
    cmd_fit(&out, FitConfig::default(), &fit_dir).unwrap();
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(fit_dir.join("summary.json")).unwrap()).unwrap();
    let coefficients = summary["parameters"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|p| p["name"].as_str().unwrap().starts_with("B_"))
        .count();
    assert_eq!(coefficients, 18);
    assert_eq!(summary["n_draws"].as_u64(), Some(2500));
}

#[test]
fn zero_sample_size_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let pop = small_population(dir.path());
    let out = bin()
        .args(["sample", "--kind", "pps", "--n", "0", "--population"])
        .arg(&pop)
        .arg("--out")
        .arg(dir.path().join("s.csv"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_CONFIG), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn uniform_weights_give_identical_draw_files() {
    let dir = tempfile::tempdir().unwrap();
    let pop = small_population(dir.path());
    let census = dir.path().join("census.csv");
    cmd_sample(&pop, SampleArgs { kind: DesignKind::Srs, n: 400, ..SampleArgs::default() }, &census).unwrap();
    let a = cmd_fit(&census, short_fit(true), &dir.path().join("w")).unwrap();
    let b = cmd_fit(&census, short_fit(false), &dir.path().join("u")).unwrap();
    assert_eq!(a.outputs[0].sha256, b.outputs[0].sha256);
}

#[test]
fn burn_in_not_below_n_iter_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let pop = small_population(dir.path());
    let s = dir.path().join("s.csv");
    cmd_sample(&pop, SampleArgs { n: 100, ..SampleArgs::default() }, &s).unwrap();
    let out = bin()
        .args(["fit", "--n-iter", "100", "--burn-in", "100", "--sample"])
        .arg(&s)
        .arg("--out-dir")
        .arg(dir.path().join("f"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_CONFIG));
}

#[test]
fn missing_population_file_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("study.toml");
    fs::write(
        &cfg,
        "preset = \"desk-scale\"\n[population]\nsource = \"load\"\npath = \"/nonexistent/pop.csv\"\n",
    )
    .unwrap();
    let out = bin()
        .args(["study", "--config"])
        .arg(&cfg)
        .arg("--out-dir")
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(EXIT_IO), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn small_study_and_replay_reproduce_digests() {
    let dir = tempfile::tempdir().unwrap();
    let pop = small_population(dir.path());
    let cfg = dir.path().join("study.toml");
    fs::write(
        &cfg,
        format!(
            "sample_sizes = [60, 120]\nn_replicates = 2\n[fit]\nn_iter = 60\nburn_in = 30\n\
             [focus]\ncovariate = 1\nresponse = 0\n[population]\nsource = \"load\"\npath = {:?}\n",
            pop.display().to_string()
        ),
    )
    .unwrap();
    let out_dir = dir.path().join("study");
    let m = cmd_study(&cfg, &out_dir).unwrap();
    let names: Vec<String> = m
        .outputs
        .iter()
        .map(|f| f.path.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    assert_eq!(names, ["replicates.csv", "aggregate.json", "contraction.csv"]);
    let agg: serde_json::Value = serde_json::from_str(&fs::read_to_string(out_dir.join("aggregate.json")).unwrap()).unwrap();
    // population posterior once, three sampled methods at two sizes; 4 coefficients each
    assert_eq!(agg["aggregates"].as_array().unwrap().len(), (1 + 3 * 2) * 4);

    let (_, diff) = rayon::ThreadPoolBuilder::new()
        .num_threads(3)
        .build()
        .unwrap()
        .install(|| replay(&out_dir.join("manifest.json")))
        .unwrap();
    assert!(diff.is_empty(), "{diff:?}");
}

#[test]
fn diagnose_reports_every_size() {
    let dir = tempfile::tempdir().unwrap();
    let pop = small_population(dir.path());
    let out = dir.path().join("diag");
    cmd_diagnose(&pop, vec![50, 100], 0.5, 5, 3, &out).unwrap();
    let reports: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("design_report.json")).unwrap()).unwrap();
    assert_eq!(reports.as_array().unwrap().len(), 2);
    let dists: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("distributions.json")).unwrap()).unwrap();
    assert_eq!(dists.as_array().unwrap().len(), 3);
}
