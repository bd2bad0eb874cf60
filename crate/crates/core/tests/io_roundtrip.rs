use pseudopost::design::{compute_inclusion_probs, draw_sample, load_sample, save_sample, SamplingDesign};
use pseudopost::population::{generate_population, load_population, save_population, GeneratingParams, PopulationConfig};

fn jolts(n: usize) -> pseudopost::population::FinitePopulation {
    generate_population(&PopulationConfig::synthetic_jolts(n), &GeneratingParams::synthetic_jolts(), 5).unwrap()
}

#[test]
fn population_csv_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let pop = jolts(300);
    let path = dir.path().join("pop.csv");
    save_population(&pop, &path).unwrap();
    let back = load_population(&path).unwrap();
    assert_eq!(back, pop);
}

#[test]
fn sample_csv_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let pop = jolts(300);
    let design = SamplingDesign::pps(40);
    let probs = compute_inclusion_probs(&pop, &design).unwrap();
    let s = draw_sample(&pop, &probs, &design, 8).unwrap();
    let path = dir.path().join("s.csv");
    save_sample(&pop, &s, &path).unwrap();
    let back = load_sample(&path).unwrap();
    assert_eq!(back.indices, s.indices);
    assert_eq!(back.responses, s.responses);
    assert_eq!(back.covariates, s.covariates);
    assert_eq!(back.pi, s.pi);
    assert_eq!(back.raw_weights, s.raw_weights);
    assert_eq!(back.normalized_weights, s.normalized_weights);
}

#[test]
fn truncated_population_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pop.csv");
    save_population(&jolts(50), &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let cut: String = text.lines().take(3).map(|l| format!("{}\n", &l[..l.len() / 2])).collect();
    std::fs::write(&path, cut).unwrap();
    assert!(load_population(&path).is_err());
}
