use pseudopost::design::{compute_inclusion_probs, draw_sample, SamplingDesign};
use pseudopost::population::{generate_population, GeneratingParams, PopulationConfig};
use pseudopost::simulation::{informative_samples, summarize_distributions};

fn jolts() -> pseudopost::population::FinitePopulation {
    generate_population(&PopulationConfig::synthetic_jolts(4000), &GeneratingParams::synthetic_jolts(), 21).unwrap()
}

#[test]
fn pps_samples_shift_hires_upwards() {
    let pop = jolts();
    let samples = informative_samples(&pop, &[250, 500], 0.5, 3).unwrap();
    let rows = summarize_distributions(&pop, &samples);
    assert_eq!(rows.len(), 3);
    let pop_median = rows[0].quartiles[0].median;
    for r in &rows[1..] {
        assert!(r.quartiles[0].median > pop_median, "{}: {} vs {pop_median}", r.source, r.quartiles[0].median);
    }
}

#[test]
fn srs_quartiles_track_the_population() {
    let pop = jolts();
    let design = SamplingDesign::srs(1500);
    let probs = compute_inclusion_probs(&pop, &design).unwrap();
    let s = draw_sample(&pop, &probs, &design, 4).unwrap();
    let rows = summarize_distributions(&pop, &[("srs".into(), s)]);
    for (p, q) in rows[0].quartiles.iter().zip(&rows[1].quartiles) {
        // counts, so allow one unit of slack on top of a relative band
        for (a, b) in [(p.q25, q.q25), (p.median, q.median), (p.q75, q.q75)] {
            assert!((a - b).abs() <= 1.0 + 0.15 * a, "{a} vs {b}");
        }
    }
}
