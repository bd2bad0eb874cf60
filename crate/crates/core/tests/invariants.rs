use nalgebra::DMatrix;
use proptest::prelude::*;
use pseudopost::design::{normalize_weights, pps_probabilities};
use pseudopost::mcmc::CholeskyFactor;

proptest! {
    #[test]
    fn normalized_weights_sum_to_n(raw in prop::collection::vec(1e-3f64..1e3, 1..200)) {
        let w = normalize_weights(&raw).unwrap();
        let n = raw.len() as f64;
        prop_assert!((w.iter().sum::<f64>() - n).abs() <= 1e-9 * n);
    }

    #[test]
    fn normalized_weights_ignore_scale(
        raw in prop::collection::vec(1e-3f64..1e3, 1..100),
        c in 1e-3f64..1e3,
    ) {
        let a = normalize_weights(&raw).unwrap();
        let scaled: Vec<f64> = raw.iter().map(|w| w * c).collect();
        let b = normalize_weights(&scaled).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-12 * x.max(1.0));
        }
    }

    #[test]
    fn pps_probabilities_are_valid(
        sizes in prop::collection::vec(1e-2f64..1e4, 20..300),
        frac in 0.01f64..0.9,
        power in 0.1f64..1.5,
    ) {
        let n = ((sizes.len() as f64 * frac) as usize).max(1);
        let (pi, certainty) = pps_probabilities(&sizes, n, power).unwrap();
        prop_assert!(pi.iter().all(|&p| p > 0.0 && p <= 1.0));
        prop_assert!((pi.iter().sum::<f64>() - n as f64).abs() < 1e-8 * n as f64);
        prop_assert_eq!(pi.iter().filter(|&&p| p == 1.0).count(), certainty);
    }

    #[test]
    fn cholesky_reconstructs(entries in prop::collection::vec(-3.0f64..3.0, 16), ridge in 0.1f64..5.0) {
        let a = DMatrix::from_column_slice(4, 4, &entries);
        let spd = &a * a.transpose() + DMatrix::identity(4, 4) * ridge;
        let c = CholeskyFactor::new(&spd, "test").unwrap();
        prop_assert_eq!(c.jitter(), 0.0);
        prop_assert!((c.reconstruct() - &spd).amax() <= 1e-10 * spd.amax());
    }
}
