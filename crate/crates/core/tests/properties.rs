//! Property tests for structural invariants.

use ppscluster::design::{SampledCluster, SampledUnit, TwoStageSample};
use ppscluster::population::{
    centered_log_sizes, generate_frame, read_frame_file, CenterReference, FrameSource, OutcomeKind,
};
use ppscluster::rng::rng_from_seed;
use ppscluster::sizes::{bb_posterior_nonsampled, ObservedSizes};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn centered_logs_average_to_zero(sizes in prop::collection::vec(1u64..100_000, 1..40)) {
        let c = centered_log_sizes(&sizes, CenterReference::All).unwrap();
        let mean = c.values.iter().sum::<f64>() / c.values.len() as f64;
        prop_assert!(mean.abs() < 1e-9);
        // centering a member with the stored constant reproduces its value
        prop_assert!((c.center_size(sizes[0]) - c.values[0]).abs() < 1e-12);
    }

    #[test]
    fn generated_frames_respect_no_certainty(lambda in 20.0f64..2000.0, j in 10usize..60, js_frac in 0.1f64..0.45) {
        let js = ((j as f64 * js_frac) as usize).max(1);
        let mut rng = rng_from_seed(7);
        let frame = generate_frame(&FrameSource::PoissonRate(lambda), j, js, &mut rng).unwrap();
        prop_assert!(frame.no_certainty(js));
        prop_assert_eq!(frame.num_clusters(), j);
    }

    #[test]
    fn bb_draws_stay_in_observed_support(
        raw in prop::collection::vec(1u64..500, 2..25),
        extra in 1usize..30,
    ) {
        let total: u64 = raw.iter().sum::<u64>() * 20; // keeps every pi below 1
        let j = raw.len() + extra;
        let obs = ObservedSizes::new(raw.clone(), total, j).unwrap();
        let mut rng = rng_from_seed(11);
        let draws = bb_posterior_nonsampled(&obs, &mut rng).unwrap();
        prop_assert_eq!(draws.len(), extra);
        for d in draws {
            prop_assert!(raw.contains(&d));
        }
    }

    #[test]
    fn hajek_point_scale_free_in_first_stage_weights(
        scale in 0.05f64..0.95,
        ys in prop::collection::vec(-5.0f64..5.0, 4),
    ) {
        let mk = |pi_scale: f64| -> TwoStageSample {
            TwoStageSample {
                clusters: vec![
                    SampledCluster {
                        cluster_id: 0,
                        size: 10,
                        pi_j: 0.5 * pi_scale,
                        pi_i_given_j: 0.2,
                        units: vec![
                            SampledUnit { unit_id: 0, x: 0.0, y: ys[0] },
                            SampledUnit { unit_id: 1, x: 0.0, y: ys[1] },
                        ],
                    },
                    SampledCluster {
                        cluster_id: 1,
                        size: 20,
                        pi_j: 0.8 * pi_scale,
                        pi_i_given_j: 0.1,
                        units: vec![
                            SampledUnit { unit_id: 0, x: 0.0, y: ys[2] },
                            SampledUnit { unit_id: 1, x: 0.0, y: ys[3] },
                        ],
                    },
                ],
                total_units: 60,
                total_clusters: 5,
                xbar_all: vec![0.0; 5],
                xbar_pop: 0.0,
                outcome: OutcomeKind::Continuous,
            }
        };
        let a = ppscluster::estimators::hajek(&mk(1.0)).unwrap().point;
        let b = ppscluster::estimators::hajek(&mk(scale)).unwrap().point;
        prop_assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn frame_files_round_trip_through_comments(sizes in prop::collection::vec(1u64..1_000_000, 2..40)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("frame.txt");
        let mut text = String::from("# header comment\n\n");
        for (i, s) in sizes.iter().enumerate() {
            if i % 3 == 0 {
                text.push_str(&format!("{s} # trailing note\n"));
            } else {
                text.push_str(&format!("{s}\n"));
            }
        }
        std::fs::write(&path, text).unwrap();
        let back = read_frame_file(&path).unwrap();
        prop_assert_eq!(back, sizes);
    }
}
