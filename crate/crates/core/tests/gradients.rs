//! Central finite-difference checks of the analytic gradient for every
//! model structure, size model, and parameterization.

use ppscluster::design::{draw_sample, DesignSpec, WithinDesign};
use ppscluster::mcmc::{log_posterior, ModelContext, OutcomeModelKind, OutcomeModelSpec};
use ppscluster::population::{generate_frame, generate_population, DgpHyper, FrameSource, OutcomeKind};
use ppscluster::rng::rng_from_seed;
use ppscluster::sizes::SizeModelKind;
use ppscluster::TwoStageSample;
use rand::Rng;

fn sample_for(outcome: OutcomeKind, js: usize, seed: u64) -> TwoStageSample {
    let mut rng = rng_from_seed(seed);
    let j = (js * 2 + 10).max(30);
    let frame = generate_frame(&FrameSource::PoissonRate(80.0), j, js, &mut rng).unwrap();
    let pop = generate_population(&frame, &DgpHyper::default(), outcome, &mut rng).unwrap();
    let design = DesignSpec { js, within: WithinDesign::FixedCount(8) };
    draw_sample(&pop, &design, &mut rng).unwrap()
}

fn check_gradient(ctx: &ModelContext, points: usize, seed: u64) {
    let dim = ctx.layout.dim;
    let mut rng = rng_from_seed(seed);
    let h = 1e-5;
    let mut grad = vec![0.0; dim];
    let mut scratch = vec![0.0; dim];
    for point in 0..points {
        let z: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let lp = log_posterior(ctx, &z, &mut grad);
        assert!(lp.is_finite(), "non-finite density at a random valid point");
        for i in 0..dim {
            let mut zp = z.clone();
            zp[i] += h;
            let fp = log_posterior(ctx, &zp, &mut scratch);
            zp[i] -= 2.0 * h;
            let fm = log_posterior(ctx, &zp, &mut scratch);
            let fd = (fp - fm) / (2.0 * h);
            let tol = 1e-4 * grad[i].abs().max(1.0);
            assert!(
                (fd - grad[i]).abs() <= tol,
                "{} point {point} param {} ({}): fd {fd} vs analytic {}",
                ctx.layout.names[i],
                i,
                ctx.layout.names[i],
                grad[i]
            );
        }
    }
}

fn spec(kind: OutcomeModelKind, outcome: OutcomeKind, size: SizeModelKind, noncentered: bool) -> OutcomeModelSpec {
    let mut s = OutcomeModelSpec::new(kind, outcome, size).unwrap();
    s.noncentered = noncentered;
    s
}

#[test]
fn continuous_slope_gradients() {
    for &js in &[10usize, 25] {
        let sample = sample_for(OutcomeKind::Continuous, js, 100 + js as u64);
        for size in [
            SizeModelKind::Known,
            SizeModelKind::BayesianBootstrap,
            SizeModelKind::NegBin,
            SizeModelKind::Lognormal,
        ] {
            for nc in [false, true] {
                let ctx = ModelContext::new(
                    spec(OutcomeModelKind::ContinuousSlope, OutcomeKind::Continuous, size, nc),
                    &sample,
                )
                .unwrap();
                check_gradient(&ctx, 12, 7 + js as u64);
            }
        }
    }
}

#[test]
fn binary_intercept_gradients() {
    for &js in &[10usize, 25] {
        let sample = sample_for(OutcomeKind::Binary, js, 300 + js as u64);
        for size in [
            SizeModelKind::Known,
            SizeModelKind::BayesianBootstrap,
            SizeModelKind::NegBin,
            SizeModelKind::Lognormal,
        ] {
            for nc in [false, true] {
                let ctx = ModelContext::new(
                    spec(OutcomeModelKind::BinaryIntercept, OutcomeKind::Binary, size, nc),
                    &sample,
                )
                .unwrap();
                check_gradient(&ctx, 12, 11 + js as u64);
            }
        }
    }
}

#[test]
fn cluster_inds_only_gradients() {
    let cont = sample_for(OutcomeKind::Continuous, 10, 500);
    let bin = sample_for(OutcomeKind::Binary, 10, 501);
    for nc in [false, true] {
        let ctx = ModelContext::new(
            spec(OutcomeModelKind::ClusterIndsOnly, OutcomeKind::Continuous, SizeModelKind::Known, nc),
            &cont,
        )
        .unwrap();
        check_gradient(&ctx, 15, 21);
        let ctx = ModelContext::new(
            spec(OutcomeModelKind::ClusterIndsOnly, OutcomeKind::Binary, SizeModelKind::Known, nc),
            &bin,
        )
        .unwrap();
        check_gradient(&ctx, 15, 22);
    }
}

#[test]
fn negbin_uses_cv_mode_only_for_small_js() {
    let small = sample_for(OutcomeKind::Continuous, 10, 600);
    let big = sample_for(OutcomeKind::Continuous, 25, 601);
    let ctx_small = ModelContext::new(
        spec(OutcomeModelKind::ContinuousSlope, OutcomeKind::Continuous, SizeModelKind::NegBin, false),
        &small,
    )
    .unwrap();
    let ctx_big = ModelContext::new(
        spec(OutcomeModelKind::ContinuousSlope, OutcomeKind::Continuous, SizeModelKind::NegBin, false),
        &big,
    )
    .unwrap();
    assert_eq!(ctx_small.layout.negbin_mode, Some(ppscluster::mcmc::NegBinMode::CvMean));
    assert_eq!(ctx_big.layout.negbin_mode, Some(ppscluster::mcmc::NegBinMode::WeakCvMean));
}
