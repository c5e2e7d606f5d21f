//! Simulation-based calibration of the sampler on a reduced continuous
//! model: parameters drawn from the prior, data simulated forward, and the
//! rank of each true parameter within thinned posterior draws must be
//! uniform.

use ppscluster::design::{SampledCluster, SampledUnit, TwoStageSample};
use ppscluster::mcmc::{
    run_chains, ModelContext, OutcomeModelKind, OutcomeModelSpec, PriorBlock, SamplerConfig,
    ScalePrior,
};
use ppscluster::population::{centered_log_sizes, CenterReference, OutcomeKind};
use ppscluster::rng::{derive_seed, rng_from_seed};
use ppscluster::sizes::SizeModelKind;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use statrs::distribution::{ChiSquared, ContinuousCDF};

const JS: usize = 10;
const NJ: usize = 10;
const REPLICATES: usize = 200;
const THINNED: usize = 99;

struct Fixture {
    sizes: Vec<u64>,
    x: Vec<Vec<f64>>, // already shifted to mean zero over sampled units
    c_log: Vec<f64>,
}

fn fixture() -> Fixture {
    let mut rng = rng_from_seed(4242);
    let sizes: Vec<u64> = (0..JS).map(|_| 80 + rng.gen_range(0..60) as u64).collect();
    let mut x: Vec<Vec<f64>> =
        (0..JS).map(|_| (0..NJ).map(|_| rng.gen_range(20..=45) as f64).collect()).collect();
    let mean = x.iter().flatten().sum::<f64>() / (JS * NJ) as f64;
    for c in &mut x {
        for v in c {
            *v -= mean;
        }
    }
    let c_log = centered_log_sizes(&sizes, CenterReference::SampledOnly).unwrap().values;
    Fixture { sizes, x, c_log }
}

fn priors() -> PriorBlock {
    PriorBlock {
        loc_sd: 1.0,
        sigma_beta_prior: ScalePrior::HalfNormal(0.5),
        sigma_y_prior: ScalePrior::HalfNormal(0.75),
        ..PriorBlock::default()
    }
}

struct Truth {
    alpha0: f64,
    alpha1: f64,
    sigma_y: f64,
}

fn simulate(fx: &Fixture, rng: &mut rand_chacha::ChaCha8Rng) -> (TwoStageSample, Truth) {
    let std = Normal::new(0.0, 1.0).unwrap();
    let alpha0 = std.sample(rng);
    let gamma0 = std.sample(rng);
    let alpha1 = std.sample(rng);
    let gamma1 = std.sample(rng);
    let sigma_b0 = (std.sample(rng) * 0.5f64).abs();
    let sigma_b1 = (std.sample(rng) * 0.5f64).abs();
    let sigma_y = (std.sample(rng) * 0.75f64).abs();
    let n_total: u64 = fx.sizes.iter().sum::<u64>() + 3000;
    let clusters: Vec<SampledCluster> = (0..JS)
        .map(|j| {
            let b0 = alpha0 + gamma0 * fx.c_log[j] + sigma_b0 * std.sample(rng);
            let b1 = alpha1 + gamma1 * fx.c_log[j] + sigma_b1 * std.sample(rng);
            let units: Vec<SampledUnit> = (0..NJ)
                .map(|i| {
                    let x = fx.x[j][i];
                    let y = b0 + b1 * x + sigma_y * std.sample(rng);
                    SampledUnit { unit_id: i, x, y }
                })
                .collect();
            SampledCluster {
                cluster_id: j,
                size: fx.sizes[j],
                pi_j: JS as f64 * fx.sizes[j] as f64 / n_total as f64,
                pi_i_given_j: NJ as f64 / fx.sizes[j] as f64,
                units,
            }
        })
        .collect();
    let sample = TwoStageSample {
        clusters,
        total_units: n_total,
        total_clusters: 40,
        xbar_all: vec![0.0; 40],
        xbar_pop: 0.0,
        outcome: OutcomeKind::Continuous,
    };
    (sample, Truth { alpha0, alpha1, sigma_y })
}

fn rank_of(truth: f64, thinned: &[f64]) -> usize {
    thinned.iter().filter(|&&v| v < truth).count()
}

fn chi2_pvalue(ranks: &[usize]) -> f64 {
    // ranks take values 0..=THINNED; 10 equal bins of (THINNED+1)/10
    let bins = 10usize;
    let per = (THINNED + 1) / bins;
    let mut counts = vec![0f64; bins];
    for &r in ranks {
        counts[(r / per).min(bins - 1)] += 1.0;
    }
    let expected = ranks.len() as f64 / bins as f64;
    let stat: f64 = counts.iter().map(|&c| (c - expected) * (c - expected) / expected).sum();
    let chi = ChiSquared::new((bins - 1) as f64).unwrap();
    1.0 - chi.cdf(stat)
}

#[test]
fn sampler_ranks_are_uniform_under_the_prior() {
    let fx = fixture();
    let mut spec = OutcomeModelSpec::new(
        OutcomeModelKind::ContinuousSlope,
        OutcomeKind::Continuous,
        SizeModelKind::Known,
    )
    .unwrap();
    spec.priors = priors();

    let mut ranks_a0 = Vec::with_capacity(REPLICATES);
    let mut ranks_a1 = Vec::with_capacity(REPLICATES);
    let mut ranks_sy = Vec::with_capacity(REPLICATES);
    let mut failures = 0usize;
    for rep in 0..REPLICATES {
        let mut rng = rng_from_seed(derive_seed(31337, "sbc", rep as u64));
        let (sample, truth) = simulate(&fx, &mut rng);
        let ctx = ModelContext::new(spec.clone(), &sample).unwrap();
        let cfg = SamplerConfig {
            chains: 2,
            warmup: 500,
            draws: 500,
            max_draws: 2000,
            draws_step: 500,
            seed: derive_seed(777, "sbc-fit", rep as u64),
            ..SamplerConfig::default()
        };
        let fit = match run_chains(&ctx, &cfg) {
            Ok((draws, _diag)) => draws,
            Err(_) => {
                failures += 1;
                continue;
            }
        };
        let pull = |name: &str| -> Vec<f64> {
            let idx = fit.param_index(name).unwrap();
            let all: Vec<f64> = fit.chains.iter().flatten().map(|d| d[idx]).collect();
            // thin to THINNED draws to damp autocorrelation
            (0..THINNED)
                .map(|i| all[i * (all.len() - 1) / (THINNED - 1)])
                .collect()
        };
        ranks_a0.push(rank_of(truth.alpha0, &pull("alpha0")));
        ranks_a1.push(rank_of(truth.alpha1, &pull("alpha1")));
        ranks_sy.push(rank_of(truth.sigma_y, &pull("sigma_y")));
    }
    assert!(failures <= REPLICATES / 20, "too many discarded SBC replicates: {failures}");
    for (name, ranks) in [("alpha0", &ranks_a0), ("alpha1", &ranks_a1), ("sigma_y", &ranks_sy)] {
        let p = chi2_pvalue(ranks);
        println!("SBC {name}: chi-square p = {p:.4} over {} replicates", ranks.len());
        assert!(p > 0.01, "SBC uniformity failed for {name}: p = {p}");
    }
}

#[test]
#[ignore]
fn sbc_diagnose() {
    let fx = fixture();
    let mut spec = OutcomeModelSpec::new(
        OutcomeModelKind::ContinuousSlope,
        OutcomeKind::Continuous,
        SizeModelKind::Known,
    )
    .unwrap();
    spec.priors = priors();
    for rep in 0..30 {
        let mut rng = rng_from_seed(derive_seed(31337, "sbc", rep as u64));
        let (sample, truth) = simulate(&fx, &mut rng);
        let ctx = ModelContext::new(spec.clone(), &sample).unwrap();
        let cfg = SamplerConfig {
            chains: 2,
            warmup: 500,
            draws: 500,
            max_draws: 1500,
            draws_step: 500,
            escalate: false,
            seed: derive_seed(777, "sbc-fit", rep as u64),
            ..SamplerConfig::default()
        };
        let (draws, diag) = run_chains(&ctx, &cfg).unwrap();
        let worst = diag
            .params
            .iter()
            .max_by(|a, b| {
                let ra = if a.rhat.is_finite() { a.rhat } else { -1.0 };
                let rb = if b.rhat.is_finite() { b.rhat } else { -1.0 };
                ra.partial_cmp(&rb).unwrap()
            })
            .unwrap();
        println!(
            "rep {rep}: sigma_y_true={:.3} max_rhat={:.3} ({}) min_ess={:.0} div={}",
            truth.sigma_y, diag.max_rhat, worst.name, diag.min_ess, diag.divergences
        );
    }
}
