//! Behavioral checks of the sampler, transforms, and predictive assembly.

use ppscluster::design::{DesignSpec, SampledCluster, SampledUnit, TwoStageSample, WithinDesign};
use ppscluster::mcmc::{
    compute_diagnostics, draw_nonsampled_sizes, log_posterior, predict_ybar, run_chains,
    ModelContext, NonsampledSizes, OutcomeModelKind, OutcomeModelSpec, PosteriorDraws, PriorBlock,
    SamplerConfig, ScalePrior,
};
use ppscluster::population::{
    generate_frame, generate_population, generate_population_with_params, DgpHyper, DgpParams,
    FrameSource, OutcomeKind,
};
use ppscluster::rng::{derive_seed, rng_from_seed};
use ppscluster::sizes::SizeModelKind;
use ppscluster::{design::draw_sample, sizes::known_sizes};
use rand::Rng;

fn continuous_sample(seed: u64, js: usize, nj: u64) -> (ppscluster::FinitePopulation, TwoStageSample) {
    let mut rng = rng_from_seed(seed);
    let frame = generate_frame(&FrameSource::PoissonRate(100.0), js * 3, js, &mut rng).unwrap();
    let pop = generate_population(&frame, &DgpHyper::default(), OutcomeKind::Continuous, &mut rng)
        .unwrap();
    let design = DesignSpec { js, within: WithinDesign::FixedCount(nj) };
    let sample = draw_sample(&pop, &design, &mut rng).unwrap();
    (pop, sample)
}

fn quick_cfg(seed: u64) -> SamplerConfig {
    SamplerConfig { warmup: 500, draws: 500, max_draws: 2000, draws_step: 500, seed, ..SamplerConfig::default() }
}

#[test]
fn identical_seeds_give_identical_draws() {
    let (_pop, sample) = continuous_sample(1, 8, 10);
    let spec = OutcomeModelSpec::new(
        OutcomeModelKind::ContinuousSlope,
        OutcomeKind::Continuous,
        SizeModelKind::Known,
    )
    .unwrap();
    let ctx = ModelContext::new(spec, &sample).unwrap();
    let cfg = quick_cfg(42);
    let (a, _) = run_chains(&ctx, &cfg).unwrap();
    let (b, _) = run_chains(&ctx, &cfg).unwrap();
    assert_eq!(a.n_chains(), b.n_chains());
    for (ca, cb) in a.chains.iter().zip(&b.chains) {
        for (da, db) in ca.iter().zip(cb) {
            for (va, vb) in da.iter().zip(db) {
                assert_eq!(va.to_bits(), vb.to_bits());
            }
        }
    }
}

#[test]
fn sigma_draws_are_strictly_positive() {
    let (_pop, sample) = continuous_sample(2, 8, 10);
    let spec = OutcomeModelSpec::new(
        OutcomeModelKind::ContinuousSlope,
        OutcomeKind::Continuous,
        SizeModelKind::Lognormal,
    )
    .unwrap();
    let ctx = ModelContext::new(spec, &sample).unwrap();
    let (draws, diag) = run_chains(&ctx, &quick_cfg(7)).unwrap();
    for name in ["sigma_beta0", "sigma_beta1", "sigma_y", "ln_tau"] {
        let idx = draws.param_index(name).unwrap();
        for chain in &draws.chains {
            for d in chain {
                assert!(d[idx] > 0.0, "{name} must stay positive");
            }
        }
    }
    assert!(diag.max_rhat.is_finite());
}

#[test]
fn transform_round_trip_is_exact() {
    let (_pop, sample) = continuous_sample(3, 10, 10);
    for nc in [false, true] {
        for size in [SizeModelKind::NegBin, SizeModelKind::Lognormal, SizeModelKind::Known] {
            let mut spec = OutcomeModelSpec::new(
                OutcomeModelKind::ContinuousSlope,
                OutcomeKind::Continuous,
                size,
            )
            .unwrap();
            spec.noncentered = nc;
            let ctx = ModelContext::new(spec, &sample).unwrap();
            let mut rng = rng_from_seed(17);
            for _ in 0..200 {
                let z: Vec<f64> =
                    (0..ctx.layout.dim).map(|_| rng.gen_range(-1.5..1.5)).collect();
                let theta = ctx.constrain(&z);
                let back = ctx.unconstrain(&theta);
                for (a, b) in z.iter().zip(&back) {
                    assert!((a - b).abs() < 1e-12, "round trip {a} vs {b} (nc={nc})");
                }
            }
        }
    }
}

#[test]
fn sigma_y_tail_decreases_monotonically() {
    let (_pop, sample) = continuous_sample(4, 8, 10);
    let spec = OutcomeModelSpec::new(
        OutcomeModelKind::ContinuousSlope,
        OutcomeKind::Continuous,
        SizeModelKind::Known,
    )
    .unwrap();
    let ctx = ModelContext::new(spec, &sample).unwrap();
    let mut z = vec![0.1; ctx.layout.dim];
    let lsy = ctx.layout.log_sigma_y.unwrap();
    let mut grad = vec![0.0; ctx.layout.dim];
    let mut prev = f64::INFINITY;
    for u in [5.0, 7.0, 9.0, 11.0, 13.0, 15.0] {
        z[lsy] = u;
        let lp = log_posterior(&ctx, &z, &mut grad);
        assert!(lp < prev, "density must decay along the sigma_y tail");
        prev = lp;
    }
}

#[test]
fn cluster_inds_density_ignores_size_permutations() {
    let (_pop, sample) = continuous_sample(5, 8, 10);
    let spec = OutcomeModelSpec::new(
        OutcomeModelKind::ClusterIndsOnly,
        OutcomeKind::Continuous,
        SizeModelKind::Known,
    )
    .unwrap();
    let ctx = ModelContext::new(spec.clone(), &sample).unwrap();

    // permute which observed size belongs to which sampled cluster
    let mut shuffled = sample.clone();
    let sizes: Vec<u64> = shuffled.clusters.iter().map(|c| c.size).collect();
    let js = sizes.len();
    for (i, c) in shuffled.clusters.iter_mut().enumerate() {
        c.size = sizes[(i + 3) % js];
    }
    let ctx2 = ModelContext::new(spec, &shuffled).unwrap();

    let mut g1 = vec![0.0; ctx.layout.dim];
    let mut g2 = vec![0.0; ctx2.layout.dim];
    let mut rng = rng_from_seed(23);
    for _ in 0..50 {
        let z: Vec<f64> = (0..ctx.layout.dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let a = log_posterior(&ctx, &z, &mut g1);
        let b = log_posterior(&ctx2, &z, &mut g2);
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
}

#[test]
fn conjugate_reduction_recovers_weighted_least_squares() {
    // gamma = 0, sigma_beta pinned near zero, flat-ish location priors:
    // the model collapses to a pooled linear regression
    let mut rng = rng_from_seed(6);
    let frame = generate_frame(&FrameSource::PoissonRate(100.0), 24, 8, &mut rng).unwrap();
    let j = frame.num_clusters();
    let params = DgpParams {
        alpha0: 0.9,
        alpha1: -0.4,
        gamma0: 0.0,
        gamma1: 0.0,
        sigma_beta0: 0.0,
        sigma_beta1: 0.0,
        sigma_y: 0.5,
        beta0: vec![0.9; j],
        beta1: vec![-0.4; j],
    };
    let pop =
        generate_population_with_params(&frame, params, OutcomeKind::Continuous, &mut rng).unwrap();
    let design = DesignSpec { js: 8, within: WithinDesign::FixedCount(20) };
    let sample = draw_sample(&pop, &design, &mut rng).unwrap();

    let mut spec = OutcomeModelSpec::new(
        OutcomeModelKind::ClusterIndsOnly,
        OutcomeKind::Continuous,
        SizeModelKind::Known,
    )
    .unwrap();
    spec.noncentered = true;
    spec.priors = PriorBlock {
        loc_sd: 100.0,
        sigma_beta_prior: ScalePrior::HalfNormal(1e-4),
        ..PriorBlock::default()
    };
    let ctx = ModelContext::new(spec, &sample).unwrap();
    let (draws, diag) = run_chains(&ctx, &quick_cfg(99)).unwrap();
    assert!(diag.max_rhat < 1.1);

    // closed-form OLS on the pooled sample (shifted covariate)
    let shift = ctx.data.x_shift;
    let (mut sw, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for c in &sample.clusters {
        for u in &c.units {
            let x = u.x - shift;
            sw += 1.0;
            sx += x;
            sy += u.y;
            sxx += x * x;
            sxy += x * u.y;
        }
    }
    let slope = (sxy - sx * sy / sw) / (sxx - sx * sx / sw);
    let intercept = (sy - slope * sx) / sw;

    let a0 = draws.param_index("alpha0").unwrap();
    let a1 = draws.param_index("alpha1").unwrap();
    let series0: Vec<f64> = draws.chains.iter().flatten().map(|d| d[a0]).collect();
    let series1: Vec<f64> = draws.chains.iter().flatten().map(|d| d[a1]).collect();
    let mean0 = series0.iter().sum::<f64>() / series0.len() as f64;
    let mean1 = series1.iter().sum::<f64>() / series1.len() as f64;
    let sd0 = (series0.iter().map(|v| (v - mean0) * (v - mean0)).sum::<f64>()
        / (series0.len() - 1) as f64)
        .sqrt();
    let sd1 = (series1.iter().map(|v| (v - mean1) * (v - mean1)).sum::<f64>()
        / (series1.len() - 1) as f64)
        .sqrt();
    assert!((mean0 - intercept).abs() < 2.0 * sd0, "{mean0} vs OLS {intercept} (sd {sd0})");
    assert!((mean1 - slope).abs() < 2.0 * sd1, "{mean1} vs OLS {slope} (sd {sd1})");
}

fn manual_draws(ctx: &ModelContext, natural: Vec<f64>, n: usize) -> PosteriorDraws {
    PosteriorDraws {
        names: ctx.layout.names.clone(),
        chains: vec![vec![natural; n]],
        divergences: 0,
        noncentered: false,
        attempts: 1,
    }
}

#[test]
fn degenerate_predictive_is_exactly_linear() {
    // sigma_y = 0, sigma_beta = 0, gamma = 0: every draw's ybar equals
    // alpha0 + alpha1 * xbar_pop
    let mut rng = rng_from_seed(8);
    let frame = generate_frame(&FrameSource::PoissonRate(60.0), 12, 4, &mut rng).unwrap();
    let j = frame.num_clusters();
    let (a0, a1) = (1.1, 0.3);
    let params = DgpParams {
        alpha0: a0,
        alpha1: a1,
        gamma0: 0.0,
        gamma1: 0.0,
        sigma_beta0: 0.0,
        sigma_beta1: 0.0,
        sigma_y: 0.0,
        beta0: vec![a0; j],
        beta1: vec![a1; j],
    };
    let pop =
        generate_population_with_params(&frame, params, OutcomeKind::Continuous, &mut rng).unwrap();
    let design = DesignSpec { js: 4, within: WithinDesign::FixedFraction(0.5) };
    let sample = draw_sample(&pop, &design, &mut rng).unwrap();
    let spec = OutcomeModelSpec::new(
        OutcomeModelKind::ContinuousSlope,
        OutcomeKind::Continuous,
        SizeModelKind::Known,
    )
    .unwrap();
    let ctx = ModelContext::new(spec, &sample).unwrap();

    // natural-scale draw consistent with the model's internal x shift:
    // y = a0 + a1 x = (a0 + a1*shift) + a1 (x - shift)
    let l = &ctx.layout;
    let mut nat = vec![0.0; l.dim];
    nat[l.alpha0] = a0 + a1 * ctx.data.x_shift;
    nat[l.log_sigma_b0] = 0.0; // sigma_beta0 = 0 on the natural scale
    for jj in 0..l.js {
        nat[l.b0_start + jj] = a0 + a1 * ctx.data.x_shift;
    }
    nat[l.alpha1.unwrap()] = a1;
    nat[l.log_sigma_b1.unwrap()] = 0.0;
    for jj in 0..l.js {
        nat[l.b1_start.unwrap() + jj] = a1;
    }
    nat[l.log_sigma_y.unwrap()] = 0.0;
    if let Some(gi) = l.gamma0 {
        nat[gi] = 0.0;
    }
    if let Some(gi) = l.gamma1 {
        nat[gi] = 0.0;
    }
    let draws = manual_draws(&ctx, nat, 50);
    let known = NonsampledSizes::Fixed(known_sizes(&pop, &sample));
    let mut prng = rng_from_seed(99);
    let ybars = predict_ybar(&ctx, &draws, &known, &mut prng).unwrap();
    let expect = a0 + a1 * sample.xbar_pop;
    for y in ybars {
        assert!((y - expect).abs() < 1e-10, "{y} vs {expect}");
    }
}

#[test]
fn census_predictive_recovers_truth_for_any_sigma() {
    // all clusters sampled, every unit observed: nothing left to predict
    let mut rng = rng_from_seed(9);
    let frame = generate_frame(&FrameSource::PoissonRate(30.0), 6, 3, &mut rng).unwrap();
    let pop = generate_population(&frame, &DgpHyper::default(), OutcomeKind::Continuous, &mut rng)
        .unwrap();
    let clusters: Vec<SampledCluster> = (0..frame.num_clusters())
        .map(|id| SampledCluster {
            cluster_id: id,
            size: frame.sizes()[id],
            pi_j: 1.0,
            pi_i_given_j: 1.0,
            units: pop.units[id]
                .iter()
                .enumerate()
                .map(|(i, u)| SampledUnit { unit_id: i, x: u.x, y: u.y })
                .collect(),
        })
        .collect();
    let sample = TwoStageSample {
        clusters,
        total_units: frame.total_units(),
        total_clusters: frame.num_clusters(),
        xbar_all: pop.xbar_all(),
        xbar_pop: pop.xbar_pop(),
        outcome: OutcomeKind::Continuous,
    };
    let spec = OutcomeModelSpec::new(
        OutcomeModelKind::ContinuousSlope,
        OutcomeKind::Continuous,
        SizeModelKind::Known,
    )
    .unwrap();
    let ctx = ModelContext::new(spec, &sample).unwrap();
    let mut nat = vec![0.5; ctx.layout.dim];
    nat[ctx.layout.log_sigma_y.unwrap()] = 3.0; // any sigma_y
    let draws = manual_draws(&ctx, nat, 20);
    let mut prng = rng_from_seed(1);
    let ybars =
        predict_ybar(&ctx, &draws, &NonsampledSizes::Fixed(Vec::new()), &mut prng).unwrap();
    for y in ybars {
        assert!((y - pop.truth.ybar).abs() < 1e-12);
    }
}

#[test]
fn gold_chain_agrees_with_standard_predictive_on_tiny_population() {
    // tiny population: a long single-chain run is the reference for the
    // posterior-predictive mean of ybar
    let mut rng = rng_from_seed(10);
    let frame = ppscluster::population::ClusterSizeFrame::from_sizes(vec![6, 7, 8, 5, 8, 6]).unwrap();
    let pop = generate_population(&frame, &DgpHyper::default(), OutcomeKind::Continuous, &mut rng)
        .unwrap();
    let design = DesignSpec { js: 3, within: WithinDesign::FixedFraction(0.5) };
    let sample = draw_sample(&pop, &design, &mut rng).unwrap();
    let mut spec = OutcomeModelSpec::new(
        OutcomeModelKind::ContinuousSlope,
        OutcomeKind::Continuous,
        SizeModelKind::BayesianBootstrap,
    )
    .unwrap();
    // a handful of observations cannot pin down half-Cauchy scale tails;
    // contain the tiny model so both runs sample the same proper posterior
    spec.noncentered = true;
    spec.priors = PriorBlock {
        loc_sd: 3.0,
        sigma_beta_prior: ScalePrior::HalfNormal(0.5),
        sigma_y_prior: ScalePrior::HalfNormal(1.0),
        ..PriorBlock::default()
    };
    let ctx = ModelContext::new(spec, &sample).unwrap();

    let standard = SamplerConfig { seed: 5, ..quick_cfg(5) };
    let (draws, diag) = run_chains(&ctx, &standard).unwrap();
    assert!(diag.max_rhat < 1.1);
    let mut prng = rng_from_seed(derive_seed(5, "predict", 0));
    let sizes = draw_nonsampled_sizes(&ctx, &draws, &mut prng).unwrap();
    let ybars = predict_ybar(&ctx, &draws, &sizes, &mut prng).unwrap();
    let mean_std = ybars.iter().sum::<f64>() / ybars.len() as f64;
    let var_std = ybars.iter().map(|y| (y - mean_std) * (y - mean_std)).sum::<f64>()
        / (ybars.len() - 1) as f64;

    let gold_cfg = SamplerConfig {
        chains: 2,
        warmup: 2000,
        draws: 50_000,
        max_draws: 50_000,
        draws_step: 1000,
        escalate: false,
        seed: 77,
        ..SamplerConfig::default()
    };
    let (gold, _) = run_chains(&ctx, &gold_cfg).unwrap();
    let mut grng = rng_from_seed(derive_seed(77, "predict", 0));
    let gsizes = draw_nonsampled_sizes(&ctx, &gold, &mut grng).unwrap();
    let gybars = predict_ybar(&ctx, &gold, &gsizes, &mut grng).unwrap();
    let mean_gold = gybars.iter().sum::<f64>() / gybars.len() as f64;
    let var_gold = gybars.iter().map(|y| (y - mean_gold) * (y - mean_gold)).sum::<f64>()
        / (gybars.len() - 1) as f64;

    // Monte Carlo standard error: predictive draws are near-independent
    // given the chain, so use draw counts with a generous safety factor.
    let se = (var_std / ybars.len() as f64 * 10.0 + var_gold / gybars.len() as f64 * 10.0).sqrt();
    assert!(
        (mean_std - mean_gold).abs() <= se.max(1e-3),
        "standard {mean_std} vs gold {mean_gold} (se {se})"
    );
}

#[test]
fn diagnostics_report_divergence_free_runs() {
    let (_pop, sample) = continuous_sample(11, 8, 10);
    let spec = OutcomeModelSpec::new(
        OutcomeModelKind::ContinuousSlope,
        OutcomeKind::Continuous,
        SizeModelKind::Known,
    )
    .unwrap();
    let ctx = ModelContext::new(spec, &sample).unwrap();
    let (draws, diag) = run_chains(&ctx, &quick_cfg(13)).unwrap();
    assert_eq!(diag.divergences, draws.divergences);
    assert!(diag.min_ess > 10.0);
    let diag2 = compute_diagnostics(&draws);
    assert_eq!(diag.max_rhat.to_bits(), diag2.max_rhat.to_bits());
}
