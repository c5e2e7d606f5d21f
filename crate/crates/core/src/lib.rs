//! Finite-population inference under two-stage PPS cluster sampling.
//!
//! The library covers the full pipeline: synthesizing clustered finite
//! populations, drawing two-stage samples (random systematic PPS at stage
//! one, SRS within clusters at stage two), classical design-based
//! estimation (Hájek, GREG), Bayesian size-model posteriors for the
//! unknown nonsampled cluster sizes (Bayesian bootstrap, size-biased
//! negative binomial and lognormal families), a gradient-based MCMC
//! engine for the hierarchical outcome model, and a replicated
//! simulation harness with CSV reporting.

pub mod design;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod mcmc;
pub mod population;
pub mod rng;
pub mod sizes;
pub mod stats;

pub use design::{draw_sample, srs_within, systematic_pps, DesignSpec, SampledCluster, SampledUnit, TwoStageSample, WithinDesign};
pub use error::{Error, Result};
pub use estimators::{design_variance, greg, hajek, DesignEstimate, EstimatorKind};
pub use harness::{
    compute_metrics, fragile_families_scenario, run_scenario, size_density_report, FrameSpec,
    Method, MetricsReport, MetricsRow, Scenario,
};
pub use mcmc::{
    compute_diagnostics, log_posterior, predict_ybar, run_chains, Diagnostics, OutcomeModelKind,
    OutcomeModelSpec, PosteriorDraws, PriorBlock, SamplerConfig, ScalePrior,
};
pub use population::{
    centered_log_sizes, generate_frame, generate_population, generate_population_with_params,
    CenterReference, CenteredLogSizes, ClusterSizeFrame, DgpHyper, DgpParams, FinitePopulation,
    FrameSource, OutcomeKind, TruthRecord,
};
pub use sizes::{
    bb_posterior_nonsampled, known_sizes, lognormal_size_loglik, negbin_size_loglik,
    rejection_sample_nonsampled, ObservedSizes, SizeModelKind,
};
