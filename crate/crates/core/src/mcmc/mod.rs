//! Gradient-based MCMC for the joint outcome/size-model posterior, with
//! convergence diagnostics and posterior-predictive assembly of the
//! finite-population mean.

pub mod diagnostics;
pub mod hmc;
pub mod model;
pub mod predict;
pub mod run;

pub use diagnostics::{Diagnostics, ParamDiag};
pub use hmc::SamplerConfig;
pub use model::{
    log_posterior, Layout, ModelContext, ModelData, NegBinMode, OutcomeModelKind,
    OutcomeModelSpec, PriorBlock, ScalePrior,
};
pub use predict::{draw_nonsampled_sizes, predict_ybar, size_total_discrepancy, NonsampledSizes};
pub use run::{compute_diagnostics, run_chains, PosteriorDraws};

use crate::design::TwoStageSample;
use crate::error::Result;
use crate::rng::{derive_seed, rng_from_seed};
use crate::sizes::SizeModelKind;
use crate::stats::quantile_sorted;

/// One Bayesian fit summarized for the harness: predictive point, central
/// intervals, draws, and diagnostics.
#[derive(Debug, Clone)]
pub struct BayesFit {
    pub point: f64,
    pub ci50: (f64, f64),
    pub ci95: (f64, f64),
    pub ybar_draws: Vec<f64>,
    pub diagnostics: Diagnostics,
}

/// Fits the model, draws nonsampled sizes, and assembles the predictive
/// distribution of the population mean. `known_nonsampled` supplies the
/// true nonsampled sizes when the size model is `Known`.
pub fn fit_and_predict(
    spec: OutcomeModelSpec,
    sample: &TwoStageSample,
    cfg: &SamplerConfig,
    known_nonsampled: Option<Vec<u64>>,
) -> Result<BayesFit> {
    let ctx = ModelContext::new(spec, sample)?;
    let (draws, diagnostics) = run_chains(&ctx, cfg)?;
    let mut rng = rng_from_seed(derive_seed(cfg.seed, "predict", 0));
    let sizes = match ctx.spec.size_model {
        SizeModelKind::Known => NonsampledSizes::Fixed(known_nonsampled.ok_or_else(|| {
            crate::error::Error::InvalidParameter(
                "Known size model requires the true nonsampled sizes".into(),
            )
        })?),
        _ => draw_nonsampled_sizes(&ctx, &draws, &mut rng)?,
    };
    let ybar_draws = predict_ybar(&ctx, &draws, &sizes, &mut rng)?;
    let mut sorted = ybar_draws.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let point = sorted.iter().sum::<f64>() / sorted.len() as f64;
    let ci50 = (quantile_sorted(&sorted, 0.25), quantile_sorted(&sorted, 0.75));
    let ci95 = (quantile_sorted(&sorted, 0.025), quantile_sorted(&sorted, 0.975));
    Ok(BayesFit { point, ci50, ci95, ybar_draws, diagnostics })
}
