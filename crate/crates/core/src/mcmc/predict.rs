//! Posterior-predictive assembly of the finite-population mean: observed
//! parts enter exactly, nonsampled units in sampled clusters and whole
//! nonsampled clusters are predicted per retained draw.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal};

use super::model::ModelContext;
use super::run::PosteriorDraws;
use crate::error::{Error, Result};
use crate::population::OutcomeKind;
use crate::sizes::{
    bb_posterior_nonsampled, rejection_sample_nonsampled, sample_population_size, SizeFamilyParams,
    SizeModelKind,
};
use crate::stats::logistic;

/// Nonsampled-size input to prediction: one vector per retained draw, or a
/// fixed vector (known sizes).
#[derive(Debug, Clone)]
pub enum NonsampledSizes {
    PerDraw(Vec<Vec<u64>>),
    Fixed(Vec<u64>),
}

impl NonsampledSizes {
    fn get(&self, draw: usize) -> &[u64] {
        match self {
            NonsampledSizes::PerDraw(v) => &v[draw],
            NonsampledSizes::Fixed(v) => v,
        }
    }
}

/// Draws nonsampled cluster sizes for every retained draw from the fitted
/// size model (Bayesian bootstrap or the parametric families).
pub fn draw_nonsampled_sizes(
    ctx: &ModelContext,
    draws: &PosteriorDraws,
    rng: &mut ChaCha8Rng,
) -> Result<NonsampledSizes> {
    let d = &ctx.data;
    let total = draws.total_draws();
    let mut out = Vec::with_capacity(total);
    match ctx.spec.size_model {
        SizeModelKind::Known => {
            return Err(Error::InvalidParameter(
                "known sizes must be supplied by the caller".into(),
            ))
        }
        SizeModelKind::BayesianBootstrap => {
            for _ in 0..total {
                out.push(bb_posterior_nonsampled(&d.obs, rng)?);
            }
        }
        SizeModelKind::NegBin | SizeModelKind::Lognormal => {
            let (i1, i2) = ctx.layout.phi.expect("parametric size model has phi");
            for chain in &draws.chains {
                for draw in chain {
                    let params = match ctx.spec.size_model {
                        SizeModelKind::NegBin => SizeFamilyParams::NegBin { k: draw[i1], p: draw[i2] },
                        _ => SizeFamilyParams::Lognormal { mu: draw[i1], tau: draw[i2] },
                    };
                    let sizes = rejection_sample_nonsampled(
                        |r| sample_population_size(params, r),
                        d.total_clusters,
                        d.js,
                        d.total_units,
                        rng,
                    )?;
                    out.push(sizes);
                }
            }
        }
    }
    Ok(NonsampledSizes::PerDraw(out))
}

fn normal_draw(mean: f64, sd: f64, rng: &mut ChaCha8Rng) -> f64 {
    if sd > 0.0 {
        Normal::new(mean, sd).unwrap().sample(rng)
    } else {
        mean
    }
}

fn binomial_draw(n: u64, p: f64, rng: &mut ChaCha8Rng) -> u64 {
    if n == 0 {
        return 0;
    }
    Binomial::new(n, p.clamp(0.0, 1.0)).unwrap().sample(rng)
}

/// Per-draw finite-population mean predictions.
///
/// Continuous: ybar = (1/N)[sum_sampled (nj*ybar_obs + (Nj-nj)*yhat_exc)
/// + sum_nonsampled Nj*yhat_exc]. Binary: realized totals with binomial
/// noise for the unobserved units.
pub fn predict_ybar(
    ctx: &ModelContext,
    draws: &PosteriorDraws,
    nonsampled: &NonsampledSizes,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    let d = &ctx.data;
    let l = &ctx.layout;
    let missing_ids = nonsampled_ids(d.total_clusters, &d.cluster_ids);
    let n_total = d.total_units as f64;
    let total_draws = draws.total_draws();
    if let NonsampledSizes::PerDraw(v) = nonsampled {
        if v.len() != total_draws {
            return Err(Error::InvalidParameter(format!(
                "need one size vector per retained draw: {} vs {total_draws}",
                v.len()
            )));
        }
    }

    // optional plug-in approximation: posterior means for the sampled
    // clusters' coefficients
    let (plug_b0, plug_b1) = if ctx.spec.plugin_approximation {
        let b0: Vec<f64> = (0..d.js).map(|j| draws.mean(l.b0_start + j)).collect();
        let b1 = l.b1_start.map(|s| (0..d.js).map(|j| draws.mean(s + j)).collect::<Vec<f64>>());
        (Some(b0), b1)
    } else {
        (None, None)
    };

    let mut out = Vec::with_capacity(total_draws);
    let mut idx = 0usize;
    for chain in &draws.chains {
        for draw in chain {
            let alpha0 = draw[l.alpha0];
            let gamma0 = l.gamma0.map_or(0.0, |i| draw[i]);
            let sb0 = draw[l.log_sigma_b0];
            let sigma_y = l.log_sigma_y.map_or(0.0, |i| draw[i]);
            let slope = l.b1_start.map(|b1s| {
                (
                    draw[l.alpha1.unwrap()],
                    l.gamma1.map_or(0.0, |i| draw[i]),
                    draw[l.log_sigma_b1.unwrap()],
                    b1s,
                )
            });
            let sizes_draw = nonsampled.get(idx);
            if sizes_draw.len() != missing_ids.len() {
                return Err(Error::InvalidParameter(format!(
                    "drawn size vector has length {}, expected {}",
                    sizes_draw.len(),
                    missing_ids.len()
                )));
            }

            let mut total = 0.0f64;
            match d.outcome {
                OutcomeKind::Continuous => {
                    let (a1, g1, sb1, b1s) = slope.unwrap();
                    for j in 0..d.js {
                        let nj = d.n_j[j];
                        let size = d.sizes[j] as f64;
                        total += nj * d.ybar_obs[j];
                        let exc = size - nj;
                        if exc > 0.0 {
                            let (b0, b1) = match (&plug_b0, &plug_b1) {
                                (Some(p0), Some(p1)) => (p0[j], p1[j]),
                                _ => (draw[l.b0_start + j], draw[b1s + j]),
                            };
                            // mean covariate of the units not sampled
                            let xbar_all = d.xbar_all[d.cluster_ids[j]];
                            let xexc = (size * xbar_all - nj * d.xbar_obs[j]) / exc;
                            let mean = b0 + b1 * (xexc - d.x_shift);
                            let yexc = if ctx.spec.plugin_approximation {
                                mean
                            } else {
                                normal_draw(mean, sigma_y / exc.sqrt(), rng)
                            };
                            total += exc * yexc;
                        }
                    }
                    for (m, &id) in missing_ids.iter().enumerate() {
                        let size = sizes_draw[m];
                        let c = (size as f64).ln() - d.size_center;
                        let b0 = normal_draw(alpha0 + gamma0 * c, sb0, rng);
                        let b1 = normal_draw(a1 + g1 * c, sb1, rng);
                        let mean = b0 + b1 * (d.xbar_all[id] - d.x_shift);
                        let yexc = normal_draw(mean, sigma_y / (size as f64).sqrt(), rng);
                        total += size as f64 * yexc;
                    }
                }
                OutcomeKind::Binary => {
                    for j in 0..d.js {
                        total += d.sum_y[j];
                        let exc = d.sizes[j] - d.n_j[j] as u64;
                        if exc > 0 {
                            let b0 = match &plug_b0 {
                                Some(p0) => p0[j],
                                None => draw[l.b0_start + j],
                            };
                            total += binomial_draw(exc, logistic(b0), rng) as f64;
                        }
                    }
                    for (m, _id) in missing_ids.iter().enumerate() {
                        let size = sizes_draw[m];
                        let c = (size as f64).ln() - d.size_center;
                        let b0 = normal_draw(alpha0 + gamma0 * c, sb0, rng);
                        total += binomial_draw(size, logistic(b0), rng) as f64;
                    }
                }
            }
            out.push(total / n_total);
            idx += 1;
        }
    }
    Ok(out)
}

pub(crate) fn nonsampled_ids(total_clusters: usize, sampled: &[usize]) -> Vec<usize> {
    let set: std::collections::HashSet<usize> = sampled.iter().cloned().collect();
    (0..total_clusters).filter(|id| !set.contains(id)).collect()
}

/// Relative gap between the implied population total (observed plus drawn
/// sizes) and the known N, one value per retained draw. The drawn sizes are
/// not conditioned on the total, so this is a model diagnostic, not an
/// error signal.
pub fn size_total_discrepancy(ctx: &ModelContext, nonsampled: &NonsampledSizes) -> Vec<f64> {
    let observed: u64 = ctx.data.sizes.iter().sum();
    let n = ctx.data.total_units as f64;
    let per_draw = |sizes: &[u64]| -> f64 {
        let implied = observed + sizes.iter().sum::<u64>();
        (implied as f64 - n) / n
    };
    match nonsampled {
        NonsampledSizes::Fixed(v) => vec![per_draw(v)],
        NonsampledSizes::PerDraw(vs) => vs.iter().map(|v| per_draw(v)).collect(),
    }
}
