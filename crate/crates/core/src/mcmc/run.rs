//! Multi-chain runs with the convergence escalation protocol: divergences
//! trigger step-size halving and then the non-centered parameterization;
//! high R-hat triggers more iterations, up to a cap, after which the fit
//! is discarded.

use std::io::Write;
use std::path::Path;

use super::diagnostics::{ess, split_rhat, Diagnostics, ParamDiag};
use super::hmc::{run_chain, SamplerConfig};
use super::model::ModelContext;
use crate::error::{Error, Result};
use crate::rng::derive_seed;

/// Retained posterior draws on the natural (constrained) scale.
#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    pub names: Vec<String>,
    /// [chain][draw][parameter]
    pub chains: Vec<Vec<Vec<f64>>>,
    pub divergences: usize,
    /// Whether the final run used the non-centered parameterization.
    pub noncentered: bool,
    /// Escalation attempts consumed.
    pub attempts: usize,
}

impl PosteriorDraws {
    pub fn n_chains(&self) -> usize {
        self.chains.len()
    }

    pub fn n_draws(&self) -> usize {
        self.chains.first().map_or(0, |c| c.len())
    }

    pub fn total_draws(&self) -> usize {
        self.chains.iter().map(|c| c.len()).sum()
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Scalar series of one parameter per chain.
    pub fn series(&self, param: usize) -> Vec<Vec<f64>> {
        self.chains.iter().map(|c| c.iter().map(|d| d[param]).collect()).collect()
    }

    pub fn mean(&self, param: usize) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for c in &self.chains {
            for d in c {
                sum += d[param];
                n += 1;
            }
        }
        sum / n as f64
    }

    /// Columnar dump (chain, iter, parameter, value) for external tools.
    pub fn write_dump(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        writeln!(w, "chain\titer\tparameter\tvalue")?;
        for (ci, chain) in self.chains.iter().enumerate() {
            for (it, draw) in chain.iter().enumerate() {
                for (pi, v) in draw.iter().enumerate() {
                    writeln!(w, "{ci}\t{it}\t{}\t{v}", self.names[pi])?;
                }
            }
        }
        Ok(())
    }
}

/// Rank-normalized split R-hat and ESS for every parameter.
pub fn compute_diagnostics(draws: &PosteriorDraws) -> Diagnostics {
    let mut params = Vec::with_capacity(draws.names.len());
    let mut degenerate = Vec::new();
    let mut max_rhat = f64::NEG_INFINITY;
    let mut any_infinite = false;
    let mut min_ess = f64::INFINITY;
    for (pi, name) in draws.names.iter().enumerate() {
        let series = super::diagnostics::rank_normalize(&draws.series(pi));
        let r = split_rhat(&series);
        let e = ess(&series);
        if r.is_nan() {
            degenerate.push(name.clone());
        } else if r.is_infinite() {
            any_infinite = true;
        } else {
            max_rhat = max_rhat.max(r);
        }
        if e.is_finite() {
            min_ess = min_ess.min(e);
        }
        params.push(ParamDiag { name: name.clone(), rhat: r, ess: e });
    }
    let max_rhat = if any_infinite {
        f64::INFINITY
    } else if max_rhat == f64::NEG_INFINITY {
        f64::NAN
    } else {
        max_rhat
    };
    Diagnostics { params, divergences: draws.divergences, max_rhat, min_ess, degenerate }
}

fn run_once(
    ctx: &ModelContext,
    cfg: &SamplerConfig,
    attempt: usize,
    step_cap: f64,
    draws: usize,
) -> PosteriorDraws {
    let mut chains = Vec::with_capacity(cfg.chains);
    let mut divergences = 0usize;
    for c in 0..cfg.chains {
        let seed = derive_seed(cfg.seed, "chain", (attempt * 1009 + c) as u64);
        let run = run_chain(ctx, cfg, seed, step_cap, draws);
        divergences += run.divergences;
        chains.push(run.draws.iter().map(|z| ctx.constrain(z)).collect());
    }
    PosteriorDraws {
        names: ctx.layout.names.clone(),
        chains,
        divergences,
        noncentered: ctx.spec.noncentered,
        attempts: attempt + 1,
    }
}

/// Runs the full escalation protocol and returns retained draws with
/// diagnostics, or a `NotConverged` error when the fit must be discarded.
pub fn run_chains(ctx: &ModelContext, cfg: &SamplerConfig) -> Result<(PosteriorDraws, Diagnostics)> {
    if cfg.chains < 2 {
        return Err(Error::InvalidParameter("R-hat needs at least 2 chains".into()));
    }
    if cfg.warmup < 500 || cfg.draws < 500 {
        return Err(Error::InvalidParameter("need at least 500 warmup and 500 retained".into()));
    }
    let param_modes: &[bool] = if ctx.spec.noncentered { &[true] } else { &[false, true] };
    let mut attempt = 0usize;
    let mut last_rhat = f64::NAN;
    for &noncentered in param_modes {
        let mut ctx_mode = ctx.clone();
        ctx_mode.spec.noncentered = noncentered;
        // divergence ladder: full step, then two halvings
        for step_cap in [1.0, 0.5, 0.25] {
            let mut n_draws = cfg.draws;
            loop {
                let draws = run_once(&ctx_mode, cfg, attempt, step_cap, n_draws);
                attempt += 1;
                let diag = compute_diagnostics(&draws);
                if !cfg.escalate {
                    return Ok((draws, diag));
                }
                if draws.divergences > 0 {
                    break; // tighten the step size or switch parameterization
                }
                if diag.converged(cfg.rhat_threshold) {
                    return Ok((draws, diag));
                }
                last_rhat = diag.max_rhat;
                n_draws += cfg.draws_step;
                if n_draws > cfg.max_draws {
                    return Err(Error::NotConverged(format!(
                        "max split R-hat {last_rhat:.4} at {} retained draws (noncentered={noncentered})",
                        cfg.max_draws
                    )));
                }
            }
        }
    }
    Err(Error::NotConverged(format!(
        "divergent transitions persisted through step-size halving and the non-centered parameterization (last max R-hat {last_rhat:.4})"
    )))
}
