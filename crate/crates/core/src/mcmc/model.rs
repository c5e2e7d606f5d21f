//! Joint posterior density of the hierarchical outcome model and the
//! cluster-size model, with analytic gradients on the unconstrained scale.
//!
//! The outcome likelihood reduces to per-cluster sufficient statistics, so
//! one density-plus-gradient evaluation costs O(Js) regardless of the
//! number of sampled units.

use crate::design::TwoStageSample;
use crate::error::{Error, Result};
use crate::population::{centered_log_sizes, CenterReference, OutcomeKind};
use crate::sizes::{ObservedSizes, SizeFamilyParams, SizeModelKind};
use crate::stats::{log1pexp, logistic, LN_2PI};
use statrs::function::gamma::digamma;

/// Outcome-model structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutcomeModelKind {
    /// Cluster-varying intercepts and slopes with centered log sizes as a
    /// cluster-level predictor.
    ContinuousSlope,
    /// Cluster-varying intercepts on the logit scale; no unit covariate.
    BinaryIntercept,
    /// Random cluster effects without the size predictor (gamma fixed at 0).
    ClusterIndsOnly,
}

/// Prior on a positive scale parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScalePrior {
    HalfCauchy(f64),
    HalfNormal(f64),
}

impl ScalePrior {
    /// Log density at sigma = exp(u), including the log-Jacobian u.
    fn logpdf_unconstrained(&self, sigma: f64, u: f64) -> f64 {
        match *self {
            ScalePrior::HalfCauchy(s) => {
                (2.0 / (std::f64::consts::PI * s)).ln() - (1.0 + (sigma / s).powi(2)).ln() + u
            }
            ScalePrior::HalfNormal(s) => {
                ((2.0 / std::f64::consts::PI).sqrt() / s).ln() - sigma * sigma / (2.0 * s * s) + u
            }
        }
    }

    /// d/du of `logpdf_unconstrained`.
    fn grad_u(&self, sigma: f64) -> f64 {
        match *self {
            ScalePrior::HalfCauchy(s) => 1.0 - 2.0 * sigma * sigma / (sigma * sigma + s * s),
            ScalePrior::HalfNormal(s) => 1.0 - sigma * sigma / (s * s),
        }
    }
}

/// Prior block for the outcome and size models.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorBlock {
    /// Normal sd for alpha0, gamma0, alpha1, gamma1.
    pub loc_sd: f64,
    pub sigma_beta_prior: ScalePrior,
    pub sigma_y_prior: ScalePrior,
    pub lognormal_tau_prior: ScalePrior,
    /// Exponential rate for the NegBin coefficient of variation.
    pub negbin_cv_rate: f64,
    /// Weaker exponential rate used when Js exceeds `negbin_small_js`.
    pub negbin_cv_rate_weak: f64,
    /// Use the informative CV prior when Js is at most this.
    pub negbin_small_js: usize,
}

impl Default for PriorBlock {
    fn default() -> Self {
        Self {
            loc_sd: 10.0,
            sigma_beta_prior: ScalePrior::HalfCauchy(2.5),
            sigma_y_prior: ScalePrior::HalfCauchy(2.5),
            lognormal_tau_prior: ScalePrior::HalfCauchy(2.5),
            negbin_cv_rate: 1.0,
            negbin_cv_rate_weak: 0.2,
            negbin_small_js: 20,
        }
    }
}

/// Full model specification for one fit.
#[derive(Debug, Clone)]
pub struct OutcomeModelSpec {
    pub kind: OutcomeModelKind,
    pub outcome: OutcomeKind,
    pub size_model: SizeModelKind,
    pub priors: PriorBlock,
    /// Express cluster effects as scaled standard-normal innovations.
    pub noncentered: bool,
    /// Use posterior-mean plug-in predictions for sampled clusters.
    pub plugin_approximation: bool,
}

impl OutcomeModelSpec {
    pub fn new(kind: OutcomeModelKind, outcome: OutcomeKind, size_model: SizeModelKind) -> Result<Self> {
        if kind == OutcomeModelKind::ContinuousSlope && outcome != OutcomeKind::Continuous {
            return Err(Error::InvalidParameter("ContinuousSlope requires a continuous outcome".into()));
        }
        if kind == OutcomeModelKind::BinaryIntercept && outcome != OutcomeKind::Binary {
            return Err(Error::InvalidParameter("BinaryIntercept requires a binary outcome".into()));
        }
        Ok(Self {
            kind,
            outcome,
            size_model,
            priors: PriorBlock::default(),
            noncentered: false,
            plugin_approximation: false,
        })
    }

    pub fn uses_size_predictor(&self) -> bool {
        self.kind != OutcomeModelKind::ClusterIndsOnly
    }

    pub fn has_slope(&self) -> bool {
        self.outcome == OutcomeKind::Continuous
    }
}

/// How the NegBin size model is parameterized for the sampler. Both modes
/// work in (log CV, log mean) coordinates: the data pin the mean, and the
/// log-CV Jacobian damps the open likelihood ridge toward the Poisson
/// limit (k -> infinity) that raw-dispersion coordinates suffer from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NegBinMode {
    /// CV ~ Exp(1); the informative choice for small Js.
    CvMean,
    /// CV ~ Exp(weak rate); for larger Js where the data dominate.
    WeakCvMean,
}

/// Dispersion cap: beyond this the NegBin is numerically Poisson and the
/// log-gamma differences in the likelihood would lose precision.
pub const NEGBIN_K_CAP: f64 = 1e8;

/// Per-cluster sufficient statistics and design facts used by the model.
#[derive(Debug, Clone)]
pub struct ModelData {
    pub outcome: OutcomeKind,
    pub js: usize,
    pub n_units: f64,
    pub n_j: Vec<f64>,
    pub sum_y: Vec<f64>,
    pub sum_x: Vec<f64>,
    pub sum_xx: Vec<f64>,
    pub sum_xy: Vec<f64>,
    pub sum_yy: Vec<f64>,
    /// Centered log of the observed sizes (sampled-cluster centering).
    pub c_log_size: Vec<f64>,
    /// The centering constant, reused when centering drawn sizes.
    pub size_center: f64,
    /// Sampled-unit mean of x; estimation works on x minus this shift.
    pub x_shift: f64,
    pub obs: ObservedSizes,
    /// Mean and sd of log observed sizes (lognormal standardization).
    pub log_mean: f64,
    pub log_sd: f64,
    pub cluster_ids: Vec<usize>,
    pub sizes: Vec<u64>,
    pub ybar_obs: Vec<f64>,
    pub xbar_obs: Vec<f64>,
    pub xbar_all: Vec<f64>,
    pub total_units: u64,
    pub total_clusters: usize,
}

impl ModelData {
    pub fn from_sample(sample: &TwoStageSample) -> Result<Self> {
        let js = sample.js();
        if js == 0 {
            return Err(Error::InvalidDesign("empty sample".into()));
        }
        let sizes = sample.observed_sizes();
        let logs = centered_log_sizes(&sizes, CenterReference::SampledOnly)?;
        let n_units: f64 = sample.clusters.iter().map(|c| c.units.len() as f64).sum();
        let x_shift = sample
            .clusters
            .iter()
            .flat_map(|c| c.units.iter().map(|u| u.x))
            .sum::<f64>()
            / n_units;
        let mut data = ModelData {
            outcome: sample.outcome,
            js,
            n_units,
            n_j: Vec::with_capacity(js),
            sum_y: Vec::with_capacity(js),
            sum_x: Vec::with_capacity(js),
            sum_xx: Vec::with_capacity(js),
            sum_xy: Vec::with_capacity(js),
            sum_yy: Vec::with_capacity(js),
            c_log_size: logs.values.clone(),
            size_center: logs.center,
            x_shift,
            obs: ObservedSizes::from_sample(sample)?,
            log_mean: 0.0,
            log_sd: 1.0,
            cluster_ids: sample.sampled_ids(),
            sizes: sizes.clone(),
            ybar_obs: Vec::with_capacity(js),
            xbar_obs: Vec::with_capacity(js),
            xbar_all: sample.xbar_all.clone(),
            total_units: sample.total_units,
            total_clusters: sample.total_clusters,
        };
        for c in &sample.clusters {
            let n = c.units.len() as f64;
            let (mut sy, mut sx, mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for u in &c.units {
                let x = u.x - x_shift;
                sy += u.y;
                sx += x;
                sxx += x * x;
                sxy += x * u.y;
                syy += u.y * u.y;
            }
            data.n_j.push(n);
            data.sum_y.push(sy);
            data.sum_x.push(sx);
            data.sum_xx.push(sxx);
            data.sum_xy.push(sxy);
            data.sum_yy.push(syy);
            data.ybar_obs.push(sy / n);
            data.xbar_obs.push(c.xbar_obs());
        }
        let loglens: Vec<f64> = sizes.iter().map(|&s| (s as f64).ln()).collect();
        data.log_mean = crate::stats::mean(&loglens);
        data.log_sd = if js > 1 { crate::stats::sample_sd(&loglens).max(1e-3) } else { 1.0 };
        Ok(data)
    }
}

/// Index map from model structure to positions in the parameter vector.
#[derive(Debug, Clone)]
pub struct Layout {
    pub dim: usize,
    pub alpha0: usize,
    pub gamma0: Option<usize>,
    pub log_sigma_b0: usize,
    pub b0_start: usize,
    pub alpha1: Option<usize>,
    pub gamma1: Option<usize>,
    pub log_sigma_b1: Option<usize>,
    pub b1_start: Option<usize>,
    pub log_sigma_y: Option<usize>,
    pub phi: Option<(usize, usize)>,
    pub js: usize,
    pub negbin_mode: Option<NegBinMode>,
    pub names: Vec<String>,
}

impl Layout {
    pub fn new(spec: &OutcomeModelSpec, data: &ModelData) -> Layout {
        let js = data.js;
        let use_size = spec.uses_size_predictor();
        let slope = spec.has_slope();
        let mut names = Vec::new();
        let mut idx = 0usize;

        let alpha0 = idx;
        names.push("alpha0".into());
        idx += 1;
        let gamma0 = if use_size {
            names.push("gamma0".into());
            idx += 1;
            Some(idx - 1)
        } else {
            None
        };
        let log_sigma_b0 = idx;
        names.push("sigma_beta0".into());
        idx += 1;
        let b0_start = idx;
        for j in 0..js {
            names.push(format!("beta0[{j}]"));
        }
        idx += js;

        let (mut alpha1, mut gamma1, mut log_sigma_b1, mut b1_start) = (None, None, None, None);
        if slope {
            alpha1 = Some(idx);
            names.push("alpha1".into());
            idx += 1;
            if use_size {
                gamma1 = Some(idx);
                names.push("gamma1".into());
                idx += 1;
            }
            log_sigma_b1 = Some(idx);
            names.push("sigma_beta1".into());
            idx += 1;
            b1_start = Some(idx);
            for j in 0..js {
                names.push(format!("beta1[{j}]"));
            }
            idx += js;
        }

        let log_sigma_y = if spec.outcome == OutcomeKind::Continuous {
            names.push("sigma_y".into());
            idx += 1;
            Some(idx - 1)
        } else {
            None
        };

        let (phi, negbin_mode) = match spec.size_model {
            SizeModelKind::NegBin => {
                let mode = if js <= spec.priors.negbin_small_js {
                    NegBinMode::CvMean
                } else {
                    NegBinMode::WeakCvMean
                };
                names.push("nb_k".into());
                names.push("nb_p".into());
                idx += 2;
                (Some((idx - 2, idx - 1)), Some(mode))
            }
            SizeModelKind::Lognormal => {
                names.push("ln_mu".into());
                names.push("ln_tau".into());
                idx += 2;
                (Some((idx - 2, idx - 1)), None)
            }
            SizeModelKind::BayesianBootstrap | SizeModelKind::Known => (None, None),
        };

        Layout {
            dim: idx,
            alpha0,
            gamma0,
            log_sigma_b0,
            b0_start,
            alpha1,
            gamma1,
            log_sigma_b1,
            b1_start,
            log_sigma_y,
            phi,
            js,
            negbin_mode,
            names,
        }
    }
}

/// Model specification bound to one sample's data.
#[derive(Debug, Clone)]
pub struct ModelContext {
    pub spec: OutcomeModelSpec,
    pub data: ModelData,
    pub layout: Layout,
}

impl ModelContext {
    pub fn new(spec: OutcomeModelSpec, sample: &TwoStageSample) -> Result<Self> {
        if spec.outcome != sample.outcome {
            return Err(Error::InvalidParameter(format!(
                "model outcome {:?} does not match sample outcome {:?}",
                spec.outcome, sample.outcome
            )));
        }
        let data = ModelData::from_sample(sample)?;
        let layout = Layout::new(&spec, &data);
        Ok(Self { spec, data, layout })
    }

    /// Natural-scale size-family parameters from an unconstrained phi pair.
    pub fn phi_params(&self, u1: f64, u2: f64) -> SizeFamilyParams {
        match self.spec.size_model {
            SizeModelKind::NegBin => {
                let cv = u1.exp();
                let k = (1.0 / (cv * cv)).min(NEGBIN_K_CAP);
                let mean = u2.exp();
                SizeFamilyParams::NegBin { k, p: k / (k + mean) }
            }
            SizeModelKind::Lognormal => SizeFamilyParams::Lognormal {
                mu: self.data.log_mean + self.data.log_sd * u1,
                tau: self.data.log_sd * u2.exp(),
            },
            _ => unreachable!("phi_params called without a parametric size model"),
        }
    }

    /// Maps an unconstrained vector to the natural (constrained) scale:
    /// log scales exponentiate, innovations become cluster coefficients,
    /// and phi becomes family parameters.
    pub fn constrain(&self, z: &[f64]) -> Vec<f64> {
        let l = &self.layout;
        let mut out = z.to_vec();
        let sb0 = z[l.log_sigma_b0].exp();
        out[l.log_sigma_b0] = sb0;
        let g0 = l.gamma0.map_or(0.0, |i| z[i]);
        for j in 0..l.js {
            let m = z[l.alpha0] + g0 * self.data.c_log_size[j];
            out[l.b0_start + j] =
                if self.spec.noncentered { m + sb0 * z[l.b0_start + j] } else { z[l.b0_start + j] };
        }
        if let (Some(a1), Some(lsb1), Some(b1s)) = (l.alpha1, l.log_sigma_b1, l.b1_start) {
            let sb1 = z[lsb1].exp();
            out[lsb1] = sb1;
            let g1 = l.gamma1.map_or(0.0, |i| z[i]);
            for j in 0..l.js {
                let m = z[a1] + g1 * self.data.c_log_size[j];
                out[b1s + j] =
                    if self.spec.noncentered { m + sb1 * z[b1s + j] } else { z[b1s + j] };
            }
        }
        if let Some(lsy) = l.log_sigma_y {
            out[lsy] = z[lsy].exp();
        }
        if let Some((i1, i2)) = l.phi {
            match self.phi_params(z[i1], z[i2]) {
                SizeFamilyParams::NegBin { k, p } => {
                    out[i1] = k;
                    out[i2] = p;
                }
                SizeFamilyParams::Lognormal { mu, tau } => {
                    out[i1] = mu;
                    out[i2] = tau;
                }
            }
        }
        out
    }

    /// Inverse of `constrain`.
    pub fn unconstrain(&self, theta: &[f64]) -> Vec<f64> {
        let l = &self.layout;
        let mut z = theta.to_vec();
        let sb0 = theta[l.log_sigma_b0];
        z[l.log_sigma_b0] = sb0.ln();
        let g0 = l.gamma0.map_or(0.0, |i| theta[i]);
        for j in 0..l.js {
            let m = theta[l.alpha0] + g0 * self.data.c_log_size[j];
            z[l.b0_start + j] = if self.spec.noncentered {
                (theta[l.b0_start + j] - m) / sb0
            } else {
                theta[l.b0_start + j]
            };
        }
        if let (Some(a1), Some(lsb1), Some(b1s)) = (l.alpha1, l.log_sigma_b1, l.b1_start) {
            let sb1 = theta[lsb1];
            z[lsb1] = sb1.ln();
            let g1 = l.gamma1.map_or(0.0, |i| theta[i]);
            for j in 0..l.js {
                let m = theta[a1] + g1 * self.data.c_log_size[j];
                z[b1s + j] =
                    if self.spec.noncentered { (theta[b1s + j] - m) / sb1 } else { theta[b1s + j] };
            }
        }
        if let Some(lsy) = l.log_sigma_y {
            z[lsy] = theta[lsy].ln();
        }
        if let Some((i1, i2)) = l.phi {
            match self.spec.size_model {
                SizeModelKind::NegBin => {
                    let (k, p) = (theta[i1], theta[i2]);
                    z[i1] = (1.0 / k.sqrt()).ln();
                    z[i2] = (k * (1.0 - p) / p).ln();
                }
                SizeModelKind::Lognormal => {
                    z[i1] = (theta[i1] - self.data.log_mean) / self.data.log_sd;
                    z[i2] = (theta[i2] / self.data.log_sd).ln();
                }
                _ => {}
            }
        }
        z
    }
}

/// Joint log posterior and its gradient at the unconstrained point `z`.
///
/// Returns negative infinity (with an unspecified gradient) when the state
/// produces non-finite intermediate terms; the sampler treats such states
/// as divergent.
pub fn log_posterior(ctx: &ModelContext, z: &[f64], grad: &mut [f64]) -> f64 {
    debug_assert_eq!(z.len(), ctx.layout.dim);
    debug_assert_eq!(grad.len(), ctx.layout.dim);
    for g in grad.iter_mut() {
        *g = 0.0;
    }
    let l = &ctx.layout;
    let d = &ctx.data;
    let pr = &ctx.spec.priors;
    let js = l.js;
    let mut lp = 0.0f64;

    let alpha0 = z[l.alpha0];
    let gamma0 = l.gamma0.map_or(0.0, |i| z[i]);
    let sb0 = z[l.log_sigma_b0].exp();
    let sigma_y = l.log_sigma_y.map(|i| z[i].exp());

    // materialize cluster coefficients
    let mut beta0 = vec![0.0f64; js];
    for j in 0..js {
        let m = alpha0 + gamma0 * d.c_log_size[j];
        beta0[j] = if ctx.spec.noncentered { m + sb0 * z[l.b0_start + j] } else { z[l.b0_start + j] };
    }
    let slope = l.b1_start.map(|b1s| {
        let a1 = z[l.alpha1.unwrap()];
        let g1 = l.gamma1.map_or(0.0, |i| z[i]);
        let sb1 = z[l.log_sigma_b1.unwrap()].exp();
        let mut beta1 = vec![0.0f64; js];
        for j in 0..js {
            let m = a1 + g1 * d.c_log_size[j];
            beta1[j] = if ctx.spec.noncentered { m + sb1 * z[b1s + j] } else { z[b1s + j] };
        }
        (a1, g1, sb1, beta1)
    });

    // outcome likelihood; collect d(lp)/d(beta) for the hierarchy below
    let mut like_g0 = vec![0.0f64; js];
    let mut like_g1 = vec![0.0f64; js];
    match d.outcome {
        OutcomeKind::Continuous => {
            let sy = sigma_y.unwrap();
            let sy2 = sy * sy;
            let (_, _, _, beta1) = slope.as_ref().unwrap();
            let mut sq = 0.0f64;
            for j in 0..js {
                let (b0, b1) = (beta0[j], beta1[j]);
                let q = d.sum_yy[j] - 2.0 * b0 * d.sum_y[j] - 2.0 * b1 * d.sum_xy[j]
                    + 2.0 * b0 * b1 * d.sum_x[j]
                    + b0 * b0 * d.n_j[j]
                    + b1 * b1 * d.sum_xx[j];
                sq += q.max(0.0);
                like_g0[j] = (d.sum_y[j] - b0 * d.n_j[j] - b1 * d.sum_x[j]) / sy2;
                like_g1[j] = (d.sum_xy[j] - b0 * d.sum_x[j] - b1 * d.sum_xx[j]) / sy2;
            }
            lp += -0.5 * d.n_units * LN_2PI - d.n_units * sy.ln() - 0.5 * sq / sy2;
            let lsy = l.log_sigma_y.unwrap();
            grad[lsy] += -d.n_units + sq / sy2;
            // sigma_y prior
            lp += pr.sigma_y_prior.logpdf_unconstrained(sy, z[lsy]);
            grad[lsy] += pr.sigma_y_prior.grad_u(sy);
        }
        OutcomeKind::Binary => {
            for j in 0..js {
                let b0 = beta0[j];
                lp += d.sum_y[j] * b0 - d.n_j[j] * log1pexp(b0);
                like_g0[j] = d.sum_y[j] - d.n_j[j] * logistic(b0);
            }
        }
    }

    // intercept hierarchy + priors
    accumulate_block(
        ctx,
        z,
        grad,
        &mut lp,
        &beta0,
        &like_g0,
        l.alpha0,
        l.gamma0,
        l.log_sigma_b0,
        l.b0_start,
        alpha0,
        gamma0,
        sb0,
    );

    // slope hierarchy + priors
    if let Some((a1, g1, sb1, beta1)) = slope.as_ref() {
        accumulate_block(
            ctx,
            z,
            grad,
            &mut lp,
            beta1,
            &like_g1,
            l.alpha1.unwrap(),
            l.gamma1,
            l.log_sigma_b1.unwrap(),
            l.b1_start.unwrap(),
            *a1,
            *g1,
            *sb1,
        );
    }

    // size-model factor p(N_obs | phi) and phi priors
    if let Some((i1, i2)) = l.phi {
        lp += phi_terms(ctx, z[i1], z[i2], grad, i1, i2);
    }

    if !lp.is_finite() {
        return f64::NEG_INFINITY;
    }
    lp
}

/// Hierarchical normal block for one coefficient family, in either the
/// centered or non-centered parameterization, plus the location and scale
/// priors for its hyperparameters.
#[allow(clippy::too_many_arguments)]
fn accumulate_block(
    ctx: &ModelContext,
    z: &[f64],
    grad: &mut [f64],
    lp: &mut f64,
    beta: &[f64],
    like_g: &[f64],
    alpha_idx: usize,
    gamma_idx: Option<usize>,
    lsb_idx: usize,
    b_start: usize,
    alpha: f64,
    gamma: f64,
    sb: f64,
) -> () {
    let d = &ctx.data;
    let pr = &ctx.spec.priors;
    let js = ctx.layout.js;
    let sb2 = sb * sb;
    if ctx.spec.noncentered {
        let mut sum_g = 0.0;
        let mut sum_gc = 0.0;
        let mut sum_gv = 0.0;
        for j in 0..js {
            let v = z[b_start + j];
            *lp += -0.5 * LN_2PI - 0.5 * v * v;
            grad[b_start + j] += like_g[j] * sb - v;
            sum_g += like_g[j];
            sum_gc += like_g[j] * d.c_log_size[j];
            sum_gv += like_g[j] * v;
        }
        grad[alpha_idx] += sum_g;
        if let Some(gi) = gamma_idx {
            grad[gi] += sum_gc;
        }
        grad[lsb_idx] += sum_gv * sb;
    } else {
        let mut sum_r = 0.0;
        let mut sum_rc = 0.0;
        let mut sum_r2 = 0.0;
        for j in 0..js {
            let r = beta[j] - alpha - gamma * d.c_log_size[j];
            *lp += -0.5 * LN_2PI - sb.ln() - 0.5 * r * r / sb2;
            grad[b_start + j] += like_g[j] - r / sb2;
            sum_r += r;
            sum_rc += r * d.c_log_size[j];
            sum_r2 += r * r;
        }
        grad[alpha_idx] += sum_r / sb2;
        if let Some(gi) = gamma_idx {
            grad[gi] += sum_rc / sb2;
        }
        grad[lsb_idx] += -(js as f64) + sum_r2 / sb2;
    }
    // priors on alpha / gamma
    let s2 = pr.loc_sd * pr.loc_sd;
    *lp += -0.5 * LN_2PI - pr.loc_sd.ln() - 0.5 * alpha * alpha / s2;
    grad[alpha_idx] += -alpha / s2;
    if let Some(gi) = gamma_idx {
        *lp += -0.5 * LN_2PI - pr.loc_sd.ln() - 0.5 * gamma * gamma / s2;
        grad[gi] += -gamma / s2;
    }
    // scale prior (with Jacobian)
    *lp += pr.sigma_beta_prior.logpdf_unconstrained(sb, z[lsb_idx]);
    grad[lsb_idx] += pr.sigma_beta_prior.grad_u(sb);
}

/// Size likelihood plus phi priors; returns the log-density contribution
/// and accumulates gradients for the two unconstrained phi components.
fn phi_terms(ctx: &ModelContext, u1: f64, u2: f64, grad: &mut [f64], i1: usize, i2: usize) -> f64 {
    let d = &ctx.data;
    let pr = &ctx.spec.priors;
    let mut lp = 0.0f64;
    match ctx.spec.size_model {
        SizeModelKind::NegBin => {
            let mode = ctx.layout.negbin_mode.unwrap();
            let cv = u1.exp();
            let mean = u2.exp();
            let raw_k = 1.0 / (cv * cv);
            let (k, dk_du1) = if raw_k >= NEGBIN_K_CAP {
                (NEGBIN_K_CAP, 0.0) // capped: numerically the Poisson limit
            } else {
                (raw_k, -2.0 * raw_k)
            };
            let p = k / (k + mean);
            let dp_dk = mean / ((k + mean) * (k + mean));
            let dp_dm = -k / ((k + mean) * (k + mean));
            let dp_du1 = dp_dk * dk_du1;
            let dp_du2 = dp_dm * mean;
            if !(k > 0.0) || !(p > 0.0 && p < 1.0) || !k.is_finite() {
                return f64::NEG_INFINITY;
            }
            // likelihood of observed sizes via the 1 + W shift
            let mut ll = 0.0;
            let mut dll_dk = 0.0;
            let mut dll_dp = 0.0;
            let r = k + 1.0;
            for &s in &d.obs.n_obs {
                let w = (s - 1) as f64;
                ll += statrs::function::gamma::ln_gamma(w + r)
                    - statrs::function::gamma::ln_gamma(r)
                    - statrs::function::gamma::ln_gamma(w + 1.0)
                    + r * p.ln()
                    + w * (1.0 - p).ln();
                dll_dk += digamma(w + r) - digamma(r) + p.ln();
                dll_dp += r / p - w / (1.0 - p);
            }
            lp += ll;
            grad[i1] += dll_dk * dk_du1 + dll_dp * dp_du1;
            grad[i2] += dll_dp * dp_du2;
            // priors: CV ~ Exp(rate) with the log-scale Jacobian, and
            // log-mean ~ N(0, loc_sd)
            let rate = match mode {
                NegBinMode::CvMean => pr.negbin_cv_rate,
                NegBinMode::WeakCvMean => pr.negbin_cv_rate_weak,
            };
            lp += rate.ln() - rate * cv + u1;
            grad[i1] += 1.0 - rate * cv;
            let s2 = pr.loc_sd * pr.loc_sd;
            lp += -0.5 * LN_2PI - pr.loc_sd.ln() - 0.5 * u2 * u2 / s2;
            grad[i2] += -u2 / s2;
        }
        SizeModelKind::Lognormal => {
            let mu = d.log_mean + d.log_sd * u1;
            let tau = d.log_sd * u2.exp();
            if !(tau > 0.0) || !tau.is_finite() {
                return f64::NEG_INFINITY;
            }
            let mut dll_dmu = 0.0;
            let mut dll_dtau = 0.0;
            let loc = mu + tau * tau;
            for &s in &d.obs.n_obs {
                let el = (s as f64).ln();
                let dv = el - loc;
                lp += crate::stats::normal_logpdf(el, loc, tau) - el;
                dll_dmu += dv / (tau * tau);
                dll_dtau += -1.0 / tau + 2.0 * dv / tau + dv * dv / (tau * tau * tau);
            }
            grad[i1] += dll_dmu * d.log_sd;
            grad[i2] += dll_dtau * tau;
            // priors: mu_z ~ N(0, loc_sd); tau_z positive scale prior
            let s2 = pr.loc_sd * pr.loc_sd;
            lp += -0.5 * LN_2PI - pr.loc_sd.ln() - 0.5 * u1 * u1 / s2;
            grad[i1] += -u1 / s2;
            let tau_z = u2.exp();
            lp += pr.lognormal_tau_prior.logpdf_unconstrained(tau_z, u2);
            grad[i2] += pr.lognormal_tau_prior.grad_u(tau_z);
        }
        _ => {}
    }
    lp
}
