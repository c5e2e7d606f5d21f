//! Models for the population distribution of cluster sizes, fitted from
//! the size-biased PPS sample, and posterior-predictive draws of the
//! nonsampled cluster sizes.

use rand::Rng;
use rand_distr::{Distribution, Gamma, LogNormal, Poisson};
use statrs::function::gamma::ln_gamma;

use crate::design::TwoStageSample;
use crate::error::{Error, Result};
use crate::population::FinitePopulation;

/// Acceptance-rate floor for the rejection sampler.
pub const REJECTION_ACCEPT_FLOOR: f64 = 1e-4;

/// Size-model family used for the nonsampled cluster sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SizeModelKind {
    BayesianBootstrap,
    NegBin,
    Lognormal,
    Known,
}

impl std::fmt::Display for SizeModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SizeModelKind::BayesianBootstrap => write!(f, "bb"),
            SizeModelKind::NegBin => write!(f, "negbin"),
            SizeModelKind::Lognormal => write!(f, "lognormal"),
            SizeModelKind::Known => write!(f, "knowsizes"),
        }
    }
}

/// Concrete family parameters for one posterior draw.
#[derive(Debug, Clone, Copy)]
pub enum SizeFamilyParams {
    /// Population sizes NegBin(k, p) with support 0, 1, 2, ...
    NegBin { k: f64, p: f64 },
    /// Population sizes lognormal(mu, tau^2) on the raw log scale.
    Lognormal { mu: f64, tau: f64 },
}

/// Observed first-stage sizes with their unique-value decomposition.
#[derive(Debug, Clone)]
pub struct ObservedSizes {
    pub n_obs: Vec<u64>,
    /// Population unit total N.
    pub total_units: u64,
    /// Total cluster count J.
    pub total_clusters: usize,
    /// Sampled cluster count Js.
    pub sampled_clusters: usize,
    /// Unique observed sizes, ascending.
    pub unique: Vec<u64>,
    /// Multiplicity of each unique size; sums to Js.
    pub counts: Vec<u64>,
}

impl ObservedSizes {
    pub fn new(n_obs: Vec<u64>, total_units: u64, total_clusters: usize) -> Result<Self> {
        if n_obs.is_empty() {
            return Err(Error::InvalidParameter("no observed sizes".into()));
        }
        if n_obs.iter().any(|&s| s == 0) {
            return Err(Error::InvalidParameter("observed PPS size of 0 is impossible".into()));
        }
        let sampled_clusters = n_obs.len();
        if sampled_clusters > total_clusters {
            return Err(Error::InvalidParameter("Js > J".into()));
        }
        if n_obs.iter().sum::<u64>() > total_units {
            return Err(Error::InvalidParameter("observed sizes exceed population total".into()));
        }
        let mut unique: Vec<u64> = n_obs.clone();
        unique.sort_unstable();
        unique.dedup();
        let counts = unique
            .iter()
            .map(|&v| n_obs.iter().filter(|&&s| s == v).count() as u64)
            .collect();
        Ok(Self { n_obs, total_units, total_clusters, sampled_clusters, unique, counts })
    }

    pub fn from_sample(sample: &TwoStageSample) -> Result<Self> {
        Self::new(sample.observed_sizes(), sample.total_units, sample.total_clusters)
    }

    /// First-stage inclusion probability of a cluster with the given size.
    pub fn pi_of(&self, size: u64) -> f64 {
        self.sampled_clusters as f64 * size as f64 / self.total_units as f64
    }
}

/// One Dirichlet-posterior draw of the nonsampled-size probabilities:
/// psi ~ Dirichlet(k_1..k_B), reweighted by the odds of non-selection and
/// normalized.
pub fn bb_psi_star_draw(obs: &ObservedSizes, rng: &mut impl Rng) -> Result<Vec<f64>> {
    let mut weights = Vec::with_capacity(obs.unique.len());
    for (&size, &count) in obs.unique.iter().zip(&obs.counts) {
        let pi = obs.pi_of(size);
        if pi >= 1.0 {
            return Err(Error::CertaintyCluster(format!(
                "observed size {size} has selection probability {pi} >= 1"
            )));
        }
        let psi = Gamma::new(count as f64, 1.0).unwrap().sample(rng);
        weights.push(psi * (1.0 - pi) / pi);
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::InvalidParameter("degenerate Dirichlet draw".into()));
    }
    for w in &mut weights {
        *w /= total;
    }
    Ok(weights)
}

/// Bayesian bootstrap posterior-predictive draw of the J - Js nonsampled
/// cluster sizes.
pub fn bb_posterior_nonsampled(obs: &ObservedSizes, rng: &mut impl Rng) -> Result<Vec<u64>> {
    let missing = obs.total_clusters - obs.sampled_clusters;
    if missing == 0 {
        return Ok(Vec::new());
    }
    let psi_star = bb_psi_star_draw(obs, rng)?;
    let counts = crate::population::multinomial_draw(missing as u64, &psi_star, rng);
    let mut out = Vec::with_capacity(missing);
    for (b, &k) in counts.iter().enumerate() {
        for _ in 0..k {
            out.push(obs.unique[b]);
        }
    }
    Ok(out)
}

/// log pmf of NegBin(r, p) at m = 0, 1, 2, ...: C(m+r-1, m) p^r (1-p)^m.
pub fn negbin_logpmf(m: u64, r: f64, p: f64) -> f64 {
    let m = m as f64;
    ln_gamma(m + r) - ln_gamma(r) - ln_gamma(m + 1.0) + r * p.ln() + m * (1.0 - p).ln()
}

/// Log likelihood of the observed PPS sizes under a NegBin(k, p) population
/// law, via the shift identity: an observed size N is 1 + W with
/// W ~ NegBin(k+1, p).
pub fn negbin_size_loglik(n_obs: &[u64], k: f64, p: f64) -> Result<f64> {
    if !(k > 0.0) || !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidParameter(format!("NegBin needs k > 0, p in (0,1); got ({k},{p})")));
    }
    if n_obs.iter().any(|&s| s == 0) {
        return Err(Error::InvalidParameter("observed PPS size of 0 is impossible".into()));
    }
    Ok(n_obs.iter().map(|&s| negbin_logpmf(s - 1, k + 1.0, p)).sum())
}

/// Log likelihood of the observed PPS sizes under a lognormal(mu, tau^2)
/// population law: the observed sizes are lognormal(mu + tau^2, tau^2).
pub fn lognormal_size_loglik(n_obs: &[u64], mu: f64, tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::InvalidParameter(format!("lognormal needs tau > 0, got {tau}")));
    }
    if n_obs.iter().any(|&s| s == 0) {
        return Err(Error::InvalidParameter("size 0 has no log".into()));
    }
    let loc = mu + tau * tau;
    Ok(n_obs
        .iter()
        .map(|&s| {
            let l = (s as f64).ln();
            crate::stats::normal_logpdf(l, loc, tau) - l
        })
        .sum())
}

/// Draws one size from the population family. NegBin draws of 0 are mapped
/// to 1 when emitted as unit counts; lognormal draws are rounded with a
/// floor of 1.
pub fn sample_population_size(params: SizeFamilyParams, rng: &mut impl Rng) -> u64 {
    match params {
        SizeFamilyParams::NegBin { k, p } => {
            let scale = (1.0 - p) / p;
            let lambda = Gamma::new(k, scale).unwrap().sample(rng);
            if lambda <= 0.0 {
                return 0;
            }
            Poisson::new(lambda).map(|d| d.sample(rng) as u64).unwrap_or(0)
        }
        SizeFamilyParams::Lognormal { mu, tau } => {
            let v = LogNormal::new(mu, tau).unwrap().sample(rng);
            v.round().max(1.0) as u64
        }
    }
}

/// Rejection sampler for the nonsampled-size distribution
/// p(Nj | Ij = 0) proportional to (1 - Js Nj / N) p(Nj).
///
/// `candidate` draws from the population law p(Nj | phi). Candidates are
/// accepted with probability max(0, 1 - Js Nj / N); accepted sizes are
/// emitted with a floor of 1.
pub fn rejection_sample_nonsampled<R: Rng, F: FnMut(&mut R) -> u64>(
    mut candidate: F,
    total_clusters: usize,
    sampled_clusters: usize,
    total_units: u64,
    rng: &mut R,
) -> Result<Vec<u64>> {
    if sampled_clusters >= total_clusters {
        if sampled_clusters == total_clusters {
            return Ok(Vec::new());
        }
        return Err(Error::InvalidParameter("Js > J".into()));
    }
    let target = total_clusters - sampled_clusters;
    let js = sampled_clusters as f64;
    let n = total_units as f64;
    let max_draws = ((target as f64 / REJECTION_ACCEPT_FLOOR) as usize).max(10_000);
    let mut out = Vec::with_capacity(target);
    for draws in 0..max_draws {
        let c = candidate(rng);
        let accept = (1.0 - js * c as f64 / n).clamp(0.0, 1.0);
        if accept > 0.0 && rng.gen::<f64>() < accept {
            out.push(c.max(1));
            if out.len() == target {
                return Ok(out);
            }
        }
        // periodic stall check once enough draws have accrued
        if draws > 10_000 && (out.len() as f64) < REJECTION_ACCEPT_FLOOR * draws as f64 {
            break;
        }
    }
    Err(Error::RejectionStalled(format!(
        "accepted {} of {} needed sizes; size-model parameters inconsistent with (Js={}, N={})",
        out.len(),
        target,
        sampled_clusters,
        total_units
    )))
}

/// Passthrough of the true nonsampled cluster sizes from the oracle-side
/// population, in ascending cluster-id order.
pub fn known_sizes(pop: &FinitePopulation, sample: &TwoStageSample) -> Vec<u64> {
    sample.nonsampled_ids().iter().map(|&id| pop.frame.sizes()[id]).collect()
}
