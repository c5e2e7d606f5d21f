//! Hamiltonian-type sampler: leapfrog trajectories with a jittered step
//! count, dual-averaging step-size adaptation during warmup, and windowed
//! diagonal mass-matrix estimation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::model::{log_posterior, ModelContext};
use crate::rng::rng_from_seed;

/// Sampler configuration shared by all chains of one fit.
#[derive(Debug, Clone)]
pub struct SamplerConfig {
    pub chains: usize,
    pub warmup: usize,
    pub draws: usize,
    /// Escalation ladder adds retained draws in steps of `draws_step` until
    /// this cap.
    pub max_draws: usize,
    pub draws_step: usize,
    pub escalate: bool,
    pub target_accept: f64,
    pub max_leapfrog: usize,
    pub divergence_threshold: f64,
    pub rhat_threshold: f64,
    /// Start from the non-centered parameterization.
    pub noncentered: bool,
    /// Posterior-mean plug-in predictions for sampled clusters.
    pub plugin_approximation: bool,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            chains: 4,
            warmup: 1000,
            draws: 1000,
            max_draws: 4000,
            draws_step: 1000,
            escalate: true,
            target_accept: 0.8,
            max_leapfrog: 24,
            divergence_threshold: 1000.0,
            rhat_threshold: 1.1,
            noncentered: false,
            plugin_approximation: false,
            seed: 0,
        }
    }
}

/// Result of a single chain: unconstrained draws plus health counters.
pub struct ChainRun {
    pub draws: Vec<Vec<f64>>,
    pub divergences: usize,
    pub step_size: f64,
    pub mean_accept: f64,
}

struct DualAveraging {
    mu: f64,
    log_eps: f64,
    log_eps_bar: f64,
    h_bar: f64,
    count: u64,
    target: f64,
}

impl DualAveraging {
    fn new(eps0: f64, target: f64) -> Self {
        Self {
            mu: (10.0 * eps0).ln(),
            log_eps: eps0.ln(),
            log_eps_bar: 0.0,
            h_bar: 0.0,
            count: 0,
            target,
        }
    }

    fn update(&mut self, accept: f64) {
        const GAMMA: f64 = 0.05;
        const T0: f64 = 10.0;
        const KAPPA: f64 = 0.75;
        self.count += 1;
        let m = self.count as f64;
        let w = 1.0 / (m + T0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - accept);
        self.log_eps = self.mu - m.sqrt() / GAMMA * self.h_bar;
        let eta = m.powf(-KAPPA);
        self.log_eps_bar = eta * self.log_eps + (1.0 - eta) * self.log_eps_bar;
    }

    fn eps(&self) -> f64 {
        self.log_eps.exp()
    }

    fn adapted(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

/// Running mean/variance accumulator for the mass-matrix windows.
struct Welford {
    n: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(dim: usize) -> Self {
        Self { n: 0, mean: vec![0.0; dim], m2: vec![0.0; dim] }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for i in 0..x.len() {
            let d = x[i] - self.mean[i];
            self.mean[i] += d / n;
            self.m2[i] += d * (x[i] - self.mean[i]);
        }
    }

    /// Regularized variance estimate, shrunk toward unity scale.
    fn regularized_variance(&self) -> Option<Vec<f64>> {
        if self.n < 10 {
            return None;
        }
        let n = self.n as f64;
        Some(
            self.m2
                .iter()
                .map(|&m2| {
                    let var = m2 / (n - 1.0);
                    (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
                })
                .map(|v| v.max(1e-10))
                .collect(),
        )
    }
}

struct Hamiltonian<'a> {
    ctx: &'a ModelContext,
    inv_mass: Vec<f64>,
}

impl<'a> Hamiltonian<'a> {
    fn kinetic(&self, p: &[f64]) -> f64 {
        0.5 * p.iter().zip(&self.inv_mass).map(|(&pi, &im)| pi * pi * im).sum::<f64>()
    }

    fn sample_momentum(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.inv_mass
            .iter()
            .map(|&im| {
                let z: f64 = StandardNormal.sample(rng);
                z / im.sqrt()
            })
            .collect()
    }
}

struct Trajectory {
    z: Vec<f64>,
    logp: f64,
    grad: Vec<f64>,
    accept_stat: f64,
    divergent: bool,
}

/// One leapfrog trajectory with a Metropolis correction.
fn transition(
    ham: &Hamiltonian<'_>,
    z0: &[f64],
    logp0: f64,
    grad0: &[f64],
    eps: f64,
    n_steps: usize,
    divergence_threshold: f64,
    rng: &mut ChaCha8Rng,
) -> Trajectory {
    let dim = z0.len();
    let p0 = ham.sample_momentum(rng);
    let h0 = -logp0 + ham.kinetic(&p0);

    let mut z = z0.to_vec();
    let mut p = p0.clone();
    let mut grad = grad0.to_vec();
    let mut logp = logp0;
    let mut divergent = false;

    for _ in 0..n_steps {
        for i in 0..dim {
            p[i] += 0.5 * eps * grad[i];
        }
        for i in 0..dim {
            z[i] += eps * p[i] * ham.inv_mass[i];
        }
        logp = log_posterior(ham.ctx, &z, &mut grad);
        if !logp.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            divergent = true;
            break;
        }
        for i in 0..dim {
            p[i] += 0.5 * eps * grad[i];
        }
        let h = -logp + ham.kinetic(&p);
        if h - h0 > divergence_threshold {
            divergent = true;
            break;
        }
    }

    if divergent {
        return Trajectory {
            z: z0.to_vec(),
            logp: logp0,
            grad: grad0.to_vec(),
            accept_stat: 0.0,
            divergent: true,
        };
    }
    let h1 = -logp + ham.kinetic(&p);
    let accept_stat = (h0 - h1).min(0.0).exp();
    if rng.gen::<f64>() < accept_stat {
        Trajectory { z, logp, grad, accept_stat, divergent: false }
    } else {
        Trajectory {
            z: z0.to_vec(),
            logp: logp0,
            grad: grad0.to_vec(),
            accept_stat,
            divergent: false,
        }
    }
}

/// Heuristic initial step size: double or halve until the one-step
/// acceptance probability crosses 1/2.
fn find_initial_step(ham: &Hamiltonian<'_>, z: &[f64], rng: &mut ChaCha8Rng) -> f64 {
    let dim = z.len();
    let mut grad = vec![0.0; dim];
    let logp = log_posterior(ham.ctx, z, &mut grad);
    let mut eps = 1.0f64;
    let one_step = |eps: f64, rng: &mut ChaCha8Rng| -> f64 {
        let p0 = ham.sample_momentum(rng);
        let h0 = -logp + ham.kinetic(&p0);
        let mut zz = z.to_vec();
        let mut pp = p0.clone();
        let mut g = grad.clone();
        for i in 0..dim {
            pp[i] += 0.5 * eps * g[i];
        }
        for i in 0..dim {
            zz[i] += eps * pp[i] * ham.inv_mass[i];
        }
        let lp = log_posterior(ham.ctx, &zz, &mut g);
        if !lp.is_finite() {
            return f64::NEG_INFINITY;
        }
        for i in 0..dim {
            pp[i] += 0.5 * eps * g[i];
        }
        let h1 = -lp + ham.kinetic(&pp);
        h0 - h1
    };
    let mut dh = one_step(eps, rng);
    while !dh.is_finite() && eps > 1e-10 {
        eps *= 0.5;
        dh = one_step(eps, rng);
    }
    let dir: f64 = if dh > (0.5f64).ln() { 1.0 } else { -1.0 };
    for _ in 0..50 {
        let next = eps * 2.0f64.powf(dir);
        let dh_next = one_step(next, rng);
        if dir > 0.0 {
            if !(dh_next > (0.5f64).ln()) {
                break;
            }
        } else if !(dh_next < (0.5f64).ln()) {
            break;
        }
        eps = next;
        if !dh_next.is_finite() {
            break;
        }
    }
    eps.clamp(1e-10, 10.0)
}

/// Runs one chain. `step_cap` multiplies the adapted step size (the
/// divergence-escalation analog of raising the target acceptance rate).
pub fn run_chain(
    ctx: &ModelContext,
    cfg: &SamplerConfig,
    seed: u64,
    step_cap: f64,
    draws: usize,
) -> ChainRun {
    let dim = ctx.layout.dim;
    let mut rng = rng_from_seed(seed);
    let mut ham = Hamiltonian { ctx, inv_mass: vec![1.0; dim] };

    // Stan-style random init on the unconstrained scale
    let mut z: Vec<f64> = (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let mut grad = vec![0.0; dim];
    let mut logp = log_posterior(ctx, &z, &mut grad);
    let mut tries = 0;
    while !logp.is_finite() && tries < 100 {
        z = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        logp = log_posterior(ctx, &z, &mut grad);
        tries += 1;
    }

    // warmup phases: step-size only, mass windows, step-size polish
    let w_init = (cfg.warmup as f64 * 0.15) as usize;
    let w_term = (cfg.warmup as f64 * 0.10) as usize;
    let w_mid = cfg.warmup.saturating_sub(w_init + w_term);
    let window1_end = w_init + (w_mid as f64 * 0.3) as usize;
    let window2_end = w_init + w_mid;

    let mut da = DualAveraging::new(find_initial_step(&ham, &z, &mut rng) * step_cap, cfg.target_accept);
    let mut welford = Welford::new(dim);

    for it in 0..cfg.warmup {
        let eps = da.eps().min(10.0);
        let n_steps = rng.gen_range(cfg.max_leapfrog / 2..=cfg.max_leapfrog).max(1);
        let t = transition(&ham, &z, logp, &grad, eps, n_steps, cfg.divergence_threshold, &mut rng);
        da.update(t.accept_stat);
        z = t.z;
        logp = t.logp;
        grad = t.grad;
        if it >= w_init && it < window2_end {
            welford.push(&z);
        }
        if (it + 1 == window1_end || it + 1 == window2_end) && it + 1 < cfg.warmup {
            if let Some(var) = welford.regularized_variance() {
                ham.inv_mass = var;
                let fresh = find_initial_step(&ham, &z, &mut rng) * step_cap;
                da = DualAveraging::new(fresh, cfg.target_accept);
            }
            if it + 1 == window1_end {
                welford = Welford::new(dim);
            }
        }
    }

    let eps = (da.adapted() * step_cap).clamp(1e-10, 10.0);
    let mut out = ChainRun { draws: Vec::with_capacity(draws), divergences: 0, step_size: eps, mean_accept: 0.0 };
    let mut accept_sum = 0.0;
    for _ in 0..draws {
        let n_steps = rng.gen_range(cfg.max_leapfrog / 2..=cfg.max_leapfrog).max(1);
        let t = transition(&ham, &z, logp, &grad, eps, n_steps, cfg.divergence_threshold, &mut rng);
        if t.divergent {
            out.divergences += 1;
        }
        accept_sum += t.accept_stat;
        z = t.z;
        logp = t.logp;
        grad = t.grad;
        out.draws.push(z.clone());
    }
    out.mean_accept = accept_sum / draws.max(1) as f64;
    out
}
