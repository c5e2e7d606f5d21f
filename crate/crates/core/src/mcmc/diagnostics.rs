//! Split potential-scale-reduction and effective-sample-size diagnostics.
//!
//! The convergence gate uses rank-normalized draws, which makes the
//! verdict invariant to monotone reparameterization: heavy-tailed natural
//! parameters (a dispersion that blows up toward an equidispersed limit,
//! say) no longer trip the threshold when the sampler is mixing fine on
//! its own scale.

use statrs::distribution::{ContinuousCDF, Normal};

/// Per-parameter convergence summary.
#[derive(Debug, Clone)]
pub struct ParamDiag {
    pub name: String,
    pub rhat: f64,
    pub ess: f64,
}

/// Diagnostics for one fit: one row per parameter plus sampler health.
#[derive(Debug, Clone)]
pub struct Diagnostics {
    pub params: Vec<ParamDiag>,
    pub divergences: usize,
    /// Worst finite split R-hat; infinite when chains sit at distinct
    /// constants.
    pub max_rhat: f64,
    pub min_ess: f64,
    /// Parameters whose R-hat is undefined (zero variance everywhere).
    pub degenerate: Vec<String>,
}

impl Diagnostics {
    pub fn converged(&self, threshold: f64) -> bool {
        self.max_rhat.is_finite() && self.max_rhat < threshold
    }
}

/// Pools every draw, replaces values by average ranks, and maps ranks to
/// normal scores (Blom offsets). Ties stay tied, so degenerate chains stay
/// degenerate after the transform.
pub fn rank_normalize(chains: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let total: usize = chains.iter().map(|c| c.len()).sum();
    if total == 0 {
        return Vec::new();
    }
    let mut indexed: Vec<(f64, usize)> = Vec::with_capacity(total);
    let mut offsets = Vec::with_capacity(chains.len());
    let mut cursor = 0usize;
    for c in chains {
        offsets.push(cursor);
        for (i, &v) in c.iter().enumerate() {
            indexed.push((v, cursor + i));
        }
        cursor += c.len();
    }
    indexed.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut rank = vec![0.0f64; total];
    let mut i = 0usize;
    while i < total {
        let mut j = i;
        while j + 1 < total && indexed[j + 1].0 == indexed[i].0 {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0; // 1-based average rank
        for item in &indexed[i..=j] {
            rank[item.1] = avg;
        }
        i = j + 1;
    }
    let normal = Normal::new(0.0, 1.0).unwrap();
    let s = total as f64;
    let z = |r: f64| normal.inverse_cdf(((r - 0.375) / (s + 0.25)).clamp(1e-12, 1.0 - 1e-12));
    chains
        .iter()
        .zip(&offsets)
        .map(|(c, &off)| (0..c.len()).map(|i| z(rank[off + i])).collect())
        .collect()
}

/// Split chains in half; returns per-sequence vectors.
fn split(chains: &[Vec<f64>]) -> Vec<&[f64]> {
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    let half = n / 2;
    let mut seqs = Vec::with_capacity(chains.len() * 2);
    for c in chains {
        seqs.push(&c[..half]);
        seqs.push(&c[half..2 * half]);
    }
    seqs
}

/// Split R-hat for one parameter given per-chain scalar series.
/// NaN when every sequence is constant at the same value; infinity when
/// sequences are constant at different values.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let seqs = split(chains);
    let m = seqs.len();
    let n = seqs.first().map_or(0, |s| s.len());
    if m < 2 || n < 2 {
        return f64::NAN;
    }
    let means: Vec<f64> = seqs.iter().map(|s| s.iter().sum::<f64>() / n as f64).collect();
    let vars: Vec<f64> = seqs
        .iter()
        .zip(&means)
        .map(|(s, &mu)| s.iter().map(|&x| (x - mu) * (x - mu)).sum::<f64>() / (n as f64 - 1.0))
        .collect();
    let w = vars.iter().sum::<f64>() / m as f64;
    let grand = means.iter().sum::<f64>() / m as f64;
    let b_over_n =
        means.iter().map(|&mu| (mu - grand) * (mu - grand)).sum::<f64>() / (m as f64 - 1.0);
    if w == 0.0 {
        return if b_over_n == 0.0 { f64::NAN } else { f64::INFINITY };
    }
    let var_plus = (n as f64 - 1.0) / n as f64 * w + b_over_n;
    (var_plus / w).sqrt()
}

/// Effective sample size via Geyer's initial monotone positive sequence on
/// split chains.
pub fn ess(chains: &[Vec<f64>]) -> f64 {
    let seqs = split(chains);
    let m = seqs.len();
    let n = seqs.first().map_or(0, |s| s.len());
    if m < 2 || n < 4 {
        return f64::NAN;
    }
    let means: Vec<f64> = seqs.iter().map(|s| s.iter().sum::<f64>() / n as f64).collect();
    let vars: Vec<f64> = seqs
        .iter()
        .zip(&means)
        .map(|(s, &mu)| s.iter().map(|&x| (x - mu) * (x - mu)).sum::<f64>() / (n as f64 - 1.0))
        .collect();
    let w = vars.iter().sum::<f64>() / m as f64;
    if w == 0.0 {
        return f64::NAN;
    }
    let grand = means.iter().sum::<f64>() / m as f64;
    let b_over_n =
        means.iter().map(|&mu| (mu - grand) * (mu - grand)).sum::<f64>() / (m as f64 - 1.0);
    let var_plus = (n as f64 - 1.0) / n as f64 * w + b_over_n;

    let acov = |s: &[f64], mu: f64, t: usize| -> f64 {
        let mut sum = 0.0;
        for i in 0..n - t {
            sum += (s[i] - mu) * (s[i + t] - mu);
        }
        sum / n as f64
    };

    let rho = |t: usize| -> f64 {
        let mean_acov =
            seqs.iter().zip(&means).map(|(s, &mu)| acov(s, mu, t)).sum::<f64>() / m as f64;
        1.0 - (w - mean_acov) / var_plus
    };

    // Geyer pairs: accumulate while the paired sums stay positive, enforcing
    // monotone decrease.
    let mut tau = 1.0f64;
    let mut prev_pair = f64::INFINITY;
    let mut t = 1usize;
    while t + 1 < n {
        let pair = rho(t) + rho(t + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        prev_pair = pair;
        tau += 2.0 * pair;
        t += 2;
    }
    ((m * n) as f64 / tau).min((m * n) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn iid_normal_chains_have_unit_rhat() {
        let mut rng = crate::rng::rng_from_seed(1);
        let trials = 200usize;
        let mut good = 0;
        for _ in 0..trials {
            let chains: Vec<Vec<f64>> = (0..4)
                .map(|_| (0..1000).map(|_| StandardNormal.sample(&mut rng)).collect())
                .collect();
            let r = split_rhat(&chains);
            // the estimator can sit a hair under 1 by construction
            if (0.998..=1.02).contains(&r) {
                good += 1;
            }
            let e = ess(&chains);
            assert!(e > 1000.0, "iid ESS unexpectedly low: {e}");
        }
        assert!(good >= trials * 99 / 100, "{good}/{trials}");
    }

    #[test]
    fn distinct_constant_chains_blow_up() {
        let chains = vec![vec![1.0; 100], vec![2.0; 100]];
        assert!(split_rhat(&chains).is_infinite());
    }

    #[test]
    fn identical_constant_chains_flag_as_undefined() {
        let chains = vec![vec![3.0; 100], vec![3.0; 100]];
        assert!(split_rhat(&chains).is_nan());
    }

    #[test]
    fn nonstationary_chains_exceed_threshold() {
        // one chain drifts: split halves have different means
        let mut rng = crate::rng::rng_from_seed(2);
        let a: Vec<f64> = (0..1000).map(|i| i as f64 / 200.0 + rng.gen::<f64>()).collect();
        let b: Vec<f64> = (0..1000).map(|_| rng.gen::<f64>()).collect();
        assert!(split_rhat(&[a, b].to_vec()) > 1.1);
    }

    #[test]
    fn autocorrelated_chains_have_reduced_ess() {
        let mut rng = crate::rng::rng_from_seed(3);
        let mut make = || {
            let mut x = 0.0f64;
            (0..2000)
                .map(|_| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    x = 0.9 * x + e;
                    x
                })
                .collect::<Vec<f64>>()
        };
        let chains = vec![make(), make(), make(), make()];
        let e = ess(&chains);
        // AR(1) with phi = 0.9 has tau ~ 19
        assert!(e < 1500.0, "{e}");
        assert!(e > 100.0, "{e}");
    }
}

#[cfg(test)]
mod rank_tests {
    use super::*;
    use rand_distr::Distribution;

    #[test]
    fn rank_normalization_preserves_degenerate_flags() {
        // identical constants stay undefined
        let same = rank_normalize(&[vec![3.0; 50], vec![3.0; 50]]);
        assert!(split_rhat(&same).is_nan());
        // distinct constants still blow up
        let diff = rank_normalize(&[vec![1.0; 50], vec![2.0; 50]]);
        assert!(split_rhat(&diff).is_infinite());
    }

    #[test]
    fn rank_normalization_tames_heavy_tails() {
        // identical mixing on the log scale, compared through exp()
        let mut rng = crate::rng::rng_from_seed(5);
        let normal = rand_distr::Normal::new(0.0, 3.0).unwrap();
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..500).map(|_| (normal.sample(&mut rng) as f64).exp()).collect())
            .collect();
        let r = split_rhat(&rank_normalize(&chains));
        assert!((0.99..1.05).contains(&r), "{r}");
    }
}
