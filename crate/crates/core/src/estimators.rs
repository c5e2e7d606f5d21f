//! Classical design-based estimation: Hájek and GREG points with
//! with-replacement (PPS-WR) first-stage variance approximations and
//! normal-theory intervals.

use crate::design::TwoStageSample;
use crate::error::{Error, Result};
use crate::rng;

/// Normal quantiles for the 50% and 95% intervals.
pub const Z50: f64 = 0.674;
pub const Z95: f64 = 1.96;

/// Unit-count cap above which the variance computation subsamples 100
/// units per cluster, mirroring the large-sample workaround used for the
/// design-based variance matrices.
pub const VARIANCE_SUBSAMPLE_THRESHOLD: usize = 5000;
pub const VARIANCE_SUBSAMPLE_PER_CLUSTER: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    Hajek,
    Greg,
}

/// Point estimate with normal-theory intervals. `variance` is absent when
/// the first-stage variance is undefined (Js < 2).
#[derive(Debug, Clone)]
pub struct DesignEstimate {
    pub point: f64,
    pub variance: Option<f64>,
    pub ci50: Option<(f64, f64)>,
    pub ci95: Option<(f64, f64)>,
}

impl DesignEstimate {
    fn from_point_and_variance(point: f64, variance: Option<f64>) -> Self {
        let interval = |z: f64| {
            variance.map(|v| {
                let half = z * v.sqrt();
                (point - half, point + half)
            })
        };
        DesignEstimate { point, variance, ci50: interval(Z50), ci95: interval(Z95) }
    }
}

/// Estimated cluster y-total from the second stage: sum of y_i / pi_{i|j}.
fn cluster_total(units: &[(f64, f64)], pi_i_given_j: f64) -> f64 {
    units.iter().map(|&(_, y)| y / pi_i_given_j).sum()
}

fn validate(sample: &TwoStageSample) -> Result<()> {
    if sample.clusters.is_empty() {
        return Err(Error::InvalidDesign("empty sample".into()));
    }
    for c in &sample.clusters {
        if !(c.pi_j > 0.0) || !(c.pi_i_given_j > 0.0) {
            return Err(Error::InvalidDesign("nonpositive inclusion probability".into()));
        }
        if c.units.is_empty() {
            return Err(Error::InvalidDesign("sampled cluster without units".into()));
        }
    }
    Ok(())
}

/// Two-stage Hájek ratio estimator of the population mean.
pub fn hajek(sample: &TwoStageSample) -> Result<DesignEstimate> {
    validate(sample)?;
    let point = hajek_point(sample)?;
    let variance = design_variance(sample, EstimatorKind::Hajek)?;
    Ok(DesignEstimate::from_point_and_variance(point, variance))
}

pub(crate) fn hajek_point(sample: &TwoStageSample) -> Result<f64> {
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for c in &sample.clusters {
        let units: Vec<(f64, f64)> = c.units.iter().map(|u| (u.x, u.y)).collect();
        num += cluster_total(&units, c.pi_i_given_j) / c.pi_j;
        den += c.size as f64 / c.pi_j;
    }
    assert!(den > 0.0, "Hajek denominator must be positive under a valid design");
    Ok(num / den)
}

/// Weighted least squares of y on (1, x) with design weights. Returns
/// (intercept, slope).
fn wls_fit(sample: &TwoStageSample) -> Result<(f64, f64)> {
    let (mut sw, mut swx, mut swy, mut swxx, mut swxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for c in &sample.clusters {
        let d = 1.0 / (c.pi_j * c.pi_i_given_j);
        for u in &c.units {
            sw += d;
            swx += d * u.x;
            swy += d * u.y;
            swxx += d * u.x * u.x;
            swxy += d * u.x * u.y;
        }
    }
    let sxx = swxx - swx * swx / sw;
    let scale = swxx.max(1.0);
    if sxx.abs() <= 1e-12 * scale {
        return Err(Error::RankDeficient("covariate is constant in the sample".into()));
    }
    let slope = (swxy - swx * swy / sw) / sxx;
    let intercept = (swy - slope * swx) / sw;
    Ok((intercept, slope))
}

pub(crate) fn greg_point(sample: &TwoStageSample, force_zero_slope: bool) -> Result<f64> {
    let (b0, b1) = if force_zero_slope {
        // intercept-only weighted fit
        let (mut sw, mut swy) = (0.0, 0.0);
        for c in &sample.clusters {
            let d = 1.0 / (c.pi_j * c.pi_i_given_j);
            for u in &c.units {
                sw += d;
                swy += d * u.y;
            }
        }
        (swy / sw, 0.0)
    } else {
        wls_fit(sample)?
    };
    // residual correction against the estimated population size keeps the
    // zero-slope special case identical to the Hajek ratio
    let mut resid_total = 0.0f64;
    let mut n_hat = 0.0f64;
    for c in &sample.clusters {
        let d = 1.0 / (c.pi_j * c.pi_i_given_j);
        for u in &c.units {
            resid_total += d * (u.y - b0 - b1 * u.x);
        }
        n_hat += c.size as f64 / c.pi_j;
    }
    Ok(b0 + b1 * sample.xbar_pop + resid_total / n_hat)
}

/// Generalized regression estimator assisted by the unit-level covariate.
/// Continuous outcomes only.
pub fn greg(sample: &TwoStageSample) -> Result<DesignEstimate> {
    validate(sample)?;
    if sample.outcome == crate::population::OutcomeKind::Binary {
        return Err(Error::InvalidDesign("GREG is defined for continuous outcomes only".into()));
    }
    let point = greg_point(sample, false)?;
    let variance = design_variance(sample, EstimatorKind::Greg)?;
    Ok(DesignEstimate::from_point_and_variance(point, variance))
}

/// PPS-WR variance on per-cluster residual totals. `None` when Js < 2.
///
/// When the sample carries more units than the subsampling threshold, the
/// per-cluster totals entering the variance are recomputed from a
/// deterministic SRS subsample of at most 100 units per cluster; the point
/// estimates always use the full sample.
pub fn design_variance(sample: &TwoStageSample, kind: EstimatorKind) -> Result<Option<f64>> {
    validate(sample)?;
    let js = sample.js();
    if js < 2 {
        return Ok(None);
    }
    let total_sampled: usize = sample.clusters.iter().map(|c| c.units.len()).sum();
    let subsample = total_sampled > VARIANCE_SUBSAMPLE_THRESHOLD;

    // regression coefficients for GREG residuals
    let coefs = match kind {
        EstimatorKind::Hajek => None,
        EstimatorKind::Greg => Some(wls_fit(sample)?),
    };

    // residual variable per unit
    let resid = |x: f64, y: f64| match coefs {
        None => y,
        Some((b0, b1)) => y - b0 - b1 * x,
    };

    let mut n_hat = 0.0f64;
    let mut totals: Vec<(f64, f64, f64)> = Vec::with_capacity(js); // (t_hat_ej, Nj, p_j)
    let n = sample.total_units as f64;
    for c in &sample.clusters {
        n_hat += c.size as f64 / c.pi_j;
        let units: Vec<(f64, f64)> = if subsample && c.units.len() > VARIANCE_SUBSAMPLE_PER_CLUSTER
        {
            let seed = rng::derive_seed(0x5b5b, "variance-subsample", c.cluster_id as u64);
            let mut r = rng::rng_from_seed(seed);
            let idx = rand::seq::index::sample(
                &mut r,
                c.units.len(),
                VARIANCE_SUBSAMPLE_PER_CLUSTER,
            );
            idx.iter().map(|i| (c.units[i].x, c.units[i].y)).collect()
        } else {
            c.units.iter().map(|u| (u.x, u.y)).collect()
        };
        // estimated residual total; subsampled units are reweighted to
        // stand in for the full within-cluster sample
        let m = units.len() as f64;
        let scale = c.units.len() as f64 / m;
        let t_ej =
            scale * units.iter().map(|&(x, y)| resid(x, y) / c.pi_i_given_j).sum::<f64>();
        totals.push((t_ej, c.size as f64, c.size as f64 / n));
    }

    // ratio residuals for the mean; for Hajek the target is the point
    // estimate, for GREG it is the (near-zero) mean of the fit residuals
    let t_e_hat: f64 = totals.iter().map(|&(t, _, p)| t / p).sum::<f64>() / js as f64;
    let theta = t_e_hat / n_hat;

    let z: Vec<f64> = totals.iter().map(|&(t, nj, p)| (t - theta * nj) / p).collect();
    let zbar = z.iter().sum::<f64>() / js as f64;
    let ss: f64 = z.iter().map(|v| (v - zbar) * (v - zbar)).sum();
    let v_total = ss / (js as f64 * (js as f64 - 1.0));
    Ok(Some((v_total / (n_hat * n_hat)).max(0.0)))
}
