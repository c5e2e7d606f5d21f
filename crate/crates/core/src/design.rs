//! Two-stage sampling: random systematic PPS over clusters, SRS within.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::population::{ClusterSizeFrame, FinitePopulation, OutcomeKind};

/// Within-cluster sampling rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WithinDesign {
    /// nj = round(rho * Nj), clamped to [1, Nj].
    FixedFraction(f64),
    /// nj = n for every sampled cluster; errors when n > Nj.
    FixedCount(u64),
}

impl std::fmt::Display for WithinDesign {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            WithinDesign::FixedFraction(rho) => write!(f, "fraction:{rho}"),
            WithinDesign::FixedCount(n) => write!(f, "count:{n}"),
        }
    }
}

/// First- plus second-stage design specification.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignSpec {
    pub js: usize,
    pub within: WithinDesign,
}

impl DesignSpec {
    pub fn validate(&self, frame: &ClusterSizeFrame) -> Result<()> {
        if self.js < 1 || self.js >= frame.num_clusters() {
            return Err(Error::InvalidDesign(format!(
                "Js must satisfy 1 <= Js < J, got Js={} J={}",
                self.js,
                frame.num_clusters()
            )));
        }
        match self.within {
            WithinDesign::FixedFraction(rho) => {
                if !(rho > 0.0 && rho <= 1.0) {
                    return Err(Error::InvalidDesign(format!("fraction {rho} outside (0,1]")));
                }
            }
            WithinDesign::FixedCount(n) => {
                if n == 0 {
                    return Err(Error::InvalidDesign("fixed count 0".into()));
                }
            }
        }
        Ok(())
    }

    fn units_for(&self, nj: u64) -> Result<u64> {
        match self.within {
            WithinDesign::FixedFraction(rho) => Ok(((rho * nj as f64).round() as u64).clamp(1, nj)),
            WithinDesign::FixedCount(n) => {
                if n > nj {
                    Err(Error::InvalidDesign(format!(
                        "fixed count {n} exceeds cluster size {nj}"
                    )))
                } else {
                    Ok(n)
                }
            }
        }
    }
}

/// One sampled unit, identified by its index within the cluster roster.
#[derive(Debug, Clone, Copy)]
pub struct SampledUnit {
    pub unit_id: usize,
    pub x: f64,
    pub y: f64,
}

/// One sampled cluster with its design metadata and sampled units.
#[derive(Debug, Clone)]
pub struct SampledCluster {
    pub cluster_id: usize,
    pub size: u64,
    pub pi_j: f64,
    pub pi_i_given_j: f64,
    pub units: Vec<SampledUnit>,
}

impl SampledCluster {
    pub fn n_sampled(&self) -> usize {
        self.units.len()
    }

    pub fn ybar_obs(&self) -> f64 {
        self.units.iter().map(|u| u.y).sum::<f64>() / self.units.len() as f64
    }

    pub fn xbar_obs(&self) -> f64 {
        self.units.iter().map(|u| u.x).sum::<f64>() / self.units.len() as f64
    }
}

/// Observed portion of the population plus design metadata. Nonsampled
/// cluster sizes are deliberately absent: they live only on the oracle side.
#[derive(Debug, Clone)]
pub struct TwoStageSample {
    pub clusters: Vec<SampledCluster>,
    /// Total population unit count N.
    pub total_units: u64,
    /// Total cluster count J.
    pub total_clusters: usize,
    /// Cluster-level covariate means for all J clusters, indexed by cluster id.
    pub xbar_all: Vec<f64>,
    /// Population mean of the covariate, assumed known to the analyst.
    pub xbar_pop: f64,
    pub outcome: OutcomeKind,
}

impl TwoStageSample {
    pub fn js(&self) -> usize {
        self.clusters.len()
    }

    pub fn observed_sizes(&self) -> Vec<u64> {
        self.clusters.iter().map(|c| c.size).collect()
    }

    pub fn sampled_ids(&self) -> Vec<usize> {
        self.clusters.iter().map(|c| c.cluster_id).collect()
    }

    /// Ids of the J - Js nonsampled clusters in ascending order.
    pub fn nonsampled_ids(&self) -> Vec<usize> {
        let sampled: std::collections::HashSet<usize> =
            self.clusters.iter().map(|c| c.cluster_id).collect();
        (0..self.total_clusters).filter(|id| !sampled.contains(id)).collect()
    }

    /// Writes the columnar sample export.
    pub fn write_export(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        writeln!(w, "cluster_id\tNj\tpi_j\tunit_id\tx\ty\tpi_i_given_j")?;
        for c in &self.clusters {
            for u in &c.units {
                writeln!(
                    w,
                    "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                    c.cluster_id, c.size, c.pi_j, u.unit_id, u.x, u.y, c.pi_i_given_j
                )?;
            }
        }
        Ok(())
    }
}

/// Random systematic PPS: a fresh uniform permutation of the cluster order,
/// then equally spaced selection points along the cumulative size scale.
///
/// Returns exactly `js` distinct cluster ids (ascending). Requires that no
/// cluster is a certainty selection.
pub fn systematic_pps(frame: &ClusterSizeFrame, js: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    let j = frame.num_clusters();
    if js < 1 || js > j {
        return Err(Error::InvalidDesign(format!("Js={js} outside [1, {j}]")));
    }
    let n = frame.total_units() as f64;
    if !frame.no_certainty(js) {
        return Err(Error::CertaintyCluster(format!(
            "a cluster has Js*Nj/N >= 1 at Js={js}"
        )));
    }
    let mut order: Vec<usize> = (0..j).collect();
    order.shuffle(rng);
    let step = n / js as f64;
    // uniform start on (0, step]
    let start = step * (1.0 - rng.gen::<f64>());
    let mut selected = Vec::with_capacity(js);
    let mut cum = 0.0f64;
    let mut next_point = start;
    let mut taken = 0usize;
    for &id in &order {
        cum += frame.sizes()[id] as f64;
        while taken < js && next_point <= cum {
            selected.push(id);
            taken += 1;
            next_point = start + taken as f64 * step;
        }
        if taken == js {
            break;
        }
    }
    // float edge: if rounding starved the last point, take the final cluster
    while taken < js {
        selected.push(*order.last().unwrap());
        taken += 1;
    }
    selected.sort_unstable();
    selected.dedup();
    if selected.len() != js {
        return Err(Error::CertaintyCluster(
            "systematic PPS selected a cluster twice; certainty precondition violated".into(),
        ));
    }
    Ok(selected)
}

/// SRS without replacement: nj distinct unit indices out of 0..n_units.
pub fn srs_within(n_units: u64, nj: u64, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if nj == 0 || nj > n_units {
        return Err(Error::InvalidDesign(format!("nj={nj} outside [1, {n_units}]")));
    }
    let mut ids = rand::seq::index::sample(rng, n_units as usize, nj as usize).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

/// Composes the two stages and records all design metadata.
pub fn draw_sample(
    pop: &FinitePopulation,
    design: &DesignSpec,
    rng: &mut impl Rng,
) -> Result<TwoStageSample> {
    design.validate(&pop.frame)?;
    let n = pop.frame.total_units();
    let selected = systematic_pps(&pop.frame, design.js, rng)?;
    let mut clusters = Vec::with_capacity(selected.len());
    for id in selected {
        let size = pop.frame.sizes()[id];
        let nj = design.units_for(size)?;
        let unit_ids = srs_within(size, nj, rng)?;
        let units = unit_ids
            .into_iter()
            .map(|i| {
                let u = pop.units[id][i];
                SampledUnit { unit_id: i, x: u.x, y: u.y }
            })
            .collect();
        clusters.push(SampledCluster {
            cluster_id: id,
            size,
            pi_j: design.js as f64 * size as f64 / n as f64,
            pi_i_given_j: nj as f64 / size as f64,
            units,
        });
    }
    Ok(TwoStageSample {
        clusters,
        total_units: n,
        total_clusters: pop.frame.num_clusters(),
        xbar_all: pop.xbar_all(),
        xbar_pop: pop.xbar_pop(),
        outcome: pop.outcome_kind,
    })
}
