//! Replicated-simulation harness: scenario grid, per-method estimation,
//! discard accounting, metric computation, and CSV reporting.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::design::{draw_sample, srs_within, systematic_pps, DesignSpec, SampledCluster, SampledUnit, TwoStageSample};
use crate::error::{Error, Result};
use crate::estimators::{greg, hajek};
use crate::mcmc::{fit_and_predict, OutcomeModelKind, OutcomeModelSpec, SamplerConfig};
use crate::population::{
    generate_population, ClusterSizeFrame, DgpHyper, FinitePopulation, FrameSource, OutcomeKind,
};
use crate::rng::{derive_seed, rng_from_seed};
use crate::sizes::{known_sizes, SizeModelKind};
use crate::stats;

/// Bundled city-size frame with designation annotations.
pub const FF_CITY_SIZES: &str = include_str!("../../data/ff_city_sizes.txt");

pub const FF_FRAME_ROWS: usize = 77;
pub const FF_SAMPLED_CITIES: usize = 16;
pub const FF_LARGE_TARGET: u64 = 325;
pub const FF_SMALL_TARGET: u64 = 100;

/// Estimation method identifiers, as they appear in reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    NegBin,
    Lognormal,
    Bb,
    Hajek,
    Greg,
    ClusterInds,
    Knowsizes,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::NegBin,
        Method::Lognormal,
        Method::Bb,
        Method::Hajek,
        Method::Greg,
        Method::ClusterInds,
        Method::Knowsizes,
    ];

    pub fn is_bayesian(self) -> bool {
        !matches!(self, Method::Hajek | Method::Greg)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Method::NegBin => "negbin",
            Method::Lognormal => "lognormal",
            Method::Bb => "bb",
            Method::Hajek => "hajek",
            Method::Greg => "greg",
            Method::ClusterInds => "cluster_inds",
            Method::Knowsizes => "knowsizes",
        };
        write!(f, "{s}")
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "negbin" => Method::NegBin,
            "lognormal" => Method::Lognormal,
            "bb" => Method::Bb,
            "hajek" => Method::Hajek,
            "greg" => Method::Greg,
            "cluster_inds" => Method::ClusterInds,
            "knowsizes" => Method::Knowsizes,
            other => return Err(Error::InvalidParameter(format!("unknown method {other:?}"))),
        })
    }
}

/// Frame construction for a scenario.
#[derive(Debug, Clone)]
pub enum FrameSpec {
    Generate { source: FrameSource, j: usize },
    Explicit { sizes: Vec<u64>, label: String },
}

impl FrameSpec {
    pub fn label(&self) -> String {
        match self {
            FrameSpec::Generate { source, .. } => source.to_string(),
            FrameSpec::Explicit { label, .. } => label.clone(),
        }
    }
}

/// First- and second-stage design for a scenario.
#[derive(Debug, Clone)]
pub enum ScenarioDesign {
    Standard(DesignSpec),
    /// PPS over cities with per-city designated target counts.
    Designated { js: usize, targets: Vec<u64> },
}

impl ScenarioDesign {
    pub fn js(&self) -> usize {
        match self {
            ScenarioDesign::Standard(d) => d.js,
            ScenarioDesign::Designated { js, .. } => *js,
        }
    }

    pub fn label(&self) -> String {
        match self {
            ScenarioDesign::Standard(d) => d.within.to_string(),
            ScenarioDesign::Designated { .. } => "designated".into(),
        }
    }
}

/// One cell of the evaluation grid.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub id: String,
    pub frame: FrameSpec,
    pub outcome: OutcomeKind,
    pub design: ScenarioDesign,
    pub replicates: usize,
    pub seed: u64,
    /// Nominal total target sample size, when the design fixes one.
    pub target_units: Option<u64>,
    /// Scales of the generating process for the scenario population.
    pub hyper: DgpHyper,
}

/// Point and intervals for one replicate of one method.
#[derive(Debug, Clone, Copy)]
pub struct MethodEstimate {
    pub point: f64,
    pub ci50: (f64, f64),
    pub ci95: (f64, f64),
}

/// Aggregated metrics for one (method, scenario) cell.
#[derive(Debug, Clone)]
pub struct MetricsRow {
    pub method: Method,
    pub kept: usize,
    pub discarded: usize,
    pub rel_bias: f64,
    pub rrmse: f64,
    pub cover50: f64,
    pub cover95: f64,
    pub relwidth50: f64,
    pub relwidth95: f64,
}

/// Full report for one scenario.
#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub scenario_id: String,
    pub frame_label: String,
    pub outcome: OutcomeKind,
    pub js: usize,
    pub design_label: String,
    pub truth: f64,
    pub rows: Vec<MetricsRow>,
    /// Per-replicate estimates per method (None = discarded), for paired
    /// comparisons.
    pub estimates: Vec<(Method, Vec<Option<MethodEstimate>>)>,
}

fn interval_covers(interval: (f64, f64), point: f64, truth: f64) -> bool {
    let (lo, hi) = interval;
    if hi > lo {
        lo <= truth && truth <= hi
    } else {
        // zero-width convention
        (point - truth).abs() <= 1e-12 * truth.abs()
    }
}

/// Exact metric formulas over kept replicates.
pub fn compute_metrics(estimates: &[MethodEstimate], truth: f64) -> Result<MetricsRow> {
    if estimates.is_empty() {
        return Err(Error::InvalidParameter("no kept replicates".into()));
    }
    if truth == 0.0 {
        return Err(Error::ZeroTruth);
    }
    let l = estimates.len() as f64;
    let mut bias = 0.0;
    let mut sq = 0.0;
    let (mut c50, mut c95) = (0.0, 0.0);
    let (mut w50, mut w95) = (0.0, 0.0);
    for e in estimates {
        let rel = (truth - e.point) / truth;
        bias += rel;
        sq += rel * rel;
        if interval_covers(e.ci50, e.point, truth) {
            c50 += 1.0;
        }
        if interval_covers(e.ci95, e.point, truth) {
            c95 += 1.0;
        }
        w50 += (e.ci50.1 - e.ci50.0) / truth;
        w95 += (e.ci95.1 - e.ci95.0) / truth;
    }
    Ok(MetricsRow {
        method: Method::Hajek, // caller overwrites
        kept: estimates.len(),
        discarded: 0,
        rel_bias: bias / l,
        rrmse: (sq / l).sqrt(),
        cover50: c50 / l,
        cover95: c95 / l,
        relwidth50: w50 / l,
        relwidth95: w95 / l,
    })
}

fn build_population(scenario: &Scenario) -> Result<FinitePopulation> {
    let mut rng = rng_from_seed(derive_seed(scenario.seed, "population", 0));
    let js = scenario.design.js();
    let frame = match &scenario.frame {
        FrameSpec::Generate { source, j } => crate::population::generate_frame(source, *j, js, &mut rng)?,
        FrameSpec::Explicit { sizes, label } => {
            let frame = ClusterSizeFrame::from_sizes(sizes.clone())?;
            if !frame.no_certainty(js) {
                return Err(Error::CertaintyCluster(format!(
                    "explicit frame {label} has a certainty cluster at Js={js}"
                )));
            }
            frame
        }
    };
    generate_population(&frame, &scenario.hyper, scenario.outcome, &mut rng)
}

/// Draws one two-stage sample under a designated-count design.
fn draw_designated_sample(
    pop: &FinitePopulation,
    js: usize,
    targets: &[u64],
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<TwoStageSample> {
    if targets.len() != pop.frame.num_clusters() {
        return Err(Error::InvalidDesign("one target count per cluster required".into()));
    }
    let n = pop.frame.total_units();
    let selected = systematic_pps(&pop.frame, js, rng)?;
    let mut clusters = Vec::with_capacity(selected.len());
    for id in selected {
        let size = pop.frame.sizes()[id];
        let nj = targets[id].min(size).max(1);
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
            pi_j: js as f64 * size as f64 / n as f64,
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

fn model_kind_for(method: Method, outcome: OutcomeKind) -> OutcomeModelKind {
    match method {
        Method::ClusterInds => OutcomeModelKind::ClusterIndsOnly,
        _ => match outcome {
            OutcomeKind::Continuous => OutcomeModelKind::ContinuousSlope,
            OutcomeKind::Binary => OutcomeModelKind::BinaryIntercept,
        },
    }
}

fn size_model_for(method: Method) -> SizeModelKind {
    match method {
        Method::NegBin => SizeModelKind::NegBin,
        Method::Lognormal => SizeModelKind::Lognormal,
        Method::Bb => SizeModelKind::BayesianBootstrap,
        Method::ClusterInds | Method::Knowsizes => SizeModelKind::Known,
        Method::Hajek | Method::Greg => unreachable!("classical methods have no size model"),
    }
}

/// Runs one method on one sample. `Ok(None)` marks a discarded replicate
/// (failed convergence protocol or a stalled size draw).
pub fn run_method(
    method: Method,
    pop: &FinitePopulation,
    sample: &TwoStageSample,
    base_cfg: &SamplerConfig,
    replicate_seed: u64,
) -> Result<Option<MethodEstimate>> {
    match method {
        Method::Hajek => {
            let est = hajek(sample)?;
            Ok(match (est.ci50, est.ci95) {
                (Some(ci50), Some(ci95)) => {
                    Some(MethodEstimate { point: est.point, ci50, ci95 })
                }
                _ => None,
            })
        }
        Method::Greg => {
            let est = greg(sample)?;
            Ok(match (est.ci50, est.ci95) {
                (Some(ci50), Some(ci95)) => {
                    Some(MethodEstimate { point: est.point, ci50, ci95 })
                }
                _ => None,
            })
        }
        _ => {
            let mut spec = OutcomeModelSpec::new(
                model_kind_for(method, sample.outcome),
                sample.outcome,
                size_model_for(method),
            )?;
            spec.noncentered = base_cfg.noncentered;
            spec.plugin_approximation = base_cfg.plugin_approximation;
            let mut cfg = base_cfg.clone();
            cfg.seed = derive_seed(replicate_seed, "mcmc", method_tag(method));
            let known = match size_model_for(method) {
                SizeModelKind::Known => Some(known_sizes(pop, sample)),
                _ => None,
            };
            match fit_and_predict(spec, sample, &cfg, known) {
                Ok(fit) => Ok(Some(MethodEstimate { point: fit.point, ci50: fit.ci50, ci95: fit.ci95 })),
                Err(Error::NotConverged(_)) | Err(Error::RejectionStalled(_)) => Ok(None),
                Err(e) => Err(e),
            }
        }
    }
}

fn method_tag(method: Method) -> u64 {
    Method::ALL.iter().position(|&m| m == method).unwrap() as u64
}

/// Validates a method set against the scenario outcome.
pub fn validate_methods(methods: &[Method], outcome: OutcomeKind) -> Result<()> {
    if methods.is_empty() {
        return Err(Error::InvalidParameter("empty method set".into()));
    }
    if outcome == OutcomeKind::Binary && methods.contains(&Method::Greg) {
        return Err(Error::InvalidParameter(
            "greg applies to continuous outcomes only".into(),
        ));
    }
    Ok(())
}

/// Executes one scenario: a single population, `replicates` independent
/// two-stage samples, every method on every sample, metrics over kept
/// replicates.
pub fn run_scenario(
    scenario: &Scenario,
    methods: &[Method],
    base_cfg: &SamplerConfig,
) -> Result<MetricsReport> {
    validate_methods(methods, scenario.outcome)?;
    if scenario.replicates == 0 {
        return Err(Error::InvalidParameter("replicates must be >= 1".into()));
    }
    let pop = build_population(scenario)?;
    let truth = pop.truth.ybar;

    let per_replicate: Vec<Result<Vec<Option<MethodEstimate>>>> = (0..scenario.replicates)
        .into_par_iter()
        .map(|r| {
            let rep_seed = derive_seed(scenario.seed, "replicate", r as u64);
            let mut rng = rng_from_seed(derive_seed(rep_seed, "sample", 0));
            let sample = match &scenario.design {
                ScenarioDesign::Standard(d) => draw_sample(&pop, d, &mut rng)?,
                ScenarioDesign::Designated { js, targets } => {
                    draw_designated_sample(&pop, *js, targets, &mut rng)?
                }
            };
            methods
                .iter()
                .map(|&m| run_method(m, &pop, &sample, base_cfg, rep_seed))
                .collect::<Result<Vec<Option<MethodEstimate>>>>()
        })
        .collect();

    let mut estimates: Vec<(Method, Vec<Option<MethodEstimate>>)> =
        methods.iter().map(|&m| (m, Vec::with_capacity(scenario.replicates))).collect();
    for rep in per_replicate {
        let rep = rep?;
        for (slot, est) in estimates.iter_mut().zip(rep) {
            slot.1.push(est);
        }
    }

    let mut rows = Vec::with_capacity(methods.len());
    for (method, ests) in &estimates {
        let kept: Vec<MethodEstimate> = ests.iter().flatten().cloned().collect();
        let discarded = ests.len() - kept.len();
        if kept.is_empty() {
            rows.push(MetricsRow {
                method: *method,
                kept: 0,
                discarded,
                rel_bias: f64::NAN,
                rrmse: f64::NAN,
                cover50: f64::NAN,
                cover95: f64::NAN,
                relwidth50: f64::NAN,
                relwidth95: f64::NAN,
            });
            continue;
        }
        let mut row = compute_metrics(&kept, truth)?;
        row.method = *method;
        row.discarded = discarded;
        rows.push(row);
    }

    Ok(MetricsReport {
        scenario_id: scenario.id.clone(),
        frame_label: scenario.frame.label(),
        outcome: scenario.outcome,
        js: scenario.design.js(),
        design_label: scenario.design.label(),
        truth,
        rows,
        estimates,
    })
}

/// Per-city row of a parsed designation file.
#[derive(Debug, Clone)]
pub struct FfCity {
    pub raw_population: f64,
    pub scaled_size: u64,
    pub large_sample: bool,
}

/// Processing log of the frame construction.
#[derive(Debug, Clone)]
pub struct FfReport {
    /// (original row index, scaled size) of certainty-removed cities.
    pub removed: Vec<(usize, u64)>,
    pub cities: Vec<FfCity>,
    pub large_count: usize,
}

fn parse_ff_rows<R: BufRead>(reader: R, origin: &str) -> Result<Vec<FfCity>> {
    let mut rows = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let mut parts = body.split_whitespace();
        let pop: f64 = parts
            .next()
            .unwrap()
            .parse()
            .map_err(|_| Error::FileFormat(format!("{origin}:{}: bad population", lineno + 1)))?;
        if !(pop > 0.0) || !pop.is_finite() {
            return Err(Error::FileFormat(format!(
                "{origin}:{}: population must be positive",
                lineno + 1
            )));
        }
        let large_sample = match parts.next() {
            Some("L") => true,
            Some("S") | None => false,
            Some(other) => {
                return Err(Error::FileFormat(format!(
                    "{origin}:{}: designation must be L or S, got {other:?}",
                    lineno + 1
                )))
            }
        };
        let scaled_size = (pop / 100.0).round().max(1.0) as u64;
        rows.push(FfCity { raw_population: pop, scaled_size, large_sample });
    }
    Ok(rows)
}

/// Builds the city-frame scenario: scales populations by 1/100, removes
/// certainty cities iteratively at Js=16, and designates per-city target
/// counts (325 for large-sample cities, 100 otherwise).
pub fn fragile_families_scenario(
    path: Option<&Path>,
    outcome: OutcomeKind,
    replicates: usize,
    seed: u64,
) -> Result<(Scenario, FfReport)> {
    let rows = match path {
        Some(p) => {
            let file = std::fs::File::open(p)?;
            parse_ff_rows(BufReader::new(file), &p.display().to_string())?
        }
        None => parse_ff_rows(FF_CITY_SIZES.as_bytes(), "bundled")?,
    };
    if rows.len() != FF_FRAME_ROWS {
        return Err(Error::FileFormat(format!(
            "city frame needs exactly {FF_FRAME_ROWS} rows, found {}",
            rows.len()
        )));
    }
    // iterative certainty removal at the design's first-stage size
    let mut keep: Vec<(usize, FfCity)> = rows.into_iter().enumerate().collect();
    let mut removed = Vec::new();
    loop {
        let n: u64 = keep.iter().map(|(_, c)| c.scaled_size).sum();
        let before = keep.len();
        let (drop, rest): (Vec<_>, Vec<_>) = keep
            .into_iter()
            .partition(|(_, c)| FF_SAMPLED_CITIES as f64 * c.scaled_size as f64 / n as f64 >= 1.0);
        for (idx, c) in drop {
            removed.push((idx, c.scaled_size));
        }
        keep = rest;
        if keep.len() == before {
            break;
        }
        if keep.len() <= FF_SAMPLED_CITIES {
            return Err(Error::CertaintyCluster(
                "certainty removal left too few cities".into(),
            ));
        }
    }
    removed.sort_unstable();
    let cities: Vec<FfCity> = keep.into_iter().map(|(_, c)| c).collect();
    let sizes: Vec<u64> = cities.iter().map(|c| c.scaled_size).collect();
    let targets: Vec<u64> = cities
        .iter()
        .map(|c| if c.large_sample { FF_LARGE_TARGET } else { FF_SMALL_TARGET })
        .collect();
    let large_count = cities.iter().filter(|c| c.large_sample).count();
    let n_large = large_count.min(FF_SAMPLED_CITIES) as u64;
    let target_units =
        FF_LARGE_TARGET * n_large + FF_SMALL_TARGET * (FF_SAMPLED_CITIES as u64 - n_large);
    let scenario = Scenario {
        id: format!("ff_{outcome}"),
        frame: FrameSpec::Explicit { sizes, label: "fragile_families".into() },
        outcome,
        design: ScenarioDesign::Designated { js: FF_SAMPLED_CITIES, targets },
        replicates,
        seed,
        target_units: Some(target_units),
        hyper: DgpHyper::default(),
    };
    Ok((scenario, FfReport { removed, cities, large_count }))
}

/// Summary table of frame size distributions on raw and log10 scales.
pub fn size_density_report(frames: &[(String, Vec<u64>)]) -> Vec<(String, String, String, f64)> {
    let mut out = Vec::new();
    for (label, sizes) in frames {
        if sizes.is_empty() {
            continue;
        }
        let raw: Vec<f64> = sizes.iter().map(|&s| s as f64).collect();
        let log10: Vec<f64> = raw.iter().map(|v| v.log10()).collect();
        for (scale, values) in [("raw", &raw), ("log10", &log10)] {
            let mut sorted = values.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for q in (0..=100).step_by(5) {
                out.push((
                    label.clone(),
                    scale.to_string(),
                    format!("q{q:03}"),
                    stats::quantile_sorted(&sorted, q as f64 / 100.0),
                ));
            }
            out.push((label.clone(), scale.to_string(), "mean".into(), stats::mean(values)));
            out.push((label.clone(), scale.to_string(), "sd".into(), stats::sample_sd(values)));
            out.push((
                label.clone(),
                scale.to_string(),
                "skewness".into(),
                stats::sample_skewness(values),
            ));
        }
    }
    out
}

pub fn write_density_csv(table: &[(String, String, String, f64)], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "frame,scale,stat,value")?;
    for (label, scale, stat, value) in table {
        writeln!(w, "{label},{scale},{stat},{value}")?;
    }
    Ok(())
}

fn fmt_metric(v: f64) -> String {
    if v.is_nan() {
        "NA".into()
    } else {
        format!("{v:.6}")
    }
}

/// Report CSV: one row per (scenario, method).
pub fn write_report_csv(reports: &[MetricsReport], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(
        w,
        "scenario_id,frame,outcome,Js,design,method,L,discarded,rel_bias,rrmse,cover50,cover95,relwidth50,relwidth95"
    )?;
    for rep in reports {
        for row in &rep.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                rep.scenario_id,
                rep.frame_label,
                rep.outcome,
                rep.js,
                rep.design_label,
                row.method,
                row.kept,
                row.discarded,
                fmt_metric(row.rel_bias),
                fmt_metric(row.rrmse),
                fmt_metric(row.cover50),
                fmt_metric(row.cover95),
                fmt_metric(row.relwidth50),
                fmt_metric(row.relwidth95),
            )?;
        }
    }
    Ok(())
}

/// Long-format figure data: one row per (scenario, method, metric).
pub fn write_figure_csv(reports: &[MetricsReport], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "scenario_id,frame,outcome,Js,design,method,metric,value")?;
    for rep in reports {
        for row in &rep.rows {
            for (metric, value) in [
                ("rel_bias", row.rel_bias),
                ("rrmse", row.rrmse),
                ("cover50", row.cover50),
                ("cover95", row.cover95),
                ("relwidth50", row.relwidth50),
                ("relwidth95", row.relwidth95),
            ] {
                writeln!(
                    w,
                    "{},{},{},{},{},{},{metric},{}",
                    rep.scenario_id,
                    rep.frame_label,
                    rep.outcome,
                    rep.js,
                    rep.design_label,
                    row.method,
                    fmt_metric(value),
                )?;
            }
        }
    }
    Ok(())
}
