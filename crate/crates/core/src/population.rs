//! Finite populations of clustered units and the generating process used
//! by the simulation study.

use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson};

use crate::error::{Error, Result};
use crate::rng;

/// How many whole-frame redraws to attempt before declaring the
/// no-certainty constraint unsatisfiable.
pub const FRAME_RESAMPLE_CAP: usize = 10_000;

/// Mechanism that produces a vector of cluster sizes.
#[derive(Debug, Clone, PartialEq)]
pub enum FrameSource {
    /// Every size drawn from Poisson(rate), resampled to be >= 1.
    PoissonRate(f64),
    /// Candidate sizes scale*Gamma(shape, rate), redistributed by a
    /// multinomial draw with Dirichlet(concentration) probabilities.
    GammaMultinomial {
        shape: f64,
        rate: f64,
        scale: f64,
        concentration: f64,
    },
    /// Sizes read from a plain-text file, one per line.
    FromFile(PathBuf),
}

impl fmt::Display for FrameSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FrameSource::PoissonRate(r) => write!(f, "poisson({r})"),
            FrameSource::GammaMultinomial { shape, rate, scale, concentration } => {
                write!(f, "gamma_multinomial({shape},{rate},{scale},{concentration})")
            }
            FrameSource::FromFile(p) => write!(f, "file({})", p.display()),
        }
    }
}

/// Full roster of cluster sizes; the first-stage sampling frame.
#[derive(Debug, Clone)]
pub struct ClusterSizeFrame {
    sizes: Vec<u64>,
    source: Option<FrameSource>,
}

impl ClusterSizeFrame {
    /// Wraps an explicit size vector. Used by tests and by frame-file loading.
    pub fn from_sizes(sizes: Vec<u64>) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::InvalidParameter(format!(
                "frame needs at least 2 clusters, got {}",
                sizes.len()
            )));
        }
        if sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidParameter("cluster size 0 in frame".into()));
        }
        Ok(Self { sizes, source: None })
    }

    fn with_source(sizes: Vec<u64>, source: FrameSource) -> Result<Self> {
        let mut frame = Self::from_sizes(sizes)?;
        frame.source = Some(source);
        Ok(frame)
    }

    pub fn sizes(&self) -> &[u64] {
        &self.sizes
    }

    pub fn source(&self) -> Option<&FrameSource> {
        self.source.as_ref()
    }

    /// Number of clusters J.
    pub fn num_clusters(&self) -> usize {
        self.sizes.len()
    }

    /// Total unit count N.
    pub fn total_units(&self) -> u64 {
        self.sizes.iter().sum()
    }

    /// True when no cluster would be selected with certainty at the given
    /// first-stage sample size: Js * Nj / N < 1 for all j.
    pub fn no_certainty(&self, js: usize) -> bool {
        let n = self.total_units() as f64;
        let js = js as f64;
        self.sizes.iter().all(|&nj| js * nj as f64 / n < 1.0)
    }

    /// Writes the frame as plain text, one size per line.
    pub fn write_file(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str("# cluster sizes, one per line\n");
        for s in &self.sizes {
            out.push_str(&format!("{s}\n"));
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Reads a frame file: one positive size per line, `#` comments allowed.
/// Real values are rounded to the nearest integer with a floor of 1.
pub fn read_frame_file(path: &Path) -> Result<Vec<u64>> {
    let file = std::fs::File::open(path)?;
    let mut sizes = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let value: f64 = body.split_whitespace().next().unwrap().parse().map_err(|_| {
            Error::FileFormat(format!("{}:{}: not a number: {body:?}", path.display(), lineno + 1))
        })?;
        if value <= 0.0 || !value.is_finite() {
            return Err(Error::FileFormat(format!(
                "{}:{}: size must be positive, got {value}",
                path.display(),
                lineno + 1
            )));
        }
        sizes.push((value.round().max(1.0)) as u64);
    }
    if sizes.is_empty() {
        return Err(Error::FileFormat(format!("{}: no sizes found", path.display())));
    }
    Ok(sizes)
}

fn draw_sizes(source: &FrameSource, j: usize, rng: &mut impl Rng) -> Result<Vec<u64>> {
    match source {
        FrameSource::PoissonRate(lambda) => {
            if *lambda <= 0.0 {
                return Err(Error::InvalidParameter(format!("Poisson rate {lambda} <= 0")));
            }
            let pois = Poisson::new(*lambda)
                .map_err(|e| Error::InvalidParameter(format!("Poisson({lambda}): {e}")))?;
            let mut sizes = Vec::with_capacity(j);
            for _ in 0..j {
                // sizes are unit counts; redraw the rare zero
                let mut s = pois.sample(rng) as u64;
                while s == 0 {
                    s = pois.sample(rng) as u64;
                }
                sizes.push(s);
            }
            Ok(sizes)
        }
        FrameSource::GammaMultinomial { shape, rate, scale, concentration } => {
            if *shape <= 0.0 || *rate <= 0.0 || *scale <= 0.0 || *concentration <= 0.0 {
                return Err(Error::InvalidParameter(
                    "GammaMultinomial parameters must be positive".into(),
                ));
            }
            let gamma = Gamma::new(*shape, 1.0 / rate)
                .map_err(|e| Error::InvalidParameter(format!("Gamma({shape},{rate}): {e}")))?;
            // candidate support: scale * G_b, rounded to counts
            let candidates: Vec<u64> = (0..j)
                .map(|_| ((scale * gamma.sample(rng)).round().max(1.0)) as u64)
                .collect();
            // Dirichlet(concentration, ..., concentration) via normalized gammas
            let conc = Gamma::new(*concentration, 1.0).unwrap();
            let mut probs: Vec<f64> = (0..j).map(|_| conc.sample(rng).max(1e-300)).collect();
            let total: f64 = probs.iter().sum();
            for p in &mut probs {
                *p /= total;
            }
            let counts = multinomial_draw(j as u64, &probs, rng);
            let mut sizes = Vec::with_capacity(j);
            for (b, &k) in counts.iter().enumerate() {
                for _ in 0..k {
                    sizes.push(candidates[b]);
                }
            }
            Ok(sizes)
        }
        FrameSource::FromFile(path) => {
            let sizes = read_frame_file(path)?;
            if sizes.len() != j {
                return Err(Error::FileFormat(format!(
                    "{}: expected {} sizes, found {}",
                    path.display(),
                    j,
                    sizes.len()
                )));
            }
            Ok(sizes)
        }
    }
}

/// Multinomial(n, probs) by sequential conditional binomials.
pub(crate) fn multinomial_draw(n: u64, probs: &[f64], rng: &mut impl Rng) -> Vec<u64> {
    let mut counts = vec![0u64; probs.len()];
    let mut remaining = n;
    let mut prob_left = 1.0f64;
    for (b, &p) in probs.iter().enumerate() {
        if remaining == 0 {
            break;
        }
        if b + 1 == probs.len() || prob_left <= 0.0 {
            counts[b] = remaining;
            break;
        }
        let cond = (p / prob_left).clamp(0.0, 1.0);
        let draw = rand_distr::Binomial::new(remaining, cond).unwrap().sample(rng);
        counts[b] = draw;
        remaining -= draw;
        prob_left -= p;
    }
    counts
}

/// Draws a frame from `source`, redrawing until no cluster would be a
/// certainty selection at first-stage sample size `js_max`.
///
/// File-backed frames get a single attempt: there is nothing to redraw.
pub fn generate_frame(
    source: &FrameSource,
    j: usize,
    js_max: usize,
    rng: &mut impl Rng,
) -> Result<ClusterSizeFrame> {
    if j < 2 {
        return Err(Error::InvalidParameter(format!("J must be >= 2, got {j}")));
    }
    if js_max == 0 || js_max >= j {
        return Err(Error::InvalidParameter(format!("Js must satisfy 0 < Js < J, got {js_max}")));
    }
    let attempts = if matches!(source, FrameSource::FromFile(_)) { 1 } else { FRAME_RESAMPLE_CAP };
    for _ in 0..attempts {
        let frame = ClusterSizeFrame::with_source(draw_sizes(source, j, rng)?, source.clone())?;
        if frame.no_certainty(js_max) {
            return Ok(frame);
        }
        if attempts == 1 {
            return Err(Error::CertaintyCluster(format!(
                "frame file contains a cluster with Js*Nj/N >= 1 at Js={js_max}"
            )));
        }
    }
    Err(Error::FrameResampleCap { attempts, js: js_max })
}

/// Which set of sizes supplies the centering constant for log sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CenterReference {
    /// Only sampled clusters are known at estimation time.
    SampledOnly,
    /// The full frame; used by the data-generating process.
    All,
}

/// Centered log sizes together with the constant that produced them, so
/// prediction can center new (drawn) sizes identically.
#[derive(Debug, Clone)]
pub struct CenteredLogSizes {
    pub values: Vec<f64>,
    pub center: f64,
    pub reference: CenterReference,
}

impl CenteredLogSizes {
    /// Centers the log of a new size with the stored constant.
    pub fn center_size(&self, size: u64) -> f64 {
        (size as f64).ln() - self.center
    }
}

/// log(Nj) minus the mean log size over the reference set.
pub fn centered_log_sizes(sizes: &[u64], reference: CenterReference) -> Result<CenteredLogSizes> {
    if sizes.is_empty() {
        return Err(Error::InvalidParameter("empty size set for centering".into()));
    }
    if sizes.iter().any(|&s| s == 0) {
        return Err(Error::InvalidParameter("size 0 has no log".into()));
    }
    let logs: Vec<f64> = sizes.iter().map(|&s| (s as f64).ln()).collect();
    let center = logs.iter().sum::<f64>() / logs.len() as f64;
    Ok(CenteredLogSizes {
        values: logs.iter().map(|l| l - center).collect(),
        center,
        reference,
    })
}

/// Outcome type of the survey variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutcomeKind {
    Continuous,
    Binary,
}

impl fmt::Display for OutcomeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OutcomeKind::Continuous => write!(f, "continuous"),
            OutcomeKind::Binary => write!(f, "binary"),
        }
    }
}

/// Hyperparameters of the generating process: the scales from which the
/// regression parameters are drawn. Zero scales give degenerate draws,
/// which the oracle tests rely on.
#[derive(Debug, Clone)]
pub struct DgpHyper {
    pub alpha_sd: f64,
    pub gamma_sd: f64,
    pub sigma_beta_sd: f64,
    pub sigma_y_sd: f64,
}

impl Default for DgpHyper {
    fn default() -> Self {
        Self { alpha_sd: 1.0, gamma_sd: 1.0, sigma_beta_sd: 0.5, sigma_y_sd: 0.75 }
    }
}

/// Realized generating-process parameters for one population.
#[derive(Debug, Clone)]
pub struct DgpParams {
    pub alpha0: f64,
    pub alpha1: f64,
    pub gamma0: f64,
    pub gamma1: f64,
    pub sigma_beta0: f64,
    pub sigma_beta1: f64,
    pub sigma_y: f64,
    pub beta0: Vec<f64>,
    pub beta1: Vec<f64>,
}

/// The true mean and its per-cluster decomposition, kept on the oracle
/// side for metric computation.
#[derive(Debug, Clone)]
pub struct TruthRecord {
    pub ybar: f64,
    pub per_cluster_means: Vec<f64>,
}

/// One unit's covariate and outcome.
#[derive(Debug, Clone, Copy)]
pub struct Unit {
    pub x: f64,
    pub y: f64,
}

/// A fully enumerated finite population: ground truth for every oracle.
#[derive(Debug, Clone)]
pub struct FinitePopulation {
    pub frame: ClusterSizeFrame,
    pub units: Vec<Vec<Unit>>,
    pub outcome_kind: OutcomeKind,
    pub truth: TruthRecord,
    pub params: DgpParams,
}

impl FinitePopulation {
    /// Cluster-level means of the covariate, known for all clusters.
    pub fn xbar_all(&self) -> Vec<f64> {
        self.units
            .iter()
            .map(|us| us.iter().map(|u| u.x).sum::<f64>() / us.len() as f64)
            .collect()
    }

    /// Population mean of the covariate (zero up to rounding by construction).
    pub fn xbar_pop(&self) -> f64 {
        let n = self.frame.total_units() as f64;
        self.units.iter().flatten().map(|u| u.x).sum::<f64>() / n
    }

    /// Recomputes the population mean directly from the unit roster.
    pub fn brute_force_mean(&self) -> f64 {
        let mut total = 0.0;
        let mut count = 0u64;
        for cluster in &self.units {
            for u in cluster {
                total += u.y;
                count += 1;
            }
        }
        total / count as f64
    }

    /// Writes the columnar export (cluster_id, unit_id, x, y).
    pub fn write_export(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        writeln!(w, "# outcome={}", self.outcome_kind)?;
        writeln!(w, "cluster_id\tunit_id\tx\ty")?;
        for (j, cluster) in self.units.iter().enumerate() {
            for (i, u) in cluster.iter().enumerate() {
                writeln!(w, "{j}\t{i}\t{}\t{}", u.x, u.y)?;
            }
        }
        Ok(())
    }

    /// Reads a columnar export back into a population. The truth record is
    /// recomputed from the roster; generating parameters are not recoverable
    /// and are zeroed.
    pub fn read_export(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut outcome_kind = None;
        let mut units: Vec<Vec<Unit>> = Vec::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            let t = line.trim();
            if let Some(rest) = t.strip_prefix('#') {
                if let Some(v) = rest.trim().strip_prefix("outcome=") {
                    outcome_kind = Some(match v.trim() {
                        "continuous" => OutcomeKind::Continuous,
                        "binary" => OutcomeKind::Binary,
                        other => {
                            return Err(Error::FileFormat(format!("unknown outcome {other:?}")))
                        }
                    });
                }
                continue;
            }
            if t.is_empty() || t.starts_with("cluster_id") {
                continue;
            }
            let cols: Vec<&str> = t.split_whitespace().collect();
            if cols.len() != 4 {
                return Err(Error::FileFormat(format!(
                    "{}:{}: expected 4 columns",
                    path.display(),
                    lineno + 1
                )));
            }
            let j: usize = cols[0].parse().map_err(|_| {
                Error::FileFormat(format!("{}:{}: bad cluster_id", path.display(), lineno + 1))
            })?;
            let x: f64 = cols[2].parse().map_err(|_| {
                Error::FileFormat(format!("{}:{}: bad x", path.display(), lineno + 1))
            })?;
            let y: f64 = cols[3].parse().map_err(|_| {
                Error::FileFormat(format!("{}:{}: bad y", path.display(), lineno + 1))
            })?;
            if units.len() <= j {
                units.resize(j + 1, Vec::new());
            }
            units[j].push(Unit { x, y });
        }
        if units.is_empty() || units.iter().any(|c| c.is_empty()) {
            return Err(Error::FileFormat(format!("{}: empty population", path.display())));
        }
        let outcome_kind = outcome_kind.ok_or_else(|| {
            Error::FileFormat(format!("{}: missing '# outcome=' header", path.display()))
        })?;
        let sizes: Vec<u64> = units.iter().map(|c| c.len() as u64).collect();
        let frame = ClusterSizeFrame::with_source(sizes, FrameSource::FromFile(path.to_path_buf()))?;
        let truth = truth_from_units(&frame, &units);
        let j = frame.num_clusters();
        let params = DgpParams {
            alpha0: 0.0,
            alpha1: 0.0,
            gamma0: 0.0,
            gamma1: 0.0,
            sigma_beta0: 0.0,
            sigma_beta1: 0.0,
            sigma_y: 0.0,
            beta0: vec![0.0; j],
            beta1: vec![0.0; j],
        };
        Ok(Self { frame, units, outcome_kind, truth, params })
    }
}

fn truth_from_units(frame: &ClusterSizeFrame, units: &[Vec<Unit>]) -> TruthRecord {
    let n = frame.total_units() as f64;
    let per_cluster_means: Vec<f64> = units
        .iter()
        .map(|us| us.iter().map(|u| u.y).sum::<f64>() / us.len() as f64)
        .collect();
    let ybar = frame
        .sizes()
        .iter()
        .zip(&per_cluster_means)
        .map(|(&nj, &m)| nj as f64 * m)
        .sum::<f64>()
        / n;
    TruthRecord { ybar, per_cluster_means }
}

fn half_normal(sd: f64, rng: &mut impl Rng) -> f64 {
    if sd == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sd).unwrap().sample(rng).abs()
}

/// Draws generating parameters from the hyper spec, using centered log
/// sizes over the whole frame for the cluster-level regressions.
pub fn draw_dgp_params(
    frame: &ClusterSizeFrame,
    hyper: &DgpHyper,
    rng: &mut impl Rng,
) -> Result<DgpParams> {
    if hyper.alpha_sd < 0.0 || hyper.gamma_sd < 0.0 || hyper.sigma_beta_sd < 0.0 || hyper.sigma_y_sd < 0.0 {
        return Err(Error::InvalidParameter("negative hyper sd".into()));
    }
    let normal = |sd: f64, rng: &mut dyn rand::RngCore| -> f64 {
        if sd == 0.0 { 0.0 } else { Normal::new(0.0, sd).unwrap().sample(rng) }
    };
    let alpha0 = normal(hyper.alpha_sd, rng);
    let alpha1 = normal(hyper.alpha_sd, rng);
    let gamma0 = normal(hyper.gamma_sd, rng);
    let gamma1 = normal(hyper.gamma_sd, rng);
    let sigma_beta0 = half_normal(hyper.sigma_beta_sd, rng);
    let sigma_beta1 = half_normal(hyper.sigma_beta_sd, rng);
    let sigma_y = half_normal(hyper.sigma_y_sd, rng);

    let logs = centered_log_sizes(frame.sizes(), CenterReference::All)?;
    let j = frame.num_clusters();
    let mut beta0 = Vec::with_capacity(j);
    let mut beta1 = Vec::with_capacity(j);
    for &c in &logs.values {
        beta0.push(alpha0 + gamma0 * c + normal(sigma_beta0, rng));
        beta1.push(alpha1 + gamma1 * c + normal(sigma_beta1, rng));
    }
    Ok(DgpParams { alpha0, alpha1, gamma0, gamma1, sigma_beta0, sigma_beta1, sigma_y, beta0, beta1 })
}

/// Synthesizes a population from explicit generating parameters.
///
/// Covariates are drawn uniformly on the integers 20..=45 and centered by
/// the realized population mean, which makes the mean decompositions exact.
pub fn generate_population_with_params(
    frame: &ClusterSizeFrame,
    params: DgpParams,
    outcome_kind: OutcomeKind,
    rng: &mut impl Rng,
) -> Result<FinitePopulation> {
    let j = frame.num_clusters();
    if params.beta0.len() != j || params.beta1.len() != j {
        return Err(Error::InvalidParameter("beta vectors must have length J".into()));
    }
    if params.sigma_y < 0.0 {
        return Err(Error::InvalidParameter("sigma_y < 0".into()));
    }
    let n_total = frame.total_units();
    // raw covariates first, so the centering constant is the realized mean
    let mut raw_x: Vec<Vec<f64>> = Vec::with_capacity(j);
    let mut sum_x = 0.0f64;
    for &nj in frame.sizes() {
        let mut xs = Vec::with_capacity(nj as usize);
        for _ in 0..nj {
            let v = rng.gen_range(20..=45) as f64;
            sum_x += v;
            xs.push(v);
        }
        raw_x.push(xs);
    }
    let xbar = sum_x / n_total as f64;

    let mut units: Vec<Vec<Unit>> = Vec::with_capacity(j);
    for (jj, xs) in raw_x.into_iter().enumerate() {
        let b0 = params.beta0[jj];
        let b1 = params.beta1[jj];
        let mut cluster = Vec::with_capacity(xs.len());
        for v in xs {
            let x = v - xbar;
            let y = match outcome_kind {
                OutcomeKind::Continuous => {
                    let mu = b0 + b1 * x;
                    if params.sigma_y == 0.0 {
                        mu
                    } else {
                        Normal::new(mu, params.sigma_y).unwrap().sample(rng)
                    }
                }
                OutcomeKind::Binary => {
                    let p = crate::stats::logistic(b0);
                    if rng.gen::<f64>() < p {
                        1.0
                    } else {
                        0.0
                    }
                }
            };
            cluster.push(Unit { x, y });
        }
        units.push(cluster);
    }
    let truth = truth_from_units(frame, &units);
    Ok(FinitePopulation { frame: frame.clone(), units, outcome_kind, truth, params })
}

/// Draws generating parameters from `hyper` and synthesizes a population.
pub fn generate_population(
    frame: &ClusterSizeFrame,
    hyper: &DgpHyper,
    outcome_kind: OutcomeKind,
    rng: &mut impl Rng,
) -> Result<FinitePopulation> {
    let params = draw_dgp_params(frame, hyper, rng)?;
    generate_population_with_params(frame, params, outcome_kind, rng)
}

/// Convenience: seeded population build used by the harness.
pub fn population_from_seed(
    source: &FrameSource,
    j: usize,
    js_max: usize,
    hyper: &DgpHyper,
    outcome_kind: OutcomeKind,
    seed: u64,
) -> Result<FinitePopulation> {
    let mut r = rng::rng_from_seed(rng::derive_seed(seed, "population", 0));
    let frame = generate_frame(source, j, js_max, &mut r)?;
    generate_population(&frame, hyper, outcome_kind, &mut r)
}
