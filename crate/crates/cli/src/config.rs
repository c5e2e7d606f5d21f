//! TOML run configuration. Unknown keys are rejected and the seed is
//! mandatory: a run that cannot be reproduced is a bug, not a feature.

use std::path::{Path, PathBuf};

use ppscluster::design::{DesignSpec, WithinDesign};
use ppscluster::mcmc::SamplerConfig;
use ppscluster::population::{DgpHyper, FrameSource, OutcomeKind};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub frame: FrameConfig,
    pub population: PopulationConfig,
    #[serde(default)]
    pub design: Option<DesignConfig>,
    #[serde(default)]
    pub sampler: Option<SamplerSection>,
    #[serde(default)]
    pub simulate: Option<SimulateSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameConfig {
    /// poisson | gamma_multinomial | fragile_families | file
    pub source: String,
    pub clusters: Option<usize>,
    pub rate: Option<f64>,
    pub shape: Option<f64>,
    pub gamma_rate: Option<f64>,
    pub scale: Option<f64>,
    pub concentration: Option<f64>,
    pub path: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationConfig {
    /// continuous | binary
    pub outcome: String,
    pub alpha_sd: Option<f64>,
    pub gamma_sd: Option<f64>,
    pub sigma_beta_sd: Option<f64>,
    pub sigma_y_sd: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    pub clusters_sampled: usize,
    /// "fraction:0.1" | "count:50" | "designated"
    pub within: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    pub chains: Option<usize>,
    pub warmup: Option<usize>,
    pub draws: Option<usize>,
    pub max_draws: Option<usize>,
    pub escalation: Option<bool>,
    pub noncentered: Option<bool>,
    pub plugin_approximation: Option<bool>,
    pub target_accept: Option<f64>,
    pub max_leapfrog: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub replicates: usize,
    pub methods: Vec<String>,
    /// Optional grid expansion; overrides [design] when present.
    pub js: Option<Vec<usize>>,
    pub within: Option<Vec<String>>,
}

impl Config {
    pub fn load(path: &Path) -> Result<Config, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let cfg: Config = toml::from_str(&text)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        if let Some(p) = &cfg.frame.path {
            if !p.exists() {
                return Err(CliError::Usage(format!(
                    "frame.path {} does not exist",
                    p.display()
                )));
            }
        }
        Ok(cfg)
    }

    pub fn outcome(&self) -> Result<OutcomeKind, CliError> {
        match self.population.outcome.as_str() {
            "continuous" => Ok(OutcomeKind::Continuous),
            "binary" => Ok(OutcomeKind::Binary),
            other => Err(CliError::Usage(format!("population.outcome {other:?} unknown"))),
        }
    }

    pub fn hyper(&self) -> DgpHyper {
        let d = DgpHyper::default();
        DgpHyper {
            alpha_sd: self.population.alpha_sd.unwrap_or(d.alpha_sd),
            gamma_sd: self.population.gamma_sd.unwrap_or(d.gamma_sd),
            sigma_beta_sd: self.population.sigma_beta_sd.unwrap_or(d.sigma_beta_sd),
            sigma_y_sd: self.population.sigma_y_sd.unwrap_or(d.sigma_y_sd),
        }
    }

    pub fn sampler(&self, seed: u64) -> SamplerConfig {
        let base = SamplerConfig::default();
        let s = self.sampler.as_ref();
        SamplerConfig {
            chains: s.and_then(|s| s.chains).unwrap_or(base.chains),
            warmup: s.and_then(|s| s.warmup).unwrap_or(base.warmup),
            draws: s.and_then(|s| s.draws).unwrap_or(base.draws),
            max_draws: s.and_then(|s| s.max_draws).unwrap_or(base.max_draws),
            escalate: s.and_then(|s| s.escalation).unwrap_or(base.escalate),
            target_accept: s.and_then(|s| s.target_accept).unwrap_or(base.target_accept),
            max_leapfrog: s.and_then(|s| s.max_leapfrog).unwrap_or(base.max_leapfrog),
            noncentered: s.and_then(|s| s.noncentered).unwrap_or(false),
            plugin_approximation: s.and_then(|s| s.plugin_approximation).unwrap_or(false),
            seed,
            ..base
        }
    }

    pub fn is_fragile_families(&self) -> bool {
        self.frame.source == "fragile_families"
    }

    pub fn frame_source(&self) -> Result<(FrameSource, usize), CliError> {
        let j = self.frame.clusters;
        match self.frame.source.as_str() {
            "poisson" => {
                let rate = self
                    .frame
                    .rate
                    .ok_or_else(|| CliError::Usage("frame.rate required for poisson".into()))?;
                Ok((
                    FrameSource::PoissonRate(rate),
                    j.ok_or_else(|| CliError::Usage("frame.clusters required".into()))?,
                ))
            }
            "gamma_multinomial" => Ok((
                FrameSource::GammaMultinomial {
                    shape: self.frame.shape.unwrap_or(10.0),
                    rate: self.frame.gamma_rate.unwrap_or(1.0),
                    scale: self.frame.scale.unwrap_or(100.0),
                    concentration: self.frame.concentration.unwrap_or(10.0),
                },
                j.ok_or_else(|| CliError::Usage("frame.clusters required".into()))?,
            )),
            "file" => {
                let path = self
                    .frame
                    .path
                    .clone()
                    .ok_or_else(|| CliError::Usage("frame.path required for file source".into()))?;
                let j = j.ok_or_else(|| CliError::Usage("frame.clusters required".into()))?;
                Ok((FrameSource::FromFile(path), j))
            }
            "fragile_families" => Err(CliError::Usage(
                "fragile_families frames are handled by the scenario builder".into(),
            )),
            other => Err(CliError::Usage(format!("frame.source {other:?} unknown"))),
        }
    }
}

pub fn parse_within(text: &str) -> Result<WithinDesign, CliError> {
    if let Some(v) = text.strip_prefix("fraction:") {
        let rho: f64 = v
            .parse()
            .map_err(|_| CliError::Usage(format!("bad fraction in within spec {text:?}")))?;
        return Ok(WithinDesign::FixedFraction(rho));
    }
    if let Some(v) = text.strip_prefix("count:") {
        let n: u64 = v
            .parse()
            .map_err(|_| CliError::Usage(format!("bad count in within spec {text:?}")))?;
        return Ok(WithinDesign::FixedCount(n));
    }
    Err(CliError::Usage(format!(
        "within spec {text:?} must be fraction:<rho> or count:<n>"
    )))
}

pub fn parse_design(cfg: &DesignConfig) -> Result<DesignSpec, CliError> {
    Ok(DesignSpec { js: cfg.clusters_sampled, within: parse_within(&cfg.within)? })
}
