//! Subcommand implementations. Every statistical computation is a library
//! call; the CLI only parses, dispatches, and serializes.

use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};

use ppscluster::design::draw_sample;
use ppscluster::estimators::{greg, hajek};
use ppscluster::harness::{
    fragile_families_scenario, run_scenario, size_density_report, validate_methods,
    write_density_csv, write_figure_csv, write_report_csv, FrameSpec, Method, MetricsReport,
    Scenario, ScenarioDesign,
};
use ppscluster::mcmc::{
    draw_nonsampled_sizes, predict_ybar, run_chains, size_total_discrepancy, ModelContext,
    NonsampledSizes, OutcomeModelKind, OutcomeModelSpec, SamplerConfig,
};
use ppscluster::population::{
    generate_frame, generate_population, FinitePopulation, OutcomeKind,
};
use ppscluster::rng::{derive_seed, rng_from_seed};
use ppscluster::sizes::{known_sizes, SizeModelKind};
use ppscluster::Error;

use crate::config::{parse_design, parse_within, Config};
use crate::CliError;

/// Set by the SIGINT handler; checked between scenario cells.
pub static INTERRUPTED: AtomicBool = AtomicBool::new(false);

fn ensure_out_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

fn map_core(e: Error) -> CliError {
    match e {
        Error::Io(e) => CliError::Io(e.to_string()),
        Error::FileFormat(m) => CliError::Io(m),
        Error::NotConverged(m) => CliError::Stat(m),
        other => CliError::Usage(other.to_string()),
    }
}

pub fn cmd_generate(config: &Config, out_dir: &Path) -> Result<(), CliError> {
    ensure_out_dir(out_dir)?;
    let outcome = config.outcome()?;
    let seed = config.seed;
    let mut rng = rng_from_seed(derive_seed(seed, "population", 0));

    let frame = if config.is_fragile_families() {
        let (scenario, report) = fragile_families_scenario(
            config.frame.path.as_deref(),
            outcome,
            1,
            seed,
        )
        .map_err(map_core)?;
        eprintln!(
            "processed city frame: {} cities kept, {} certainty removals",
            report.cities.len(),
            report.removed.len()
        );
        match scenario.frame {
            FrameSpec::Explicit { sizes, .. } => {
                ppscluster::population::ClusterSizeFrame::from_sizes(sizes).map_err(map_core)?
            }
            _ => unreachable!(),
        }
    } else {
        let (source, j) = config.frame_source()?;
        let js = config.design.as_ref().map(|d| d.clusters_sampled).unwrap_or(j / 2);
        generate_frame(&source, j, js, &mut rng).map_err(map_core)?
    };

    let frame_path = out_dir.join("frame.txt");
    frame.write_file(&frame_path).map_err(map_core)?;

    let pop = generate_population(&frame, &config.hyper(), outcome, &mut rng).map_err(map_core)?;
    let pop_path = out_dir.join("population.tsv");
    pop.write_export(&pop_path).map_err(map_core)?;
    println!(
        "generated frame ({} clusters, {} units) -> {} ; population -> {} ; true mean {:.6}",
        frame.num_clusters(),
        frame.total_units(),
        frame_path.display(),
        pop_path.display(),
        pop.truth.ybar
    );
    Ok(())
}

fn method_from_str(name: &str) -> Result<Method, CliError> {
    name.parse().map_err(|_| CliError::Usage(format!("unknown method {name:?}")))
}

#[derive(serde::Serialize)]
struct EstimateLine {
    method: String,
    point: f64,
    ci50: Option<(f64, f64)>,
    ci95: Option<(f64, f64)>,
    variance: Option<f64>,
    discarded: bool,
    max_rhat: Option<f64>,
    min_ess: Option<f64>,
    divergences: Option<usize>,
    /// Mean relative gap between implied and known population totals.
    size_total_gap: Option<f64>,
    sample_seed: u64,
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_estimate(
    config: &Config,
    population: &Path,
    method_name: &str,
    sample_seed: u64,
    out_dir: Option<&Path>,
    dump_draws: Option<&Path>,
) -> Result<(), CliError> {
    let method = method_from_str(method_name)?;
    let pop = FinitePopulation::read_export(population).map_err(map_core)?;
    if pop.outcome_kind == OutcomeKind::Binary && method == Method::Greg {
        return Err(CliError::Usage("greg applies to continuous outcomes only".into()));
    }
    let design = parse_design(
        config
            .design
            .as_ref()
            .ok_or_else(|| CliError::Usage("[design] section required for estimate".into()))?,
    )?;
    let mut rng = rng_from_seed(derive_seed(config.seed, "estimate-sample", sample_seed));
    let sample = draw_sample(&pop, &design, &mut rng).map_err(map_core)?;
    if let Some(dir) = out_dir {
        ensure_out_dir(dir)?;
        sample.write_export(&dir.join("sample.tsv")).map_err(map_core)?;
    }

    let line = match method {
        Method::Hajek | Method::Greg => {
            let est = if method == Method::Hajek {
                hajek(&sample).map_err(map_core)?
            } else {
                greg(&sample).map_err(map_core)?
            };
            EstimateLine {
                method: method.to_string(),
                point: est.point,
                ci50: est.ci50,
                ci95: est.ci95,
                variance: est.variance,
                discarded: false,
                max_rhat: None,
                min_ess: None,
                divergences: None,
                size_total_gap: None,
                sample_seed,
            }
        }
        _ => {
            let kind = match (method, pop.outcome_kind) {
                (Method::ClusterInds, _) => OutcomeModelKind::ClusterIndsOnly,
                (_, OutcomeKind::Continuous) => OutcomeModelKind::ContinuousSlope,
                (_, OutcomeKind::Binary) => OutcomeModelKind::BinaryIntercept,
            };
            let size_model = match method {
                Method::NegBin => SizeModelKind::NegBin,
                Method::Lognormal => SizeModelKind::Lognormal,
                Method::Bb => SizeModelKind::BayesianBootstrap,
                _ => SizeModelKind::Known,
            };
            let cfg = config.sampler(derive_seed(config.seed, "estimate-mcmc", sample_seed));
            let mut spec =
                OutcomeModelSpec::new(kind, pop.outcome_kind, size_model).map_err(map_core)?;
            spec.noncentered = cfg.noncentered;
            spec.plugin_approximation = cfg.plugin_approximation;
            let ctx = ModelContext::new(spec, &sample).map_err(map_core)?;
            match run_chains(&ctx, &cfg) {
                Ok((draws, diag)) => {
                    if let Some(path) = dump_draws {
                        draws.write_dump(path).map_err(map_core)?;
                    }
                    let mut prng = rng_from_seed(derive_seed(cfg.seed, "predict", 0));
                    let sizes = match ctx.spec.size_model {
                        SizeModelKind::Known => {
                            NonsampledSizes::Fixed(known_sizes(&pop, &sample))
                        }
                        _ => draw_nonsampled_sizes(&ctx, &draws, &mut prng).map_err(map_core)?,
                    };
                    let gaps = size_total_discrepancy(&ctx, &sizes);
                    let gap = gaps.iter().sum::<f64>() / gaps.len() as f64;
                    let ybars = predict_ybar(&ctx, &draws, &sizes, &mut prng).map_err(map_core)?;
                    let mut sorted = ybars.clone();
                    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    let q = |p: f64| ppscluster::stats::quantile_sorted(&sorted, p);
                    EstimateLine {
                        method: method.to_string(),
                        point: sorted.iter().sum::<f64>() / sorted.len() as f64,
                        ci50: Some((q(0.25), q(0.75))),
                        ci95: Some((q(0.025), q(0.975))),
                        variance: None,
                        discarded: false,
                        max_rhat: Some(diag.max_rhat),
                        min_ess: Some(diag.min_ess),
                        divergences: Some(diag.divergences),
                        size_total_gap: Some(gap),
                        sample_seed,
                    }
                }
                Err(Error::NotConverged(msg)) => {
                    eprintln!("fit discarded: {msg}");
                    EstimateLine {
                        method: method.to_string(),
                        point: f64::NAN,
                        ci50: None,
                        ci95: None,
                        variance: None,
                        discarded: true,
                        max_rhat: None,
                        min_ess: None,
                        divergences: None,
                        size_total_gap: None,
                        sample_seed,
                    }
                }
                Err(e) => return Err(map_core(e)),
            }
        }
    };
    if line.discarded {
        println!("{}", serde_json::to_string(&line).unwrap());
        return Err(CliError::Stat("estimate discarded by the convergence protocol".into()));
    }
    println!("{}", serde_json::to_string(&line).unwrap());
    Ok(())
}

fn scenario_grid(config: &Config) -> Result<Vec<Scenario>, CliError> {
    let outcome = config.outcome()?;
    let sim = config
        .simulate
        .as_ref()
        .ok_or_else(|| CliError::Usage("[simulate] section required".into()))?;
    if config.is_fragile_families() {
        let (mut scenario, _report) = fragile_families_scenario(
            config.frame.path.as_deref(),
            outcome,
            sim.replicates,
            config.seed,
        )
        .map_err(map_core)?;
        scenario.hyper = config.hyper();
        return Ok(vec![scenario]);
    }
    let (source, j) = config.frame_source()?;
    let js_grid: Vec<usize> = match (&sim.js, &config.design) {
        (Some(g), _) => g.clone(),
        (None, Some(d)) => vec![d.clusters_sampled],
        (None, None) => return Err(CliError::Usage("need [design] or simulate.js".into())),
    };
    let within_grid: Vec<String> = match (&sim.within, &config.design) {
        (Some(g), _) => g.clone(),
        (None, Some(d)) => vec![d.within.clone()],
        (None, None) => return Err(CliError::Usage("need [design] or simulate.within".into())),
    };
    let mut scenarios = Vec::new();
    for &js in &js_grid {
        for w in &within_grid {
            let within = parse_within(w)?;
            scenarios.push(Scenario {
                id: format!("{}_{}_js{}_{}", source, outcome, js, w),
                frame: FrameSpec::Generate { source: source.clone(), j },
                outcome,
                design: ScenarioDesign::Standard(ppscluster::design::DesignSpec { js, within }),
                replicates: sim.replicates,
                seed: derive_seed(config.seed, "scenario", (js * 1000) as u64 ^ hash_str(w)),
                target_units: None,
                hyper: config.hyper(),
            });
        }
    }
    Ok(scenarios)
}

fn hash_str(s: &str) -> u64 {
    s.bytes().fold(1469598103934665603u64, |h, b| (h ^ b as u64).wrapping_mul(1099511628211))
}

pub fn cmd_simulate(
    config: &Config,
    out_dir: &Path,
    methods_override: Option<&str>,
) -> Result<(), CliError> {
    ensure_out_dir(out_dir)?;
    let sim = config
        .simulate
        .as_ref()
        .ok_or_else(|| CliError::Usage("[simulate] section required".into()))?;
    let method_names: Vec<String> = match methods_override {
        Some(list) => list.split(',').map(|s| s.trim().to_string()).collect(),
        None => sim.methods.clone(),
    };
    let methods: Vec<Method> =
        method_names.iter().map(|m| method_from_str(m)).collect::<Result<_, _>>()?;
    let outcome = config.outcome()?;
    validate_methods(&methods, outcome).map_err(map_core)?;

    let scenarios = scenario_grid(config)?;
    let total = scenarios.len();
    let mut reports: Vec<MetricsReport> = Vec::new();
    let mut failures: Vec<String> = Vec::new();
    let mut truncated = false;

    for (i, scenario) in scenarios.iter().enumerate() {
        if INTERRUPTED.load(Ordering::SeqCst) {
            truncated = true;
            break;
        }
        eprintln!("[{}/{}] scenario {} (R={})", i + 1, total, scenario.id, scenario.replicates);
        let cfg = SamplerConfig { seed: 0, ..config.sampler(0) };
        match run_scenario(scenario, &methods, &cfg) {
            Ok(report) => reports.push(report),
            Err(e) => {
                eprintln!("scenario {} failed: {e}", scenario.id);
                failures.push(format!("{}: {e}", scenario.id));
            }
        }
        flush_outputs(&reports, &failures, out_dir, false, i + 1, total)?;
    }
    flush_outputs(&reports, &failures, out_dir, truncated, reports.len(), total)?;

    // density table for the frames this grid used
    let mut frames: Vec<(String, Vec<u64>)> = Vec::new();
    for s in &scenarios {
        let label = s.frame.label();
        if frames.iter().any(|(l, _)| *l == label) {
            continue;
        }
        let sizes = match &s.frame {
            FrameSpec::Explicit { sizes, .. } => sizes.clone(),
            FrameSpec::Generate { source, j } => {
                let mut rng = rng_from_seed(derive_seed(s.seed, "population", 0));
                match generate_frame(source, *j, s.design.js(), &mut rng) {
                    Ok(f) => f.sizes().to_vec(),
                    Err(_) => continue,
                }
            }
        };
        frames.push((label, sizes));
    }
    write_density_csv(&size_density_report(&frames), &out_dir.join("density.csv"))
        .map_err(map_core)?;

    if truncated {
        eprintln!("interrupted; partial results flushed to {}", out_dir.display());
        return Err(CliError::Interrupted);
    }
    if !failures.is_empty() && reports.is_empty() {
        return Err(CliError::Stat("all scenario cells failed".into()));
    }
    println!(
        "wrote {} scenario reports to {}",
        reports.len(),
        out_dir.display()
    );
    Ok(())
}

fn flush_outputs(
    reports: &[MetricsReport],
    failures: &[String],
    out_dir: &Path,
    truncated: bool,
    done: usize,
    total: usize,
) -> Result<(), CliError> {
    let report_path = out_dir.join("report.csv");
    write_report_csv(reports, &report_path).map_err(map_core)?;
    write_figure_csv(reports, &out_dir.join("figure_data.csv")).map_err(map_core)?;
    if truncated || !failures.is_empty() {
        use std::io::Write;
        let mut f = std::fs::OpenOptions::new()
            .append(true)
            .open(&report_path)
            .map_err(|e| CliError::Io(e.to_string()))?;
        for fail in failures {
            writeln!(f, "# FAILED {fail}").map_err(|e| CliError::Io(e.to_string()))?;
        }
        if truncated {
            writeln!(f, "# TRUNCATED after {done} of {total} scenarios")
                .map_err(|e| CliError::Io(e.to_string()))?;
        }
    }
    Ok(())
}
