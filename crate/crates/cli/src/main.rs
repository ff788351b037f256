//! `itrnma`: stage-one fits, network pooling, simulation studies, profile
//! queries and the HTTP service from one binary.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 data error,
//! 4 numerical failure, 5 fitted but convergence checks failed.

mod synth;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use itrnma_core::bbdwols::{run_bbdwols, run_qlearning, BbConfig};
use itrnma_core::io::{self, BlipArtifact, NmaArtifact, RunConfig};
use itrnma_core::nma::{fit_nma, network_from_posteriors, CovarianceMode, Effects, NmaConfig};
use itrnma_core::simlab::{run_scenario, DgmLetter, DgmSpec, PerfReport, Scenario, StageOneMethod};
use itrnma_core::{BlipPosteriorF64, Error};
use itrnma_serve::{AppState, Snapshot};

#[derive(Parser)]
#[command(name = "itrnma", version, about = "Doubly-robust individualized treatment rules pooled by network meta-analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum EffectsArg {
    Common,
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum CovarianceArg {
    Full,
    Sparse,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Bbdwols,
    Qlearning,
}

#[derive(Clone, Copy, ValueEnum)]
enum DgmArg {
    A,
    B,
    C,
}

#[derive(Args)]
struct Overrides {
    /// Seed for every random stream (stage one and stage two).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (defaults to the config's `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write raw posterior draws into the JSON artifacts.
    #[arg(long)]
    draws: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Stage one: fit every study listed in the run config.
    FitStudy {
        #[arg(long)]
        config: PathBuf,
        /// Fit only this study id.
        #[arg(long)]
        study: Option<String>,
        #[command(flatten)]
        common: Overrides,
        /// Negate outcomes on ingestion (for scores where lower is better).
        #[arg(long)]
        negate_outcome: bool,
        /// Trim weights above this quantile.
        #[arg(long)]
        trim_quantile: Option<f64>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long, value_enum, default_value = "bbdwols")]
        method: MethodArg,
    },
    /// Stage two: pool stage-one artifacts.
    FitNma {
        /// Stage-one JSON artifacts.
        #[arg(required = true)]
        posteriors: Vec<PathBuf>,
        /// Run config supplying the registry, reference and NMA settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        common: Overrides,
        #[arg(long, value_enum)]
        effects: Option<EffectsArg>,
        #[arg(long, value_enum)]
        covariance: Option<CovarianceArg>,
        #[arg(long)]
        reference: Option<String>,
        #[arg(long)]
        chains: Option<usize>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        warmup: Option<usize>,
    },
    /// Simulation study: score a scenario over replications.
    Simulate {
        /// Scenario file (TOML). Without it a preset is used.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "b")]
        dgm: DgmArg,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long, value_enum)]
        effects: Option<EffectsArg>,
        #[arg(long, value_enum)]
        covariance: Option<CovarianceArg>,
        #[arg(long)]
        trim_quantile: Option<f64>,
        #[command(flatten)]
        common: Overrides,
    },
    /// Relative effects for one covariate profile.
    Profile {
        /// Stage-two artifact written with `--draws`.
        #[arg(long)]
        model: PathBuf,
        /// Modifier values: `1.5,0,3` in modifier order or `age=40,female=1`.
        #[arg(long, allow_hyphen_values = true)]
        x: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve a stage-two artifact over HTTP.
    Serve {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
    /// Write the synthetic depression-trial fixture and its run config.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        /// Bootstrap iterations written into the config.
        #[arg(long, default_value_t = 1999)]
        iterations: usize,
    },
}

/// Command-line mistakes that are not the engine's business.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "usage error: {}", self.0)
    }
}

impl std::error::Error for Usage {}

/// Outputs were written but the sampler did not pass its checks.
#[derive(Debug)]
struct NotConverged(String);

impl std::fmt::Display for NotConverged {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "convergence checks failed: {}", self.0)
    }
}

impl std::error::Error for NotConverged {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Usage>().is_some() {
        return 2;
    }
    if err.downcast_ref::<NotConverged>().is_some() {
        return 5;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_) | Error::Schema(_) | Error::Profile(_)) => 2,
        Some(
            Error::InvalidData(_)
            | Error::DegenerateArm { .. }
            | Error::Mapping(_)
            | Error::Disconnected(_)
            | Error::Ingest { .. }
            | Error::Scoring(_)
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_),
        ) => 3,
        Some(Error::SingularDesign(_) | Error::Identifiability(_) | Error::Numerical(_)) => 4,
        None => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::FitStudy { config, study, common, negate_outcome, trim_quantile, iterations, method } => {
            fit_study(&config, study.as_deref(), &common, negate_outcome, trim_quantile, iterations, method)
        }
        Command::FitNma { posteriors, config, common, effects, covariance, reference, chains, iters, warmup } => {
            let mut nma = NmaConfig::default();
            let mut registry = None;
            let mut run_cfg = None;
            let mut out = PathBuf::from("out");
            let mut reference = reference;
            if let Some(path) = &config {
                let cfg = RunConfig::load(path)?;
                nma = cfg.nma.clone();
                registry = Some(cfg.network.registry.clone());
                reference = reference.or_else(|| cfg.network.reference.clone());
                out = cfg.output_dir.clone();
                run_cfg = Some(cfg);
            }
            if let Some(e) = effects {
                nma.effects = match e {
                    EffectsArg::Common => Effects::Common,
                    EffectsArg::Random => Effects::Random,
                };
            }
            if let Some(c) = covariance {
                nma.covariance_mode = covariance_mode(c);
            }
            nma.chains = chains.unwrap_or(nma.chains);
            nma.iters = iters.unwrap_or(nma.iters);
            nma.warmup = warmup.unwrap_or(nma.warmup);
            if let Some(s) = common.seed {
                nma.seed = s;
            }
            nma.validate()?;
            let out = common.out.clone().unwrap_or(out);
            fit_network(&posteriors, registry, reference.as_deref(), &nma, run_cfg, &out, common.draws)
        }
        Command::Simulate { config, dgm, reps, method, iterations, effects, covariance, trim_quantile, common } => {
            let mut scenario = match &config {
                Some(path) => {
                    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                    toml::from_str::<Scenario>(&text).map_err(|e| Error::Config(e.to_string()))?
                }
                None => {
                    let letter = match dgm {
                        DgmArg::A => DgmLetter::A,
                        DgmArg::B => DgmLetter::B,
                        DgmArg::C => DgmLetter::C,
                    };
                    let dgm = DgmSpec::by_letter(letter);
                    let stage_one = BbConfig { iterations: BbConfig::default_iterations(dgm.q), ..BbConfig::default() };
                    Scenario { name: dgm.name.clone(), dgm, stage_one, ..Scenario::default() }
                }
            };
            if let Some(r) = reps {
                scenario.reps = r;
            }
            if let Some(m) = method {
                scenario.method = match m {
                    MethodArg::Bbdwols => StageOneMethod::Bbdwols,
                    MethodArg::Qlearning => StageOneMethod::Qlearning,
                };
            }
            if let Some(i) = iterations {
                scenario.stage_one.iterations = i;
            }
            if trim_quantile.is_some() {
                scenario.stage_one.trim_quantile = trim_quantile;
            }
            for v in &mut scenario.variants {
                if let Some(e) = effects {
                    v.effects = match e {
                        EffectsArg::Common => Effects::Common,
                        EffectsArg::Random => Effects::Random,
                    };
                }
                if let Some(c) = covariance {
                    v.covariance_mode = covariance_mode(c);
                }
                if effects.is_some() || covariance.is_some() {
                    let e = if v.effects == Effects::Common { "common" } else { "random" };
                    let c = if v.covariance_mode == CovarianceMode::Full { "full" } else { "sparse" };
                    v.label = format!("{e}_{c}");
                }
            }
            // overrides can make variants coincide
            scenario.variants.dedup_by(|a, b| a.label == b.label);
            if let Some(s) = common.seed {
                scenario.seed = s;
            }
            let out = common.out.clone().unwrap_or_else(|| PathBuf::from("out"));
            simulate(&scenario, &out)
        }
        Command::Profile { model, x, out } => profile(&model, &x, out.as_deref()),
        Command::Serve { model, port, host } => serve(model.as_deref(), &host, port),
        Command::Synth { out, seed, iterations } => {
            synth::write_fixture(&out, seed, iterations)?;
            println!("wrote fixture to {}", out.display());
            Ok(())
        }
    }
}

fn covariance_mode(c: CovarianceArg) -> CovarianceMode {
    match c {
        CovarianceArg::Full => CovarianceMode::Full,
        CovarianceArg::Sparse => CovarianceMode::Sparse,
    }
}

fn fit_study(
    config: &Path,
    only: Option<&str>,
    common: &Overrides,
    negate_outcome: bool,
    trim_quantile: Option<f64>,
    iterations: Option<usize>,
    method: MethodArg,
) -> anyhow::Result<()> {
    let mut cfg = RunConfig::load(config)?;
    if negate_outcome {
        cfg.ingest.negate_outcome = true;
    }
    let tweak = |b: &mut BbConfig| {
        if let Some(s) = common.seed {
            b.seed = s;
        }
        if trim_quantile.is_some() {
            b.trim_quantile = trim_quantile;
        }
        if let Some(i) = iterations {
            b.iterations = i;
        }
    };
    tweak(&mut cfg.stage_one);
    for s in &mut cfg.studies {
        if let Some(b) = &mut s.stage_one {
            tweak(b);
        }
    }
    cfg.validate()?;
    let out = common.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;

    let opts = cfg.ingest_options();
    let mut fitted = 0;
    for (i, entry) in cfg.studies.iter().enumerate() {
        let bb = cfg.stage_one_for(i);
        for data in io::ingest_csv(&entry.path, &opts).with_context(|| format!("reading {}", entry.path.display()))? {
            if only.is_some_and(|id| id != data.study_id) {
                continue;
            }
            let (data, imputation) = if cfg.ingest.impute {
                let (d, r) = io::impute_simple(&data)?;
                (d, Some(r))
            } else {
                (data, None)
            };
            let post: BlipPosteriorF64 = match method {
                MethodArg::Bbdwols => run_bbdwols(&data, &bb)?,
                MethodArg::Qlearning => run_qlearning(&data, false, &bb)?,
            };
            let mut artifact = BlipArtifact::new(&post, &data, common.draws);
            artifact.imputation = imputation;
            artifact.run_config = Some(cfg.clone());
            let path = out.join(format!("{}.blip.json", data.study_id));
            io::write_json(&path, &artifact)?;
            if post.meta.degraded {
                log::warn!("study {}: more than 5% of resamples needed a redraw", data.study_id);
            }
            println!("{}: {} rows, {} complete, wrote {}", data.study_id, post.meta.n_rows, post.meta.n_complete, path.display());
            fitted += 1;
        }
    }
    if fitted == 0 {
        return Err(Usage(match only {
            Some(id) => format!("study `{id}` not found in the configured files"),
            None => "no studies found".into(),
        })
        .into());
    }
    Ok(())
}

fn fit_network(
    paths: &[PathBuf],
    registry: Option<Vec<String>>,
    reference: Option<&str>,
    cfg: &NmaConfig,
    run_cfg: Option<RunConfig>,
    out: &Path,
    draws: bool,
) -> anyhow::Result<()> {
    let posteriors = paths
        .iter()
        .map(|p| BlipArtifact::read(p).and_then(|a| a.to_posterior()).with_context(|| format!("reading {}", p.display())))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let net = network_from_posteriors(&posteriors, registry.as_deref(), reference)?;
    let post = fit_nma(&posteriors, &net, cfg)?;
    let mut artifact = NmaArtifact::new(&post, draws);
    artifact.run_config = run_cfg;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    io::write_json(out.join("nma.json"), &artifact)?;
    io::write_forest_csv(fs::File::create(out.join("forest.csv"))?, &artifact.forest())?;
    for s in artifact.forest() {
        println!("{:<32} {:>9.4} [{:>9.4}, {:>9.4}]  rhat {:.4}", s.name, s.mean, s.lower, s.upper, s.rhat);
    }
    if !post.converged {
        return Err(NotConverged(format!(
            "R-hat/ESS thresholds ({}, {}) not met; outputs in {}",
            cfg.rhat_max,
            cfg.ess_min,
            out.display()
        ))
        .into());
    }
    Ok(())
}

fn simulate(scenario: &Scenario, out: &Path) -> anyhow::Result<()> {
    let reports = run_scenario(scenario)?;
    fs::create_dir_all(out)?;
    PerfReport::write_csv(&reports, fs::File::create(out.join("perf.csv"))?)?;
    io::write_json(out.join("perf.json"), &serde_json::json!({ "schema_version": io::SCHEMA_VERSION, "scenario": scenario, "reports": reports }))?;
    for r in &reports {
        println!("{} / {}: {} reps ({} not converged, {} failed)", r.scenario, r.variant, r.n_reps, r.n_nonconverged, r.n_failed);
    }
    Ok(())
}

/// Parses `1,2,3` or `name=value,…` against the model's modifiers.
fn parse_profile(text: &str, artifact: &NmaArtifact) -> anyhow::Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    let cov = if parts.iter().all(|p| p.contains('=')) && !parts.is_empty() {
        let mut map = BTreeMap::new();
        for p in parts {
            let (k, v) = p.split_once('=').expect("checked");
            let v: f64 = v.trim().parse().map_err(|_| Usage(format!("`{v}` is not a number")))?;
            map.insert(k.trim().to_string(), v);
        }
        itrnma_serve::Covariates::Named(map)
    } else {
        let values = parts
            .iter()
            .map(|p| p.parse::<f64>().map_err(|_| Usage(format!("`{p}` is not a number"))))
            .collect::<Result<Vec<_>, _>>()?;
        itrnma_serve::Covariates::Ordered(values)
    };
    itrnma_serve::resolve_profile(&artifact.modifiers, &cov).map_err(|e| {
        let names: Vec<&str> = artifact.modifiers.iter().map(|m| m.name.as_str()).collect();
        Usage(format!("{e} (modifiers: {})", names.join(", "))).into()
    })
}

fn profile(model: &Path, x: &str, out: Option<&Path>) -> anyhow::Result<()> {
    let artifact = NmaArtifact::read(model).with_context(|| format!("reading {}", model.display()))?;
    let x = parse_profile(x, &artifact)?;
    let snapshot = Snapshot::new(artifact)?;
    let answer = itrnma_serve::answer_profile(&snapshot, &x)?;
    let text = serde_json::to_string_pretty(&answer)? + "\n";
    match out {
        Some(p) => fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn serve(model: Option<&Path>, host: &str, port: u16) -> anyhow::Result<()> {
    let state = match model {
        Some(p) => {
            let artifact = NmaArtifact::read(p).with_context(|| format!("reading {}", p.display()))?;
            AppState::with_model(Snapshot::new(artifact)?)
        }
        None => AppState::empty(),
    };
    let addr: std::net::SocketAddr =
        format!("{host}:{port}").parse().map_err(|_| Usage(format!("invalid address {host}:{port}")))?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(itrnma_serve::serve(addr, state))?;
    Ok(())
}
