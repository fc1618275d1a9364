//! Subcommands of the `sdhnn` binary.
//!
//! Every command is a pure function of the configuration and seed; outputs go
//! to the `--out` directory (or `output_dir` from the config).

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use sdhnn_core::attractor::{cocycle_residual, pullback_endpoints, stationary_point, wong_zakai_gap};
use sdhnn_core::conditions::{compute_constants, ConditionReport};
use sdhnn_core::config::{RouteName, RunConfig, SegmentConfig};
use sdhnn_core::integrator::{integrate, Trajectory};
use sdhnn_core::linearflow::LinearFlow;
use sdhnn_core::model::NetworkParams;
use sdhnn_core::noise::BrownianPath;
use sdhnn_core::spectral::{spectral_analysis, SpectralResult};
use sdhnn_core::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;
pub const EXIT_ANALYSIS: i32 = 4;

pub const DEFAULT_PULLBACK_TIMES: [f64; 4] = [1.0, 2.0, 4.0, 8.0];
pub const DEFAULT_COCYCLE_TIMES: [(f64, f64); 3] = [(0.5, 0.5), (0.3, 0.7), (1.0, 1.0)];
pub const DEFAULT_KS: [u64; 4] = [10, 20, 40, 80];

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("cannot use {}: {source}", path.display())]
    Output { path: PathBuf, source: std::io::Error },
    #[error("failed checks: {}", .0.join("; "))]
    Checks(Vec<String>),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(Error::Io(e))
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) => match e {
                Error::Divergence { .. } => EXIT_DIVERGENCE,
                Error::EmptySpectrum { .. }
                | Error::UnstableLinearization(_)
                | Error::AbsorbingConditionFailed(..)
                | Error::FlowDegenerate { .. } => EXIT_ANALYSIS,
                _ => EXIT_CONFIG,
            },
            CliError::Output { .. } => EXIT_CONFIG,
            CliError::Checks(_) => EXIT_ANALYSIS,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "sdhnn", version, about = "Stochastic delayed Hopfield network simulator")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

/// Overrides applied on top of the config file.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON run configuration; defaults to the built-in two-neuron network.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub dt: Option<f64>,
    /// direct, conjugated or wong-zakai.
    #[arg(long, global = true)]
    pub route: Option<String>,
    #[arg(long, global = true)]
    pub k: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate each initial segment and write trajectory CSVs.
    Simulate,
    /// Dominant characteristic roots and decay constants.
    Spectrum,
    /// Condition constants and verdicts.
    Check,
    /// Pullback diameters and stationary-point estimate.
    Pullback,
    /// Cocycle residuals.
    Cocycle,
    /// Wong–Zakai gap table.
    Wongzakai,
    /// Full artifact bundle for the two-neuron example, with a manifest.
    Reproduce,
}

/// Config with command-line overrides applied.
pub fn load_config(common: &Common) -> CliResult<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| {
                Error::Config(format!("cannot read {}: {e}", path.display()))
            })?;
            RunConfig::from_json(&text).map_err(|e| {
                Error::Config(format!("{}: {e}", path.display()))
            })?
        }
        None => RunConfig::reference(1),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    if let Some(dt) = common.dt {
        cfg.dt = dt;
    }
    if let Some(route) = &common.route {
        cfg.route = route.parse::<RouteName>()?;
    }
    if let Some(k) = common.k {
        cfg.k = Some(k);
    }
    Ok(cfg)
}

pub fn run(cli: &Cli) -> CliResult<Vec<PathBuf>> {
    let cfg = load_config(&cli.common)?;
    match cli.command {
        Command::Simulate => cmd_simulate(&cfg),
        Command::Spectrum => cmd_spectrum(&cfg),
        Command::Check => cmd_check(&cfg),
        Command::Pullback => cmd_pullback(&cfg),
        Command::Cocycle => cmd_cocycle(&cfg),
        Command::Wongzakai => cmd_wongzakai(&cfg),
        Command::Reproduce => {
            let seed = cli.common.seed.unwrap_or(1);
            let out = cli.common.out.clone().unwrap_or(cfg.output_dir.clone());
            cmd_reproduce(&out, seed)
        }
    }
}

fn prepare(cfg: &RunConfig) -> CliResult<NetworkParams> {
    let (params, warnings) = cfg.build_params()?;
    for w in warnings {
        log::warn!("{w}");
    }
    Ok(params)
}

fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|source| CliError::Output {
        path: dir.to_path_buf(),
        source,
    })
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|source| CliError::Output {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    text.push('\n');
    fs::write(path, text).map_err(|source| CliError::Output {
        path: path.to_path_buf(),
        source,
    })
}

fn write_trajectory(path: &Path, traj: &Trajectory) -> CliResult<()> {
    traj.write_csv(create(path)?, 1)?;
    Ok(())
}

/// Path on `[0, T + 1]`; the margin covers the last Wong–Zakai mesh cell.
fn forward_path(params: &NetworkParams, cfg: &RunConfig, horizon: f64) -> CliResult<BrownianPath> {
    Ok(BrownianPath::sample(params.n(), cfg.dt, 0.0, horizon + 1.0, cfg.seed)?)
}

/// Writes `trajectory.csv` for one initial segment, `trajectory_<i>.csv` for several.
pub fn cmd_simulate(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let params = prepare(cfg)?;
    let route = cfg.resolved_route()?;
    let segments = cfg.initial_segments(&params)?;
    let path = forward_path(&params, cfg, cfg.horizon)?;
    ensure_dir(&cfg.output_dir)?;
    let mut written = Vec::new();
    for (i, phi) in segments.iter().enumerate() {
        let traj = integrate(&params, &path, phi, cfg.dt, cfg.horizon, route)?;
        let name = if segments.len() == 1 {
            "trajectory.csv".to_string()
        } else {
            format!("trajectory_{}.csv", i + 1)
        };
        let file = cfg.output_dir.join(name);
        write_trajectory(&file, &traj)?;
        written.push(file);
    }
    Ok(written)
}

fn spectral(params: &NetworkParams, cfg: &RunConfig) -> CliResult<SpectralResult> {
    Ok(spectral_analysis(params, &cfg.spectral_options())?)
}

pub fn cmd_spectrum(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let params = prepare(cfg)?;
    let result = spectral(&params, cfg)?;
    ensure_dir(&cfg.output_dir)?;
    let file = cfg.output_dir.join("spectrum.json");
    write_json(&file, &result)?;
    Ok(vec![file])
}

pub fn condition_report(params: &NetworkParams, cfg: &RunConfig) -> CliResult<(SpectralResult, ConditionReport)> {
    let result = spectral(params, cfg)?;
    let (a, b) = cfg.conditions.lv_horizon;
    let path = BrownianPath::sample(params.n(), cfg.dt, a, b, cfg.seed)?;
    let flow = LinearFlow::build(params, &path, (a, b))?;
    let report = compute_constants(params, &result, &flow, cfg.condition_options())?;
    Ok((result, report))
}

pub fn cmd_check(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let params = prepare(cfg)?;
    let (_, report) = condition_report(&params, cfg)?;
    ensure_dir(&cfg.output_dir)?;
    let file = cfg.output_dir.join("conditions.json");
    write_json(&file, &report)?;
    Ok(vec![file])
}

fn pullback_times(cfg: &RunConfig) -> Vec<f64> {
    cfg.pullback_times.clone().unwrap_or_else(|| DEFAULT_PULLBACK_TIMES.to_vec())
}

/// Writes `pullback.csv` and `stationary.csv`.
pub fn cmd_pullback(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let params = prepare(cfg)?;
    let segments = cfg.initial_segments(&params)?;
    let times = pullback_times(cfg);
    let t_max = times.last().copied().unwrap_or(0.0);
    let path = BrownianPath::sample(params.n(), cfg.dt, -t_max, 0.0, cfg.seed)?;
    let run = pullback_endpoints(&params, &path, &times, &segments, cfg.dt)?;
    let est = stationary_point(&params, &path, &times, cfg.dt)?;
    ensure_dir(&cfg.output_dir)?;
    let pull = cfg.output_dir.join("pullback.csv");
    run.write_csv(create(&pull)?)?;
    let stat = cfg.output_dir.join("stationary.csv");
    est.write_csv(create(&stat)?, cfg.seed)?;
    Ok(vec![pull, stat])
}

/// Writes `cocycle.csv` with header `seed,t1,t2,residual`.
pub fn cmd_cocycle(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let params = prepare(cfg)?;
    let segments = cfg.initial_segments(&params)?;
    let times = cfg
        .cocycle_times
        .clone()
        .unwrap_or_else(|| DEFAULT_COCYCLE_TIMES.to_vec());
    let reach = times.iter().map(|(a, b)| a + b).fold(0.0, f64::max);
    let path = forward_path(&params, cfg, reach)?;
    let mut rows = Vec::new();
    for &(t1, t2) in &times {
        let mut residual = 0.0_f64;
        for phi in &segments {
            residual = residual.max(cocycle_residual(&params, &path, t1, t2, phi, cfg.dt)?);
        }
        rows.push((t1, t2, residual));
    }
    ensure_dir(&cfg.output_dir)?;
    let file = cfg.output_dir.join("cocycle.csv");
    let mut w = csv::Writer::from_writer(create(&file)?);
    w.write_record(["seed", "t1", "t2", "residual"]).map_err(Error::from)?;
    for (t1, t2, r) in rows {
        w.write_record([cfg.seed.to_string(), t1.to_string(), t2.to_string(), r.to_string()])
            .map_err(Error::from)?;
    }
    w.flush()?;
    Ok(vec![file])
}

/// Writes `wongzakai.csv` with header `seed,k,gap`.
pub fn cmd_wongzakai(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    let params = prepare(cfg)?;
    let segments = cfg.initial_segments(&params)?;
    let ks = cfg.ks.clone().unwrap_or_else(|| DEFAULT_KS.to_vec());
    let path = forward_path(&params, cfg, cfg.horizon)?;
    let table = wong_zakai_gap(&params, &path, &ks, cfg.horizon, &segments, cfg.dt)?;
    ensure_dir(&cfg.output_dir)?;
    let file = cfg.output_dir.join("wongzakai.csv");
    let mut w = csv::Writer::from_writer(create(&file)?);
    w.write_record(["seed", "k", "gap"]).map_err(Error::from)?;
    for row in table {
        w.write_record([cfg.seed.to_string(), row.k.to_string(), row.gap.to_string()])
            .map_err(Error::from)?;
    }
    w.flush()?;
    Ok(vec![file])
}

#[derive(Debug, Serialize)]
pub struct ManifestFile {
    pub name: String,
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_condition: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sha256: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct ManifestCheck {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub config: RunConfig,
    pub files: Vec<ManifestFile>,
    pub checks: Vec<ManifestCheck>,
    pub all_pass: bool,
}

fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn max_abs_head(traj: &Trajectory) -> f64 {
    traj.states()
        .last()
        .map_or(f64::NAN, |u| u.iter().fold(0.0_f64, |m, x| m.max(x.abs())))
}

/// Two-neuron bundle: trajectories from `(0.1, 0.2)` with `seed` and from
/// `(10, 20)` with `seed + 1`, spectrum, condition report, pullback table and
/// `manifest.json`. Fails with exit 4 if any embedded check fails.
pub fn cmd_reproduce(out: &Path, seed: u64) -> CliResult<Vec<PathBuf>> {
    let mut cfg = RunConfig::reference(seed);
    cfg.output_dir = out.to_path_buf();
    cfg.initial_segments = vec![
        SegmentConfig::Constant(vec![0.1, 0.2]),
        SegmentConfig::Constant(vec![10.0, 20.0]),
    ];
    cfg.pullback_times = Some(DEFAULT_PULLBACK_TIMES.to_vec());
    let params = prepare(&cfg)?;
    let segments = cfg.initial_segments(&params)?;
    ensure_dir(out)?;

    let mut files = Vec::new();
    let mut checks = Vec::new();
    let runs = [("trajectory_a.csv", seed, &segments[0]), ("trajectory_b.csv", seed + 1, &segments[1])];
    for (name, run_seed, phi) in runs {
        let path = BrownianPath::sample(params.n(), cfg.dt, 0.0, cfg.horizon, run_seed)?;
        let traj = integrate(&params, &path, phi, cfg.dt, cfg.horizon, cfg.resolved_route()?)?;
        write_trajectory(&out.join(name), &traj)?;
        let head: Vec<f64> = phi.head().iter().copied().collect();
        let value = max_abs_head(&traj);
        checks.push(ManifestCheck {
            name: format!("{name}: max |u_j(5)|"),
            value,
            threshold: 1e-2,
            pass: value < 1e-2,
        });
        files.push(ManifestFile {
            name: name.to_string(),
            kind: "trajectory".to_string(),
            seed: Some(run_seed),
            title: Some(format!("phi = ({}, {}), seed {run_seed}", head[0], head[1])),
            initial_condition: Some(head),
            sha256: None,
        });
    }

    let (spectrum, report) = condition_report(&params, &cfg)?;
    write_json(&out.join("spectrum.json"), &spectrum)?;
    write_json(&out.join("conditions.json"), &report)?;
    checks.push(ManifestCheck {
        name: "spectral abscissa".to_string(),
        value: spectrum.abscissa(),
        threshold: 0.0,
        pass: spectrum.abscissa() < 0.0,
    });
    checks.push(ManifestCheck {
        name: "absorbing condition margin".to_string(),
        value: report.lemma6_margins.0.min(report.lemma6_margins.1),
        threshold: 0.0,
        pass: report.lemma6_ok,
    });
    checks.push(ManifestCheck {
        name: "stationary condition value".to_string(),
        value: report.theorem6_value,
        threshold: 0.0,
        pass: report.theorem6_ok,
    });
    for (name, kind, s) in [("spectrum.json", "spectrum", Some(seed)), ("conditions.json", "conditions", Some(seed))] {
        files.push(ManifestFile {
            name: name.to_string(),
            kind: kind.to_string(),
            seed: s,
            initial_condition: None,
            title: None,
            sha256: None,
        });
    }

    let times = pullback_times(&cfg);
    let t_max = times.last().copied().unwrap_or(0.0);
    let path = BrownianPath::sample(params.n(), cfg.dt, -t_max, 0.0, seed)?;
    let run = pullback_endpoints(&params, &path, &times, &segments, cfg.dt)?;
    run.write_csv(create(&out.join("pullback.csv"))?)?;
    let last = run.diameters().last().copied().unwrap_or(f64::NAN);
    checks.push(ManifestCheck {
        name: format!("pullback diameter at t = {t_max}"),
        value: last,
        threshold: 1e-6,
        pass: last < 1e-6,
    });
    files.push(ManifestFile {
        name: "pullback.csv".to_string(),
        kind: "pullback".to_string(),
        seed: Some(seed),
        initial_condition: None,
        title: None,
        sha256: None,
    });

    for f in &mut files {
        f.sha256 = Some(sha256_file(&out.join(&f.name))?);
    }
    files.push(ManifestFile {
        name: "manifest.json".to_string(),
        kind: "manifest".to_string(),
        seed: None,
        initial_condition: None,
        title: None,
        sha256: None,
    });
    let all_pass = checks.iter().all(|c| c.pass);
    let failed: Vec<String> = checks
        .iter()
        .filter(|c| !c.pass)
        .map(|c| format!("{} = {} (threshold {})", c.name, c.value, c.threshold))
        .collect();
    let manifest = Manifest {
        config: cfg,
        files,
        checks,
        all_pass,
    };
    write_json(&out.join("manifest.json"), &manifest)?;
    let written = manifest.files.iter().map(|f| out.join(&f.name)).collect();
    if all_pass {
        Ok(written)
    } else {
        Err(CliError::Checks(failed))
    }
}
