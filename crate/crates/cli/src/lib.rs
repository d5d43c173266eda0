//! Command implementations behind the `afdps` binary.
//!
//! Every command takes a loaded [`RunConfig`] and an output directory, and
//! writes plot-ready CSV and JSON files. Errors carry an exit code via
//! [`exit_code`].

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use afdps::config::{PriorConfig, RunConfig};
use afdps::dynamics::DynamicsMode;
use afdps::metrics::{self, SweepParam, SweepRow};
use afdps::oracle::{exact_posterior_gmm, grid_density, GridSpec, GridTable};
use afdps::resampling::Threshold;
use afdps::sampler::{RunFailure, TraceRow};
use afdps::stage1::Stage1Report;
use afdps::{load_config, run_sampler, Error, NegLogLikelihood, Result, WeightedEnsemble};
use serde::{Deserialize, Serialize};
use serde_json::json;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const SEED_ENV: &str = "AFDPS_SEED";

pub const RUN_FILES: [&str; 4] = ["metadata.json", "trace.csv", "particles.csv", "metrics.json"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub version: String,
    pub config: RunConfig,
    pub stage1: Stage1Report,
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub started_unix_seconds: f64,
    pub runtime_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OraclePosterior {
    pub sigma: f64,
    #[serde(flatten)]
    pub mixture: PriorConfig,
}

/// 2 for configuration problems, 3 for numerical failures, 4 for I/O.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } | Error::Parse { .. } | Error::Unsupported(_) | Error::Domain(_) => 2,
        Error::Divergence { .. }
        | Error::Degenerate { .. }
        | Error::Numerical(_)
        | Error::Initialization(_) => 3,
        Error::Io(_) => 4,
    }
}

pub fn error_report(err: &Error) -> serde_json::Value {
    let kind = match err {
        Error::Config { .. } => "config",
        Error::Parse { .. } => "parse",
        Error::Domain(_) => "domain",
        Error::Unsupported(_) => "unsupported",
        Error::Divergence { .. } => "divergence",
        Error::Degenerate { .. } => "degenerate",
        Error::Numerical(_) => "numerical",
        Error::Initialization(_) => "initialization",
        Error::Io(_) => "io",
    };
    let mut report = json!({
        "error": kind,
        "message": err.to_string(),
        "exit_code": exit_code(err),
    });
    let extra = match err {
        Error::Config { path, reason } => json!({ "path": path, "reason": reason }),
        Error::Parse { line, column, .. } => json!({ "line": line, "column": column }),
        Error::Divergence { step, particle, .. } => json!({ "step": step, "particle": particle }),
        Error::Degenerate { step } => json!({ "step": step }),
        _ => json!({}),
    };
    if let (Some(r), Some(e)) = (report.as_object_mut(), extra.as_object()) {
        r.extend(e.clone());
    }
    report
}

pub fn parse_seed(value: &str) -> Result<u64> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config(SEED_ENV, format!("expected a non-negative integer, got `{value}`")))
}

/// Loads `path` and applies a seed override, if any.
pub fn load_run_config(path: &Path, seed_override: Option<&str>) -> Result<RunConfig> {
    let mut cfg = load_config(path)?;
    if let Some(s) = seed_override {
        cfg.master_seed = parse_seed(s)?;
    }
    cfg.build()?;
    Ok(cfg)
}

/// `--out` if given, otherwise `output_dir` from the config.
pub fn resolve_out(cli_out: Option<&Path>, cfg: &RunConfig) -> Result<PathBuf> {
    cli_out
        .map(Path::to_path_buf)
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .ok_or_else(|| Error::config("output_dir", "no output directory given (use --out)"))
}

fn prepare_dir(out: &Path, files: &[&str], force: bool) -> Result<()> {
    fs::create_dir_all(out)?;
    if !force {
        for f in files {
            let p = out.join(f);
            if p.exists() {
                return Err(Error::Io(std::io::Error::new(
                    std::io::ErrorKind::AlreadyExists,
                    format!("{} exists; pass --force to overwrite", p.display()),
                )));
            }
        }
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Numerical(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn trace_header(dim: usize) -> Vec<String> {
    let mut h = vec!["step".to_string(), "sigma".into(), "ess".into()];
    h.extend((0..dim).map(|i| format!("mean_{i}")));
    h.extend((0..dim).map(|i| format!("var_{i}")));
    h.push("resampled".into());
    h.push("max_abs_I".into());
    h
}

pub fn particles_header(dim: usize) -> Vec<String> {
    let mut h = vec!["id".to_string()];
    h.extend((0..dim).map(|i| format!("x_{i}")));
    h.push("log_weight".into());
    h.push("norm_weight".into());
    h
}

pub const SWEEP_HEADER: [&str; 7] = ["param", "value", "repeat", "tv", "w_dist", "ess_min", "runtime_s"];

pub fn write_trace(path: &Path, dim: usize, trace: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(trace_header(dim)).map_err(csv_err)?;
    for r in trace {
        let mut rec = vec![r.step.to_string(), r.sigma.to_string(), r.ess.to_string()];
        rec.extend(r.mean.iter().map(f64::to_string));
        rec.extend(r.var.iter().map(f64::to_string));
        rec.push(u8::from(r.resampled).to_string());
        rec.push(r.max_abs_i.to_string());
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_particles(path: &Path, ens: &WeightedEnsemble) -> Result<()> {
    let weights = ens.normalized_weights()?;
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(particles_header(ens.dim())).map_err(csv_err)?;
    for (i, ((x, lw), nw)) in ens.positions.iter().zip(&ens.log_weights).zip(&weights).enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(x.iter().map(f64::to_string));
        rec.push(lw.to_string());
        rec.push(nw.to_string());
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(SWEEP_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.param.clone(),
            r.value.to_string(),
            r.repeat.to_string(),
            opt(r.tv),
            opt(r.w_dist),
            r.ess_min.to_string(),
            r.runtime_s.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_density(path: &Path, table: &GridTable) -> Result<()> {
    let dim = table.spec.dim();
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header: Vec<String> = (0..dim).map(|i| format!("x_{i}")).collect();
    header.push("probability".into());
    w.write_record(&header).map_err(csv_err)?;
    for (idx, p) in table.probs.iter().enumerate() {
        let mut rec: Vec<String> = table.spec.center(idx).iter().map(f64::to_string).collect();
        rec.push(p.to_string());
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn threshold_note(t: &Threshold) -> String {
    match t {
        Threshold::Never => "never".into(),
        Threshold::Constant(c) => format!("ESS < {c}"),
        Threshold::Schedule(v) => format!("per-step schedule of {} values", v.len()),
    }
}

/// Human-readable notes on the sampler variant and defaults that were applied.
pub fn run_notes(cfg: &RunConfig) -> Result<Vec<String>> {
    let spec = cfg.build()?;
    let d = &spec.dynamics;
    let mut notes = Vec::new();
    match d.mode {
        DynamicsMode::Sde => notes.push(format!("dynamics: sde with eta = {}", d.eta)),
        DynamicsMode::OdeCorrector if d.corrector.n_c == 0 => {
            notes.push("dynamics: ode-corrector with n_c = 0, predictor-only".into())
        }
        DynamicsMode::OdeCorrector => notes.push(format!(
            "dynamics: ode-corrector with n_c = {}, tau_c = {}",
            d.corrector.n_c, d.corrector.tau_c
        )),
    }
    notes.push(format!(
        "resampling: {:?} scheme, {}",
        d.resampling.scheme,
        threshold_note(&d.resampling.threshold)
    ));
    notes.push(format!("stage1: {:?}", spec.stage1.method));
    notes.push(format!(
        "schedule: {} steps from sigma {} to {}, rho {}",
        spec.schedule.num_steps, spec.schedule.sigma_max, spec.schedule.sigma_min, spec.schedule.rho
    ));
    if cfg.score.error_eps > 0.0 {
        notes.push(format!(
            "score: perturbed, {:?} with eps = {}",
            cfg.score.error_kind, cfg.score.error_eps
        ));
    }
    Ok(notes)
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Runs one sampler and writes metadata.json, trace.csv, particles.csv,
/// metrics.json and timing.json. A failed run leaves trace.csv with the steps
/// completed so far plus error.json.
pub fn cmd_run(cfg: &RunConfig, out: &Path, force: bool) -> Result<metrics::MetricsReport> {
    let spec = cfg.build()?;
    let mut files = RUN_FILES.to_vec();
    files.extend(["timing.json", "error.json"]);
    prepare_dir(out, &files, force)?;
    if force {
        let stale = out.join("error.json");
        if stale.exists() {
            fs::remove_file(stale)?;
        }
    }
    let started = unix_now();
    let clock = Instant::now();
    let dim = spec.prior.dim();
    let output = match run_sampler(&spec) {
        Ok(o) => o,
        Err(RunFailure { error, trace }) => {
            write_trace(&out.join("trace.csv"), dim, &trace)?;
            write_json(&out.join("error.json"), &error_report(&error))?;
            return Err(error);
        }
    };
    let report = metrics::evaluate(&spec, &output)?;
    let runtime = clock.elapsed().as_secs_f64();

    let metadata = RunMetadata {
        version: VERSION.to_string(),
        config: cfg.clone(),
        stage1: output.stage1.clone(),
        notes: run_notes(cfg)?,
    };
    write_json(&out.join("metadata.json"), &metadata)?;
    write_trace(&out.join("trace.csv"), dim, &output.trace)?;
    write_particles(&out.join("particles.csv"), &output.ensemble)?;
    write_json(&out.join("metrics.json"), &report)?;
    write_json(
        &out.join("timing.json"),
        &Timing {
            started_unix_seconds: started,
            runtime_seconds: runtime,
        },
    )?;
    Ok(report)
}

/// Writes posterior_gmm.json (linear-Gaussian likelihoods) and density.csv
/// (whenever a grid applies) for the posterior at noise level `sigma`.
pub fn cmd_oracle(cfg: &RunConfig, sigma: f64, out: &Path, force: bool) -> Result<Option<GridTable>> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::config("sigma", format!("must be finite and >= 0, got {sigma}")));
    }
    let spec = cfg.build()?;
    let dim = spec.prior.dim();
    if spec.metrics.grid.is_some() && dim > 2 {
        return Err(Error::Unsupported(format!(
            "grid oracle needs dimension <= 2, problem has {dim}"
        )));
    }
    prepare_dir(out, &["posterior_gmm.json", "density.csv"], force)?;
    let posterior = spec
        .likelihood
        .as_linear()
        .map(|lin| exact_posterior_gmm(&spec.prior, lin, sigma))
        .transpose()?;
    if let Some(post) = &posterior {
        write_json(
            &out.join("posterior_gmm.json"),
            &OraclePosterior {
                sigma,
                mixture: PriorConfig::from_mixture(post),
            },
        )?;
    }
    let grid: Option<GridSpec> = metrics::tv_grid(&spec, posterior.as_ref())?;
    let Some(grid) = grid else {
        if posterior.is_none() {
            return Err(Error::config(
                "metrics.grid",
                "a grid is required for the oracle of a nonlinear likelihood",
            ));
        }
        return Ok(None);
    };
    let table = match &posterior {
        Some(post) => {
            let density = post.density(0.0)?;
            grid_density(|x| density.log_density(x), &grid)?
        }
        None => {
            let density = spec.prior.density(sigma)?;
            grid_density(|x| Ok(density.log_density(x)? - spec.likelihood.mu(x)?), &grid)?
        }
    };
    write_density(&out.join("density.csv"), &table)?;
    Ok(Some(table))
}

pub fn parse_values(text: &str) -> Result<Vec<f64>> {
    let values = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| Error::config("values", format!("`{s}` is not a number")))
        })
        .collect::<Result<Vec<_>>>()?;
    if values.is_empty() {
        return Err(Error::config("values", "sweep needs at least one value"));
    }
    Ok(values)
}

/// Runs every `(value, repeat)` pair on a pool of `jobs` threads and writes sweep.csv.
pub fn cmd_sweep(
    cfg: &RunConfig,
    param: SweepParam,
    values: &[f64],
    repeats: usize,
    out: &Path,
    jobs: Option<usize>,
    force: bool,
) -> Result<Vec<SweepRow>> {
    if jobs == Some(0) {
        return Err(Error::config("jobs", "must be at least 1"));
    }
    prepare_dir(out, &["sweep.csv"], force)?;
    let threads = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Numerical(format!("cannot start worker pool: {e}")))?;
    let rows = pool.install(|| metrics::sweep(cfg, param, values, repeats))?;
    write_sweep(&out.join("sweep.csv"), &rows)?;
    Ok(rows)
}

/// Prints the structured error to stderr and returns the exit code.
pub fn report_error(err: &Error) -> i32 {
    let mut stderr = std::io::stderr().lock();
    let _ = writeln!(stderr, "{}", error_report(err));
    exit_code(err)
}
