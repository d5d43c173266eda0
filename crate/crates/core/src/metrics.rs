//! Ensemble-versus-oracle metrics, parameter sweeps and trend checks.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::config::RunSpec;
use crate::ensemble::{normalized_weights, WeightedEnsemble};
use crate::error::{Error, Result};
use crate::likelihood::NegLogLikelihood;
use crate::oracle::{bin_ensemble, exact_posterior_gmm, grid_density, grid_tv, GridSpec, GridTable};
use crate::prior::GaussianMixture;
use crate::rng::{stream, Purpose, StreamKey};
use crate::sampler::{run_sampler, RunOutput};

/// Self-normalized mean and covariance.
pub fn weighted_moments(ensemble: &WeightedEnsemble) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let w = ensemble.normalized_weights()?;
    let n = ensemble.dim();
    let mut mean = DVector::zeros(n);
    for (x, wi) in ensemble.positions.iter().zip(&w) {
        mean += x * *wi;
    }
    let mut cov = DMatrix::zeros(n, n);
    for (x, wi) in ensemble.positions.iter().zip(&w) {
        let d = x - &mean;
        cov += &d * d.transpose() * *wi;
    }
    Ok((mean, cov))
}

/// Weighted 1D sample, sorted by position with normalized weights.
fn sorted_measure(xs: &[f64], log_weights: &[f64]) -> Result<Vec<(f64, f64)>> {
    if xs.is_empty() {
        return Err(Error::domain("empty sample"));
    }
    if xs.len() != log_weights.len() {
        return Err(Error::domain("positions and weights differ in length"));
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::domain("sample positions must be finite"));
    }
    let w = normalized_weights(log_weights).ok_or_else(|| Error::domain("sample has no positive weight"))?;
    let mut pts: Vec<(f64, f64)> = xs.iter().copied().zip(w).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(pts)
}

/// `W_1` between two weighted 1D samples, `int |F_A - F_B|`.
pub fn wasserstein1_1d(xa: &[f64], lwa: &[f64], xb: &[f64], lwb: &[f64]) -> Result<f64> {
    let a = sorted_measure(xa, lwa)?;
    let b = sorted_measure(xb, lwb)?;
    let mut events: Vec<(f64, f64)> = a.iter().map(|&(x, w)| (x, w)).collect();
    events.extend(b.iter().map(|&(x, w)| (x, -w)));
    events.sort_by(|p, q| p.0.total_cmp(&q.0));
    let mut diff = 0.0;
    let mut total = 0.0;
    for pair in events.windows(2) {
        diff += pair[0].1;
        total += diff.abs() * (pair[1].0 - pair[0].0);
    }
    Ok(total)
}

/// `W_2` between two weighted 1D samples through the monotone (quantile) coupling.
pub fn wasserstein2_1d(xa: &[f64], lwa: &[f64], xb: &[f64], lwb: &[f64]) -> Result<f64> {
    let a = sorted_measure(xa, lwa)?;
    let b = sorted_measure(xb, lwb)?;
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (a[0].1, b[0].1);
    let mut cost = 0.0;
    while i < a.len() && j < b.len() {
        let m = ra.min(rb);
        cost += m * (a[i].0 - b[j].0).powi(2);
        ra -= m;
        rb -= m;
        if ra <= 0.0 {
            i += 1;
            if i < a.len() {
                ra = a[i].1;
            }
        }
        if rb <= 0.0 {
            j += 1;
            if j < b.len() {
                rb = b[j].1;
            }
        }
    }
    Ok(cost.max(0.0).sqrt())
}

/// Root-mean over random unit directions of the squared 1D `W_2` between projections.
pub fn sliced_w2<R: Rng + ?Sized>(
    a: &[DVector<f64>],
    lwa: &[f64],
    b: &[DVector<f64>],
    lwb: &[f64],
    n_projections: usize,
    rng: &mut R,
) -> Result<f64> {
    if n_projections == 0 {
        return Err(Error::domain("need at least one projection"));
    }
    let dim = a.first().ok_or_else(|| Error::domain("empty sample"))?.len();
    if a.iter().chain(b).any(|x| x.len() != dim) {
        return Err(Error::domain("samples have mismatched dimensions"));
    }
    let mut total = 0.0;
    for _ in 0..n_projections {
        let mut dir = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = dir.norm();
        if norm == 0.0 {
            dir[0] = 1.0;
        } else {
            dir /= norm;
        }
        let pa: Vec<f64> = a.iter().map(|x| x.dot(&dir)).collect();
        let pb: Vec<f64> = b.iter().map(|x| x.dot(&dir)).collect();
        total += wasserstein2_1d(&pa, lwa, &pb, lwb)?.powi(2);
    }
    Ok((total / n_projections as f64).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EssSummary {
    pub min: f64,
    pub mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Grid TV to the exact posterior; absent when no grid oracle applies.
    pub final_tv: Option<f64>,
    pub weighted_mean: Vec<f64>,
    pub weighted_cov: Vec<Vec<f64>>,
    /// `W_1` in 1D.
    pub w1_1d: Option<f64>,
    /// Sliced `W_2` to exact posterior samples (equals `W_2` in 1D).
    pub sliced_w2: Option<f64>,
    pub ess: EssSummary,
    pub resample_count: usize,
    /// Ensemble mass per oracle component, by largest responsibility.
    pub mode_masses: Vec<f64>,
    /// Mass outside the TV grid.
    pub overflow: Option<f64>,
    pub clamp_events: usize,
    pub exact_mean: Option<Vec<f64>>,
    pub exact_cov: Option<Vec<Vec<f64>>>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Exact posterior at noise level zero, when the likelihood is linear-Gaussian.
pub fn exact_posterior(spec: &RunSpec) -> Result<Option<GaussianMixture>> {
    spec.likelihood
        .as_linear()
        .map(|lin| exact_posterior_gmm(&spec.prior, lin, 0.0))
        .transpose()
}

/// Grid used for TV: the configured one, or a box of eight posterior standard
/// deviations around the posterior mean for `n <= 2` linear problems.
pub fn tv_grid(spec: &RunSpec, exact: Option<&GaussianMixture>) -> Result<Option<GridSpec>> {
    if let Some(g) = &spec.metrics.grid {
        return Ok(Some(g.clone()));
    }
    let Some(post) = exact else {
        return Ok(None);
    };
    let n = post.dim();
    if n > 2 {
        return Ok(None);
    }
    let mean = post.mean();
    let cov = post.covariance();
    let cells = if n == 1 { 200 } else { 60 };
    let lower = (0..n).map(|i| mean[i] - 8.0 * cov[(i, i)].sqrt()).collect();
    let upper = (0..n).map(|i| mean[i] + 8.0 * cov[(i, i)].sqrt()).collect();
    GridSpec::new(lower, upper, vec![cells; n]).map(Some)
}

/// Oracle cell probabilities of the noise-free posterior on `grid`.
pub fn oracle_table(spec: &RunSpec, exact: Option<&GaussianMixture>, grid: &GridSpec) -> Result<GridTable> {
    match exact {
        Some(post) => {
            let density = post.density(0.0)?;
            grid_density(|x| density.log_density(x), grid)
        }
        None => {
            let density = spec.prior.density(0.0)?;
            grid_density(|x| Ok(density.log_density(x)? - spec.likelihood.mu(x)?), grid)
        }
    }
}

/// Exact posterior samples shared by every run with the same config and seed.
pub fn reference_samples(post: &GaussianMixture, n: usize, master_seed: u64) -> Vec<DVector<f64>> {
    let mut rng = stream(master_seed, StreamKey::new(Purpose::Reference, 0, 0));
    post.sample(n, &mut rng)
}

/// Ensemble mass assigned to each component of `mixture`.
pub fn mode_masses(ensemble: &WeightedEnsemble, mixture: &GaussianMixture) -> Result<Vec<f64>> {
    let density = mixture.density(0.0)?;
    let w = ensemble.normalized_weights()?;
    let mut masses = vec![0.0; mixture.n_components()];
    for (x, wi) in ensemble.positions.iter().zip(&w) {
        let r = density.responsibilities(x)?;
        let best = r
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        masses[best] += wi;
    }
    Ok(masses)
}

pub fn evaluate(spec: &RunSpec, out: &RunOutput) -> Result<MetricsReport> {
    let est = &out.estimate;
    let exact = exact_posterior(spec)?;
    let (mean, cov) = weighted_moments(est)?;

    let grid = tv_grid(spec, exact.as_ref())?;
    let (final_tv, overflow) = match &grid {
        Some(g) => {
            let oracle = oracle_table(spec, exact.as_ref(), g)?;
            let binned = bin_ensemble(est, g)?;
            (Some(grid_tv(&binned, &oracle)?), Some(binned.overflow))
        }
        None => (None, None),
    };

    let (w1, sw2) = match &exact {
        Some(post) => {
            let refs = reference_samples(post, spec.metrics.n_reference, spec.master_seed);
            let zeros = vec![0.0; refs.len()];
            let w1 = if est.dim() == 1 {
                let xa: Vec<f64> = est.positions.iter().map(|x| x[0]).collect();
                let xb: Vec<f64> = refs.iter().map(|x| x[0]).collect();
                Some(wasserstein1_1d(&xa, &est.log_weights, &xb, &zeros)?)
            } else {
                None
            };
            let mut rng = stream(spec.master_seed, StreamKey::new(Purpose::Projection, 0, 0));
            let sw2 = sliced_w2(
                &est.positions,
                &est.log_weights,
                &refs,
                &zeros,
                spec.metrics.n_projections,
                &mut rng,
            )?;
            (w1, Some(sw2))
        }
        None => (None, None),
    };

    let mode_masses = mode_masses(est, exact.as_ref().unwrap_or(&spec.prior))?;
    let ess_values: Vec<f64> = out.trace.iter().map(|r| r.ess).collect();
    let ess = EssSummary {
        min: ess_values.iter().copied().fold(f64::INFINITY, f64::min),
        mean: ess_values.iter().sum::<f64>() / ess_values.len().max(1) as f64,
    };
    Ok(MetricsReport {
        final_tv,
        weighted_mean: mean.iter().copied().collect(),
        weighted_cov: rows(&cov),
        w1_1d: w1,
        sliced_w2: sw2,
        ess,
        resample_count: out.resample_count,
        mode_masses,
        overflow,
        clamp_events: out.clamp_events,
        exact_mean: exact.as_ref().map(|p| p.mean().iter().copied().collect()),
        exact_cov: exact.as_ref().map(|p| rows(&p.covariance())),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParam {
    #[serde(rename = "N")]
    N,
    #[serde(rename = "eps")]
    Eps,
    #[serde(rename = "eta")]
    Eta,
    #[serde(rename = "K")]
    K,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::N => "N",
            SweepParam::Eps => "eps",
            SweepParam::Eta => "eta",
            SweepParam::K => "K",
        }
    }

    /// Copy of `base` with this parameter set to `value`.
    pub fn apply(self, base: &RunConfig, value: f64) -> Result<RunConfig> {
        let mut cfg = base.clone();
        let count = |what: &str| -> Result<usize> {
            if value >= 1.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(Error::config(what, format!("sweep value must be a positive integer, got {value}")))
            }
        };
        match self {
            SweepParam::N => cfg.dynamics.n_particles = count("dynamics.n_particles")?,
            SweepParam::K => cfg.schedule.num_steps = count("schedule.num_steps")?,
            SweepParam::Eps => cfg.score.error_eps = value,
            SweepParam::Eta => cfg.dynamics.eta = value,
        }
        Ok(cfg)
    }
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "N" => Ok(SweepParam::N),
            "eps" => Ok(SweepParam::Eps),
            "eta" => Ok(SweepParam::Eta),
            "K" => Ok(SweepParam::K),
            other => Err(Error::config("param", format!("unknown sweep parameter `{other}` (expected N, eps, eta or K)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: String,
    pub value: f64,
    pub repeat: usize,
    pub tv: Option<f64>,
    pub w_dist: Option<f64>,
    pub ess_min: f64,
    pub runtime_s: f64,
    #[serde(skip)]
    pub report: Option<MetricsReport>,
}

/// One run of `cfg` with `master_seed + repeat`, evaluated.
pub fn run_and_evaluate(cfg: &RunConfig, repeat: usize) -> Result<(MetricsReport, RunOutput, f64)> {
    let mut cfg = cfg.clone();
    cfg.master_seed = cfg.master_seed.wrapping_add(repeat as u64);
    let spec = cfg.build()?;
    let start = Instant::now();
    let out = run_sampler(&spec).map_err(|f| f.error)?;
    let report = evaluate(&spec, &out)?;
    Ok((report, out, start.elapsed().as_secs_f64()))
}

/// Every `(value, repeat)` pair, run in parallel and returned in parameter order.
pub fn sweep(base: &RunConfig, param: SweepParam, values: &[f64], repeats: usize) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::config("values", "sweep needs at least one value"));
    }
    if repeats == 0 {
        return Err(Error::config("repeats", "must be at least 1"));
    }
    let configs = values
        .iter()
        .map(|&v| param.apply(base, v))
        .collect::<Result<Vec<_>>>()?;
    for c in &configs {
        c.build()?;
    }
    let jobs: Vec<(usize, usize)> = (0..values.len())
        .flat_map(|i| (0..repeats).map(move |r| (i, r)))
        .collect();
    jobs.par_iter()
        .map(|&(i, r)| {
            let (report, _, runtime) = run_and_evaluate(&configs[i], r)?;
            Ok(SweepRow {
                param: param.name().to_string(),
                value: values[i],
                repeat: r,
                tv: report.final_tv,
                w_dist: report.sliced_w2,
                ess_min: report.ess.min,
                runtime_s: runtime,
                report: Some(report),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrendRow {
    pub value: f64,
    pub mean: f64,
    pub stderr: f64,
}

fn summarize<F>(rows: &[SweepRow], values: &[f64], f: F) -> Result<Vec<TrendRow>>
where
    F: Fn(&SweepRow) -> Option<f64>,
{
    values
        .iter()
        .map(|&v| {
            let xs = rows
                .iter()
                .filter(|r| r.value == v)
                .map(|r| f(r).ok_or_else(|| Error::Unsupported("metric unavailable for this problem".into())))
                .collect::<Result<Vec<f64>>>()?;
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let var = if xs.len() > 1 {
                xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            Ok(TrendRow {
                value: v,
                mean,
                stderr: (var / n).sqrt(),
            })
        })
        .collect()
}

/// Mean final TV per score-error level.
pub fn score_error_trend(base: &RunConfig, eps_list: &[f64], repeats: usize) -> Result<Vec<TrendRow>> {
    let rows = sweep(base, SweepParam::Eps, eps_list, repeats)?;
    summarize(&rows, eps_list, |r| r.tv)
}

/// Mean squared Wasserstein distance to exact posterior samples per ensemble size.
pub fn ensemble_size_trend(base: &RunConfig, n_list: &[f64], repeats: usize) -> Result<Vec<TrendRow>> {
    let rows = sweep(base, SweepParam::N, n_list, repeats)?;
    summarize(&rows, n_list, |r| r.w_dist.map(|w| w * w))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    NonDecreasing,
    NonIncreasing,
}

/// Monotone up to at most one adjacent inversion of relative size `<= rel_tol`.
pub fn trend_holds(values: &[f64], direction: Direction, rel_tol: f64) -> bool {
    let mut inversions = 0;
    for pair in values.windows(2) {
        let (prev, next) = (pair[0], pair[1]);
        let violated = match direction {
            Direction::NonDecreasing => next < prev,
            Direction::NonIncreasing => next > prev,
        };
        if violated {
            let rel = (next - prev).abs() / prev.abs().max(next.abs()).max(f64::MIN_POSITIVE);
            if rel > rel_tol {
                return false;
            }
            inversions += 1;
        }
    }
    inversions <= 1
}
