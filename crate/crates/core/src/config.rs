//! JSON run configuration.
//!
//! The schema is strict: unknown keys are rejected. Every optional section
//! has defaults, and a deserialized [`RunConfig`] always carries them
//! materialized, so serializing it back yields the full effective config.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{CorrectorConfig, DynamicsConfig, DynamicsMode, Estimator, DEFAULT_LOG_WEIGHT_CLAMP};
use crate::error::{Error, Result};
use crate::likelihood::{LaplacianMode, Likelihood, LinearGaussianLikelihood, NegLogLikelihood, TanhLinearLikelihood, DEFAULT_FD_STEP};
use crate::oracle::GridSpec;
use crate::prior::{GaussianMixture, ScoreErrorKind, ScoreModel};
use crate::resampling::{ResamplePolicy, ResampleScheme, Threshold};
use crate::schedule::{NoiseSchedule, ScalingKind};
use crate::stage1::{Stage1Config, Stage1Method};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Vec<Vec<f64>>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LikelihoodKind {
    LinearGaussian,
    TanhLinear,
}

fn default_fd_step() -> f64 {
    DEFAULT_FD_STEP
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LikelihoodConfig {
    pub kind: LikelihoodKind,
    /// Forward matrix, one inner array per row.
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "Sigma")]
    pub sigma: Vec<Vec<f64>>,
    pub y: Vec<f64>,
    #[serde(default)]
    pub laplacian_mode: LaplacianMode,
    #[serde(default = "default_fd_step")]
    pub fd_step: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub s_kind: ScalingKind,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rho_grid: f64,
    pub num_steps: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            s_kind: ScalingKind::Identity,
            sigma_min: 0.01,
            sigma_max: 8.0,
            rho_grid: 7.0,
            num_steps: 2000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NeverKeyword {
    Never,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ThresholdConfig {
    Keyword(NeverKeyword),
    Constant(f64),
    Schedule(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResamplingConfig {
    pub threshold: ThresholdConfig,
    pub scheme: ResampleScheme,
}

impl Default for ResamplingConfig {
    fn default() -> Self {
        Self {
            threshold: ThresholdConfig::Constant(0.5),
            scheme: ResampleScheme::Multinomial,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsSection {
    pub mode: DynamicsMode,
    pub eta: f64,
    pub corrector: CorrectorConfig,
    pub resampling: ResamplingConfig,
    pub estimator: Estimator,
    pub n_particles: usize,
    pub log_weight_clamp: f64,
}

impl Default for DynamicsSection {
    fn default() -> Self {
        Self {
            mode: DynamicsMode::Sde,
            eta: 1.0,
            corrector: CorrectorConfig::default(),
            resampling: ResamplingConfig::default(),
            estimator: Estimator::WeightedEnsemble,
            n_particles: 10,
            log_weight_clamp: DEFAULT_LOG_WEIGHT_CLAMP,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ScoreConfig {
    pub error_eps: f64,
    pub error_kind: ScoreErrorKind,
    pub error_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub grid: Option<GridSpec>,
    pub n_projections: usize,
    /// Exact posterior samples used as the reference for Wasserstein distances.
    pub n_reference: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            grid: None,
            n_projections: 64,
            n_reference: 10_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub prior: PriorConfig,
    pub likelihood: LikelihoodConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub stage1: Stage1Config,
    #[serde(default)]
    pub dynamics: DynamicsSection,
    #[serde(default)]
    pub score: ScoreConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub output_dir: Option<String>,
}

/// Validated domain objects built from a [`RunConfig`].
#[derive(Clone, Debug)]
pub struct RunSpec {
    pub prior: GaussianMixture,
    pub likelihood: Likelihood,
    pub score: ScoreModel,
    pub schedule: NoiseSchedule,
    pub stage1: Stage1Config,
    pub dynamics: DynamicsConfig,
    pub metrics: MetricsConfig,
    pub master_seed: u64,
}

fn matrix(rows: &[Vec<f64>], path: &str) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 {
        return Err(Error::config(path, "matrix must be non-empty"));
    }
    if let Some(i) = rows.iter().position(|r| r.len() != ncols) {
        return Err(Error::config(
            format!("{path}[{i}]"),
            format!("row has {} entries, expected {ncols}", rows[i].len()),
        ));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::config(path, "entries must be finite"));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

impl PriorConfig {
    pub fn build(&self) -> Result<GaussianMixture> {
        let means = self.means.iter().map(|m| DVector::from_column_slice(m)).collect();
        let covs = self
            .covariances
            .iter()
            .enumerate()
            .map(|(i, c)| matrix(c, &format!("prior.covariances[{i}]")))
            .collect::<Result<Vec<_>>>()?;
        GaussianMixture::new(self.weights.clone(), means, covs)
    }

    pub fn from_mixture(m: &GaussianMixture) -> Self {
        Self {
            weights: m.weights().to_vec(),
            means: m.means().iter().map(|v| v.iter().copied().collect()).collect(),
            covariances: m
                .covariances()
                .iter()
                .map(|c| c.row_iter().map(|r| r.iter().copied().collect()).collect())
                .collect(),
        }
    }
}

impl LikelihoodConfig {
    pub fn build(&self) -> Result<Likelihood> {
        let a = matrix(&self.a, "likelihood.A")?;
        let sigma = matrix(&self.sigma, "likelihood.Sigma")?;
        let y = DVector::from_column_slice(&self.y);
        if !(self.fd_step.is_finite() && self.fd_step > 0.0) {
            return Err(Error::config("likelihood.fd_step", "must be positive"));
        }
        Ok(match self.kind {
            LikelihoodKind::LinearGaussian => Likelihood::LinearGaussian(
                LinearGaussianLikelihood::new(a, sigma, y)?.with_laplacian_mode(self.laplacian_mode, self.fd_step),
            ),
            LikelihoodKind::TanhLinear => Likelihood::TanhLinear(TanhLinearLikelihood::new(
                a,
                sigma,
                y,
                self.laplacian_mode,
                self.fd_step,
            )?),
        })
    }

    /// Scalar linear-Gaussian `y = a x + n`, `n ~ N(0, noise_var)`.
    pub fn scalar(a: f64, noise_var: f64, y: f64) -> Self {
        Self {
            kind: LikelihoodKind::LinearGaussian,
            a: vec![vec![a]],
            sigma: vec![vec![noise_var]],
            y: vec![y],
            laplacian_mode: LaplacianMode::Analytic,
            fd_step: DEFAULT_FD_STEP,
        }
    }
}

impl DynamicsSection {
    pub fn build(&self, num_steps: usize) -> Result<DynamicsConfig> {
        let threshold = match &self.resampling.threshold {
            ThresholdConfig::Keyword(NeverKeyword::Never) => Threshold::Never,
            ThresholdConfig::Constant(c) => Threshold::Constant(*c),
            ThresholdConfig::Schedule(cs) => Threshold::Schedule(cs.clone()),
        };
        let cfg = DynamicsConfig {
            mode: self.mode,
            eta: self.eta,
            corrector: self.corrector,
            resampling: ResamplePolicy {
                threshold,
                scheme: self.resampling.scheme,
            },
            estimator: self.estimator,
            n_particles: self.n_particles,
            log_weight_clamp: self.log_weight_clamp,
        };
        cfg.validate(num_steps)?;
        Ok(cfg)
    }
}

impl RunConfig {
    /// Minimal 1D problem: Gaussian prior `N(mean, var)` with a scalar linear-Gaussian likelihood.
    pub fn scalar(prior_weights: &[f64], prior_means: &[f64], prior_var: f64, likelihood: LikelihoodConfig) -> Self {
        Self {
            prior: PriorConfig {
                weights: prior_weights.to_vec(),
                means: prior_means.iter().map(|m| vec![*m]).collect(),
                covariances: prior_means.iter().map(|_| vec![vec![prior_var]]).collect(),
            },
            likelihood,
            schedule: ScheduleConfig::default(),
            stage1: Stage1Config::default(),
            dynamics: DynamicsSection::default(),
            score: ScoreConfig::default(),
            metrics: MetricsConfig::default(),
            master_seed: 0,
            output_dir: None,
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        cfg.build()?;
        Ok(cfg)
    }

    pub fn build(&self) -> Result<RunSpec> {
        let prior = self.prior.build()?;
        let likelihood = self.likelihood.build()?;
        if likelihood.dim() != prior.dim() {
            return Err(Error::config(
                "likelihood.A",
                format!(
                    "likelihood.A has {} columns but prior.means has dimension {}",
                    likelihood.dim(),
                    prior.dim()
                ),
            ));
        }
        let s = &self.schedule;
        let schedule = NoiseSchedule {
            s_kind: s.s_kind,
            sigma_min: s.sigma_min,
            sigma_max: s.sigma_max,
            rho: s.rho_grid,
            num_steps: s.num_steps,
        };
        schedule.validate()?;
        self.stage1.validate()?;
        if self.stage1.method != Stage1Method::Mala && likelihood.as_linear().is_none() {
            return Err(Error::config(
                "stage1.method",
                "exact Stage I sampling needs a linear-gaussian likelihood; use mala",
            ));
        }
        let dynamics = self.dynamics.build(s.num_steps)?;
        if self.score.error_eps > 0.0 && self.score.error_kind == ScoreErrorKind::None {
            return Err(Error::config(
                "score.error_kind",
                "a perturbation kind is required when score.error_eps > 0",
            ));
        }
        let score = ScoreModel::with_error(
            prior.clone(),
            self.score.error_eps,
            self.score.error_kind,
            self.score.error_seed,
        )?;
        if let Some(grid) = &self.metrics.grid {
            grid.validate()?;
            if grid.dim() != prior.dim() {
                return Err(Error::config(
                    "metrics.grid",
                    format!(
                        "metrics.grid has dimension {} but prior.means has dimension {}",
                        grid.dim(),
                        prior.dim()
                    ),
                ));
            }
        }
        if self.metrics.n_projections == 0 {
            return Err(Error::config("metrics.n_projections", "must be at least 1"));
        }
        if self.metrics.n_reference == 0 {
            return Err(Error::config("metrics.n_reference", "must be at least 1"));
        }
        Ok(RunSpec {
            prior,
            likelihood,
            score,
            schedule,
            stage1: self.stage1.clone(),
            dynamics,
            metrics: self.metrics.clone(),
            master_seed: self.master_seed,
        })
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    RunConfig::from_json_str(&text)
}
