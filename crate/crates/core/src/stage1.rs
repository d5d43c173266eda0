//! Initial ensemble at the largest noise level.
//!
//! Particles start from `p_hat(x, sigma_max) exp(-mu(x))`. Three samplers are
//! available: the closed-form Gaussian obtained by replacing the noised prior
//! with `N(0, rho^2 I)`, the exact conjugate mixture posterior, and MALA for
//! likelihoods without a closed form.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{Likelihood, LinearGaussianLikelihood, NegLogLikelihood};
use crate::oracle::exact_posterior_gmm;
use crate::prior::{GaussianMixture, MixtureDensity};
use crate::rng::{stream, Purpose, StreamKey};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Stage1Method {
    ExactGaussian,
    #[default]
    ExactGmm,
    Mala,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MalaLayout {
    /// One chain per particle; each particle is its chain's final state.
    #[default]
    Parallel,
    /// One chain, thinned evenly after burn-in.
    Single,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MalaConfig {
    pub step_size: f64,
    pub n_steps: usize,
    pub burn_in: usize,
    pub layout: MalaLayout,
}

impl Default for MalaConfig {
    fn default() -> Self {
        Self {
            step_size: 0.1,
            n_steps: 1000,
            burn_in: 500,
            layout: MalaLayout::Parallel,
        }
    }
}

impl MalaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(Error::config(
                "stage1.mala.step_size",
                format!("positive step required, got {}", self.step_size),
            ));
        }
        if self.n_steps == 0 {
            return Err(Error::config("stage1.mala.n_steps", "must be at least 1"));
        }
        if self.burn_in >= self.n_steps {
            return Err(Error::config("stage1.mala.burn_in", "must be smaller than n_steps"));
        }
        Ok(())
    }
}

/// Log-density (up to a constant) with its gradient.
pub trait MalaTarget: Sync {
    fn dim(&self) -> usize;
    fn log_density(&self, x: &DVector<f64>) -> Result<f64>;
    fn grad_log_density(&self, x: &DVector<f64>) -> Result<DVector<f64>>;
}

/// `log p_sigma(x) - mu(x)` for an analytic mixture prior.
pub struct NoisedPosteriorTarget<'a, L> {
    pub density: MixtureDensity,
    pub likelihood: &'a L,
}

impl<L: NegLogLikelihood> MalaTarget for NoisedPosteriorTarget<'_, L> {
    fn dim(&self) -> usize {
        self.density.dim()
    }

    fn log_density(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.density.log_density(x)? - self.likelihood.mu(x)?)
    }

    fn grad_log_density(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.density.score(x)? - self.likelihood.grad_mu(x)?)
    }
}

#[derive(Clone, Debug)]
pub struct MalaOutput {
    pub samples: Vec<DVector<f64>>,
    pub acceptance_rate: f64,
}

struct Chain<'a, T: ?Sized> {
    target: &'a T,
    x: DVector<f64>,
    log_p: f64,
    grad: DVector<f64>,
    accepted: usize,
}

impl<'a, T: MalaTarget + ?Sized> Chain<'a, T> {
    fn start(target: &'a T, init: DVector<f64>) -> Result<Self> {
        let log_p = target.log_density(&init)?;
        let grad = target.grad_log_density(&init)?;
        if !log_p.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Initialization(format!(
                "log-density {log_p} or its gradient is not finite at the initial point"
            )));
        }
        Ok(Self {
            target,
            x: init,
            log_p,
            grad,
            accepted: 0,
        })
    }

    fn step<R: Rng + ?Sized>(&mut self, h: f64, rng: &mut R) -> Result<()> {
        let n = self.x.len();
        let noise = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
        let proposal = &self.x + &self.grad * h + noise * (2.0 * h).sqrt();
        let log_p_new = self.target.log_density(&proposal)?;
        if !log_p_new.is_finite() {
            return Ok(());
        }
        let grad_new = self.target.grad_log_density(&proposal)?;
        // log q(a | b) = -|a - b - h grad(b)|^2 / (4h)
        let forward = (&proposal - &self.x - &self.grad * h).norm_squared();
        let backward = (&self.x - &proposal - &grad_new * h).norm_squared();
        let log_alpha = log_p_new - self.log_p + (forward - backward) / (4.0 * h);
        let u: f64 = rng.random();
        if u.ln() < log_alpha {
            self.x = proposal;
            self.log_p = log_p_new;
            self.grad = grad_new;
            self.accepted += 1;
        }
        Ok(())
    }
}

/// Metropolis-adjusted Langevin draws from `target`, started at `init`.
pub fn sample_mala<T: MalaTarget + ?Sized>(
    target: &T,
    init: &DVector<f64>,
    config: &MalaConfig,
    n_samples: usize,
    seed: u64,
) -> Result<MalaOutput> {
    config.validate()?;
    if n_samples == 0 {
        return Err(Error::domain("MALA needs n_samples >= 1"));
    }
    if init.len() != target.dim() {
        return Err(Error::domain("MALA initial point has the wrong dimension"));
    }
    let h = config.step_size;
    match config.layout {
        MalaLayout::Parallel => {
            let chains = (0..n_samples)
                .into_par_iter()
                .map(|c| {
                    let mut rng = stream(seed, StreamKey::new(Purpose::Stage1, c, 0));
                    let mut chain = Chain::start(target, init.clone())?;
                    for _ in 0..config.n_steps {
                        chain.step(h, &mut rng)?;
                    }
                    Ok((chain.x, chain.accepted))
                })
                .collect::<Result<Vec<_>>>()?;
            let accepted: usize = chains.iter().map(|c| c.1).sum();
            Ok(MalaOutput {
                acceptance_rate: accepted as f64 / (n_samples * config.n_steps) as f64,
                samples: chains.into_iter().map(|c| c.0).collect(),
            })
        }
        MalaLayout::Single => {
            let kept = config.n_steps - config.burn_in;
            if kept < n_samples {
                return Err(Error::config(
                    "stage1.mala.n_steps",
                    format!("{kept} post-burn-in steps cannot supply {n_samples} samples"),
                ));
            }
            let thin = kept / n_samples;
            let mut rng = stream(seed, StreamKey::new(Purpose::Stage1, 0, 0));
            let mut chain = Chain::start(target, init.clone())?;
            let mut samples = Vec::with_capacity(n_samples);
            for t in 1..=config.n_steps {
                chain.step(h, &mut rng)?;
                if t > config.burn_in && (t - config.burn_in) % thin == 0 && samples.len() < n_samples {
                    samples.push(chain.x.clone());
                }
            }
            Ok(MalaOutput {
                acceptance_rate: chain.accepted as f64 / config.n_steps as f64,
                samples,
            })
        }
    }
}

/// Mean and covariance of `N(gamma, Lambda^{-1})` with `Lambda = A^T S^-1 A + I / rho^2`.
pub fn surrogate_gaussian_posterior(
    likelihood: &LinearGaussianLikelihood,
    rho: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if !(rho.is_finite() && rho > 0.0) {
        return Err(Error::config("stage1.rho", format!("must be positive, got {rho}")));
    }
    let n = likelihood.a().ncols();
    let precision = likelihood.normal_matrix() + DMatrix::identity(n, n) / (rho * rho);
    let chol = Cholesky::new(precision)
        .ok_or_else(|| Error::Numerical("Stage-I precision is not positive definite".into()))?;
    let mean = chol.solve(likelihood.normal_rhs());
    Ok((mean, chol.inverse()))
}

fn gaussian_draws(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    n: usize,
    seed: u64,
) -> Result<Vec<DVector<f64>>> {
    let l = Cholesky::new(cov.clone())
        .ok_or_else(|| Error::Numerical("covariance is not positive definite".into()))?
        .l();
    Ok((0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, StreamKey::new(Purpose::Stage1, i, 0));
            let z = DVector::from_fn(mean.len(), |_, _| StandardNormal.sample(&mut rng));
            mean + &l * z
        })
        .collect())
}

pub fn sample_exact_gaussian(
    likelihood: &LinearGaussianLikelihood,
    rho: f64,
    n: usize,
    seed: u64,
) -> Result<Vec<DVector<f64>>> {
    let (mean, cov) = surrogate_gaussian_posterior(likelihood, rho)?;
    gaussian_draws(&mean, &cov, n, seed)
}

pub fn sample_exact_gmm(
    prior: &GaussianMixture,
    likelihood: &LinearGaussianLikelihood,
    sigma_max: f64,
    n: usize,
    seed: u64,
) -> Result<Vec<DVector<f64>>> {
    let posterior = exact_posterior_gmm(prior, likelihood, sigma_max)?;
    Ok((0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, StreamKey::new(Purpose::Stage1, i, 0));
            posterior.sample(1, &mut rng).pop().expect("one draw")
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stage1Config {
    pub method: Stage1Method,
    /// Scale of the Gaussian surrogate; `None` means `sigma_max`.
    pub rho: Option<f64>,
    pub mala: MalaConfig,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self {
            method: Stage1Method::ExactGmm,
            rho: None,
            mala: MalaConfig::default(),
        }
    }
}

impl Stage1Config {
    pub fn validate(&self) -> Result<()> {
        if let Some(rho) = self.rho {
            if !(rho.is_finite() && rho > 0.0) {
                return Err(Error::config("stage1.rho", format!("must be positive, got {rho}")));
            }
        }
        if self.method == Stage1Method::Mala {
            self.mala.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage1Report {
    pub method: Stage1Method,
    pub rho: Option<f64>,
    pub acceptance_rate: Option<f64>,
}

/// Draws `n` initial particles at `sigma_max` according to `config`.
pub fn initialize(
    config: &Stage1Config,
    prior: &GaussianMixture,
    likelihood: &Likelihood,
    sigma_max: f64,
    n: usize,
    seed: u64,
) -> Result<(Vec<DVector<f64>>, Stage1Report)> {
    config.validate()?;
    match config.method {
        Stage1Method::ExactGaussian => {
            let lin = likelihood.as_linear().ok_or_else(|| {
                Error::Unsupported("exact-gaussian Stage I requires a linear-gaussian likelihood".into())
            })?;
            let rho = config.rho.unwrap_or(sigma_max);
            Ok((
                sample_exact_gaussian(lin, rho, n, seed)?,
                Stage1Report {
                    method: config.method,
                    rho: Some(rho),
                    acceptance_rate: None,
                },
            ))
        }
        Stage1Method::ExactGmm => {
            let lin = likelihood.as_linear().ok_or_else(|| {
                Error::Unsupported("exact-gmm Stage I requires a linear-gaussian likelihood".into())
            })?;
            Ok((
                sample_exact_gmm(prior, lin, sigma_max, n, seed)?,
                Stage1Report {
                    method: config.method,
                    rho: None,
                    acceptance_rate: None,
                },
            ))
        }
        Stage1Method::Mala => {
            let target = NoisedPosteriorTarget {
                density: prior.density(sigma_max)?,
                likelihood,
            };
            let init = match likelihood.as_linear() {
                Some(lin) => surrogate_gaussian_posterior(lin, sigma_max)?.0,
                None => DVector::zeros(prior.dim()),
            };
            let out = sample_mala(&target, &init, &config.mala, n, seed)?;
            Ok((
                out.samples,
                Stage1Report {
                    method: config.method,
                    rho: None,
                    acceptance_rate: Some(out.acceptance_rate),
                },
            ))
        }
    }
}
