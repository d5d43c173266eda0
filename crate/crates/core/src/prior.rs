//! Gaussian-mixture priors and their closed-form noised scores.
//!
//! Convolving a mixture with `N(0, sigma^2 I)` adds `sigma^2 I` to every
//! component covariance, so the noised density and its score are available
//! exactly at every noise level. [`ScoreModel`] wraps the analytic score and
//! can add a bounded deterministic perturbation to emulate score-matching
//! error.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng::{stream, Purpose, StreamKey};

const WEIGHT_SUM_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    covariances: Vec<DMatrix<f64>>,
    dim: usize,
}

impl GaussianMixture {
    pub fn new(
        weights: Vec<f64>,
        means: Vec<DVector<f64>>,
        covariances: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::config("prior.weights", "mixture needs at least one component"));
        }
        if means.len() != weights.len() || covariances.len() != weights.len() {
            return Err(Error::config(
                "prior",
                format!(
                    "component count mismatch: {} weights, {} means, {} covariances",
                    weights.len(),
                    means.len(),
                    covariances.len()
                ),
            ));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::config("prior.weights", "weights must be finite and non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::config(
                "prior.weights",
                format!("weights must sum to 1, got {total}"),
            ));
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(Error::config("prior.means", "dimension must be at least 1"));
        }
        for (i, (m, c)) in means.iter().zip(&covariances).enumerate() {
            if m.len() != dim {
                return Err(Error::config(
                    format!("prior.means[{i}]"),
                    format!("expected dimension {dim}, got {}", m.len()),
                ));
            }
            if c.nrows() != dim || c.ncols() != dim {
                return Err(Error::config(
                    format!("prior.covariances[{i}]"),
                    format!("expected {dim}x{dim}, got {}x{}", c.nrows(), c.ncols()),
                ));
            }
            if !is_symmetric(c) {
                return Err(Error::config(format!("prior.covariances[{i}]"), "not symmetric"));
            }
            if Cholesky::new(c.clone()).is_none() {
                return Err(Error::config(
                    format!("prior.covariances[{i}]"),
                    "not positive definite",
                ));
            }
        }
        Ok(Self {
            weights,
            means,
            covariances,
            dim,
        })
    }

    /// Single Gaussian component.
    pub fn gaussian(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        Self::new(vec![1.0], vec![mean], vec![covariance])
    }

    /// Equal-weight 1D mixture with common variance, handy for fixtures.
    pub fn scalar(weights: &[f64], means: &[f64], variance: f64) -> Result<Self> {
        Self::new(
            weights.to_vec(),
            means.iter().map(|m| DVector::from_element(1, *m)).collect(),
            means.iter().map(|_| DMatrix::from_element(1, 1, variance)).collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[DVector<f64>] {
        &self.means
    }

    pub fn covariances(&self) -> &[DMatrix<f64>] {
        &self.covariances
    }

    /// The law of `x + sigma * z` for `x` from this mixture.
    pub fn noised(&self, sigma: f64) -> GaussianMixture {
        let s2 = sigma * sigma;
        let covariances = self
            .covariances
            .iter()
            .map(|c| {
                let mut c = c.clone();
                for i in 0..self.dim {
                    c[(i, i)] += s2;
                }
                c
            })
            .collect();
        GaussianMixture {
            weights: self.weights.clone(),
            means: self.means.clone(),
            covariances,
            dim: self.dim,
        }
    }

    /// Precomputed evaluator of the mixture noised to level `sigma`.
    pub fn density(&self, sigma: f64) -> Result<MixtureDensity> {
        MixtureDensity::new(&self.noised(sigma))
    }

    pub fn log_density(&self, x: &DVector<f64>) -> Result<f64> {
        self.density(0.0)?.log_density(x)
    }

    pub fn mean(&self) -> DVector<f64> {
        self.weights
            .iter()
            .zip(&self.means)
            .fold(DVector::zeros(self.dim), |acc, (w, m)| acc + m * *w)
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let mean = self.mean();
        let mut cov = DMatrix::zeros(self.dim, self.dim);
        for ((w, m), c) in self.weights.iter().zip(&self.means).zip(&self.covariances) {
            let d = m - &mean;
            cov += (c + &d * d.transpose()) * *w;
        }
        cov
    }

    /// I.i.d. draws: a component by its weight, then a Gaussian via the Cholesky factor.
    pub fn sample<R: Rng + ?Sized>(&self, n_samples: usize, rng: &mut R) -> Vec<DVector<f64>> {
        let factors: Vec<DMatrix<f64>> = self
            .covariances
            .iter()
            .map(|c| Cholesky::new(c.clone()).expect("validated at construction").l())
            .collect();
        let cumulative = cumulative_weights(&self.weights);
        let unit = Uniform::new(0.0, 1.0).expect("valid range");
        (0..n_samples)
            .map(|_| {
                let u: f64 = unit.sample(rng);
                let i = pick(&cumulative, u);
                let z = DVector::from_fn(self.dim, |_, _| StandardNormal.sample(rng));
                &self.means[i] + &factors[i] * z
            })
            .collect()
    }
}

pub fn sample_prior<R: Rng + ?Sized>(
    mixture: &GaussianMixture,
    n_samples: usize,
    rng: &mut R,
) -> Result<Vec<DVector<f64>>> {
    if n_samples == 0 {
        return Err(Error::domain("sample_prior needs n_samples >= 1"));
    }
    Ok(mixture.sample(n_samples, rng))
}

fn is_symmetric(c: &DMatrix<f64>) -> bool {
    let scale = c.amax().max(f64::MIN_POSITIVE);
    (0..c.nrows()).all(|i| (0..i).all(|j| (c[(i, j)] - c[(j, i)]).abs() <= 1e-12 * scale))
}

pub(crate) fn cumulative_weights(weights: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out: Vec<f64> = weights
        .iter()
        .map(|w| {
            acc += w;
            acc
        })
        .collect();
    let total = acc;
    for c in &mut out {
        *c /= total;
    }
    out
}

/// Smallest index whose cumulative weight exceeds `u`.
pub(crate) fn pick(cumulative: &[f64], u: f64) -> usize {
    cumulative
        .partition_point(|c| *c <= u)
        .min(cumulative.len() - 1)
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

struct Component {
    log_weight: f64,
    mean: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
    precision: DMatrix<f64>,
    log_norm: f64,
}

/// A mixture with factorized covariances, ready for repeated evaluation.
pub struct MixtureDensity {
    components: Vec<Component>,
    dim: usize,
}

impl MixtureDensity {
    pub fn new(mixture: &GaussianMixture) -> Result<Self> {
        let dim = mixture.dim;
        let components = mixture
            .weights
            .iter()
            .zip(&mixture.means)
            .zip(&mixture.covariances)
            .map(|((w, m), c)| {
                let chol = Cholesky::new(c.clone()).ok_or_else(|| {
                    Error::Numerical("noised covariance is not positive definite".into())
                })?;
                let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
                let precision = chol.inverse();
                Ok(Component {
                    log_weight: w.ln(),
                    mean: m.clone(),
                    precision,
                    chol,
                    log_norm: -0.5 * (dim as f64 * (2.0 * PI).ln() + log_det),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { components, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn component_log_terms(&self, x: &DVector<f64>) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| {
                let d = x - &c.mean;
                let q = c.chol.l().solve_lower_triangular(&d).expect("triangular solve");
                c.log_weight + c.log_norm - 0.5 * q.norm_squared()
            })
            .collect()
    }

    pub fn log_density(&self, x: &DVector<f64>) -> Result<f64> {
        check_dim("log_density", self.dim, x.len())?;
        Ok(log_sum_exp(&self.component_log_terms(x)))
    }

    /// Posterior component probabilities at `x`.
    pub fn responsibilities(&self, x: &DVector<f64>) -> Result<Vec<f64>> {
        check_dim("responsibilities", self.dim, x.len())?;
        Ok(normalize_log(&self.component_log_terms(x)))
    }

    /// Gradient of the log-density.
    pub fn score(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let r = self.responsibilities(x)?;
        let mut out = DVector::zeros(self.dim);
        for (ri, c) in r.iter().zip(&self.components) {
            if *ri == 0.0 {
                continue;
            }
            out -= (&c.precision * (x - &c.mean)) * *ri;
        }
        Ok(out)
    }
}

pub(crate) fn normalize_log(logs: &[f64]) -> Vec<f64> {
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreErrorKind {
    #[default]
    None,
    FixedDirection,
    Sinusoidal,
}

/// Bounded perturbation field `u(x)` with `|u(x)| <= sqrt(n)`.
#[derive(Clone, Debug)]
enum Perturbation {
    None,
    Fixed(DVector<f64>),
    Sinusoidal {
        frequencies: DMatrix<f64>,
        phases: DVector<f64>,
    },
}

impl Perturbation {
    fn build(kind: ScoreErrorKind, seed: u64, dim: usize) -> Self {
        let mut rng = stream(seed, StreamKey::new(Purpose::ScoreField, dim, 0));
        match kind {
            ScoreErrorKind::None => Perturbation::None,
            ScoreErrorKind::FixedDirection => {
                let v = loop {
                    let v = DVector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));
                    if v.norm() > 1e-8 {
                        break v;
                    }
                };
                Perturbation::Fixed(v.normalize())
            }
            ScoreErrorKind::Sinusoidal => {
                let phase = Uniform::new(0.0, 2.0 * PI).expect("valid range");
                Perturbation::Sinusoidal {
                    frequencies: DMatrix::from_fn(dim, dim, |_, _| StandardNormal.sample(&mut rng)),
                    phases: DVector::from_fn(dim, |_, _| phase.sample(&mut rng)),
                }
            }
        }
    }

    fn eval(&self, x: &DVector<f64>) -> Option<DVector<f64>> {
        match self {
            Perturbation::None => None,
            Perturbation::Fixed(u) => Some(u.clone()),
            Perturbation::Sinusoidal {
                frequencies,
                phases,
            } => Some((frequencies * x + phases).map(f64::sin)),
        }
    }
}

/// Analytic noised-mixture score, optionally perturbed by `error_eps * u(x)`.
#[derive(Clone, Debug)]
pub struct ScoreModel {
    base: GaussianMixture,
    error_eps: f64,
    error_kind: ScoreErrorKind,
    error_seed: u64,
    perturbation: Perturbation,
}

impl ScoreModel {
    pub fn exact(base: GaussianMixture) -> Self {
        Self {
            base,
            error_eps: 0.0,
            error_kind: ScoreErrorKind::None,
            error_seed: 0,
            perturbation: Perturbation::None,
        }
    }

    pub fn with_error(
        base: GaussianMixture,
        error_eps: f64,
        error_kind: ScoreErrorKind,
        error_seed: u64,
    ) -> Result<Self> {
        if !(error_eps.is_finite() && error_eps >= 0.0) {
            return Err(Error::config("score.error_eps", "must be finite and non-negative"));
        }
        let perturbation = Perturbation::build(error_kind, error_seed, base.dim());
        Ok(Self {
            base,
            error_eps,
            error_kind,
            error_seed,
            perturbation,
        })
    }

    pub fn base(&self) -> &GaussianMixture {
        &self.base
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn error_eps(&self) -> f64 {
        self.error_eps
    }

    pub fn error_kind(&self) -> ScoreErrorKind {
        self.error_kind
    }

    pub fn error_seed(&self) -> u64 {
        self.error_seed
    }

    /// Score evaluator frozen at noise level `sigma`.
    pub fn at(&self, sigma: f64) -> Result<ScoreField<'_>> {
        if !(sigma >= 0.0) {
            return Err(Error::domain(format!("noise level must be >= 0, got {sigma}")));
        }
        Ok(ScoreField {
            density: self.base.density(sigma)?,
            model: self,
        })
    }

    pub fn score(&self, x: &DVector<f64>, sigma: f64) -> Result<DVector<f64>> {
        self.at(sigma)?.score(x)
    }
}

pub struct ScoreField<'a> {
    density: MixtureDensity,
    model: &'a ScoreModel,
}

impl ScoreField<'_> {
    pub fn score(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let mut s = self.density.score(x)?;
        if self.model.error_eps > 0.0 {
            if let Some(u) = self.model.perturbation.eval(x) {
                s += u * self.model.error_eps;
            }
        }
        Ok(s)
    }

    pub fn density(&self) -> &MixtureDensity {
        &self.density
    }
}
