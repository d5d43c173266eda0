//! Negative log-likelihoods `mu_y` with gradient and Laplacian.
//!
//! Additive normalizing constants are dropped: reported `mu` values are the
//! quadratic misfit only, so they are bounded below by zero.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

pub trait NegLogLikelihood: Sync {
    /// Dimension of the unknown `x`.
    fn dim(&self) -> usize;
    fn mu(&self, x: &DVector<f64>) -> Result<f64>;
    fn grad_mu(&self, x: &DVector<f64>) -> Result<DVector<f64>>;
    fn laplacian_mu(&self, x: &DVector<f64>) -> Result<f64>;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LaplacianMode {
    #[default]
    Analytic,
    FiniteDifference,
}

pub const DEFAULT_FD_STEP: f64 = 1e-3;

/// Sum of axis-aligned central second differences of `f` at `x`.
pub fn fd_laplacian<F>(f: F, x: &DVector<f64>, step: f64) -> Result<f64>
where
    F: Fn(&DVector<f64>) -> Result<f64>,
{
    let centre = f(x)?;
    let mut total = 0.0;
    let mut probe = x.clone();
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let up = f(&probe)?;
        probe[i] = x[i] - step;
        let down = f(&probe)?;
        probe[i] = x[i];
        total += (up - 2.0 * centre + down) / (step * step);
    }
    Ok(total)
}

/// Shared forward-model data: `A` (m x n), noise precision and observation.
#[derive(Clone, Debug)]
struct Observation {
    a: DMatrix<f64>,
    noise_cov: DMatrix<f64>,
    precision: DMatrix<f64>,
    y: DVector<f64>,
}

impl Observation {
    fn new(a: DMatrix<f64>, noise_cov: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let m = a.nrows();
        if m == 0 || a.ncols() == 0 {
            return Err(Error::config("likelihood.A", "forward matrix must be non-empty"));
        }
        if noise_cov.nrows() != m || noise_cov.ncols() != m {
            return Err(Error::config(
                "likelihood.Sigma",
                format!(
                    "expected {m}x{m} to match likelihood.A rows, got {}x{}",
                    noise_cov.nrows(),
                    noise_cov.ncols()
                ),
            ));
        }
        if y.len() != m {
            return Err(Error::config(
                "likelihood.y",
                format!("expected length {m} to match likelihood.A rows, got {}", y.len()),
            ));
        }
        let scale = noise_cov.amax().max(f64::MIN_POSITIVE);
        for i in 0..m {
            for j in 0..i {
                if (noise_cov[(i, j)] - noise_cov[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::config("likelihood.Sigma", "not symmetric"));
                }
            }
        }
        let chol = Cholesky::new(noise_cov.clone())
            .ok_or_else(|| Error::config("likelihood.Sigma", "not positive definite"))?;
        Ok(Self {
            precision: chol.inverse(),
            a,
            noise_cov,
            y,
        })
    }
}

#[derive(Clone, Debug)]
pub struct LinearGaussianLikelihood {
    obs: Observation,
    /// `A^T Sigma^{-1} A`
    normal_matrix: DMatrix<f64>,
    /// `A^T Sigma^{-1} y`
    normal_rhs: DVector<f64>,
    laplacian_mode: LaplacianMode,
    fd_step: f64,
}

impl LinearGaussianLikelihood {
    pub fn new(a: DMatrix<f64>, noise_cov: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let obs = Observation::new(a, noise_cov, y)?;
        let at_p = obs.a.transpose() * &obs.precision;
        Ok(Self {
            normal_matrix: &at_p * &obs.a,
            normal_rhs: &at_p * &obs.y,
            obs,
            laplacian_mode: LaplacianMode::Analytic,
            fd_step: DEFAULT_FD_STEP,
        })
    }

    /// Scalar model `y = a x + n`, `n ~ N(0, noise_var)`.
    pub fn scalar(a: f64, noise_var: f64, y: f64) -> Result<Self> {
        Self::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, noise_var),
            DVector::from_element(1, y),
        )
    }

    pub fn with_laplacian_mode(mut self, mode: LaplacianMode, fd_step: f64) -> Self {
        self.laplacian_mode = mode;
        self.fd_step = fd_step;
        self
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.obs.a
    }

    pub fn noise_cov(&self) -> &DMatrix<f64> {
        &self.obs.noise_cov
    }

    pub fn noise_precision(&self) -> &DMatrix<f64> {
        &self.obs.precision
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.obs.y
    }

    pub fn normal_matrix(&self) -> &DMatrix<f64> {
        &self.normal_matrix
    }

    pub fn normal_rhs(&self) -> &DVector<f64> {
        &self.normal_rhs
    }
}

impl NegLogLikelihood for LinearGaussianLikelihood {
    fn dim(&self) -> usize {
        self.obs.a.ncols()
    }

    fn mu(&self, x: &DVector<f64>) -> Result<f64> {
        check_dim("mu", self.dim(), x.len())?;
        let r = &self.obs.a * x - &self.obs.y;
        Ok(0.5 * r.dot(&(&self.obs.precision * &r)))
    }

    fn grad_mu(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("grad_mu", self.dim(), x.len())?;
        Ok(&self.normal_matrix * x - &self.normal_rhs)
    }

    fn laplacian_mu(&self, x: &DVector<f64>) -> Result<f64> {
        check_dim("laplacian_mu", self.dim(), x.len())?;
        match self.laplacian_mode {
            LaplacianMode::Analytic => Ok(self.normal_matrix.trace()),
            LaplacianMode::FiniteDifference => fd_laplacian(|z| self.mu(z), x, self.fd_step),
        }
    }
}

/// `y = tanh(A x) + n` with Gaussian `n`.
#[derive(Clone, Debug)]
pub struct TanhLinearLikelihood {
    obs: Observation,
    /// `A A^T`, used by the analytic Laplacian.
    gram: DMatrix<f64>,
    laplacian_mode: LaplacianMode,
    fd_step: f64,
}

impl TanhLinearLikelihood {
    pub fn new(
        a: DMatrix<f64>,
        noise_cov: DMatrix<f64>,
        y: DVector<f64>,
        laplacian_mode: LaplacianMode,
        fd_step: f64,
    ) -> Result<Self> {
        if !(fd_step.is_finite() && fd_step > 0.0) {
            return Err(Error::config("likelihood.fd_step", "must be positive"));
        }
        let obs = Observation::new(a, noise_cov, y)?;
        Ok(Self {
            gram: &obs.a * obs.a.transpose(),
            obs,
            laplacian_mode,
            fd_step,
        })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.obs.a
    }

    pub fn noise_cov(&self) -> &DMatrix<f64> {
        &self.obs.noise_cov
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.obs.y
    }

    pub fn laplacian_mode(&self) -> LaplacianMode {
        self.laplacian_mode
    }

    fn analytic_laplacian(&self, x: &DVector<f64>) -> f64 {
        let t = (&self.obs.a * x).map(f64::tanh);
        let slope = t.map(|v| 1.0 - v * v);
        let weighted = &self.obs.precision * (&t - &self.obs.y);
        // Hessian in z = A x: diag(s) P diag(s) + diag(-2 t s (P r))
        let m = t.len();
        let mut total = 0.0;
        for i in 0..m {
            for j in 0..m {
                let mut h = slope[i] * self.obs.precision[(i, j)] * slope[j];
                if i == j {
                    h -= 2.0 * t[i] * slope[i] * weighted[i];
                }
                total += h * self.gram[(j, i)];
            }
        }
        total
    }
}

impl NegLogLikelihood for TanhLinearLikelihood {
    fn dim(&self) -> usize {
        self.obs.a.ncols()
    }

    fn mu(&self, x: &DVector<f64>) -> Result<f64> {
        check_dim("mu", self.dim(), x.len())?;
        let r = (&self.obs.a * x).map(f64::tanh) - &self.obs.y;
        Ok(0.5 * r.dot(&(&self.obs.precision * &r)))
    }

    fn grad_mu(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("grad_mu", self.dim(), x.len())?;
        let t = (&self.obs.a * x).map(f64::tanh);
        let weighted = &self.obs.precision * (&t - &self.obs.y);
        let gz = t.zip_map(&weighted, |ti, wi| (1.0 - ti * ti) * wi);
        Ok(self.obs.a.transpose() * gz)
    }

    fn laplacian_mu(&self, x: &DVector<f64>) -> Result<f64> {
        check_dim("laplacian_mu", self.dim(), x.len())?;
        match self.laplacian_mode {
            LaplacianMode::Analytic => Ok(self.analytic_laplacian(x)),
            LaplacianMode::FiniteDifference => fd_laplacian(|z| self.mu(z), x, self.fd_step),
        }
    }
}

#[derive(Clone, Debug)]
pub enum Likelihood {
    LinearGaussian(LinearGaussianLikelihood),
    TanhLinear(TanhLinearLikelihood),
}

impl Likelihood {
    pub fn as_linear(&self) -> Option<&LinearGaussianLikelihood> {
        match self {
            Likelihood::LinearGaussian(l) => Some(l),
            Likelihood::TanhLinear(_) => None,
        }
    }
}

impl NegLogLikelihood for Likelihood {
    fn dim(&self) -> usize {
        match self {
            Likelihood::LinearGaussian(l) => l.dim(),
            Likelihood::TanhLinear(l) => l.dim(),
        }
    }

    fn mu(&self, x: &DVector<f64>) -> Result<f64> {
        match self {
            Likelihood::LinearGaussian(l) => l.mu(x),
            Likelihood::TanhLinear(l) => l.mu(x),
        }
    }

    fn grad_mu(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            Likelihood::LinearGaussian(l) => l.grad_mu(x),
            Likelihood::TanhLinear(l) => l.grad_mu(x),
        }
    }

    fn laplacian_mu(&self, x: &DVector<f64>) -> Result<f64> {
        match self {
            Likelihood::LinearGaussian(l) => l.laplacian_mu(x),
            Likelihood::TanhLinear(l) => l.laplacian_mu(x),
        }
    }
}
