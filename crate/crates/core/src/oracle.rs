//! Ground truth for linear-Gaussian problems with mixture priors.
//!
//! The noised prior `p_sigma` is a Gaussian mixture and the likelihood is
//! Gaussian in `x`, so `p_sigma(x) exp(-mu(x))` is again a mixture whose
//! parameters follow from per-component conjugate updates. For `n <= 2` a
//! brute-force grid evaluation provides an independent check and the TV
//! metric.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ensemble::WeightedEnsemble;
use crate::error::{Error, Result};
use crate::likelihood::LinearGaussianLikelihood;
use crate::prior::{normalize_log, GaussianMixture};

/// Boundary-cell mass above which a grid is reported as too small.
pub const DEFAULT_LEAK_TOL: f64 = 1e-6;

fn spd_inverse(m: DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    Cholesky::new(m)
        .map(|c| c.inverse())
        .ok_or_else(|| Error::Numerical(format!("{what} is not positive definite")))
}

fn gaussian_log_pdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let chol = Cholesky::new(cov.clone())
        .ok_or_else(|| Error::Numerical("marginal covariance is not positive definite".into()))?;
    let d = x - mean;
    let q = chol.l().solve_lower_triangular(&d).expect("triangular solve");
    let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Ok(-0.5 * (x.len() as f64 * (2.0 * PI).ln() + log_det + q.norm_squared()))
}

/// Normalized `p_sigma(x) exp(-mu(x))` in closed form.
pub fn exact_posterior_gmm(
    prior: &GaussianMixture,
    likelihood: &LinearGaussianLikelihood,
    sigma: f64,
) -> Result<GaussianMixture> {
    if !(sigma >= 0.0) {
        return Err(Error::domain(format!("noise level must be >= 0, got {sigma}")));
    }
    let n = prior.dim();
    if likelihood.a().ncols() != n {
        return Err(Error::domain(format!(
            "prior dimension {n} does not match forward matrix with {} columns",
            likelihood.a().ncols()
        )));
    }
    let noised = prior.noised(sigma);
    let a = likelihood.a();
    let mut log_w = Vec::with_capacity(noised.n_components());
    let mut means = Vec::with_capacity(noised.n_components());
    let mut covs = Vec::with_capacity(noised.n_components());
    for ((w, m), s) in noised
        .weights()
        .iter()
        .zip(noised.means())
        .zip(noised.covariances())
    {
        let s_inv = spd_inverse(s.clone(), "noised prior covariance")?;
        let post_cov = spd_inverse(likelihood.normal_matrix() + &s_inv, "posterior precision")?;
        let post_mean = &post_cov * (likelihood.normal_rhs() + &s_inv * m);
        let marginal_cov = likelihood.noise_cov() + a * s * a.transpose();
        log_w.push(w.ln() + gaussian_log_pdf(likelihood.y(), &(a * m), &marginal_cov)?);
        // symmetrize against round-off so validation accepts it
        covs.push((&post_cov + post_cov.transpose()) * 0.5);
        means.push(post_mean);
    }
    let mut weights = normalize_log(&log_w);
    // renormalize so the sum-to-one check sees exact 1 up to round-off
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    GaussianMixture::new(weights, means, covs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub cells: Vec<usize>,
}

impl GridSpec {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, cells: Vec<usize>) -> Result<Self> {
        let g = Self {
            lower,
            upper,
            cells,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn line(lower: f64, upper: f64, cells: usize) -> Result<Self> {
        Self::new(vec![lower], vec![upper], vec![cells])
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.lower.len();
        if n == 0 || self.upper.len() != n || self.cells.len() != n {
            return Err(Error::config(
                "metrics.grid",
                "lower, upper and cells must have the same non-zero length",
            ));
        }
        if n > 2 {
            return Err(Error::Unsupported(format!(
                "grid oracle supports dimension <= 2, got {n}"
            )));
        }
        for i in 0..n {
            if !(self.upper[i] > self.lower[i]) {
                return Err(Error::config(
                    format!("metrics.grid.upper[{i}]"),
                    "must exceed the lower corner",
                ));
            }
            if self.cells[i] < 2 {
                return Err(Error::config(format!("metrics.grid.cells[{i}]"), "need at least 2 cells"));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn n_cells(&self) -> usize {
        self.cells.iter().product()
    }

    fn width(&self, axis: usize) -> f64 {
        (self.upper[axis] - self.lower[axis]) / self.cells[axis] as f64
    }

    /// Cell centre of flat index `idx` (last axis fastest).
    pub fn center(&self, idx: usize) -> DVector<f64> {
        let n = self.dim();
        let mut out = DVector::zeros(n);
        let mut rem = idx;
        for axis in (0..n).rev() {
            let k = rem % self.cells[axis];
            rem /= self.cells[axis];
            out[axis] = self.lower[axis] + (k as f64 + 0.5) * self.width(axis);
        }
        out
    }

    /// Flat index of the cell containing `x`, `None` outside the box.
    pub fn locate(&self, x: &DVector<f64>) -> Option<usize> {
        let mut idx = 0;
        for axis in 0..self.dim() {
            let rel = (x[axis] - self.lower[axis]) / self.width(axis);
            if !(rel >= 0.0) || rel >= self.cells[axis] as f64 {
                return None;
            }
            idx = idx * self.cells[axis] + rel as usize;
        }
        Some(idx)
    }

    fn on_boundary(&self, idx: usize) -> bool {
        let mut rem = idx;
        for axis in (0..self.dim()).rev() {
            let k = rem % self.cells[axis];
            rem /= self.cells[axis];
            if k == 0 || k + 1 == self.cells[axis] {
                return true;
            }
        }
        false
    }
}

/// Cell probabilities on a grid, plus mass that fell outside the box.
#[derive(Clone, Debug, PartialEq)]
pub struct GridTable {
    pub spec: GridSpec,
    pub probs: Vec<f64>,
    pub overflow: f64,
    /// Mass in cells touching the box boundary.
    pub boundary_mass: f64,
}

impl GridTable {
    pub fn covers(&self, leak_tol: f64) -> bool {
        self.boundary_mass <= leak_tol
    }

    pub fn mean(&self) -> DVector<f64> {
        let inside: f64 = self.probs.iter().sum();
        let mut m = DVector::zeros(self.spec.dim());
        for (i, p) in self.probs.iter().enumerate() {
            m += self.spec.center(i) * *p;
        }
        m / inside
    }

    pub fn variance(&self) -> DVector<f64> {
        let inside: f64 = self.probs.iter().sum();
        let mean = self.mean();
        let mut v = DVector::zeros(self.spec.dim());
        for (i, p) in self.probs.iter().enumerate() {
            let d = self.spec.center(i) - &mean;
            v += d.component_mul(&d) * *p;
        }
        v / inside
    }
}

/// Normalized cell probabilities of an unnormalized log-density, evaluated at cell centres.
pub fn grid_density<F>(log_density: F, grid: &GridSpec) -> Result<GridTable>
where
    F: Fn(&DVector<f64>) -> Result<f64>,
{
    grid.validate()?;
    let logs = (0..grid.n_cells())
        .map(|i| log_density(&grid.center(i)))
        .collect::<Result<Vec<f64>>>()?;
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Numerical("log-density is not finite anywhere on the grid".into()));
    }
    let unnorm: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = unnorm.iter().sum();
    let probs: Vec<f64> = unnorm.iter().map(|u| u / total).collect();
    let boundary_mass = probs
        .iter()
        .enumerate()
        .filter(|(i, _)| grid.on_boundary(*i))
        .map(|(_, p)| p)
        .sum();
    let table = GridTable {
        spec: grid.clone(),
        probs,
        overflow: 0.0,
        boundary_mass,
    };
    if !table.covers(DEFAULT_LEAK_TOL) {
        log::warn!(
            "grid box may be too small: boundary cells hold mass {:.3e}",
            table.boundary_mass
        );
    }
    Ok(table)
}

/// Assigns each particle's normalized weight to its cell; out-of-box weight goes to `overflow`.
pub fn bin_ensemble(ensemble: &WeightedEnsemble, grid: &GridSpec) -> Result<GridTable> {
    grid.validate()?;
    if ensemble.dim() != grid.dim() {
        return Err(Error::domain(format!(
            "ensemble dimension {} does not match grid dimension {}",
            ensemble.dim(),
            grid.dim()
        )));
    }
    let weights = ensemble.normalized_weights()?;
    let mut probs = vec![0.0; grid.n_cells()];
    let mut overflow = 0.0;
    for (x, w) in ensemble.positions.iter().zip(&weights) {
        match grid.locate(x) {
            Some(i) => probs[i] += w,
            None => overflow += w,
        }
    }
    let boundary_mass = probs
        .iter()
        .enumerate()
        .filter(|(i, _)| grid.on_boundary(*i))
        .map(|(_, p)| p)
        .sum();
    Ok(GridTable {
        spec: grid.clone(),
        probs,
        overflow,
        boundary_mass,
    })
}

/// Total variation `1/2 sum |a - b|`, counting the overflow buckets as one extra cell.
pub fn grid_tv(a: &GridTable, b: &GridTable) -> Result<f64> {
    if a.spec != b.spec {
        return Err(Error::domain("TV requires tables on identical grids"));
    }
    let cells: f64 = a.probs.iter().zip(&b.probs).map(|(p, q)| (p - q).abs()).sum();
    Ok((0.5 * (cells + (a.overflow - b.overflow).abs())).min(1.0))
}

/// Average of several tables on one grid (pooling independent runs).
pub fn average_tables(tables: &[GridTable]) -> Result<GridTable> {
    let first = tables
        .first()
        .ok_or_else(|| Error::domain("need at least one table to average"))?;
    let k = tables.len() as f64;
    let mut probs = vec![0.0; first.probs.len()];
    let mut overflow = 0.0;
    let mut boundary_mass = 0.0;
    for t in tables {
        if t.spec != first.spec {
            return Err(Error::domain("cannot average tables on different grids"));
        }
        for (p, q) in probs.iter_mut().zip(&t.probs) {
            *p += q / k;
        }
        overflow += t.overflow / k;
        boundary_mass += t.boundary_mass / k;
    }
    Ok(GridTable {
        spec: first.spec.clone(),
        probs,
        overflow,
        boundary_mass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::NegLogLikelihood;
    use crate::rng::{stream, Purpose, StreamKey};

    fn bimodal() -> GaussianMixture {
        GaussianMixture::scalar(&[0.5, 0.5], &[-2.0, 2.0], 0.25).unwrap()
    }

    #[test]
    fn textbook_conjugate_update() {
        let prior = GaussianMixture::scalar(&[1.0], &[0.0], 1.0).unwrap();
        let lik = LinearGaussianLikelihood::scalar(1.0, 1.0, 1.0).unwrap();
        let post = exact_posterior_gmm(&prior, &lik, 0.0).unwrap();
        assert!((post.means()[0][0] - 0.5).abs() < 1e-15);
        assert!((post.covariances()[0][(0, 0)] - 0.5).abs() < 1e-15);
        assert_eq!(post.weights(), &[1.0]);
    }

    #[test]
    fn symmetric_bimodal_posterior_weights() {
        let lik = LinearGaussianLikelihood::scalar(1.0, 4.0, 0.0).unwrap();
        for sigma in [0.0, 1.0, 8.0] {
            let post = exact_posterior_gmm(&bimodal(), &lik, sigma).unwrap();
            assert!((post.weights()[0] - 0.5).abs() < 1e-14);
            assert!((post.weights()[1] - 0.5).abs() < 1e-14);
        }
    }

    #[test]
    fn bimodal_posterior_matches_grid_brute_force() {
        let prior = bimodal();
        let lik = LinearGaussianLikelihood::scalar(1.0, 4.0, 1.0).unwrap();
        let sigma = 1.0;
        let post = exact_posterior_gmm(&prior, &lik, sigma).unwrap();
        let grid = GridSpec::line(-12.0, 12.0, 24_000).unwrap();
        let noised = prior.noised(sigma).density(0.0).unwrap();
        let brute = grid_density(
            |x| Ok(noised.log_density(x)? - lik.mu(x)?),
            &grid,
        )
        .unwrap();
        let analytic = grid_density(|x| post.log_density(x), &grid).unwrap();
        assert!(grid_tv(&brute, &analytic).unwrap() <= 1e-3);
        assert!((brute.mean()[0] - post.mean()[0]).abs() <= 1e-3);
        assert!((brute.variance()[0] - post.covariance()[(0, 0)]).abs() <= 1e-3);

        // component-level check: mass right of zero approximates the right component weight
        let right: f64 = brute
            .probs
            .iter()
            .enumerate()
            .filter(|(i, _)| grid.center(*i)[0] > 0.0)
            .map(|(_, p)| p)
            .sum();
        let right_exact = post.weights()[1]
            * 0.5
            * (1.0 + erf(post.means()[1][0] / (2.0 * post.covariances()[1][(0, 0)]).sqrt()))
            + post.weights()[0]
                * 0.5
                * (1.0 + erf(post.means()[0][0] / (2.0 * post.covariances()[0][(0, 0)]).sqrt()));
        assert!((right - right_exact).abs() <= 1e-3);
    }

    // Abramowitz-Stegun 7.1.26, |error| < 1.5e-7
    fn erf(x: f64) -> f64 {
        let t = 1.0 / (1.0 + 0.3275911 * x.abs());
        let y = 1.0
            - (((((1.061405429 * t - 1.453152027) * t) + 1.421413741) * t - 0.284496736) * t
                + 0.254829592)
                * t
                * (-x * x).exp();
        y.copysign(x)
    }

    #[test]
    fn grid_gaussian_moments() {
        let g = GridSpec::line(-8.0, 8.0, 400).unwrap();
        let t = grid_density(|x| Ok(-0.5 * x[0] * x[0]), &g).unwrap();
        assert!((t.probs.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        assert!(t.mean()[0].abs() <= 1e-3);
        assert!((t.variance()[0] - 1.0).abs() <= 1e-3);
        assert!(t.covers(DEFAULT_LEAK_TOL));
    }

    #[test]
    fn constant_density_is_uniform_and_flags_coverage() {
        let g = GridSpec::new(vec![0.0, 0.0], vec![1.0, 2.0], vec![4, 5]).unwrap();
        let t = grid_density(|_| Ok(3.0), &g).unwrap();
        for p in &t.probs {
            assert!((p - 1.0 / 20.0).abs() < 1e-15);
        }
        assert!(!t.covers(DEFAULT_LEAK_TOL));
    }

    #[test]
    fn grid_rejects_high_dimension() {
        let g = GridSpec::new(vec![0.0; 3], vec![1.0; 3], vec![3; 3]);
        assert!(matches!(g, Err(Error::Unsupported(_))));
    }

    #[test]
    fn tv_fixtures() {
        let g = GridSpec::line(0.0, 2.0, 2).unwrap();
        let a = GridTable {
            spec: g.clone(),
            probs: vec![1.0, 0.0],
            overflow: 0.0,
            boundary_mass: 1.0,
        };
        let b = GridTable {
            probs: vec![0.0, 1.0],
            ..a.clone()
        };
        assert_eq!(grid_tv(&a, &a).unwrap(), 0.0);
        assert_eq!(grid_tv(&a, &b).unwrap(), 1.0);
        assert_eq!(grid_tv(&a, &b).unwrap(), grid_tv(&b, &a).unwrap());
        let other = GridTable {
            spec: GridSpec::line(0.0, 3.0, 2).unwrap(),
            ..a.clone()
        };
        assert!(grid_tv(&a, &other).is_err());
    }

    #[test]
    fn binned_exact_samples_match_analytic_grid() {
        let g = GridSpec::line(-6.0, 6.0, 120).unwrap();
        let prior = GaussianMixture::scalar(&[1.0], &[0.0], 1.0).unwrap();
        let mut rng = stream(5, StreamKey::new(Purpose::Reference, 0, 0));
        let xs = prior.sample(1_000_000, &mut rng);
        let ens = WeightedEnsemble::uniform(xs, 0.0).unwrap();
        let binned = bin_ensemble(&ens, &g).unwrap();
        let exact = grid_density(|x| prior.log_density(x), &g).unwrap();
        assert!(grid_tv(&binned, &exact).unwrap() <= 0.01);
    }

    #[test]
    fn out_of_box_particles_go_to_overflow() {
        let g = GridSpec::line(-1.0, 1.0, 4).unwrap();
        let ens = WeightedEnsemble::new(
            vec![DVector::from_element(1, 0.1), DVector::from_element(1, 5.0)],
            vec![0.0, 0.0],
            0.0,
            0,
        )
        .unwrap();
        let t = bin_ensemble(&ens, &g).unwrap();
        assert!((t.overflow - 0.5).abs() < 1e-15);
        assert!((t.probs.iter().sum::<f64>() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn locate_round_trips_centres() {
        let g = GridSpec::new(vec![-1.0, 2.0], vec![1.0, 5.0], vec![7, 3]).unwrap();
        for i in 0..g.n_cells() {
            assert_eq!(g.locate(&g.center(i)), Some(i));
        }
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn grid_tv_is_a_metric_on_tables(
                a in prop::collection::vec(0.0f64..1.0, 8),
                b in prop::collection::vec(0.0f64..1.0, 8),
            ) {
                let spec = GridSpec::line(0.0, 1.0, 8).unwrap();
                let table = |raw: &[f64]| {
                    let total: f64 = raw.iter().sum::<f64>() + 1e-9;
                    GridTable {
                        spec: spec.clone(),
                        probs: raw.iter().map(|p| p / total).collect(),
                        overflow: 1e-9 / total,
                        boundary_mass: 0.0,
                    }
                };
                let (ta, tb) = (table(&a), table(&b));
                let ab = grid_tv(&ta, &tb).unwrap();
                prop_assert!((0.0..=1.0).contains(&ab));
                prop_assert_eq!(ab, grid_tv(&tb, &ta).unwrap());
                prop_assert_eq!(grid_tv(&ta, &ta).unwrap(), 0.0);
                if ab == 0.0 {
                    prop_assert_eq!(&ta.probs, &tb.probs);
                }
            }
        }
    }
}
