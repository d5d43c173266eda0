//! Variance-exploding noise schedule with identity scaling.
//!
//! With `s(t) = 1` and `sigma(t) = t` the forward process is `x + sigma * z`,
//! the drift term vanishes and the squared diffusion coefficient over a noise
//! decrement `h` at level `sigma` is `2 * sigma * h`. Samplers walk a
//! Karras-warped grid from `sigma_max` down to `sigma_min`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScalingKind {
    Identity,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    pub s_kind: ScalingKind,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rho: f64,
    pub num_steps: usize,
}

impl NoiseSchedule {
    pub fn new(sigma_min: f64, sigma_max: f64, rho: f64, num_steps: usize) -> Result<Self> {
        let schedule = Self {
            s_kind: ScalingKind::Identity,
            sigma_min,
            sigma_max,
            rho,
            num_steps,
        };
        schedule.validate()?;
        Ok(schedule)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_min.is_finite() && self.sigma_min > 0.0) {
            return Err(Error::config(
                "schedule.sigma_min",
                format!("must be a positive finite number, got {}", self.sigma_min),
            ));
        }
        if !(self.sigma_max.is_finite() && self.sigma_max > self.sigma_min) {
            return Err(Error::config(
                "schedule.sigma_max",
                format!(
                    "sigma_max ({}) must exceed sigma_min ({})",
                    self.sigma_max, self.sigma_min
                ),
            ));
        }
        if !(self.rho.is_finite() && self.rho > 0.0) {
            return Err(Error::config(
                "schedule.rho_grid",
                format!("must be positive, got {}", self.rho),
            ));
        }
        if self.num_steps == 0 {
            return Err(Error::config("schedule.num_steps", "must be at least 1"));
        }
        Ok(())
    }

    /// Noise levels `sigma_0 = sigma_max > ... > sigma_K = sigma_min`.
    pub fn grid(&self) -> Vec<f64> {
        let inv_rho = 1.0 / self.rho;
        let a = self.sigma_max.powf(inv_rho);
        let b = self.sigma_min.powf(inv_rho);
        let k_total = self.num_steps as f64;
        let mut grid: Vec<f64> = (0..=self.num_steps)
            .map(|k| (a + (k as f64 / k_total) * (b - a)).powf(self.rho))
            .collect();
        // pin endpoints against powf round-off
        grid[0] = self.sigma_max;
        grid[self.num_steps] = self.sigma_min;
        grid
    }
}

pub fn make_grid(schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    schedule.validate()?;
    Ok(schedule.grid())
}

/// `V^2 dt` accumulated over a noise decrement `h` at level `sigma`.
pub fn diffusion_coeff(sigma: f64, h: f64) -> Result<f64> {
    if !(sigma > 0.0) || !(h > 0.0) {
        return Err(Error::domain(format!(
            "diffusion coefficient needs sigma > 0 and h > 0, got sigma={sigma}, h={h}"
        )));
    }
    Ok(2.0 * sigma * h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_equal_bounds() {
        let err = NoiseSchedule::new(8.0, 8.0, 7.0, 10).unwrap_err();
        assert!(err.to_string().contains("sigma_max"));
    }

    #[test]
    fn rejects_zero_steps_and_nonpositive_min() {
        assert!(NoiseSchedule::new(0.01, 8.0, 7.0, 0).is_err());
        assert!(NoiseSchedule::new(0.0, 8.0, 7.0, 3).is_err());
    }

    #[test]
    fn rho_one_is_linear() {
        let s = NoiseSchedule::new(0.01, 8.0, 1.0, 2).unwrap();
        let g = s.grid();
        assert_eq!(g.len(), 3);
        assert_eq!(g[0], 8.0);
        assert!((g[1] - 4.005).abs() <= 1e-12 * 4.005);
        assert_eq!(g[2], 0.01);

        let s = NoiseSchedule::new(0.5, 3.5, 1.0, 30).unwrap();
        for (k, v) in s.grid().iter().enumerate() {
            let uniform = 3.5 - 3.0 * k as f64 / 30.0;
            assert!((v - uniform).abs() <= 1e-12 * uniform);
        }
    }

    #[test]
    fn karras_grid_matches_direct_formula() {
        let s = NoiseSchedule::new(0.01, 8.0, 7.0, 200).unwrap();
        let g = s.grid();
        assert_eq!(g[0], 8.0);
        assert_eq!(g[200], 0.01);
        for k in [1usize, 17, 50, 100, 133, 199] {
            // independent evaluation in a different association order
            let t = k as f64 / 200.0;
            let direct = ((1.0 - t) * 8f64.powf(1.0 / 7.0) + t * 0.01f64.powf(1.0 / 7.0)).powi(7);
            assert!((g[k] - direct).abs() <= 1e-12 * direct, "k={k}");
        }
    }

    #[test]
    fn diffusion_coeff_values() {
        assert!((diffusion_coeff(1.0, 0.1).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(diffusion_coeff(8.0, 0.25).unwrap(), 4.0);
        assert!(diffusion_coeff(0.5, 0.0).is_err());
        assert!(diffusion_coeff(-1.0, 0.1).is_err());
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn grid_strictly_decreasing_with_exact_endpoints(
                sigma_min in 1e-4f64..1.0,
                span in 1e-3f64..100.0,
                rho in 0.5f64..12.0,
                k in 1usize..400,
            ) {
                let sigma_max = sigma_min + span;
                let s = NoiseSchedule::new(sigma_min, sigma_max, rho, k).unwrap();
                let g = s.grid();
                prop_assert_eq!(g.len(), k + 1);
                prop_assert!((g[0] - sigma_max).abs() <= 1e-12 * sigma_max);
                prop_assert!((g[k] - sigma_min).abs() <= 1e-12 * sigma_min);
                for w in g.windows(2) {
                    prop_assert!(w[0] - w[1] > 0.0);
                }
            }
        }
    }
}
