//! ESS-triggered resampling.

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::ensemble::{normalized_weights, WeightedEnsemble};
use crate::error::{Error, Result};
use crate::prior::{cumulative_weights, pick};

/// Normalized effective sample size `(mean beta)^2 / mean(beta^2)`, in `[1/N, 1]`.
pub fn ess(log_weights: &[f64]) -> Result<f64> {
    if log_weights.is_empty() {
        return Err(Error::domain("ESS of an empty ensemble"));
    }
    if log_weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::domain("ESS needs finite log-weights"));
    }
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let n = log_weights.len() as f64;
    let (sum, sum_sq) = log_weights.iter().fold((0.0, 0.0), |(s, s2), l| {
        let b = (l - max).exp();
        (s + b, s2 + b * b)
    });
    Ok((sum / n).powi(2) / (sum_sq / n))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ResampleScheme {
    #[default]
    Multinomial,
    /// Single stratified uniform; lower variance than multinomial.
    Systematic,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Threshold {
    Never,
    Constant(f64),
    /// One threshold per step `k = 0..K-1`.
    Schedule(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResamplePolicy {
    pub threshold: Threshold,
    pub scheme: ResampleScheme,
}

impl Default for ResamplePolicy {
    fn default() -> Self {
        Self {
            threshold: Threshold::Constant(0.5),
            scheme: ResampleScheme::Multinomial,
        }
    }
}

fn check_c(c: f64, path: &str) -> Result<()> {
    if !(c > 0.0 && c < 1.0) {
        return Err(Error::config(path, format!("threshold must lie in (0, 1), got {c}")));
    }
    Ok(())
}

impl ResamplePolicy {
    pub fn never() -> Self {
        Self {
            threshold: Threshold::Never,
            scheme: ResampleScheme::Multinomial,
        }
    }

    pub fn constant(c: f64, scheme: ResampleScheme) -> Result<Self> {
        check_c(c, "dynamics.resampling.threshold")?;
        Ok(Self {
            threshold: Threshold::Constant(c),
            scheme,
        })
    }

    pub fn validate(&self, num_steps: usize) -> Result<()> {
        match &self.threshold {
            Threshold::Never => Ok(()),
            Threshold::Constant(c) => check_c(*c, "dynamics.resampling.threshold"),
            Threshold::Schedule(cs) => {
                if cs.len() != num_steps {
                    return Err(Error::config(
                        "dynamics.resampling.threshold",
                        format!("schedule has {} entries, expected num_steps = {num_steps}", cs.len()),
                    ));
                }
                for (i, c) in cs.iter().enumerate() {
                    check_c(*c, &format!("dynamics.resampling.threshold[{i}]"))?;
                }
                Ok(())
            }
        }
    }

    /// Threshold applied after step `k` (0-based), if resampling is enabled.
    pub fn threshold_at(&self, step: usize) -> Option<f64> {
        match &self.threshold {
            Threshold::Never => None,
            Threshold::Constant(c) => Some(*c),
            Threshold::Schedule(cs) => cs.get(step).copied(),
        }
    }
}

/// Ancestor indices drawn proportionally to `weights` (already normalized).
pub fn draw_ancestors<R: Rng + ?Sized>(
    weights: &[f64],
    scheme: ResampleScheme,
    rng: &mut R,
) -> Vec<usize> {
    let n = weights.len();
    let cumulative = cumulative_weights(weights);
    let unit = Uniform::new(0.0, 1.0).expect("valid range");
    match scheme {
        ResampleScheme::Multinomial => (0..n).map(|_| pick(&cumulative, unit.sample(rng))).collect(),
        ResampleScheme::Systematic => {
            let u0: f64 = unit.sample(rng);
            (0..n)
                .map(|i| pick(&cumulative, (u0 + i as f64) / n as f64))
                .collect()
        }
    }
}

/// Resamples when `ess < threshold`; returns whether it did.
///
/// After resampling every log-weight is exactly zero.
pub fn maybe_resample<R: Rng + ?Sized>(
    ensemble: &mut WeightedEnsemble,
    threshold: Option<f64>,
    scheme: ResampleScheme,
    rng: &mut R,
) -> Result<bool> {
    let Some(c) = threshold else {
        return Ok(false);
    };
    if ess(&ensemble.log_weights)? >= c {
        return Ok(false);
    }
    let weights = normalized_weights(&ensemble.log_weights).ok_or(Error::Degenerate {
        step: ensemble.step_index,
    })?;
    let ancestors = draw_ancestors(&weights, scheme, rng);
    ensemble.positions = ancestors
        .iter()
        .map(|&i| ensemble.positions[i].clone())
        .collect();
    ensemble.log_weights.iter_mut().for_each(|w| *w = 0.0);
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose, StreamKey};
    use nalgebra::DVector;

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        stream(seed, StreamKey::new(Purpose::Resample, 0, 0))
    }

    #[test]
    fn ess_fixtures() {
        assert_eq!(ess(&[0.7; 13]).unwrap(), 1.0);
        let degenerate = [0.0, -1e4, -1e4, -1e4];
        assert_eq!(ess(&degenerate).unwrap(), 0.25);
        let betas = [2f64.ln(), 0.0, 0.0];
        assert!((ess(&betas).unwrap() - 8.0 / 9.0).abs() < 1e-15);
        assert!(ess(&[]).is_err());
    }

    #[test]
    fn ess_shift_invariant() {
        let base = [0.3, -2.0, 1.7, 0.0, -0.4];
        let e0 = ess(&base).unwrap();
        for shift in [-500.0, -3.3, 12.0, 640.0] {
            let shifted: Vec<f64> = base.iter().map(|w| w + shift).collect();
            assert!((ess(&shifted).unwrap() - e0).abs() <= 1e-12);
        }
    }

    fn two_valued(n: usize, heavy: f64) -> WeightedEnsemble {
        // first 1/2 of particles at 0 carrying total mass `heavy`
        let half = n / 2;
        let positions = (0..n)
            .map(|i| DVector::from_element(1, if i < half { 0.0 } else { 1.0 }))
            .collect();
        let log_weights = (0..n)
            .map(|i| if i < half { heavy.ln() } else { (1.0 - heavy).ln() })
            .collect();
        WeightedEnsemble::new(positions, log_weights, 1.0, 3).unwrap()
    }

    #[test]
    fn pass_through_when_ess_high() {
        let mut e = two_valued(10, 0.5);
        let before = e.clone();
        assert!(!maybe_resample(&mut e, Some(0.5), ResampleScheme::Multinomial, &mut rng(1)).unwrap());
        assert_eq!(e, before);
        assert!(!maybe_resample(&mut e, None, ResampleScheme::Multinomial, &mut rng(1)).unwrap());
    }

    #[test]
    fn forced_resample_counts_follow_binomial() {
        for scheme in [ResampleScheme::Multinomial, ResampleScheme::Systematic] {
            let mut e = two_valued(1000, 0.9);
            assert!(maybe_resample(&mut e, Some(0.99), scheme, &mut rng(2)).unwrap());
            let zeros = e.positions.iter().filter(|x| x[0] == 0.0).count() as f64;
            let sd = (1000.0f64 * 0.9 * 0.1).sqrt();
            assert!((zeros - 900.0).abs() <= 3.0 * sd, "{scheme:?}: {zeros}");
            assert!(e.log_weights.iter().all(|w| *w == 0.0));
            assert_eq!(ess(&e.log_weights).unwrap(), 1.0);
        }
    }

    #[test]
    fn multinomial_is_unbiased() {
        let xs = [-1.0, 0.5, 2.0, 3.0, -0.25];
        let lw = [0.1f64.ln(), 0.3f64.ln(), 0.05f64.ln(), 0.4f64.ln(), 0.15f64.ln()];
        let w = normalized_weights(&lw).unwrap();
        let f = |x: f64| x * x + x.sin();
        let target: f64 = xs.iter().zip(&w).map(|(x, w)| w * f(*x)).sum();
        let trials = 10_000;
        let mut r = rng(3);
        let means: Vec<f64> = (0..trials)
            .map(|_| {
                let a = draw_ancestors(&w, ResampleScheme::Multinomial, &mut r);
                a.iter().map(|&i| f(xs[i])).sum::<f64>() / xs.len() as f64
            })
            .collect();
        let m = means.iter().sum::<f64>() / trials as f64;
        let var = means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (trials - 1) as f64;
        let se = (var / trials as f64).sqrt();
        assert!((m - target).abs() <= 3.0 * se, "{m} vs {target} (se {se})");
    }

    #[test]
    fn schedule_thresholds_validated() {
        let p = ResamplePolicy {
            threshold: Threshold::Schedule(vec![0.5, 0.2]),
            scheme: ResampleScheme::Multinomial,
        };
        assert!(p.validate(2).is_ok());
        assert!(p.validate(3).is_err());
        assert_eq!(p.threshold_at(1), Some(0.2));
        assert!(ResamplePolicy::constant(1.0, ResampleScheme::Multinomial).is_err());
        assert_eq!(ResamplePolicy::never().threshold_at(0), None);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn ess_bounded_and_shift_invariant(
                lw in prop::collection::vec(-30.0f64..30.0, 1..60),
                shift in -500.0f64..500.0,
            ) {
                let n = lw.len() as f64;
                let e = ess(&lw).unwrap();
                prop_assert!(e >= 1.0 / n - 1e-12 && e <= 1.0 + 1e-12);
                let shifted: Vec<f64> = lw.iter().map(|w| w + shift).collect();
                prop_assert!((ess(&shifted).unwrap() - e).abs() <= 1e-12);
            }

            #[test]
            fn forced_resample_leaves_uniform_weights(
                lw in prop::collection::vec(-10.0f64..10.0, 2..40),
                seed in any::<u64>(),
                systematic in any::<bool>(),
            ) {
                let positions = (0..lw.len()).map(|i| nalgebra::DVector::from_element(1, i as f64)).collect();
                let mut ens = WeightedEnsemble::new(positions, lw.clone(), 1.0, 0).unwrap();
                let scheme = if systematic { ResampleScheme::Systematic } else { ResampleScheme::Multinomial };
                let mut rng = crate::rng::stream(seed, crate::rng::StreamKey::new(crate::rng::Purpose::Resample, 0, 0));
                let done = maybe_resample(&mut ens, Some(1.0 + 1e-9), scheme, &mut rng).unwrap();
                prop_assert!(done);
                prop_assert_eq!(ens.len(), lw.len());
                prop_assert!(ens.log_weights.iter().all(|&w| w == 0.0));
                prop_assert_eq!(ess(&ens.log_weights).unwrap(), 1.0);
                prop_assert!(ens.positions.iter().all(|x| x[0] >= 0.0 && (x[0] as usize) < lw.len()));
            }
        }
    }
}
