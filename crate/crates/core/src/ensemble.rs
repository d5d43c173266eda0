use nalgebra::DVector;

use crate::error::{Error, Result};

/// Particle positions with unnormalized log-weights at one noise level.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedEnsemble {
    pub positions: Vec<DVector<f64>>,
    pub log_weights: Vec<f64>,
    pub sigma_current: f64,
    pub step_index: usize,
}

impl WeightedEnsemble {
    /// Uniformly weighted ensemble.
    pub fn uniform(positions: Vec<DVector<f64>>, sigma: f64) -> Result<Self> {
        let n = positions.len();
        Self::new(positions, vec![0.0; n], sigma, 0)
    }

    pub fn new(
        positions: Vec<DVector<f64>>,
        log_weights: Vec<f64>,
        sigma_current: f64,
        step_index: usize,
    ) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::domain("ensemble needs at least one particle"));
        }
        if positions.len() != log_weights.len() {
            return Err(Error::domain(format!(
                "{} positions but {} log-weights",
                positions.len(),
                log_weights.len()
            )));
        }
        let dim = positions[0].len();
        if positions.iter().any(|p| p.len() != dim) {
            return Err(Error::domain("particles have inconsistent dimensions"));
        }
        if log_weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::domain("log-weights must be finite"));
        }
        Ok(Self {
            positions,
            log_weights,
            sigma_current,
            step_index,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.positions[0].len()
    }

    /// Self-normalized weights, computed from max-shifted exponentials in index order.
    pub fn normalized_weights(&self) -> Result<Vec<f64>> {
        normalized_weights(&self.log_weights).ok_or(Error::Degenerate {
            step: self.step_index,
        })
    }

    /// Index of the heaviest particle (lowest index on ties).
    pub fn argmax_weight(&self) -> usize {
        let mut best = 0;
        for (i, w) in self.log_weights.iter().enumerate() {
            if *w > self.log_weights[best] {
                best = i;
            }
        }
        best
    }
}

/// `None` when no weight survives the shift (empty or non-finite input).
pub fn normalized_weights(log_weights: &[f64]) -> Option<Vec<f64>> {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let betas: Vec<f64> = log_weights.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = betas.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return None;
    }
    Some(betas.into_iter().map(|b| b / total).collect())
}
