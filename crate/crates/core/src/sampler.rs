//! Outer loop: Stage I, K dynamics steps with optional resampling, and the final estimator.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::config::RunSpec;
use crate::dynamics::{ode_corrector_step, quantity_i, sde_step, DynamicsMode, Estimator, StepReport};
use crate::ensemble::WeightedEnsemble;
use crate::error::{Error, Result};
use crate::resampling::{ess, maybe_resample};
use crate::rng::{stream, GaussianNoise, Purpose, SeededNoise, StreamKey};
use crate::stage1::{initialize, Stage1Report};

/// One row of the per-step trace. Statistics are taken before any resampling at that step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub sigma: f64,
    pub ess: f64,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub resampled: bool,
    /// Largest `|I|` over the particles entering this state.
    pub max_abs_i: f64,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    /// Ensemble after the last step (and any final resampling).
    pub ensemble: WeightedEnsemble,
    /// The posterior approximation selected by the estimator.
    pub estimate: WeightedEnsemble,
    pub trace: Vec<TraceRow>,
    pub stage1: Stage1Report,
    pub clamp_events: usize,
    pub resample_count: usize,
}

/// A failed run with the trace up to the failure.
#[derive(Debug)]
pub struct RunFailure {
    pub error: Error,
    pub trace: Vec<TraceRow>,
}

impl From<Error> for RunFailure {
    fn from(error: Error) -> Self {
        Self { error, trace: Vec::new() }
    }
}

fn diag_moments(ens: &WeightedEnsemble) -> Result<(Vec<f64>, Vec<f64>)> {
    let w = ens.normalized_weights()?;
    let n = ens.dim();
    let mut mean = vec![0.0; n];
    for (x, wi) in ens.positions.iter().zip(&w) {
        for d in 0..n {
            mean[d] += wi * x[d];
        }
    }
    let mut var = vec![0.0; n];
    for (x, wi) in ens.positions.iter().zip(&w) {
        for d in 0..n {
            var[d] += wi * (x[d] - mean[d]).powi(2);
        }
    }
    Ok((mean, var))
}

fn row(ens: &WeightedEnsemble, max_abs_i: f64) -> Result<TraceRow> {
    let (mean, var) = diag_moments(ens)?;
    Ok(TraceRow {
        step: ens.step_index,
        sigma: ens.sigma_current,
        ess: ess(&ens.log_weights)?,
        mean,
        var,
        resampled: false,
        max_abs_i,
    })
}

/// Runs the configured sampler with the production noise source.
pub fn run_sampler(spec: &RunSpec) -> std::result::Result<RunOutput, RunFailure> {
    run_with_noise(spec, &SeededNoise::new(spec.master_seed))
}

pub fn run_with_noise(
    spec: &RunSpec,
    noise: &dyn GaussianNoise,
) -> std::result::Result<RunOutput, RunFailure> {
    let grid = spec.schedule.grid();
    let dyn_cfg = &spec.dynamics;
    let (init, stage1) = initialize(
        &spec.stage1,
        &spec.prior,
        &spec.likelihood,
        grid[0],
        dyn_cfg.n_particles,
        spec.master_seed,
    )?;
    let mut ens = WeightedEnsemble::uniform(init, grid[0])?;
    let mut trace = Vec::with_capacity(grid.len());
    let mut clamp_events = 0;
    let mut resample_count = 0;

    let initial_i = ens
        .positions
        .iter()
        .map(|x| quantity_i(&spec.score, &spec.likelihood, x, grid[0]).map(f64::abs))
        .try_fold(0.0f64, |m, v| v.map(|v| m.max(v)));
    match initial_i.and_then(|i| row(&ens, i)) {
        Ok(r) => trace.push(r),
        Err(error) => return Err(RunFailure { error, trace }),
    }

    for &sigma_next in &grid[1..] {
        let step = ens.step_index;
        let stepped: Result<(WeightedEnsemble, StepReport)> = match dyn_cfg.mode {
            DynamicsMode::Sde => sde_step(
                &ens,
                sigma_next,
                &spec.score,
                &spec.likelihood,
                dyn_cfg.eta,
                noise,
                dyn_cfg.log_weight_clamp,
            ),
            DynamicsMode::OdeCorrector => ode_corrector_step(
                &ens,
                sigma_next,
                &spec.score,
                &spec.likelihood,
                &dyn_cfg.corrector,
                noise,
                dyn_cfg.log_weight_clamp,
            ),
        };
        let outcome = stepped.and_then(|(mut next, report)| {
            let mut r = row(&next, report.max_abs_i)?;
            let mut rng = stream(spec.master_seed, StreamKey::new(Purpose::Resample, 0, step));
            r.resampled = maybe_resample(
                &mut next,
                dyn_cfg.resampling.threshold_at(step),
                dyn_cfg.resampling.scheme,
                &mut rng,
            )?;
            Ok((next, report, r))
        });
        match outcome {
            Ok((next, report, r)) => {
                clamp_events += report.clamped;
                resample_count += usize::from(r.resampled);
                trace.push(r);
                ens = next;
            }
            Err(error) => return Err(RunFailure { error, trace }),
        }
    }

    let estimate = match dyn_cfg.estimator {
        Estimator::WeightedEnsemble => ens.clone(),
        Estimator::MaxWeight => {
            let best: DVector<f64> = ens.positions[ens.argmax_weight()].clone();
            WeightedEnsemble::new(vec![best], vec![0.0], ens.sigma_current, ens.step_index)?
        }
    };
    Ok(RunOutput {
        ensemble: ens,
        estimate,
        trace,
        stage1,
        clamp_events,
        resample_count,
    })
}
