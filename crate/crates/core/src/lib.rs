//! Weighted-particle diffusion posterior sampling for Bayesian inverse problems.
//!
//! Priors are Gaussian mixtures, so the noised prior score and (for
//! linear-Gaussian likelihoods) the posterior are available in closed form
//! and every sampler output can be checked against an exact reference.

pub mod config;
pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod likelihood;
pub mod metrics;
pub mod oracle;
pub mod prior;
pub mod resampling;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod stage1;

pub use config::{load_config, RunConfig, RunSpec};
pub use ensemble::WeightedEnsemble;
pub use error::{Error, Result};
pub use likelihood::{Likelihood, LinearGaussianLikelihood, NegLogLikelihood, TanhLinearLikelihood};
pub use metrics::MetricsReport;
pub use prior::{GaussianMixture, ScoreModel};
pub use sampler::{run_sampler, RunOutput, TraceRow};
pub use schedule::NoiseSchedule;
