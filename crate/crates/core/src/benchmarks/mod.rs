//! Benchmark models with known transition laws: exact densities, exact
//! samplers, density error grids and the Monte Carlo estimation protocol.

mod exact;
mod experiments;
mod simulate;

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use thiserror::Error;

use crate::expansion::{ExpansionError, ModelError, ModelSpec};
use crate::likelihood::LikelihoodError;

pub use exact::{
    conditional_moments, dmrou_stationary_cov, exact_density, exact_log_density, gaussian_transition,
    ln_bessel_i, stationary_moments, GaussianTransition,
};
pub use experiments::{
    error_experiment, exact_fit, exact_loglik, mle_experiment, write_error_summary, write_grid,
    write_mle_estimates, write_mle_table, ErrorGrid, MleOptions, MleReplication, MleSummary, ParamSummary,
};
pub use simulate::{
    euler_simulate, rng_for, simulate, simulate_stream, stationary_draw, ExactSampler,
};

#[derive(Debug, Error)]
pub enum BenchmarkError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Expansion(#[from] ExpansionError),
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
    #[error("{0}")]
    Unsupported(String),
    #[error("path left the state space at step {step}: {x:?}")]
    LeftStateSpace { step: usize, x: Vec<f64> },
    #[error("{0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BenchmarkKind {
    Mrou,
    Sqr,
    Dmrou,
}

impl BenchmarkKind {
    pub const ALL: [BenchmarkKind; 3] = [BenchmarkKind::Mrou, BenchmarkKind::Sqr, BenchmarkKind::Dmrou];

    pub fn name(self) -> &'static str {
        match self {
            BenchmarkKind::Mrou => "mrou",
            BenchmarkKind::Sqr => "sqr",
            BenchmarkKind::Dmrou => "dmrou",
        }
    }

    /// The built-in model of the same name.
    pub fn model(self) -> &'static ModelSpec {
        static MODELS: OnceLock<[ModelSpec; 3]> = OnceLock::new();
        let all = MODELS.get_or_init(|| {
            BenchmarkKind::ALL.map(|k| ModelSpec::builtin(k.name()).expect("built-in models parse"))
        });
        &all[self as usize]
    }

    pub fn dim(self) -> usize {
        self.model().dim
    }

    pub fn check_theta(self, theta: &[f64]) -> Result<(), BenchmarkError> {
        Ok(self.model().check_theta(theta)?)
    }

    /// The published parameter sets.
    pub fn reference_theta(self) -> Vec<f64> {
        match self {
            BenchmarkKind::Mrou => vec![0.5, 0.06, 0.03],
            BenchmarkKind::Sqr => vec![0.5, 0.06, 0.15],
            BenchmarkKind::Dmrou => vec![5.0, 1.0, 10.0, 0.0, 0.0],
        }
    }

    /// Default conditioning state for density grids: one stationary
    /// standard deviation above the long-run mean in every coordinate.
    pub fn default_x0(self, theta: &[f64]) -> Result<Vec<f64>, BenchmarkError> {
        let (mean, sd) = stationary_moments(self, theta)?;
        Ok(mean.iter().zip(&sd).map(|(m, s)| m + s).collect())
    }

    /// Whether a Lamperti transform is declared for the model.
    pub fn has_lamperti(self) -> bool {
        self.model().lamperti.is_some()
    }
}

impl fmt::Display for BenchmarkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BenchmarkKind {
    type Err = BenchmarkError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mrou" => Ok(BenchmarkKind::Mrou),
            "sqr" => Ok(BenchmarkKind::Sqr),
            "dmrou" => Ok(BenchmarkKind::Dmrou),
            other => Err(BenchmarkError::Unsupported(format!(
                "unknown benchmark `{other}` (expected mrou, sqr or dmrou)"
            ))),
        }
    }
}
