//! Markov approximation of the joint confidence distribution: beta-mixture
//! marginals `p(Φ_i)` chained by Gaussian pair copulas `p(Φ_i | Φ_{i−1})`.

mod beta_mixture;
mod copula;
mod markov;

pub use beta_mixture::{
    fit_beta_mixture, select_beta_mixture, BetaMixture, EmOptions, MixtureFit, MAX_COMPONENTS,
    MIN_FIT_SAMPLES,
};
pub use copula::{
    fit_pair_copula, kendall_tau, CopulaFamily, PairCopula, MIN_COPULA_PAIRS, RHO_CLAMP,
};
pub use markov::{
    fit_markov_model, ComponentDiagnostics, Interval, JointFitOptions, JointFitReport,
    MarginalDiagnostics, MarkovJointModel, MIN_CONDITIONING_MASS, QUAD_ABS_TOL,
};
pub(crate) use markov::{norm_interval, MarginalPoint};

use crate::quadrature::QuadError;
use thiserror::Error;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum JointError {
    #[error("invalid beta mixture: {0}")]
    InvalidMixture(String),
    #[error("copula correlation {0} is outside (-1, 1)")]
    InvalidCorrelation(f64),
    #[error("need at least {min} samples, got {got}")]
    TooFewSamples { min: usize, got: usize },
    #[error("sample {row} is {value}; samples must lie strictly inside (0, 1)")]
    SampleOutsideOpenInterval { row: usize, value: f64 },
    #[error("mixture size {m} is outside 1..={max}")]
    InvalidComponentCount { m: usize, max: usize },
    #[error("a margin is constant; the copula is not identifiable")]
    DegenerateMargin,
    #[error("invalid interval [{lo}, {hi}]")]
    InvalidInterval { lo: f64, hi: f64 },
    #[error("model index {index} is out of range for k = {k}")]
    IndexOutOfRange { index: usize, k: usize },
    #[error("conditioning event has probability {mass:e}")]
    ZeroProbabilityCondition { mass: f64 },
    #[error("sample size must be at least 1")]
    EmptySample,
    #[error("model shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("fit failed: {0}")]
    FitFailed(String),
    #[error("cannot parse model: {0}")]
    Parse(String),
    #[error(transparent)]
    Quadrature(#[from] QuadError),
}
