//! Threshold tuning for confidence-based model cascades with deferral and
//! abstention.
//!
//! The crate fits a Markov model of the per-model confidence scores, evaluates
//! error, cost and abstention of a threshold vector in closed form, optimizes
//! thresholds across a grid of user preferences and compares early abstention
//! against abstaining only at the final model.

pub mod abstention;
pub mod calibration;
pub mod cascade;
pub mod cli;
pub mod data;
pub mod joint;
pub mod metrics;
pub mod optimize;
pub mod quadrature;
pub mod special;

pub use cascade::{
    dominates, empirical_loss, evaluate_empirical, pareto_front, route, validate_thresholds,
    Architecture, CascadeError, CascadeSpec, Decision, ModelProfile, PerformanceVector,
    QueryRecord, RouteOutcome, ThresholdVector,
};
