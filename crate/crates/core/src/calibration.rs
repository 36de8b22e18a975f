//! Logistic calibration of raw token-probability confidence signals.
//!
//! A raw signal `p_raw` is mapped to the feature `f = log(1/(1 − p_raw))` and
//! the correctness probability is modelled as `sigmoid(a + b·f)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Clamp applied to `p_raw` before the log transform.
pub const RAW_CLAMP_EPS: f64 = 1e-6;
/// Calibrated outputs are clamped to `[OUTPUT_CLAMP, 1 − OUTPUT_CLAMP]`.
pub const OUTPUT_CLAMP: f64 = 1e-4;
/// L2 penalty on the non-intercept coefficients (per-sample scaling).
pub const L2_PENALTY: f64 = 1e-4;
pub const MAX_NEWTON_ITERS: usize = 500;
pub const GRAD_TOL: f64 = 1e-8;
pub const MIN_TRAIN: usize = 10;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum CalibrationError {
    #[error("need at least {min} training examples, got {got}")]
    TooFewSamples { min: usize, got: usize },
    #[error("training labels are all {label}; logistic fit is degenerate")]
    SingleClass { label: bool },
    #[error("non-finite or out-of-range input at row {row}")]
    InvalidInput { row: usize },
    #[error("feature rows have inconsistent width at row {row}")]
    Ragged { row: usize },
}

/// `log(1/(1 − p))` with `p` clamped into `[eps, 1 − eps]`.
#[inline]
pub fn transform_raw_with(p_raw: f64, eps: f64) -> f64 {
    let p = p_raw.clamp(eps, 1.0 - eps);
    -(-p).ln_1p()
}

#[inline]
pub fn transform_raw(p_raw: f64) -> f64 {
    transform_raw_with(p_raw, RAW_CLAMP_EPS)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Fitted multivariate logistic regression `sigmoid(β₀ + Σ β_j x_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub intercept: f64,
    pub weights: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl LogisticModel {
    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        self.intercept + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        sigmoid(self.linear_predictor(x))
    }
}

fn penalized_loglik(x: &[Vec<f64>], y: &[bool], beta: &DVector<f64>, l2: f64) -> f64 {
    let n = x.len() as f64;
    let mut ll = 0.0;
    for (row, &label) in x.iter().zip(y) {
        let eta = beta[0]
            + row
                .iter()
                .enumerate()
                .map(|(j, v)| beta[j + 1] * v)
                .sum::<f64>();
        // log(1 + e^η) computed stably
        let softplus = if eta > 0.0 {
            eta + (-eta).exp().ln_1p()
        } else {
            eta.exp().ln_1p()
        };
        ll += if label { eta - softplus } else { -softplus };
    }
    let penalty: f64 = beta.iter().skip(1).map(|b| b * b).sum();
    ll / n - 0.5 * l2 * penalty
}

/// Penalised maximum-likelihood logistic regression by damped Newton steps.
pub fn fit_logistic(
    x: &[Vec<f64>],
    y: &[bool],
    l2: f64,
) -> Result<LogisticModel, CalibrationError> {
    let n = x.len();
    if n < MIN_TRAIN {
        return Err(CalibrationError::TooFewSamples {
            min: MIN_TRAIN,
            got: n,
        });
    }
    let d = x[0].len();
    for (row, r) in x.iter().enumerate() {
        if r.len() != d {
            return Err(CalibrationError::Ragged { row });
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(CalibrationError::InvalidInput { row });
        }
    }
    let positives = y.iter().filter(|&&b| b).count();
    if positives == 0 || positives == n {
        return Err(CalibrationError::SingleClass {
            label: positives == n,
        });
    }

    let p = d + 1;
    let nf = n as f64;
    let base_rate = positives as f64 / nf;
    let mut beta = DVector::zeros(p);
    beta[0] = (base_rate / (1.0 - base_rate)).ln();
    let mut obj = penalized_loglik(x, y, &beta, l2);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_NEWTON_ITERS {
        let mut grad = DVector::zeros(p);
        let mut hess = DMatrix::zeros(p, p);
        for (row, &label) in x.iter().zip(y) {
            let eta = beta[0]
                + row
                    .iter()
                    .enumerate()
                    .map(|(j, v)| beta[j + 1] * v)
                    .sum::<f64>();
            let mu = sigmoid(eta);
            let resid = if label { 1.0 - mu } else { -mu };
            let w = mu * (1.0 - mu);
            grad[0] += resid;
            hess[(0, 0)] += w;
            for j in 0..d {
                grad[j + 1] += resid * row[j];
                hess[(0, j + 1)] += w * row[j];
                for l in j..d {
                    hess[(j + 1, l + 1)] += w * row[j] * row[l];
                }
            }
        }
        grad /= nf;
        hess /= nf;
        for j in 1..p {
            grad[j] -= l2 * beta[j];
            hess[(j, j)] += l2;
            for l in 0..j {
                hess[(j, l)] = hess[(l, j)];
            }
        }
        if grad.norm() <= GRAD_TOL {
            converged = true;
            break;
        }
        iterations += 1;
        // small ridge keeps the solve defined when all weights underflow
        let mut h = hess.clone();
        for j in 0..p {
            h[(j, j)] += 1e-12;
        }
        let step = match h.cholesky() {
            Some(ch) => ch.solve(&grad),
            None => grad.clone(),
        };
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = &beta + &step * scale;
            let cand_obj = penalized_loglik(x, y, &cand, l2);
            if cand_obj >= obj {
                beta = cand;
                obj = cand_obj;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            // no ascent direction left at machine precision
            converged = grad.norm() <= 1e-6;
            break;
        }
    }
    Ok(LogisticModel {
        intercept: beta[0],
        weights: beta.iter().skip(1).copied().collect(),
        iterations,
        converged,
    })
}

/// Per-(model, benchmark) calibration map from `p_raw` to a correctness
/// probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationModel {
    pub intercept: f64,
    pub slope: f64,
    pub clamp_eps: f64,
}

impl CalibrationModel {
    pub fn new(intercept: f64, slope: f64) -> Self {
        Self {
            intercept,
            slope,
            clamp_eps: RAW_CLAMP_EPS,
        }
    }

    pub fn apply(&self, p_raw: f64) -> f64 {
        apply_calibration(self, p_raw)
    }
}

pub fn fit_calibration(train: &[(f64, bool)]) -> Result<CalibrationModel, CalibrationError> {
    for (row, &(p, _)) in train.iter().enumerate() {
        if !(0.0..=1.0).contains(&p) {
            return Err(CalibrationError::InvalidInput { row });
        }
    }
    let x: Vec<Vec<f64>> = train.iter().map(|&(p, _)| vec![transform_raw(p)]).collect();
    let y: Vec<bool> = train.iter().map(|&(_, c)| c).collect();
    let fit = fit_logistic(&x, &y, L2_PENALTY)?;
    if !fit.converged {
        log::warn!(
            "calibration fit stopped after {} Newton iterations without meeting tolerance",
            fit.iterations
        );
    }
    Ok(CalibrationModel {
        intercept: fit.intercept,
        slope: fit.weights[0],
        clamp_eps: RAW_CLAMP_EPS,
    })
}

pub fn apply_calibration(m: &CalibrationModel, p_raw: f64) -> f64 {
    let f = transform_raw_with(p_raw, m.clamp_eps);
    sigmoid(m.intercept + m.slope * f).clamp(OUTPUT_CLAMP, 1.0 - OUTPUT_CLAMP)
}

pub fn brier_score(pred: &[f64], labels: &[bool]) -> f64 {
    let n = pred.len() as f64;
    pred.iter()
        .zip(labels)
        .map(|(p, &y)| {
            let t = if y { 1.0 } else { 0.0 };
            (p - t) * (p - t)
        })
        .sum::<f64>()
        / n
}
