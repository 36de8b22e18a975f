//! Predicting the final model's abstention from upstream confidence signals,
//! precision-recall analysis and the early-abstention cost-savings estimate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{
    fit_logistic, sigmoid, transform_raw_with, CalibrationError, L2_PENALTY, OUTPUT_CLAMP,
    RAW_CLAMP_EPS,
};

pub const MIN_LABEL_SAMPLES: usize = 10;
/// Cost ratio of the small model to the full cascade used when none is given.
pub const DEFAULT_COST_RATIO: f64 = 0.10;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum AbstentionError {
    #[error("target rate {0} must lie in (0, 1)")]
    InvalidRate(f64),
    #[error("need at least {min} confidences, got {got}")]
    TooFewSamples { min: usize, got: usize },
    #[error("confidence {index} is {value}; expected a value in [0, 1]")]
    InvalidConfidence { index: usize, value: f64 },
    #[error(
        "all final-model confidences are equal; the abstention quantile does not separate queries"
    )]
    ConstantConfidences,
    #[error("labels contain only {0} examples")]
    SingleClass(&'static str),
    #[error("test labels contain no positives")]
    NoPositives,
    #[error("feature rows have inconsistent lengths")]
    Ragged,
    #[error("{features} feature rows but {labels} labels")]
    LengthMismatch { features: usize, labels: usize },
    #[error("{name} = {value} must lie in (0, 1]")]
    OutOfRange { name: &'static str, value: f64 },
    #[error(transparent)]
    Fit(#[from] CalibrationError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbstentionLabeling {
    pub target_rate: f64,
    pub xi_k: f64,
    pub labels: Vec<bool>,
}

impl AbstentionLabeling {
    pub fn realized_rate(&self) -> f64 {
        self.labels.iter().filter(|&&y| y).count() as f64 / self.labels.len() as f64
    }

    /// Labels other confidences with the same threshold.
    pub fn apply(&self, final_confidences: &[f64]) -> Vec<bool> {
        final_confidences.iter().map(|&c| c < self.xi_k).collect()
    }
}

/// Sets `ξ_k` to the order statistic with 0-based index `⌈target·n⌉` and
/// labels `y = 1[Φ_k < ξ_k]`, so that with distinct scores exactly
/// `⌈target·n⌉` queries are labeled.
pub fn label_abstentions(
    final_confidences: &[f64],
    target_rate: f64,
) -> Result<AbstentionLabeling, AbstentionError> {
    if !(target_rate > 0.0 && target_rate < 1.0) {
        return Err(AbstentionError::InvalidRate(target_rate));
    }
    let n = final_confidences.len();
    if n < MIN_LABEL_SAMPLES {
        return Err(AbstentionError::TooFewSamples {
            min: MIN_LABEL_SAMPLES,
            got: n,
        });
    }
    for (index, &value) in final_confidences.iter().enumerate() {
        if !(0.0..=1.0).contains(&value) {
            return Err(AbstentionError::InvalidConfidence { index, value });
        }
    }
    let mut sorted = final_confidences.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted[0] == sorted[n - 1] {
        return Err(AbstentionError::ConstantConfidences);
    }
    let m = (target_rate * n as f64).ceil() as usize;
    let xi_k = if m >= n { 1.0 } else { sorted[m] };
    let labels = final_confidences.iter().map(|&c| c < xi_k).collect();
    Ok(AbstentionLabeling {
        target_rate,
        xi_k,
        labels,
    })
}

/// Logistic model `P(abstain) = σ(β₀ + Σ β_j f(p_j))` over upstream signals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbstentionClassifier {
    pub intercept: f64,
    pub weights: Vec<f64>,
    pub clamp_eps: f64,
    pub converged: bool,
}

impl AbstentionClassifier {
    pub fn score(&self, upstream_raw: &[f64]) -> f64 {
        let z = self.intercept
            + self
                .weights
                .iter()
                .zip(upstream_raw)
                .map(|(w, &p)| w * transform_raw_with(p, self.clamp_eps))
                .sum::<f64>();
        sigmoid(z).clamp(OUTPUT_CLAMP, 1.0 - OUTPUT_CLAMP)
    }
}

fn check_rows(rows: &[Vec<f64>], n_labels: usize) -> Result<usize, AbstentionError> {
    if rows.len() != n_labels {
        return Err(AbstentionError::LengthMismatch {
            features: rows.len(),
            labels: n_labels,
        });
    }
    let width = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != width) {
        return Err(AbstentionError::Ragged);
    }
    for (index, r) in rows.iter().enumerate() {
        if let Some(&value) = r.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(AbstentionError::InvalidConfidence { index, value });
        }
    }
    Ok(width)
}

/// Fits the classifier with the same penalized Newton solver as calibration.
/// `upstream_raw[q]` holds the signals of models `1..k−1` for query `q`.
pub fn fit_abstention_classifier(
    upstream_raw: &[Vec<f64>],
    labels: &AbstentionLabeling,
) -> Result<AbstentionClassifier, AbstentionError> {
    check_rows(upstream_raw, labels.labels.len())?;
    let pos = labels.labels.iter().filter(|&&y| y).count();
    if pos == 0 {
        return Err(AbstentionError::SingleClass("non-abstention"));
    }
    if pos == labels.labels.len() {
        return Err(AbstentionError::SingleClass("abstention"));
    }
    let x: Vec<Vec<f64>> = upstream_raw
        .iter()
        .map(|r| {
            r.iter()
                .map(|&p| transform_raw_with(p, RAW_CLAMP_EPS))
                .collect()
        })
        .collect();
    let fit = fit_logistic(&x, &labels.labels, L2_PENALTY)?;
    Ok(AbstentionClassifier {
        intercept: fit.intercept,
        weights: fit.weights,
        clamp_eps: RAW_CLAMP_EPS,
        converged: fit.converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PRCurve {
    pub baseline: f64,
    /// Ordered by decreasing classifier threshold (nondecreasing recall).
    pub points: Vec<PrPoint>,
}

impl PRCurve {
    /// Precision at the first point whose recall reaches `recall`; 1.0 when
    /// `recall` is 0 (no predictions).
    pub fn precision_at_recall(&self, recall: f64) -> f64 {
        if recall <= 0.0 {
            return 1.0;
        }
        self.points
            .iter()
            .find(|p| p.recall >= recall)
            .map_or(self.baseline, |p| p.precision)
    }

    /// Step-wise average precision `Σ (R_n − R_{n−1}) P_n`.
    pub fn average_precision(&self) -> f64 {
        let mut prev = 0.0;
        let mut ap = 0.0;
        for p in &self.points {
            ap += (p.recall - prev) * p.precision;
            prev = p.recall;
        }
        ap
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("curves serialize")
    }
}

/// Precision-recall curve from precomputed scores: one point per distinct
/// score, predicting abstention when `score ≥ threshold`.
pub fn precision_recall_scores(
    scores: &[f64],
    labels: &[bool],
) -> Result<PRCurve, AbstentionError> {
    if scores.len() != labels.len() {
        return Err(AbstentionError::LengthMismatch {
            features: scores.len(),
            labels: labels.len(),
        });
    }
    let positives = labels.iter().filter(|&&y| y).count();
    if positives == 0 {
        return Err(AbstentionError::NoPositives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(PrPoint {
            recall: tp as f64 / positives as f64,
            precision: tp as f64 / (tp + fp) as f64,
            threshold: s,
        });
    }
    Ok(PRCurve {
        baseline: positives as f64 / labels.len() as f64,
        points,
    })
}

pub fn precision_recall(
    classifier: &AbstentionClassifier,
    upstream_raw_test: &[Vec<f64>],
    labels_test: &[bool],
) -> Result<PRCurve, AbstentionError> {
    check_rows(upstream_raw_test, labels_test.len())?;
    let scores: Vec<f64> = upstream_raw_test
        .iter()
        .map(|r| classifier.score(r))
        .collect();
    precision_recall_scores(&scores, labels_test)
}

/// Area under the ROC curve (ties count one half).
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let (mut rank_sum, mut i) = (0.0, 0);
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j + 1) as f64 / 2.0;
        rank_sum += order[i..j].iter().filter(|&&q| labels[q]).count() as f64 * avg_rank;
        i = j;
    }
    let pos = labels.iter().filter(|&&y| y).count() as f64;
    let neg = labels.len() as f64 - pos;
    (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostSavings {
    pub total_cost_factor: f64,
    pub new_abstention_rate: f64,
    /// Fraction of queries abstained on by the small model.
    pub early_fraction: f64,
}

/// Cost and abstention after letting the small model abstain early with the
/// given recall and precision against the final model's abstentions.
pub fn cost_savings_estimate(
    abstention_rate: f64,
    recall: f64,
    precision: f64,
    cost_ratio_small_over_full: f64,
) -> Result<CostSavings, AbstentionError> {
    let in_unit = |v: f64| v > 0.0 && v <= 1.0;
    if !in_unit(abstention_rate) {
        return Err(AbstentionError::OutOfRange {
            name: "abstention_rate",
            value: abstention_rate,
        });
    }
    if !(0.0..=1.0).contains(&recall) {
        return Err(AbstentionError::OutOfRange {
            name: "recall",
            value: recall,
        });
    }
    if !in_unit(precision) {
        return Err(AbstentionError::OutOfRange {
            name: "precision",
            value: precision,
        });
    }
    if !in_unit(cost_ratio_small_over_full) {
        return Err(AbstentionError::OutOfRange {
            name: "cost_ratio",
            value: cost_ratio_small_over_full,
        });
    }
    let correct = abstention_rate * recall;
    let incorrect = correct * (1.0 - precision) / precision;
    let e = correct + incorrect;
    Ok(CostSavings {
        total_cost_factor: (1.0 - e) + e * cost_ratio_small_over_full,
        new_abstention_rate: abstention_rate + incorrect,
        early_fraction: e,
    })
}
