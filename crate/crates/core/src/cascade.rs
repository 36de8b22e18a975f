//! Cascade domain types, threshold routing and empirical evaluation.
//!
//! A cascade `M₁ → … → M_k` processes a query by asking each model in turn.
//! Model `i < k` answers when its confidence exceeds the deferral threshold
//! `φ_i`, abstains when it falls below the abstention threshold `ξ_i`, and
//! otherwise hands the query to `M_{i+1}`. The final model abstains when its
//! confidence is below `ξ_k` and answers otherwise.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Minimum gap enforced between `ξ_i` and `φ_i`.
pub const DELTA_SEP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelProfile {
    pub name: String,
    /// Expected cost per query, in abstract units.
    pub expected_cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// Any model may abstain.
    #[serde(alias = "early")]
    EarlyAbstention,
    /// Only the final model may abstain; `ξ₁..ξ_{k−1}` are pinned to 0.
    #[serde(alias = "final")]
    FinalModelAbstention,
}

impl Architecture {
    pub fn short_name(self) -> &'static str {
        match self {
            Architecture::EarlyAbstention => "early",
            Architecture::FinalModelAbstention => "final",
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum CascadeError {
    #[error("a cascade needs at least one model")]
    Empty,
    #[error("model {index} ({name}) has invalid expected cost {cost}")]
    InvalidCost {
        index: usize,
        name: String,
        cost: f64,
    },
    #[error("expected {expected} {kind} thresholds, got {got}")]
    LengthMismatch {
        kind: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("{kind} threshold at model {index} is {value}, outside [0, 1]")]
    OutOfRange {
        kind: &'static str,
        index: usize,
        value: f64,
    },
    #[error("abstention threshold {xi} at model {index} must be at least {sep:e} below deferral threshold {phi}")]
    Ordering {
        index: usize,
        xi: f64,
        phi: f64,
        sep: f64,
    },
    #[error("final-model abstention requires ξ_{index} = 0, got {value}")]
    EarlyAbstentionNotAllowed { index: usize, value: f64 },
    #[error("record {query_id}: expected {expected} entries in `{field}`, got {got}")]
    RecordShape {
        query_id: String,
        field: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("record {query_id}: {field} of model {index} is {value}, outside its valid range")]
    RecordValue {
        query_id: String,
        field: &'static str,
        index: usize,
        value: f64,
    },
    #[error("cannot evaluate a cascade on an empty dataset")]
    EmptyDataset,
    #[error(
        "preference weights must be nonnegative, got lambda_c = {lambda_c}, lambda_a = {lambda_a}"
    )]
    NegativePreference { lambda_c: f64, lambda_a: f64 },
}

/// An ordered chain of models. Positions are implicit (index + 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadeSpec {
    models: Vec<ModelProfile>,
    architecture: Architecture,
}

impl CascadeSpec {
    pub fn new(
        models: Vec<ModelProfile>,
        architecture: Architecture,
    ) -> Result<Self, CascadeError> {
        if models.is_empty() {
            return Err(CascadeError::Empty);
        }
        for (index, m) in models.iter().enumerate() {
            if !(m.expected_cost.is_finite() && m.expected_cost >= 0.0) {
                return Err(CascadeError::InvalidCost {
                    index: index + 1,
                    name: m.name.clone(),
                    cost: m.expected_cost,
                });
            }
        }
        Ok(Self {
            models,
            architecture,
        })
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn models(&self) -> &[ModelProfile] {
        &self.models
    }

    pub fn architecture(&self) -> Architecture {
        self.architecture
    }

    pub fn with_architecture(&self, architecture: Architecture) -> Self {
        Self {
            models: self.models.clone(),
            architecture,
        }
    }

    pub fn expected_costs(&self) -> Vec<f64> {
        self.models.iter().map(|m| m.expected_cost).collect()
    }

    /// Sum of expected costs of every model in the chain.
    pub fn total_cost(&self) -> f64 {
        self.models.iter().map(|m| m.expected_cost).sum()
    }
}

/// Deferral thresholds `φ₁..φ_{k−1}` and abstention thresholds `ξ₁..ξ_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdVector {
    pub deferral: Vec<f64>,
    pub abstention: Vec<f64>,
}

impl ThresholdVector {
    pub fn new(deferral: Vec<f64>, abstention: Vec<f64>) -> Self {
        Self {
            deferral,
            abstention,
        }
    }

    /// Thresholds that never abstain and always defer to the last model.
    pub fn always_defer(k: usize) -> Self {
        Self {
            deferral: vec![1.0; k.saturating_sub(1)],
            abstention: vec![0.0; k],
        }
    }

    pub fn k(&self) -> usize {
        self.abstention.len()
    }

    /// Flattened `[φ₁..φ_{k−1}, ξ₁..ξ_k]`.
    pub fn to_flat(&self) -> Vec<f64> {
        self.deferral
            .iter()
            .chain(&self.abstention)
            .copied()
            .collect()
    }

    pub fn from_flat(k: usize, flat: &[f64]) -> Self {
        assert_eq!(
            flat.len(),
            2 * k - 1,
            "flat threshold vector has wrong length"
        );
        Self {
            deferral: flat[..k - 1].to_vec(),
            abstention: flat[k - 1..].to_vec(),
        }
    }

    /// Componentwise mean over all `2k − 1` entries.
    pub fn component_mean(&self) -> f64 {
        let n = self.deferral.len() + self.abstention.len();
        self.to_flat().iter().sum::<f64>() / n as f64
    }
}

pub fn validate_thresholds(spec: &CascadeSpec, t: &ThresholdVector) -> Result<(), CascadeError> {
    let k = spec.len();
    if t.deferral.len() != k - 1 {
        return Err(CascadeError::LengthMismatch {
            kind: "deferral",
            expected: k - 1,
            got: t.deferral.len(),
        });
    }
    if t.abstention.len() != k {
        return Err(CascadeError::LengthMismatch {
            kind: "abstention",
            expected: k,
            got: t.abstention.len(),
        });
    }
    for (i, &v) in t.deferral.iter().enumerate() {
        if !(0.0..=1.0).contains(&v) {
            return Err(CascadeError::OutOfRange {
                kind: "deferral",
                index: i + 1,
                value: v,
            });
        }
    }
    for (i, &v) in t.abstention.iter().enumerate() {
        if !(0.0..=1.0).contains(&v) {
            return Err(CascadeError::OutOfRange {
                kind: "abstention",
                index: i + 1,
                value: v,
            });
        }
    }
    for i in 0..k - 1 {
        let (xi, phi) = (t.abstention[i], t.deferral[i]);
        if spec.architecture() == Architecture::FinalModelAbstention && xi != 0.0 {
            return Err(CascadeError::EarlyAbstentionNotAllowed {
                index: i + 1,
                value: xi,
            });
        }
        if xi > phi - DELTA_SEP {
            return Err(CascadeError::Ordering {
                index: i + 1,
                xi,
                phi,
                sep: DELTA_SEP,
            });
        }
    }
    Ok(())
}

/// One query's per-model calibrated confidences, correctness and costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: String,
    pub confidences: Vec<f64>,
    pub correct: Vec<bool>,
    pub costs: Vec<f64>,
}

impl QueryRecord {
    /// Builds a record whose realized costs are the cascade's expected costs.
    pub fn with_expected_costs(
        query_id: impl Into<String>,
        confidences: Vec<f64>,
        correct: Vec<bool>,
        spec: &CascadeSpec,
    ) -> Self {
        Self {
            query_id: query_id.into(),
            confidences,
            correct,
            costs: spec.expected_costs(),
        }
    }

    pub fn validate(&self, k: usize) -> Result<(), CascadeError> {
        let shape = |field, got| CascadeError::RecordShape {
            query_id: self.query_id.clone(),
            field,
            expected: k,
            got,
        };
        if self.confidences.len() != k {
            return Err(shape("confidences", self.confidences.len()));
        }
        if self.correct.len() != k {
            return Err(shape("correct", self.correct.len()));
        }
        if self.costs.len() != k {
            return Err(shape("costs", self.costs.len()));
        }
        for (i, &c) in self.confidences.iter().enumerate() {
            if !(0.0..=1.0).contains(&c) {
                return Err(CascadeError::RecordValue {
                    query_id: self.query_id.clone(),
                    field: "confidence",
                    index: i + 1,
                    value: c,
                });
            }
        }
        for (i, &c) in self.costs.iter().enumerate() {
            if !(c.is_finite() && c >= 0.0) {
                return Err(CascadeError::RecordValue {
                    query_id: self.query_id.clone(),
                    field: "cost",
                    index: i + 1,
                    value: c,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    /// Answered by the model at this 1-based position.
    Answered(usize),
    /// Abstained at this 1-based position.
    Abstained(usize),
}

impl Decision {
    pub fn position(self) -> usize {
        match self {
            Decision::Answered(i) | Decision::Abstained(i) => i,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RouteOutcome {
    pub decision: Decision,
    pub cumulative_cost: f64,
    pub was_error: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepAction {
    Answer,
    Abstain,
    Defer,
}

/// Decision made by the model at 0-based `index`.
#[inline]
pub fn step_action(t: &ThresholdVector, index: usize, confidence: f64) -> StepAction {
    let k = t.abstention.len();
    if confidence < t.abstention[index] {
        StepAction::Abstain
    } else if index + 1 == k || confidence > t.deferral[index] {
        StepAction::Answer
    } else {
        StepAction::Defer
    }
}

/// Routes one record through the cascade.
///
/// Callers are expected to have validated `t` and `rec` against `spec`.
pub fn route(spec: &CascadeSpec, t: &ThresholdVector, rec: &QueryRecord) -> RouteOutcome {
    let k = spec.len();
    debug_assert_eq!(rec.confidences.len(), k);
    let mut cost = 0.0;
    for i in 0..k {
        cost += rec.costs[i];
        match step_action(t, i, rec.confidences[i]) {
            StepAction::Abstain => {
                return RouteOutcome {
                    decision: Decision::Abstained(i + 1),
                    cumulative_cost: cost,
                    was_error: false,
                }
            }
            StepAction::Answer => {
                return RouteOutcome {
                    decision: Decision::Answered(i + 1),
                    cumulative_cost: cost,
                    was_error: !rec.correct[i],
                }
            }
            StepAction::Defer => {}
        }
    }
    unreachable!("the final model always answers or abstains")
}

/// `(error, cost, abstention)` where error is `P(Error ∧ ¬Abstention)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerformanceVector {
    pub error: f64,
    pub cost: f64,
    pub abstention: f64,
}

impl PerformanceVector {
    pub fn new(error: f64, cost: f64, abstention: f64) -> Self {
        Self {
            error,
            cost,
            abstention,
        }
    }

    pub fn loss(&self, lambda_c: f64, lambda_a: f64) -> Result<f64, CascadeError> {
        empirical_loss(self, lambda_c, lambda_a)
    }
}

pub fn evaluate_empirical(
    spec: &CascadeSpec,
    t: &ThresholdVector,
    data: &[QueryRecord],
) -> Result<PerformanceVector, CascadeError> {
    if data.is_empty() {
        return Err(CascadeError::EmptyDataset);
    }
    validate_thresholds(spec, t)?;
    let mut errors = 0usize;
    let mut abstained = 0usize;
    let mut cost = 0.0;
    for rec in data {
        rec.validate(spec.len())?;
        let out = route(spec, t, rec);
        cost += out.cumulative_cost;
        match out.decision {
            Decision::Abstained(_) => abstained += 1,
            Decision::Answered(_) if out.was_error => errors += 1,
            Decision::Answered(_) => {}
        }
    }
    let n = data.len() as f64;
    Ok(PerformanceVector {
        error: errors as f64 / n,
        cost: cost / n,
        abstention: abstained as f64 / n,
    })
}

/// `error + λ_c·cost + λ_a·abstention`.
pub fn empirical_loss(
    perf: &PerformanceVector,
    lambda_c: f64,
    lambda_a: f64,
) -> Result<f64, CascadeError> {
    check_preferences(lambda_c, lambda_a)?;
    Ok(perf.error + lambda_c * perf.cost + lambda_a * perf.abstention)
}

pub(crate) fn check_preferences(lambda_c: f64, lambda_a: f64) -> Result<(), CascadeError> {
    // also rejects NaN
    if !(lambda_c >= 0.0 && lambda_a >= 0.0) {
        return Err(CascadeError::NegativePreference { lambda_c, lambda_a });
    }
    Ok(())
}

/// True iff `a` is no worse than `b` in every coordinate and strictly better
/// in at least one.
pub fn dominates(a: &PerformanceVector, b: &PerformanceVector) -> bool {
    let le = a.error <= b.error && a.cost <= b.cost && a.abstention <= b.abstention;
    let lt = a.error < b.error || a.cost < b.cost || a.abstention < b.abstention;
    le && lt
}

/// Points not dominated by any other input point, in input order. Exact
/// duplicates of a nondominated point are all kept.
pub fn pareto_front(points: &[PerformanceVector]) -> Vec<PerformanceVector> {
    if points.is_empty() {
        return Vec::new();
    }
    // sweep in lexicographic order; only earlier points can dominate later ones
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (&points[i], &points[j]);
        a.error
            .total_cmp(&b.error)
            .then(a.cost.total_cmp(&b.cost))
            .then(a.abstention.total_cmp(&b.abstention))
    });
    let mut front: Vec<usize> = Vec::new();
    let mut keep = vec![false; points.len()];
    for &i in &order {
        if !front.iter().any(|&j| dominates(&points[j], &points[i])) {
            front.push(i);
            keep[i] = true;
        }
    }
    points
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(p, _)| *p)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec2(arch: Architecture) -> CascadeSpec {
        CascadeSpec::new(
            vec![
                ModelProfile {
                    name: "small".into(),
                    expected_cost: 1.0,
                },
                ModelProfile {
                    name: "large".into(),
                    expected_cost: 10.0,
                },
            ],
            arch,
        )
        .unwrap()
    }

    fn rec(conf: &[f64], correct: &[bool], spec: &CascadeSpec) -> QueryRecord {
        QueryRecord::with_expected_costs("q", conf.to_vec(), correct.to_vec(), spec)
    }

    #[test]
    fn threshold_validation_examples() {
        let s = spec2(Architecture::EarlyAbstention);
        assert!(validate_thresholds(&s, &ThresholdVector::new(vec![0.7], vec![0.2, 0.4])).is_ok());
        let err =
            validate_thresholds(&s, &ThresholdVector::new(vec![0.3], vec![0.5, 0.1])).unwrap_err();
        assert!(matches!(err, CascadeError::Ordering { index: 1, .. }));

        let s1 = CascadeSpec::new(
            vec![ModelProfile {
                name: "only".into(),
                expected_cost: 2.0,
            }],
            Architecture::EarlyAbstention,
        )
        .unwrap();
        assert!(validate_thresholds(&s1, &ThresholdVector::new(vec![], vec![0.25])).is_ok());
    }

    #[test]
    fn threshold_validation_errors_name_index() {
        let s = spec2(Architecture::EarlyAbstention);
        assert!(matches!(
            validate_thresholds(&s, &ThresholdVector::new(vec![0.7, 0.8], vec![0.2, 0.4])),
            Err(CascadeError::LengthMismatch {
                kind: "deferral",
                ..
            })
        ));
        assert!(matches!(
            validate_thresholds(&s, &ThresholdVector::new(vec![0.7], vec![0.2, 1.4])),
            Err(CascadeError::OutOfRange {
                kind: "abstention",
                index: 2,
                ..
            })
        ));
        // equality violates the minimum separation
        assert!(validate_thresholds(&s, &ThresholdVector::new(vec![0.5], vec![0.5, 0.1])).is_err());
        let f = spec2(Architecture::FinalModelAbstention);
        assert!(matches!(
            validate_thresholds(&f, &ThresholdVector::new(vec![0.7], vec![0.2, 0.4])),
            Err(CascadeError::EarlyAbstentionNotAllowed { index: 1, .. })
        ));
        assert!(validate_thresholds(&f, &ThresholdVector::new(vec![0.7], vec![0.0, 0.4])).is_ok());
    }

    #[test]
    fn routing_examples() {
        let s = spec2(Architecture::EarlyAbstention);
        let t = ThresholdVector::new(vec![0.7], vec![0.2, 0.3]);
        let out = route(&s, &t, &rec(&[0.9, 0.0], &[true, false], &s));
        assert_eq!(out.decision, Decision::Answered(1));
        assert_eq!(out.cumulative_cost, 1.0);
        assert!(!out.was_error);

        let out = route(&s, &t, &rec(&[0.1, 0.9], &[true, true], &s));
        assert_eq!(out.decision, Decision::Abstained(1));
        assert_eq!(out.cumulative_cost, 1.0);

        let out = route(&s, &t, &rec(&[0.5, 0.25], &[false, false], &s));
        assert_eq!(out.decision, Decision::Abstained(2));
        assert_eq!(out.cumulative_cost, 11.0);
        assert!(!out.was_error);

        let out = route(&s, &t, &rec(&[0.5, 0.6], &[true, false], &s));
        assert_eq!(out.decision, Decision::Answered(2));
        assert!(out.was_error);
    }

    #[test]
    fn ties_defer() {
        let s = spec2(Architecture::EarlyAbstention);
        let t = ThresholdVector::new(vec![0.7], vec![0.2, 0.3]);
        assert_eq!(
            route(&s, &t, &rec(&[0.7, 0.5], &[true, true], &s)).decision,
            Decision::Answered(2)
        );
        assert_eq!(
            route(&s, &t, &rec(&[0.2, 0.5], &[true, true], &s)).decision,
            Decision::Answered(2)
        );
        // final model answers at exactly ξ_k
        assert_eq!(
            route(&s, &t, &rec(&[0.5, 0.3], &[true, true], &s)).decision,
            Decision::Answered(2)
        );
    }

    #[test]
    fn empirical_single_model_no_abstention() {
        let s = CascadeSpec::new(
            vec![ModelProfile {
                name: "m".into(),
                expected_cost: 3.0,
            }],
            Architecture::EarlyAbstention,
        )
        .unwrap();
        let data: Vec<_> = (0..100)
            .map(|i| {
                QueryRecord::with_expected_costs(
                    format!("q{i}"),
                    vec![(i as f64) / 100.0],
                    vec![i >= 10],
                    &s,
                )
            })
            .collect();
        let p = evaluate_empirical(&s, &ThresholdVector::new(vec![], vec![0.0]), &data).unwrap();
        assert!((p.error - 0.10).abs() < 1e-15);
        assert_eq!(p.cost, 3.0);
        assert_eq!(p.abstention, 0.0);
    }

    #[test]
    fn empirical_always_defer() {
        let s = spec2(Architecture::EarlyAbstention);
        let data: Vec<_> = (0..50)
            .map(|i| {
                rec(
                    &[i as f64 / 50.0, 1.0 - i as f64 / 50.0],
                    &[true, i % 2 == 0],
                    &s,
                )
            })
            .collect();
        let p = evaluate_empirical(&s, &ThresholdVector::always_defer(2), &data).unwrap();
        assert_eq!(p.cost, 11.0);
        assert_eq!(p.abstention, 0.0);
        assert!((p.error - 0.5).abs() < 1e-15);
        assert_eq!(
            evaluate_empirical(&s, &ThresholdVector::always_defer(2), &[]),
            Err(CascadeError::EmptyDataset)
        );
    }

    #[test]
    fn loss_arithmetic() {
        let p = PerformanceVector::new(0.1, 50.0, 0.2);
        assert!((empirical_loss(&p, 0.001, 0.5).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(empirical_loss(&p, 0.0, 0.0).unwrap(), 0.1);
        assert_eq!(
            empirical_loss(&PerformanceVector::new(0.0, 0.0, 0.0), 3.0, 7.0).unwrap(),
            0.0
        );
        assert!(empirical_loss(&p, -1.0, 0.0).is_err());
    }

    #[test]
    fn dominance_examples() {
        let a = PerformanceVector::new(0.1, 1.0, 0.1);
        assert!(dominates(&a, &PerformanceVector::new(0.2, 1.0, 0.1)));
        assert!(!dominates(&a, &a));
        assert!(!dominates(
            &PerformanceVector::new(0.1, 2.0, 0.1),
            &PerformanceVector::new(0.2, 1.0, 0.1)
        ));
        assert_eq!(
            pareto_front(&[a, PerformanceVector::new(0.2, 1.0, 0.1)]),
            vec![a]
        );
        assert!(pareto_front(&[]).is_empty());
        assert_eq!(pareto_front(&[a, a]), vec![a, a]);
    }

    fn brute_front(points: &[PerformanceVector]) -> Vec<PerformanceVector> {
        points
            .iter()
            .filter(|p| !points.iter().any(|q| dominates(q, p)))
            .copied()
            .collect()
    }

    fn arb_perf() -> impl Strategy<Value = PerformanceVector> {
        // coarse grid: ties and duplicates
        (0u8..6, 0u8..6, 0u8..6).prop_map(|(e, c, a)| {
            PerformanceVector::new(e as f64 / 10.0, c as f64, a as f64 / 10.0)
        })
    }

    proptest! {
        #[test]
        fn pareto_front_matches_pairwise_oracle(points in prop::collection::vec(arb_perf(), 0..50)) {
            let front = pareto_front(&points);
            prop_assert_eq!(&front, &brute_front(&points));
            for a in &front {
                for b in &front {
                    prop_assert!(!dominates(a, b));
                }
            }
        }

        #[test]
        fn dominance_is_strict_partial_order(a in arb_perf(), b in arb_perf(), c in arb_perf()) {
            prop_assert!(!dominates(&a, &a));
            if dominates(&a, &b) {
                prop_assert!(!dominates(&b, &a));
                if dominates(&b, &c) {
                    prop_assert!(dominates(&a, &c));
                }
            }
        }

        #[test]
        fn routing_is_total_and_consistent(
            conf in prop::collection::vec(0.0f64..=1.0, 3),
            phi in prop::collection::vec(0.05f64..=1.0, 2),
            gaps in prop::collection::vec(0.0f64..=1.0, 3),
        ) {
            let s = CascadeSpec::new(
                (0..3).map(|i| ModelProfile { name: format!("m{i}"), expected_cost: (i + 1) as f64 }).collect(),
                Architecture::EarlyAbstention,
            ).unwrap();
            let xi: Vec<f64> = (0..3).map(|i| if i < 2 { gaps[i] * (phi[i] - DELTA_SEP) } else { gaps[i] }).collect();
            let t = ThresholdVector::new(phi.clone(), xi.clone());
            prop_assert!(validate_thresholds(&s, &t).is_ok());
            let r = rec(&conf, &[true, false, true], &s);
            let out = route(&s, &t, &r);
            let pos = out.decision.position();
            for j in 0..pos - 1 {
                prop_assert!(conf[j] >= xi[j] && conf[j] <= phi[j]);
            }
            let expected_cost: f64 = (1..=pos).map(|i| i as f64).sum();
            prop_assert!((out.cumulative_cost - expected_cost).abs() < 1e-12);
            if let Decision::Answered(i) = out.decision {
                prop_assert!(i == 3 || conf[i - 1] > phi[i - 1]);
            } else {
                prop_assert!(!out.was_error);
            }
        }

        #[test]
        fn final_architecture_matches_pinned_early(
            data in prop::collection::vec(prop::collection::vec(0.0f64..=1.0, 2), 1..40),
            phi in 0.01f64..=1.0,
            xi2 in 0.0f64..=1.0,
        ) {
            let early = spec2(Architecture::EarlyAbstention);
            let fin = spec2(Architecture::FinalModelAbstention);
            let t = ThresholdVector::new(vec![phi], vec![0.0, xi2]);
            for c in &data {
                let r = rec(c, &[true, false], &early);
                prop_assert_eq!(route(&early, &t, &r), route(&fin, &t, &r));
            }
        }

        #[test]
        fn raising_thresholds_is_monotone(
            data in prop::collection::vec(prop::collection::vec(0.0f64..=1.0, 2), 1..40),
            phi in 0.2f64..=0.8,
            xi1 in 0.0f64..=0.1,
            xi2 in 0.0f64..=0.8,
            bump in 0.0f64..=0.09,
        ) {
            let s = spec2(Architecture::EarlyAbstention);
            let recs: Vec<_> = data.iter().map(|c| rec(c, &[true, false], &s)).collect();
            let base = evaluate_empirical(&s, &ThresholdVector::new(vec![phi], vec![xi1, xi2]), &recs).unwrap();
            let more_xi1 = evaluate_empirical(&s, &ThresholdVector::new(vec![phi], vec![xi1 + bump, xi2]), &recs).unwrap();
            let more_xi2 = evaluate_empirical(&s, &ThresholdVector::new(vec![phi], vec![xi1, (xi2 + bump).min(1.0)]), &recs).unwrap();
            let more_phi = evaluate_empirical(&s, &ThresholdVector::new(vec![phi + bump], vec![xi1, xi2]), &recs).unwrap();
            prop_assert!(more_xi1.abstention >= base.abstention);
            prop_assert!(more_xi2.abstention >= base.abstention);
            prop_assert!(more_phi.cost >= base.cost);
        }
    }
}
