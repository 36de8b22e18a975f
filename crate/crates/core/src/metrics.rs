//! Closed-form correctness, cost and abstention of a threshold vector under a
//! fitted [`MarkovJointModel`], with threshold gradients.
//!
//! With `P₁ = P(Φ₁ ∈ [ξ₁, φ₁])`, `P_{i−1,i} = P(Φ_i ∈ [ξ_i, φ_i] | Φ_{i−1} ∈
//! [ξ_{i−1}, φ_{i−1}])` and `Q` the partial expectations of `Φ` over each
//! model's answer region:
//!
//! ```text
//! P(Correct)     = Q₁ + Σ_{i≥2} P₁ ∏_{j=2}^{i−1} P_{j−1,j} · Q_{i−1,i}
//! E[Cost]        = (1 − P₁) E[C₁] + Σ_{i≥2} P₁ ∏ P_{j−1,j} (1 − P_{i−1,i}) Σ_{j≤i} E[C_j]
//! P(Abstention)  = P(Φ₁ < ξ₁) + Σ_{i≥2} P₁ ∏ P_{j−1,j} · P(Φ_i < ξ_i | Φ_{i−1} ∈ [ξ_{i−1}, φ_{i−1}])
//! ```
//!
//! The final model has no deferral threshold: its answer region is `[ξ_k, 1]`
//! and `P_{k−1,k} = 0`.

use serde::{Deserialize, Serialize};
use std::ops::{Add, Div, Mul, Sub};
use thiserror::Error;

use crate::cascade::{
    check_preferences, validate_thresholds, CascadeError, CascadeSpec, ThresholdVector,
};
use crate::joint::{JointError, MarginalPoint, MarkovJointModel, MIN_CONDITIONING_MASS};
use crate::quadrature::integrate;
use crate::special::{norm_cdf, norm_pdf};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum MetricsError {
    #[error(transparent)]
    Thresholds(#[from] CascadeError),
    #[error(transparent)]
    Joint(#[from] JointError),
    #[error("model has {model} marginals but the cascade has {cascade} models")]
    ShapeMismatch { model: usize, cascade: usize },
    #[error("gradient requested at the feasible-set boundary ({name} = {value})")]
    Boundary { name: String, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticPerformance {
    pub p_correct: f64,
    pub expected_cost: f64,
    pub p_abstention: f64,
    pub p_error_no_abstain: f64,
}

impl AnalyticPerformance {
    fn from_parts(p_correct: f64, expected_cost: f64, p_abstention: f64) -> Self {
        let p_correct = p_correct.clamp(0.0, 1.0);
        let p_abstention = p_abstention.clamp(0.0, 1.0);
        Self {
            p_correct,
            expected_cost,
            p_abstention,
            p_error_no_abstain: (1.0 - p_correct - p_abstention).max(0.0),
        }
    }

    pub fn loss(&self, lambda_c: f64, lambda_a: f64) -> f64 {
        self.p_error_no_abstain + lambda_c * self.expected_cost + lambda_a * self.p_abstention
    }

    pub fn as_performance_vector(&self) -> crate::cascade::PerformanceVector {
        crate::cascade::PerformanceVector::new(
            self.p_error_no_abstain,
            self.expected_cost,
            self.p_abstention,
        )
    }
}

/// Value with an optional gradient (empty when not tracked).
#[derive(Debug, Clone)]
struct Dual {
    v: f64,
    g: Vec<f64>,
}

impl Dual {
    fn constant(v: f64, dim: usize) -> Self {
        Self {
            v,
            g: vec![0.0; dim],
        }
    }

    fn with_partials(v: f64, dim: usize, partials: &[(Option<usize>, f64)]) -> Self {
        let mut d = Self::constant(v, dim);
        if dim > 0 {
            for &(idx, p) in partials {
                if let Some(i) = idx {
                    d.g[i] += p;
                }
            }
        }
        d
    }

    fn scale(&self, s: f64) -> Dual {
        Dual {
            v: self.v * s,
            g: self.g.iter().map(|x| x * s).collect(),
        }
    }
}

impl Add for &Dual {
    type Output = Dual;
    fn add(self, o: &Dual) -> Dual {
        Dual {
            v: self.v + o.v,
            g: self.g.iter().zip(&o.g).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &Dual {
    type Output = Dual;
    fn sub(self, o: &Dual) -> Dual {
        Dual {
            v: self.v - o.v,
            g: self.g.iter().zip(&o.g).map(|(a, b)| a - b).collect(),
        }
    }
}

#[allow(clippy::suspicious_arithmetic_impl)]
impl Mul for &Dual {
    type Output = Dual;
    fn mul(self, o: &Dual) -> Dual {
        Dual {
            v: self.v * o.v,
            g: self
                .g
                .iter()
                .zip(&o.g)
                .map(|(a, b)| a * o.v + self.v * b)
                .collect(),
        }
    }
}

impl Div for &Dual {
    type Output = Dual;
    fn div(self, o: &Dual) -> Dual {
        let inv = 1.0 / o.v;
        Dual {
            v: self.v * inv,
            g: self
                .g
                .iter()
                .zip(&o.g)
                .map(|(a, b)| (a - self.v * inv * b) * inv)
                .collect(),
        }
    }
}

const RIGHT_LIMIT_X: f64 = 1e-12;

/// Marginal point together with the decision-vector index it depends on.
#[derive(Clone, Copy)]
struct Knot {
    p: MarginalPoint,
    param: Option<usize>,
}

/// Running totals after processing a prefix of the cascade.
struct StageState {
    p_correct: Dual,
    p_abstention: Dual,
    cost: Dual,
    /// Probability of reaching the current model (product weight).
    reach: Dual,
    /// Marginal mass of the previous model's deferral interval.
    prev_mass: Dual,
    prev_lo: Knot,
    prev_hi: Knot,
    /// True once a conditioning interval has vanishing mass.
    cut: bool,
}

struct Evaluator<'a> {
    model: &'a MarkovJointModel,
    t: &'a ThresholdVector,
    cum_cost: Vec<f64>,
    k: usize,
    dim: usize,
}

impl<'a> Evaluator<'a> {
    fn new(
        model: &'a MarkovJointModel,
        spec: &CascadeSpec,
        t: &'a ThresholdVector,
        grad: bool,
    ) -> Result<Self, MetricsError> {
        let k = spec.len();
        if model.k() != k {
            return Err(MetricsError::ShapeMismatch {
                model: model.k(),
                cascade: k,
            });
        }
        validate_thresholds(spec, t)?;
        let mut acc = 0.0;
        let cum_cost = spec
            .models()
            .iter()
            .map(|m| {
                acc += m.expected_cost;
                acc
            })
            .collect();
        Ok(Self {
            model,
            t,
            cum_cost,
            k,
            dim: if grad { 2 * k - 1 } else { 0 },
        })
    }

    fn phi_index(&self, i: usize) -> Option<usize> {
        Some(i)
    }

    fn xi_index(&self, i: usize) -> Option<usize> {
        Some(self.k - 1 + i)
    }

    /// A free threshold at 0 takes the right-limit density.
    fn knot(&self, i: usize, x: f64, param: Option<usize>) -> Knot {
        let mut p = self.model.point(i, x);
        if x <= 0.0 && param.is_some() && self.dim > 0 {
            p.pdf = self.model.marginals()[i].pdf(RIGHT_LIMIT_X);
        }
        Knot { p, param }
    }

    fn mass(&self, lo: &Knot, hi: &Knot) -> Dual {
        let v = MarkovJointModel::mass_between(&lo.p, &hi.p);
        Dual::with_partials(v, self.dim, &[(hi.param, hi.p.pdf), (lo.param, -lo.p.pdf)])
    }

    /// Model 1 alone, or the first stage of a longer cascade.
    fn first_stage(&self) -> StageState {
        let d = self.dim;
        let xi = self.knot(0, self.t.abstention[0], self.xi_index(0));
        let p_abstention = Dual::with_partials(xi.p.cdf, d, &[(xi.param, xi.p.pdf)]);
        let mix = &self.model.marginals()[0];
        if self.k == 1 {
            let pc = Dual::with_partials(
                mix.partial_mean_above(xi.p.x),
                d,
                &[(xi.param, -xi.p.x * xi.p.pdf)],
            );
            return StageState {
                p_correct: pc,
                p_abstention,
                cost: Dual::constant(self.cum_cost[0], d),
                reach: Dual::constant(0.0, d),
                prev_mass: Dual::constant(0.0, d),
                prev_lo: xi,
                prev_hi: xi,
                cut: true,
            };
        }
        let phi = self.knot(0, self.t.deferral[0], self.phi_index(0));
        let pc = Dual::with_partials(
            mix.partial_mean_above(phi.p.x),
            d,
            &[(phi.param, -phi.p.x * phi.p.pdf)],
        );
        let m0 = self.mass(&xi, &phi);
        let one = Dual::constant(1.0, d);
        let cost = (&one - &m0).scale(self.cum_cost[0]);
        StageState {
            p_correct: pc,
            p_abstention,
            cost,
            reach: m0.clone(),
            cut: m0.v < MIN_CONDITIONING_MASS,
            prev_mass: m0,
            prev_lo: xi,
            prev_hi: phi,
        }
    }

    /// `P(Φ_{i−1} ∈ [g₁, g₂] | Φ_i = x)` on normal scores.
    fn upstream_given(&self, i: usize, z_x: f64, g1: &Knot, g2: &Knot) -> f64 {
        let cop = &self.model.copulas()[i - 1];
        let s = cop.residual_scale();
        crate::joint::norm_interval((g1.p.z - cop.rho * z_x) / s, (g2.p.z - cop.rho * z_x) / s)
    }

    /// `P(Φ_i ∈ [t₁, t₂] | Φ_{i−1} = g)` on normal scores.
    fn downstream_given(&self, i: usize, g: &Knot, t1: &Knot, t2: &Knot) -> f64 {
        let cop = &self.model.copulas()[i - 1];
        let s = cop.residual_scale();
        crate::joint::norm_interval(
            (t1.p.z - cop.rho * g.p.z) / s,
            (t2.p.z - cop.rho * g.p.z) / s,
        )
    }

    /// Chain-rule factor `dz/dx = f(x)/φ(z)`, zero at the support edges.
    fn dz_dx(p: &MarginalPoint) -> f64 {
        if p.pdf == 0.0 {
            return 0.0;
        }
        let n = norm_pdf(p.z);
        if n == 0.0 {
            0.0
        } else {
            p.pdf / n
        }
    }

    /// Rectangle `P(Φ_i ∈ [t₁,t₂] ∧ Φ_{i−1} ∈ [g₁,g₂])` with gradient.
    fn rectangle(&self, i: usize, t1: &Knot, t2: &Knot, g1: &Knot, g2: &Knot) -> Dual {
        let v = self.model.rectangle(i, &t1.p, &t2.p, &g1.p, &g2.p);
        if self.dim == 0 {
            return Dual::constant(v, 0);
        }
        Dual::with_partials(
            v,
            self.dim,
            &[
                (t2.param, t2.p.pdf * self.upstream_given(i, t2.p.z, g1, g2)),
                (t1.param, -t1.p.pdf * self.upstream_given(i, t1.p.z, g1, g2)),
                (g2.param, g2.p.pdf * self.downstream_given(i, g2, t1, t2)),
                (g1.param, -g1.p.pdf * self.downstream_given(i, g1, t1, t2)),
            ],
        )
    }

    /// `∫_{x > thr} x f_i(x) P(Φ_{i−1} ∈ [g₁,g₂] | Φ_i = x) dx` with gradient.
    fn joint_partial(
        &self,
        i: usize,
        thr: &Knot,
        g1: &Knot,
        g2: &Knot,
    ) -> Result<Dual, MetricsError> {
        if self.dim == 0 {
            let [v] = self
                .model
                .joint_partial_expectation::<1>(i, thr.p.x, &g1.p, &g2.p)?;
            return Ok(Dual::constant(v, 0));
        }
        let [v, i_hi, i_lo] = self
            .model
            .joint_partial_expectation::<3>(i, thr.p.x, &g1.p, &g2.p)?;
        let s = self.model.copulas()[i - 1].residual_scale();
        Ok(Dual::with_partials(
            v,
            self.dim,
            &[
                (
                    thr.param,
                    -thr.p.x * thr.p.pdf * self.upstream_given(i, thr.p.z, g1, g2),
                ),
                (g2.param, Self::dz_dx(&g2.p) / s * i_hi),
                (g1.param, -Self::dz_dx(&g1.p) / s * i_lo),
            ],
        ))
    }

    /// Processes model `i ≥ 1` that is not the last one.
    fn middle_stage(&self, st: &mut StageState, i: usize) -> Result<(), MetricsError> {
        if st.cut {
            return Ok(());
        }
        let zero = self.knot(i, 0.0, None);
        let xi = self.knot(i, self.t.abstention[i], self.xi_index(i));
        let phi = self.knot(i, self.t.deferral[i], self.phi_index(i));
        let (g1, g2) = (st.prev_lo, st.prev_hi);
        let factor = &st.reach / &st.prev_mass;
        let j = self.joint_partial(i, &phi, &g1, &g2)?;
        let abst = self.rectangle(i, &zero, &xi, &g1, &g2);
        let defer = self.rectangle(i, &xi, &phi, &g1, &g2);
        st.p_correct = &st.p_correct + &(&factor * &j);
        st.p_abstention = &st.p_abstention + &(&factor * &abst);
        let p_next = &defer / &st.prev_mass;
        let one = Dual::constant(1.0, self.dim);
        st.cost = &st.cost + &(&st.reach * &(&one - &p_next)).scale(self.cum_cost[i]);
        st.reach = &st.reach * &p_next;
        st.prev_mass = self.mass(&xi, &phi);
        st.cut = st.prev_mass.v < MIN_CONDITIONING_MASS;
        st.prev_lo = xi;
        st.prev_hi = phi;
        Ok(())
    }

    fn last_stage(&self, st: &mut StageState) -> Result<(), MetricsError> {
        if st.cut {
            return Ok(());
        }
        let i = self.k - 1;
        let zero = self.knot(i, 0.0, None);
        let xi = self.knot(i, self.t.abstention[i], self.xi_index(i));
        let (g1, g2) = (st.prev_lo, st.prev_hi);
        let factor = &st.reach / &st.prev_mass;
        let j = self.joint_partial(i, &xi, &g1, &g2)?;
        let abst = self.rectangle(i, &zero, &xi, &g1, &g2);
        st.p_correct = &st.p_correct + &(&factor * &j);
        st.p_abstention = &st.p_abstention + &(&factor * &abst);
        st.cost = &st.cost + &st.reach.scale(self.cum_cost[i]);
        Ok(())
    }

    fn prefix(&self) -> Result<StageState, MetricsError> {
        let mut st = self.first_stage();
        for i in 1..self.k.saturating_sub(1) {
            self.middle_stage(&mut st, i)?;
        }
        Ok(st)
    }

    fn run(&self) -> Result<StageState, MetricsError> {
        let mut st = self.prefix()?;
        if self.k > 1 {
            self.last_stage(&mut st)?;
        }
        Ok(st)
    }
}

pub fn analytic_performance(
    model: &MarkovJointModel,
    spec: &CascadeSpec,
    t: &ThresholdVector,
) -> Result<AnalyticPerformance, MetricsError> {
    let st = Evaluator::new(model, spec, t, false)?.run()?;
    Ok(AnalyticPerformance::from_parts(
        st.p_correct.v,
        st.cost.v,
        st.p_abstention.v,
    ))
}

pub fn analytic_loss(
    model: &MarkovJointModel,
    spec: &CascadeSpec,
    t: &ThresholdVector,
    lambda_c: f64,
    lambda_a: f64,
) -> Result<f64, MetricsError> {
    check_preferences(lambda_c, lambda_a)?;
    Ok(analytic_performance(model, spec, t)?.loss(lambda_c, lambda_a))
}

/// Loss value, performance and gradient in `[φ₁..φ_{k−1}, ξ₁..ξ_k]` order.
/// Components for thresholds sitting on 0 or 1 are reported as 0.
pub(crate) fn loss_and_gradient(
    model: &MarkovJointModel,
    spec: &CascadeSpec,
    t: &ThresholdVector,
    lambda_c: f64,
    lambda_a: f64,
) -> Result<(f64, AnalyticPerformance, Vec<f64>), MetricsError> {
    let st = Evaluator::new(model, spec, t, true)?.run()?;
    let perf = AnalyticPerformance::from_parts(st.p_correct.v, st.cost.v, st.p_abstention.v);
    // loss = 1 − P(correct) − P(abstain) + λ_c cost + λ_a P(abstain)
    let grad = (0..2 * spec.len() - 1)
        .map(|j| {
            -st.p_correct.g[j] + (lambda_a - 1.0) * st.p_abstention.g[j] + lambda_c * st.cost.g[j]
        })
        .collect();
    Ok((perf.loss(lambda_c, lambda_a), perf, grad))
}

/// Gradient of [`analytic_loss`] in `[φ₁..φ_{k−1}, ξ₁..ξ_k]` order.
///
/// Thresholds must lie strictly inside (0, 1); under final-model abstention
/// the pinned `ξ_i = 0` are allowed and their components are 0.
pub fn loss_gradient(
    model: &MarkovJointModel,
    spec: &CascadeSpec,
    t: &ThresholdVector,
    lambda_c: f64,
    lambda_a: f64,
) -> Result<Vec<f64>, MetricsError> {
    check_preferences(lambda_c, lambda_a)?;
    validate_thresholds(spec, t)?;
    let k = spec.len();
    let pinned = spec.architecture() == crate::cascade::Architecture::FinalModelAbstention;
    for (i, &v) in t.deferral.iter().enumerate() {
        if v <= 0.0 || v >= 1.0 {
            return Err(MetricsError::Boundary {
                name: format!("phi_{}", i + 1),
                value: v,
            });
        }
    }
    for (i, &v) in t.abstention.iter().enumerate() {
        let pinned_here = pinned && i + 1 < k && v == 0.0;
        if !pinned_here && (v <= 0.0 || v >= 1.0) {
            return Err(MetricsError::Boundary {
                name: format!("xi_{}", i + 1),
                value: v,
            });
        }
    }
    let mut g = loss_and_gradient(model, spec, t, lambda_c, lambda_a)?.2;
    if pinned {
        for gi in &mut g[k - 1..2 * k - 2] {
            *gi = 0.0;
        }
    }
    Ok(g)
}

/// Performance at every `ξ_k` in `final_grid` with all other thresholds taken
/// from `t`. The final-stage integrals are accumulated over the grid cells
/// with fixed 21-point Kronrod rules (graded towards 0 and 1), so this is
/// a fast screening route rather than a replacement for
/// [`analytic_performance`].
pub fn final_threshold_sweep(
    model: &MarkovJointModel,
    spec: &CascadeSpec,
    t: &ThresholdVector,
    final_grid: &[f64],
) -> Result<Vec<AnalyticPerformance>, MetricsError> {
    let mut sweep = FinalStageTable::new(model, spec.len(), final_grid)?;
    sweep.evaluate(model, spec, t)
}

/// Precomputed integrand pieces for the final-stage integrals on a fixed
/// grid of `ξ_k` values.
pub(crate) struct FinalStageTable {
    grid: Vec<f64>,
    /// Per grid cell `[grid[j], grid[j+1]]` (last cell ends at 1): nodes as
    /// `(weight · x f(x), z(x))`.
    cells: Vec<Vec<(f64, f64)>>,
    points: Vec<MarginalPoint>,
}

const GK_NODES: [f64; 11] = [
    0.995_657_163_025_808_1,
    0.973_906_528_517_171_7,
    0.930_157_491_355_708_2,
    0.865_063_366_688_984_5,
    0.780_817_726_586_416_9,
    0.679_409_568_299_024_4,
    0.562_757_134_668_604_7,
    0.433_395_394_129_247_2,
    0.294_392_862_701_460_2,
    0.148_874_338_981_631_2,
    0.0,
];
const GK_WEIGHTS: [f64; 11] = [
    0.011_694_638_867_371_874,
    0.032_558_162_307_964_73,
    0.054_755_896_574_351_996,
    0.075_039_674_810_919_95,
    0.093_125_454_583_697_6,
    0.109_387_158_802_297_64,
    0.123_491_976_262_065_85,
    0.134_709_217_311_473_33,
    0.142_775_938_577_060_08,
    0.147_739_104_901_338_5,
    0.149_445_554_002_916_9,
];

/// Splits `[a, b]` into pieces graded geometrically towards an endpoint at 0
/// or 1, where beta densities may be singular.
fn graded_pieces(a: f64, b: f64) -> Vec<(f64, f64)> {
    const LEVELS: i32 = 40;
    let mut cuts = vec![a, b];
    if a == 0.0 {
        cuts.extend((1..=LEVELS).map(|j| b * 0.5f64.powi(j)));
    }
    if b == 1.0 {
        cuts.extend((1..=LEVELS).map(|j| 1.0 - (1.0 - a) * 0.5f64.powi(j)));
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    cuts.windows(2).map(|w| (w[0], w[1])).collect()
}

impl FinalStageTable {
    pub(crate) fn new(
        model: &MarkovJointModel,
        k: usize,
        final_grid: &[f64],
    ) -> Result<Self, MetricsError> {
        let i = k - 1;
        let mut grid = final_grid.to_vec();
        if grid.iter().any(|x| !(0.0..=1.0).contains(x)) || grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(MetricsError::Thresholds(CascadeError::OutOfRange {
                kind: "abstention",
                index: k,
                value: f64::NAN,
            }));
        }
        grid.dedup();
        let mut cells = Vec::with_capacity(grid.len());
        for j in 0..grid.len() {
            let a = grid[j];
            let b = if j + 1 < grid.len() { grid[j + 1] } else { 1.0 };
            let mut nodes = Vec::with_capacity(21);
            for (lo, hi) in graded_pieces(a, b) {
                let (c, h) = (0.5 * (lo + hi), 0.5 * (hi - lo));
                if h <= 0.0 {
                    continue;
                }
                for (n, (&xn, &wn)) in GK_NODES.iter().zip(&GK_WEIGHTS).enumerate() {
                    let xs: &[f64] = if n == 10 { &[0.0] } else { &[-1.0, 1.0] };
                    for &sgn in xs {
                        let x = c + sgn * h * xn;
                        let p = model.point(i, x);
                        nodes.push((wn * h * x * p.pdf, p.z));
                    }
                }
            }
            cells.push(nodes);
        }
        let points = grid.iter().map(|&x| model.point(i, x)).collect();
        Ok(Self {
            grid,
            cells,
            points,
        })
    }

    pub(crate) fn evaluate(
        &mut self,
        model: &MarkovJointModel,
        spec: &CascadeSpec,
        t: &ThresholdVector,
    ) -> Result<Vec<AnalyticPerformance>, MetricsError> {
        let k = spec.len();
        let mut probe = t.clone();
        probe.abstention[k - 1] = self.grid[0];
        let ev = Evaluator::new(model, spec, &probe, false)?;
        if k == 1 {
            let mix = &model.marginals()[0];
            return Ok(self
                .points
                .iter()
                .map(|p| {
                    AnalyticPerformance::from_parts(
                        mix.partial_mean_above(p.x),
                        ev.cum_cost[0],
                        p.cdf,
                    )
                })
                .collect());
        }
        let st = ev.prefix()?;
        let base_cost = st.cost.v + st.reach.v * ev.cum_cost[k - 1];
        if st.cut {
            return Ok(vec![
                AnalyticPerformance::from_parts(
                    st.p_correct.v,
                    base_cost,
                    st.p_abstention.v
                );
                self.grid.len()
            ]);
        }
        let i = k - 1;
        let cop = &model.copulas()[i - 1];
        let (rho, s) = (cop.rho, cop.residual_scale());
        let (zg1, zg2) = (st.prev_lo.p.z, st.prev_hi.p.z);
        let factor = st.reach.v / st.prev_mass.v;
        let zero = model.point(i, 0.0);
        // accumulate from the top cell downwards
        let mut tail = vec![0.0; self.grid.len()];
        let mut acc = 0.0;
        for j in (0..self.grid.len()).rev() {
            let cell: f64 = self.cells[j]
                .iter()
                .map(|&(w, z)| {
                    w * crate::joint::norm_interval((zg1 - rho * z) / s, (zg2 - rho * z) / s)
                })
                .sum();
            acc += cell;
            tail[j] = acc;
        }
        Ok(self
            .points
            .iter()
            .zip(&tail)
            .map(|(p, &j)| {
                let abst = model.rectangle(i, &zero, p, &st.prev_lo.p, &st.prev_hi.p);
                AnalyticPerformance::from_parts(
                    st.p_correct.v + factor * j,
                    base_cost,
                    st.p_abstention.v + factor * abst,
                )
            })
            .collect())
    }
}

/// Adaptive-quadrature reference for the conditional partial expectation,
/// used by tests to cross-check the fixed-node table.
#[doc(hidden)]
pub fn conditional_tail_mass(
    model: &MarkovJointModel,
    i: usize,
    thr: f64,
    g_lo: f64,
    g_hi: f64,
) -> f64 {
    let g1 = model.point(i - 1, g_lo);
    let g2 = model.point(i - 1, g_hi);
    let cop = &model.copulas()[i - 1];
    let (rho, s) = (cop.rho, cop.residual_scale());
    integrate(
        |x| {
            let p = model.point(i, x);
            [x * p.pdf * (norm_cdf((g2.z - rho * p.z) / s) - norm_cdf((g1.z - rho * p.z) / s))]
        },
        thr,
        1.0,
        1e-14,
        1e-12,
        1000,
    )
    .map(|r| r.value[0])
    .unwrap_or(f64::NAN)
}

/// Monte Carlo estimate with standard errors, from routing joint draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloEstimate {
    pub performance: AnalyticPerformance,
    pub se_error: f64,
    pub se_cost: f64,
    pub se_abstention: f64,
}

#[derive(Default, Clone, Copy)]
struct Moments {
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.sum += x;
        self.sum_sq += x * x;
    }

    fn mean_se(&self, n: f64) -> (f64, f64) {
        let mean = self.sum / n;
        let var = (self.sum_sq / n - mean * mean).max(0.0);
        (mean, (var / n).sqrt())
    }
}

/// Routes `n` draws of [`MarkovJointModel::sample_joint_with`] through every
/// threshold vector in `ts` (one shared sample). A query answered by model `i`
/// is correct with probability `Φ_i`, which is averaged directly.
pub fn monte_carlo_performance(
    model: &MarkovJointModel,
    spec: &CascadeSpec,
    ts: &[ThresholdVector],
    n: usize,
    seed: u64,
) -> Result<Vec<MonteCarloEstimate>, MetricsError> {
    let k = spec.len();
    if model.k() != k {
        return Err(MetricsError::ShapeMismatch {
            model: model.k(),
            cascade: k,
        });
    }
    for t in ts {
        validate_thresholds(spec, t)?;
    }
    let cum: Vec<f64> = spec
        .expected_costs()
        .iter()
        .scan(0.0, |acc, c| {
            *acc += c;
            Some(*acc)
        })
        .collect();
    let mut acc = vec![[Moments::default(); 4]; ts.len()];
    model.sample_joint_with(n, seed, |phi| {
        for (t, m) in ts.iter().zip(acc.iter_mut()) {
            let mut out = (0.0, 0.0, cum[k - 1], 0.0);
            for i in 0..k {
                match crate::cascade::step_action(t, i, phi[i]) {
                    crate::cascade::StepAction::Answer => {
                        out = (phi[i], 1.0 - phi[i], cum[i], 0.0);
                        break;
                    }
                    crate::cascade::StepAction::Abstain => {
                        out = (0.0, 0.0, cum[i], 1.0);
                        break;
                    }
                    crate::cascade::StepAction::Defer => {}
                }
            }
            m[0].push(out.0);
            m[1].push(out.1);
            m[2].push(out.2);
            m[3].push(out.3);
        }
    })?;
    let nf = n as f64;
    Ok(acc
        .iter()
        .map(|m| {
            let (pc, _) = m[0].mean_se(nf);
            let (_, se_error) = m[1].mean_se(nf);
            let (cost, se_cost) = m[2].mean_se(nf);
            let (pa, se_abstention) = m[3].mean_se(nf);
            MonteCarloEstimate {
                performance: AnalyticPerformance::from_parts(pc, cost, pa),
                se_error,
                se_cost,
                se_abstention,
            }
        })
        .collect())
}
