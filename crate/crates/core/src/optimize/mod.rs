//! Threshold optimization: per-preference minimization of the cascade loss,
//! the brute-force grid oracle, preference-grid sweeps, outlier smoothing and
//! the early-versus-final abstention comparison.

mod oracle;
mod spg;
mod sweep;

pub use oracle::{brute_force_oracle, brute_force_oracle_many, OracleOptions, OracleResult};
pub use sweep::{
    compare_architectures, smooth_threshold_grid, sweep_preference_grid, ArchitectureComparison,
    CellComparison, PreferenceGrid, SmoothingReport, SweepCell, SweepResult, DEFAULT_SMOOTHING_R,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cascade::{
    check_preferences, Architecture, CascadeError, CascadeSpec, ThresholdVector, DELTA_SEP,
};
use crate::joint::MarkovJointModel;
use crate::metrics::{loss_and_gradient, MetricsError};

/// Margin keeping deferral thresholds off 0 and 1 and abstention thresholds
/// off 1.
pub const DELTA_BOX: f64 = 1e-4;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum OptimizeError {
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Cascade(#[from] CascadeError),
    #[error("invalid optimizer options: {0}")]
    InvalidOptions(String),
    #[error("invalid preference grid: {0}")]
    InvalidGrid(String),
    #[error("oracle needs {evaluations} evaluations, budget is {budget}")]
    BudgetExceeded { evaluations: u128, budget: u128 },
    #[error("smoothing needs at least a 2x2 grid, got {rows}x{cols}")]
    GridTooSmall { rows: usize, cols: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerOptions {
    pub n_starts: usize,
    pub max_iter: usize,
    /// Stop when the projected-gradient infinity norm falls below this.
    pub grad_tol: f64,
    /// Stop when an iteration improves the loss by less than this.
    pub improvement_tol: f64,
    pub seed: u64,
    /// Quantile levels for the deferral and abstention starting point.
    pub start_quantiles: (f64, f64),
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            n_starts: 8,
            max_iter: 200,
            grad_tol: 1e-6,
            improvement_tol: 1e-10,
            seed: 0,
            start_quantiles: (0.4, 0.1),
        }
    }
}

impl OptimizerOptions {
    pub fn validate(&self) -> Result<(), OptimizeError> {
        let bad = |m: &str| Err(OptimizeError::InvalidOptions(m.to_string()));
        if self.n_starts == 0 {
            return bad("n_starts must be at least 1");
        }
        if self.max_iter == 0 {
            return bad("max_iter must be at least 1");
        }
        if !(self.grad_tol > 0.0 && self.grad_tol.is_finite()) {
            return bad("grad_tol must be positive");
        }
        if !(self.improvement_tol >= 0.0 && self.improvement_tol.is_finite()) {
            return bad("improvement_tol must be nonnegative");
        }
        let (a, b) = self.start_quantiles;
        if !(0.0 < b && b < a && a < 1.0) {
            return bad("start_quantiles must satisfy 0 < abstention < deferral < 1");
        }
        Ok(())
    }
}

/// Maps between the free decision vector and full threshold vectors.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    k: usize,
    arch: Architecture,
}

impl Layout {
    pub(crate) fn new(spec: &CascadeSpec) -> Self {
        Self {
            k: spec.len(),
            arch: spec.architecture(),
        }
    }

    pub(crate) fn dim(&self) -> usize {
        match self.arch {
            Architecture::EarlyAbstention => 2 * self.k - 1,
            Architecture::FinalModelAbstention => self.k,
        }
    }

    pub(crate) fn expand(&self, x: &[f64]) -> ThresholdVector {
        let k = self.k;
        let deferral = x[..k - 1].to_vec();
        let abstention = match self.arch {
            Architecture::EarlyAbstention => x[k - 1..].to_vec(),
            Architecture::FinalModelAbstention => {
                let mut a = vec![0.0; k];
                a[k - 1] = x[k - 1];
                a
            }
        };
        ThresholdVector::new(deferral, abstention)
    }

    pub(crate) fn free_coords(&self, t: &ThresholdVector) -> Vec<f64> {
        let mut x = t.deferral.clone();
        match self.arch {
            Architecture::EarlyAbstention => x.extend_from_slice(&t.abstention),
            Architecture::FinalModelAbstention => x.push(t.abstention[self.k - 1]),
        }
        x
    }

    /// Restricts a full gradient to the free coordinates.
    fn restrict(&self, full: &[f64]) -> Vec<f64> {
        match self.arch {
            Architecture::EarlyAbstention => full.to_vec(),
            Architecture::FinalModelAbstention => {
                let mut g = full[..self.k - 1].to_vec();
                g.push(full[2 * self.k - 2]);
                g
            }
        }
    }

    /// Euclidean projection onto the feasible set.
    pub(crate) fn project(&self, x: &mut [f64]) {
        let k = self.k;
        let (lo, hi) = (DELTA_BOX, 1.0 - DELTA_BOX);
        let last = self.dim() - 1;
        x[last] = x[last].clamp(0.0, hi);
        for i in 0..k - 1 {
            match self.arch {
                Architecture::FinalModelAbstention => x[i] = x[i].clamp(lo, hi),
                Architecture::EarlyAbstention => {
                    let (p, q) = project_pair(x[i], x[k - 1 + i], lo, hi);
                    x[i] = p;
                    x[k - 1 + i] = q;
                }
            }
        }
    }
}

/// Projects `(φ, ξ)` onto `{lo ≤ φ ≤ hi, 0 ≤ ξ ≤ φ − δ_sep}`.
fn project_pair(phi: f64, xi: f64, lo: f64, hi: f64) -> (f64, f64) {
    let inside = |p: f64, q: f64| (lo..=hi).contains(&p) && q >= 0.0 && q <= p - DELTA_SEP;
    let tidy = |p: f64, q: f64| {
        let p = p.clamp(lo, hi);
        (p, q.clamp(0.0, p - DELTA_SEP))
    };
    if inside(phi, xi) {
        return (phi, xi);
    }
    let verts = [
        (lo, 0.0),
        (hi, 0.0),
        (hi, hi - DELTA_SEP),
        (lo, lo - DELTA_SEP),
    ];
    let mut best = (f64::INFINITY, (lo, 0.0));
    for e in 0..4 {
        let (a, b) = (verts[e], verts[(e + 1) % 4]);
        let (dx, dy) = (b.0 - a.0, b.1 - a.1);
        let len2 = dx * dx + dy * dy;
        let s = (((phi - a.0) * dx + (xi - a.1) * dy) / len2).clamp(0.0, 1.0);
        let c = (a.0 + s * dx, a.1 + s * dy);
        let d = (phi - c.0).powi(2) + (xi - c.1).powi(2);
        if d < best.0 {
            best = (d, c);
        }
    }
    tidy(best.1 .0, best.1 .1)
}

/// Optimizer output for one preference point.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeOutcome {
    pub thresholds: ThresholdVector,
    pub loss: f64,
    pub converged: bool,
    pub n_restarts_used: usize,
    pub iterations: usize,
}

fn quantile_start(model: &MarkovJointModel, layout: &Layout, opts: &OptimizerOptions) -> Vec<f64> {
    let k = layout.k;
    let (qa, qb) = opts.start_quantiles;
    let m = model.marginals();
    let deferral = (0..k - 1).map(|i| m[i].quantile(qa)).collect();
    let abstention = (0..k)
        .map(|i| {
            if i + 1 < k && layout.arch == Architecture::FinalModelAbstention {
                0.0
            } else {
                m[i].quantile(qb)
            }
        })
        .collect();
    let mut x = layout.free_coords(&ThresholdVector::new(deferral, abstention));
    layout.project(&mut x);
    x
}

fn random_start(layout: &Layout, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let k = layout.k;
    let deferral: Vec<f64> = (0..k - 1)
        .map(|_| rng.random_range(DELTA_BOX..1.0 - DELTA_BOX))
        .collect();
    let abstention = (0..k)
        .map(|i| {
            if i + 1 < k {
                match layout.arch {
                    Architecture::FinalModelAbstention => 0.0,
                    Architecture::EarlyAbstention => rng.random_range(0.0..deferral[i] - DELTA_SEP),
                }
            } else {
                rng.random_range(0.0..1.0 - DELTA_BOX)
            }
        })
        .collect();
    let mut x = layout.free_coords(&ThresholdVector::new(deferral, abstention));
    layout.project(&mut x);
    x
}

/// Lexicographic comparison of equal-length vectors.
fn lex_less(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Less => return true,
            std::cmp::Ordering::Greater => return false,
            std::cmp::Ordering::Equal => {}
        }
    }
    false
}

/// Losses closer than this are treated as ties.
const TIE_TOL: f64 = 1e-12;

/// Minimizes the analytic loss from the quantile start, the given warm starts
/// and seeded random feasible starts (`opts.n_starts` in total).
pub fn optimize_from(
    model: &MarkovJointModel,
    spec: &CascadeSpec,
    lambda_c: f64,
    lambda_a: f64,
    warm_starts: &[ThresholdVector],
    opts: &OptimizerOptions,
) -> Result<OptimizeOutcome, OptimizeError> {
    opts.validate()?;
    check_preferences(lambda_c, lambda_a)?;
    if model.k() != spec.len() {
        return Err(MetricsError::ShapeMismatch {
            model: model.k(),
            cascade: spec.len(),
        }
        .into());
    }
    let layout = Layout::new(spec);
    let mut starts = vec![quantile_start(model, &layout, opts)];
    for w in warm_starts {
        crate::cascade::validate_thresholds(spec, w)?;
        let mut x = layout.free_coords(w);
        layout.project(&mut x);
        if starts.len() < opts.n_starts && !starts.contains(&x) {
            starts.push(x);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    while starts.len() < opts.n_starts {
        starts.push(random_start(&layout, &mut rng));
    }

    let objective = |x: &[f64]| -> Result<(f64, Vec<f64>), OptimizeError> {
        let t = layout.expand(x);
        let (loss, _, g) = loss_and_gradient(model, spec, &t, lambda_c, lambda_a)?;
        Ok((loss, layout.restrict(&g)))
    };

    let mut best: Option<(Vec<f64>, spg::SpgResult)> = None;
    let mut iterations = 0;
    for x0 in &starts {
        let res = spg::minimize(
            &objective,
            |x: &mut [f64]| layout.project(x),
            x0.clone(),
            opts,
        )?;
        iterations += res.iterations;
        let better = match &best {
            None => true,
            Some((_, b)) => {
                res.loss < b.loss - TIE_TOL
                    || ((res.loss - b.loss).abs() <= TIE_TOL && lex_less(&res.x, &b.x))
            }
        };
        if better {
            best = Some((x0.clone(), res));
        }
    }
    let (_, b) = best.expect("at least one start");
    Ok(OptimizeOutcome {
        thresholds: layout.expand(&b.x),
        loss: b.loss,
        converged: b.converged,
        n_restarts_used: starts.len(),
        iterations,
    })
}

/// Minimizes the analytic loss for one `(λ_c, λ_a)` pair.
pub fn optimize_thresholds(
    model: &MarkovJointModel,
    spec: &CascadeSpec,
    lambda_c: f64,
    lambda_a: f64,
    opts: &OptimizerOptions,
) -> Result<SweepCell, OptimizeError> {
    let out = optimize_from(model, spec, lambda_c, lambda_a, &[], opts)?;
    SweepCell::evaluate(
        model,
        spec,
        lambda_c,
        lambda_a,
        out.thresholds,
        out.converged,
        out.n_restarts_used,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn pair_projection_is_feasible_and_idempotent(phi in -0.5f64..1.5, xi in -0.5f64..1.5) {
            let (p, q) = project_pair(phi, xi, DELTA_BOX, 1.0 - DELTA_BOX);
            prop_assert!((DELTA_BOX..=1.0 - DELTA_BOX).contains(&p));
            prop_assert!(q >= 0.0 && q <= p - DELTA_SEP);
            prop_assert_eq!(project_pair(p, q, DELTA_BOX, 1.0 - DELTA_BOX), (p, q));
        }

        #[test]
        fn pair_projection_is_nearest(phi in -0.5f64..1.5, xi in -0.5f64..1.5, a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let (p, q) = project_pair(phi, xi, DELTA_BOX, 1.0 - DELTA_BOX);
            let cand_p = DELTA_BOX + a * (1.0 - 2.0 * DELTA_BOX);
            let cand_q = b * (cand_p - DELTA_SEP);
            let d_proj = (phi - p).powi(2) + (xi - q).powi(2);
            let d_cand = (phi - cand_p).powi(2) + (xi - cand_q).powi(2);
            prop_assert!(d_proj <= d_cand + 1e-12);
        }
    }

    #[test]
    fn layout_round_trip() {
        use crate::cascade::ModelProfile;
        let models = (0..3)
            .map(|i| ModelProfile {
                name: format!("m{i}"),
                expected_cost: 1.0,
            })
            .collect::<Vec<_>>();
        let early = CascadeSpec::new(models.clone(), Architecture::EarlyAbstention).unwrap();
        let fin = CascadeSpec::new(models, Architecture::FinalModelAbstention).unwrap();
        let t = ThresholdVector::new(vec![0.5, 0.6], vec![0.1, 0.2, 0.3]);
        let le = Layout::new(&early);
        assert_eq!(le.expand(&le.free_coords(&t)), t);
        let lf = Layout::new(&fin);
        let x = lf.free_coords(&t);
        assert_eq!(x, vec![0.5, 0.6, 0.3]);
        assert_eq!(
            lf.expand(&x),
            ThresholdVector::new(vec![0.5, 0.6], vec![0.0, 0.0, 0.3])
        );
        assert_eq!(lf.restrict(&[1.0, 2.0, 3.0, 4.0, 5.0]), vec![1.0, 2.0, 5.0]);
    }

    #[test]
    fn options_validation() {
        assert!(OptimizerOptions::default().validate().is_ok());
        let bad = OptimizerOptions {
            n_starts: 0,
            ..Default::default()
        };
        assert!(matches!(
            bad.validate(),
            Err(OptimizeError::InvalidOptions(_))
        ));
        let bad = OptimizerOptions {
            start_quantiles: (0.1, 0.4),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
