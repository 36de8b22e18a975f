//! Exhaustive grid search over the feasible set, used as a reference for the
//! continuous optimizer.

use serde::{Deserialize, Serialize};

use super::{lex_less, OptimizeError, DELTA_BOX, TIE_TOL};
use crate::cascade::{check_preferences, Architecture, CascadeSpec, ThresholdVector, DELTA_SEP};
use crate::joint::MarkovJointModel;
use crate::metrics::{analytic_loss, AnalyticPerformance, FinalStageTable, MetricsError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleOptions {
    /// Upper bound on grid points evaluated.
    pub max_evaluations: u128,
    /// Best screened candidates re-evaluated with the exact evaluator.
    pub refine_top: usize,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            max_evaluations: 50_000_000,
            refine_top: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub lambda_c: f64,
    pub lambda_a: f64,
    pub thresholds: ThresholdVector,
    pub loss: f64,
    pub evaluations: u128,
}

/// Uniform grid of `n` points on `[a, b]`.
fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|j| {
            if j + 1 == n {
                b
            } else {
                a + (b - a) * j as f64 / (n - 1) as f64
            }
        })
        .collect()
}

/// Prefix coordinates (all free coordinates except `ξ_k`) on the grid.
fn prefixes(k: usize, arch: Architecture, phi_grid: &[f64], xi_grid: &[f64]) -> Vec<Vec<f64>> {
    // build (φ_i, ξ_i) choices per upstream model, then take the product
    let per_model: Vec<(f64, f64)> = match arch {
        Architecture::FinalModelAbstention => phi_grid.iter().map(|&p| (p, 0.0)).collect(),
        Architecture::EarlyAbstention => phi_grid
            .iter()
            .flat_map(|&p| {
                xi_grid
                    .iter()
                    .take_while(move |&&q| q <= p - DELTA_SEP)
                    .map(move |&q| (p, q))
            })
            .collect(),
    };
    let mut out = vec![Vec::new()];
    for _ in 0..k - 1 {
        out = out
            .into_iter()
            .flat_map(|pre: Vec<(f64, f64)>| {
                per_model.iter().map(move |&c| {
                    let mut v = pre.clone();
                    v.push(c);
                    v
                })
            })
            .collect();
    }
    out.into_iter()
        .map(|pairs| {
            let mut x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            x.extend(pairs.iter().map(|p| p.1));
            x
        })
        .collect()
}

fn count_evaluations(k: usize, arch: Architecture, phi_grid: &[f64], xi_grid: &[f64]) -> u128 {
    let per_model: u128 = match arch {
        Architecture::FinalModelAbstention => phi_grid.len() as u128,
        Architecture::EarlyAbstention => phi_grid
            .iter()
            .map(|&p| xi_grid.iter().filter(|&&q| q <= p - DELTA_SEP).count() as u128)
            .sum(),
    };
    per_model
        .saturating_pow((k - 1) as u32)
        .saturating_mul(xi_grid.len() as u128)
}

/// Grid search for several preference pairs sharing one performance table.
///
/// Deferral thresholds range over `resolution` points on `[δ_box, 1 − δ_box]`
/// and abstention thresholds over `resolution` points on `[0, 1 − δ_box]`,
/// subject to `ξ_i ≤ φ_i − δ_sep`. Candidates are screened with the tabulated
/// final-stage sweep; the best `refine_top` per preference pair are then
/// re-scored with [`analytic_loss`].
pub fn brute_force_oracle_many(
    model: &MarkovJointModel,
    spec: &CascadeSpec,
    preferences: &[(f64, f64)],
    resolution: usize,
    opts: &OracleOptions,
) -> Result<Vec<OracleResult>, OptimizeError> {
    if resolution < 11 {
        return Err(OptimizeError::InvalidOptions(format!(
            "resolution must be at least 11, got {resolution}"
        )));
    }
    for &(lc, la) in preferences {
        check_preferences(lc, la)?;
    }
    let k = spec.len();
    if model.k() != k {
        return Err(MetricsError::ShapeMismatch {
            model: model.k(),
            cascade: k,
        }
        .into());
    }
    let arch = spec.architecture();
    let phi_grid = linspace(DELTA_BOX, 1.0 - DELTA_BOX, resolution);
    let xi_grid = linspace(0.0, 1.0 - DELTA_BOX, resolution);
    let evaluations = count_evaluations(k, arch, &phi_grid, &xi_grid);
    if evaluations > opts.max_evaluations {
        return Err(OptimizeError::BudgetExceeded {
            evaluations,
            budget: opts.max_evaluations,
        });
    }

    let mut table = FinalStageTable::new(model, k, &xi_grid)?;
    let refine = opts.refine_top.max(1);
    // per preference: sorted (screened loss, x) candidates
    let mut shortlist: Vec<Vec<(f64, Vec<f64>)>> = vec![Vec::new(); preferences.len()];
    for pre in prefixes(k, arch, &phi_grid, &xi_grid) {
        let mut full = pre.clone();
        full.push(0.0);
        let t = full_thresholds(k, &full);
        let perfs: Vec<AnalyticPerformance> = table.evaluate(model, spec, &t)?;
        for (pi, &(lc, la)) in preferences.iter().enumerate() {
            let list = &mut shortlist[pi];
            for (j, p) in perfs.iter().enumerate() {
                let loss = p.loss(lc, la);
                if list.len() == refine && loss >= list[refine - 1].0 {
                    continue;
                }
                let mut x = pre.clone();
                x.push(xi_grid[j]);
                let pos = list.partition_point(|c| c.0 <= loss);
                list.insert(pos, (loss, x));
                list.truncate(refine);
            }
        }
    }

    preferences
        .iter()
        .zip(shortlist)
        .map(|(&(lc, la), list)| {
            let mut best: Option<(f64, Vec<f64>)> = None;
            for (_, x) in list {
                let t = full_thresholds(k, &x);
                let loss = analytic_loss(model, spec, &t, lc, la)?;
                let take = match &best {
                    None => true,
                    Some((bl, bx)) => {
                        loss < bl - TIE_TOL || ((loss - bl).abs() <= TIE_TOL && lex_less(&x, bx))
                    }
                };
                if take {
                    best = Some((loss, x));
                }
            }
            let (loss, x) = best.expect("grid has at least one feasible point");
            Ok(OracleResult {
                lambda_c: lc,
                lambda_a: la,
                thresholds: full_thresholds(k, &x),
                loss,
                evaluations,
            })
        })
        .collect()
}

/// `x` holds `[φ₁..φ_{k−1}, ξ₁..ξ_{k−1}, ξ_k]` (with `ξ_i = 0` under final-model abstention).
fn full_thresholds(k: usize, x: &[f64]) -> ThresholdVector {
    ThresholdVector::new(x[..k - 1].to_vec(), x[k - 1..].to_vec())
}

/// Exhaustive grid search for one preference pair.
pub fn brute_force_oracle(
    model: &MarkovJointModel,
    spec: &CascadeSpec,
    lambda_c: f64,
    lambda_a: f64,
    resolution: usize,
) -> Result<(ThresholdVector, f64), OptimizeError> {
    let r = brute_force_oracle_many(
        model,
        spec,
        &[(lambda_c, lambda_a)],
        resolution,
        &OracleOptions::default(),
    )?;
    let r = r.into_iter().next().expect("one preference pair");
    Ok((r.thresholds, r.loss))
}
