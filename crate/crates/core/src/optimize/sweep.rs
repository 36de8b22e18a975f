//! Preference-grid sweeps, threshold-grid smoothing and the early-versus-final
//! abstention comparison.

use serde::{Deserialize, Serialize};

use super::{optimize_from, OptimizeError, OptimizerOptions};
use crate::cascade::{Architecture, CascadeSpec, ThresholdVector};
use crate::joint::MarkovJointModel;
use crate::metrics::analytic_performance;

/// Default smoothing ratio `r`.
pub const DEFAULT_SMOOTHING_R: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceGrid {
    pub lambdas_cost: Vec<f64>,
    pub lambdas_abs: Vec<f64>,
}

impl PreferenceGrid {
    pub fn new(lambdas_cost: Vec<f64>, lambdas_abs: Vec<f64>) -> Result<Self, OptimizeError> {
        for (name, v) in [
            ("lambdas_cost", &lambdas_cost),
            ("lambdas_abs", &lambdas_abs),
        ] {
            if v.is_empty() {
                return Err(OptimizeError::InvalidGrid(format!("{name} is empty")));
            }
            if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(OptimizeError::InvalidGrid(format!(
                    "{name} must be finite and nonnegative"
                )));
            }
            if v.windows(2).any(|w| w[0] >= w[1]) {
                return Err(OptimizeError::InvalidGrid(format!(
                    "{name} must be strictly increasing"
                )));
            }
        }
        Ok(Self {
            lambdas_cost,
            lambdas_abs,
        })
    }

    /// `n_cost` log-spaced `λ_c` with `λ_c · total_cost` spanning `[10⁻², 1]`
    /// and `n_abs` evenly spaced `λ_a` on `[0, 1]`.
    pub fn default_for(
        spec: &CascadeSpec,
        n_cost: usize,
        n_abs: usize,
    ) -> Result<Self, OptimizeError> {
        if n_cost == 0 || n_abs == 0 {
            return Err(OptimizeError::InvalidGrid(
                "grid dimensions must be positive".into(),
            ));
        }
        let total = spec.total_cost();
        let lc = (0..n_cost)
            .map(|j| {
                let e = if n_cost == 1 {
                    -1.0
                } else {
                    -2.0 + 2.0 * j as f64 / (n_cost - 1) as f64
                };
                10f64.powf(e) / total
            })
            .collect();
        let la = (0..n_abs)
            .map(|j| {
                if n_abs == 1 {
                    0.5
                } else {
                    j as f64 / (n_abs - 1) as f64
                }
            })
            .collect();
        Self::new(lc, la)
    }

    pub fn rows(&self) -> usize {
        self.lambdas_cost.len()
    }

    pub fn cols(&self) -> usize {
        self.lambdas_abs.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub lc: f64,
    pub la: f64,
    pub phi: Vec<f64>,
    pub xi: Vec<f64>,
    pub loss: f64,
    pub error: f64,
    pub cost: f64,
    pub abstention: f64,
    pub converged: bool,
    pub n_restarts_used: usize,
}

impl SweepCell {
    pub(crate) fn evaluate(
        model: &MarkovJointModel,
        spec: &CascadeSpec,
        lc: f64,
        la: f64,
        t: ThresholdVector,
        converged: bool,
        n_restarts_used: usize,
    ) -> Result<Self, OptimizeError> {
        let p = analytic_performance(model, spec, &t)?;
        Ok(Self {
            lc,
            la,
            loss: p.loss(lc, la),
            error: p.p_error_no_abstain,
            cost: p.expected_cost,
            abstention: p.p_abstention,
            phi: t.deferral,
            xi: t.abstention,
            converged,
            n_restarts_used,
        })
    }

    pub fn thresholds(&self) -> ThresholdVector {
        ThresholdVector::new(self.phi.clone(), self.xi.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothingReport {
    pub r: f64,
    pub flagged_fraction: f64,
    /// `[row, col]` of every flagged cell.
    pub flagged: Vec<[usize; 2]>,
    /// Flagged cells whose neighbours were all flagged (left unchanged).
    pub unresolved: Vec<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub grid: PreferenceGrid,
    /// `cells[i][j]` holds `(lambdas_cost[i], lambdas_abs[j])`.
    pub cells: Vec<Vec<SweepCell>>,
    pub overall_loss: f64,
    pub architecture: Architecture,
    pub smoothing: Option<SmoothingReport>,
}

impl SweepResult {
    fn mean_loss(cells: &[Vec<SweepCell>]) -> f64 {
        let n: usize = cells.iter().map(Vec::len).sum();
        cells.iter().flatten().map(|c| c.loss).sum::<f64>() / n as f64
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("sweep results serialize")
    }

    pub fn converged_fraction(&self) -> f64 {
        let n: usize = self.cells.iter().map(Vec::len).sum();
        self.cells.iter().flatten().filter(|c| c.converged).count() as f64 / n as f64
    }
}

/// SplitMix64 finalizer for per-cell seeds.
fn mix_seed(seed: u64, cell: u64) -> u64 {
    let mut z = seed ^ cell.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn sweep_with(
    model: &MarkovJointModel,
    spec: &CascadeSpec,
    grid: &PreferenceGrid,
    opts: &OptimizerOptions,
    seeds_from: Option<&SweepResult>,
) -> Result<SweepResult, OptimizeError> {
    opts.validate()?;
    let (rows, cols) = (grid.rows(), grid.cols());
    let mut cells: Vec<Vec<SweepCell>> = Vec::with_capacity(rows);
    for (i, &lc) in grid.lambdas_cost.iter().enumerate() {
        let mut row: Vec<SweepCell> = Vec::with_capacity(cols);
        for (j, &la) in grid.lambdas_abs.iter().enumerate() {
            let mut warm = Vec::new();
            if let Some(src) = seeds_from {
                warm.push(src.cells[i][j].thresholds());
            }
            if let Some(left) = row.last() {
                warm.push(left.thresholds());
            }
            if i > 0 {
                warm.push(cells[i - 1][j].thresholds());
            }
            let cell_opts = OptimizerOptions {
                seed: mix_seed(opts.seed, (i * cols + j) as u64),
                ..opts.clone()
            };
            let out = optimize_from(model, spec, lc, la, &warm, &cell_opts)?;
            if !out.converged {
                log::warn!("cell ({i}, {j}) at lc={lc}, la={la} did not converge");
            }
            row.push(SweepCell::evaluate(
                model,
                spec,
                lc,
                la,
                out.thresholds,
                out.converged,
                out.n_restarts_used,
            )?);
        }
        cells.push(row);
    }
    Ok(SweepResult {
        overall_loss: SweepResult::mean_loss(&cells),
        grid: grid.clone(),
        cells,
        architecture: spec.architecture(),
        smoothing: None,
    })
}

/// Optimizes every grid cell in row-major order, warm-starting each cell from
/// its left and upper neighbours.
pub fn sweep_preference_grid(
    model: &MarkovJointModel,
    spec: &CascadeSpec,
    grid: &PreferenceGrid,
    opts: &OptimizerOptions,
) -> Result<SweepResult, OptimizeError> {
    sweep_with(model, spec, grid, opts, None)
}

fn neighbours(i: usize, j: usize, rows: usize, cols: usize) -> Vec<(usize, usize)> {
    let mut v = Vec::with_capacity(4);
    if i > 0 {
        v.push((i - 1, j));
    }
    if i + 1 < rows {
        v.push((i + 1, j));
    }
    if j > 0 {
        v.push((i, j - 1));
    }
    if j + 1 < cols {
        v.push((i, j + 1));
    }
    v
}

/// Flags cells whose threshold component mean `θ̄` satisfies
/// `(θ̄ − mean_N θ̄)² > r · Var_N θ̄` over the 4-neighbourhood `N` (population
/// variance) and replaces each by the componentwise mean of its unflagged
/// neighbours. Losses are re-evaluated at the replaced thresholds.
pub fn smooth_threshold_grid(
    model: &MarkovJointModel,
    spec: &CascadeSpec,
    result: &SweepResult,
    r: f64,
) -> Result<SweepResult, OptimizeError> {
    let rows = result.cells.len();
    let cols = result.cells.first().map_or(0, Vec::len);
    if rows < 2 || cols < 2 {
        return Err(OptimizeError::GridTooSmall { rows, cols });
    }
    if !(r > 0.0 && r.is_finite()) {
        return Err(OptimizeError::InvalidOptions(format!(
            "smoothing ratio must be positive, got {r}"
        )));
    }
    let theta: Vec<Vec<f64>> = result
        .cells
        .iter()
        .map(|row| {
            row.iter()
                .map(|c| c.thresholds().component_mean())
                .collect()
        })
        .collect();
    let mut flagged = vec![vec![false; cols]; rows];
    for i in 0..rows {
        for j in 0..cols {
            let nb: Vec<f64> = neighbours(i, j, rows, cols)
                .iter()
                .map(|&(a, b)| theta[a][b])
                .collect();
            let n = nb.len() as f64;
            let mean = nb.iter().sum::<f64>() / n;
            let var = nb.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            flagged[i][j] = (theta[i][j] - mean).powi(2) > r * var;
        }
    }
    let mut cells = result.cells.clone();
    let mut flagged_list = Vec::new();
    let mut unresolved = Vec::new();
    for i in 0..rows {
        for j in 0..cols {
            if !flagged[i][j] {
                continue;
            }
            flagged_list.push([i, j]);
            let clean: Vec<&SweepCell> = neighbours(i, j, rows, cols)
                .into_iter()
                .filter(|&(a, b)| !flagged[a][b])
                .map(|(a, b)| &result.cells[a][b])
                .collect();
            if clean.is_empty() {
                log::warn!(
                    "cell ({i}, {j}) flagged but all neighbours are flagged; left unchanged"
                );
                unresolved.push([i, j]);
                continue;
            }
            let n = clean.len() as f64;
            let avg = |f: fn(&SweepCell) -> &Vec<f64>| -> Vec<f64> {
                let len = f(clean[0]).len();
                (0..len)
                    .map(|c| clean.iter().map(|cell| f(cell)[c]).sum::<f64>() / n)
                    .collect()
            };
            let t = ThresholdVector::new(avg(|c| &c.phi), avg(|c| &c.xi));
            let old = &result.cells[i][j];
            cells[i][j] = SweepCell::evaluate(
                model,
                spec,
                old.lc,
                old.la,
                t,
                old.converged,
                old.n_restarts_used,
            )?;
        }
    }
    let total = (rows * cols) as f64;
    Ok(SweepResult {
        grid: result.grid.clone(),
        overall_loss: SweepResult::mean_loss(&cells),
        cells,
        architecture: result.architecture,
        smoothing: Some(SmoothingReport {
            r,
            flagged_fraction: flagged_list.len() as f64 / total,
            flagged: flagged_list,
            unresolved,
        }),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellComparison {
    pub lc: f64,
    pub la: f64,
    pub early_loss: f64,
    pub final_loss: f64,
    /// `(Early − Final) / Final × 100`; `None` when the final value is 0.
    pub pct_delta_loss: Option<f64>,
    pub pct_delta_error: Option<f64>,
    pub pct_delta_cost: Option<f64>,
    /// Absolute difference of abstention rates, Early − Final.
    pub delta_abstention: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureComparison {
    pub grid: PreferenceGrid,
    pub early: SweepResult,
    pub final_model: SweepResult,
    pub early_unsmoothed_overall_loss: f64,
    pub final_unsmoothed_overall_loss: f64,
    /// Cells where the unsmoothed Early loss exceeds the Final loss by more
    /// than `nesting_tolerance`.
    pub nesting_violations: Vec<[usize; 2]>,
    pub nesting_tolerance: f64,
    pub cells: Vec<Vec<CellComparison>>,
    pub overall_pct_delta: Option<f64>,
    pub mean_pct_delta_error: Option<f64>,
    pub mean_pct_delta_cost: Option<f64>,
    pub mean_delta_abstention: f64,
}

impl ArchitectureComparison {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("comparison serializes")
    }
}

fn pct(a: f64, b: f64) -> Option<f64> {
    (b != 0.0).then(|| (a - b) / b * 100.0)
}

fn mean_some(v: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let xs: Vec<f64> = v.flatten().collect();
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Sweeps the final-model architecture, then early abstention with each cell
/// also started from the final-model optimum, smooths both grids (when at
/// least 2x2 and `smooth_r` is set) and tabulates the differences.
pub fn compare_architectures(
    model: &MarkovJointModel,
    spec: &CascadeSpec,
    grid: &PreferenceGrid,
    opts: &OptimizerOptions,
    smooth_r: Option<f64>,
) -> Result<ArchitectureComparison, OptimizeError> {
    let final_spec = spec.with_architecture(Architecture::FinalModelAbstention);
    let early_spec = spec.with_architecture(Architecture::EarlyAbstention);
    let final_raw = sweep_with(model, &final_spec, grid, opts, None)?;
    let early_raw = sweep_with(model, &early_spec, grid, opts, Some(&final_raw))?;

    let nesting_tolerance = 2.0 * opts.improvement_tol.max(super::TIE_TOL);
    let mut nesting_violations = Vec::new();
    for (i, (er, fr)) in early_raw.cells.iter().zip(&final_raw.cells).enumerate() {
        for (j, (e, f)) in er.iter().zip(fr).enumerate() {
            if e.loss > f.loss + nesting_tolerance {
                nesting_violations.push([i, j]);
            }
        }
    }

    let smooth = grid.rows() >= 2 && grid.cols() >= 2;
    let (early, final_model) = match smooth_r {
        Some(r) if smooth => (
            smooth_threshold_grid(model, &early_spec, &early_raw, r)?,
            smooth_threshold_grid(model, &final_spec, &final_raw, r)?,
        ),
        _ => (early_raw.clone(), final_raw.clone()),
    };

    let cells: Vec<Vec<CellComparison>> = early
        .cells
        .iter()
        .zip(&final_model.cells)
        .map(|(er, fr)| {
            er.iter()
                .zip(fr)
                .map(|(e, f)| CellComparison {
                    lc: e.lc,
                    la: e.la,
                    early_loss: e.loss,
                    final_loss: f.loss,
                    pct_delta_loss: pct(e.loss, f.loss),
                    pct_delta_error: pct(e.error, f.error),
                    pct_delta_cost: pct(e.cost, f.cost),
                    delta_abstention: e.abstention - f.abstention,
                })
                .collect()
        })
        .collect();
    let n = (grid.rows() * grid.cols()) as f64;
    Ok(ArchitectureComparison {
        grid: grid.clone(),
        overall_pct_delta: pct(early.overall_loss, final_model.overall_loss),
        mean_pct_delta_error: mean_some(cells.iter().flatten().map(|c| c.pct_delta_error)),
        mean_pct_delta_cost: mean_some(cells.iter().flatten().map(|c| c.pct_delta_cost)),
        mean_delta_abstention: cells
            .iter()
            .flatten()
            .map(|c| c.delta_abstention)
            .sum::<f64>()
            / n,
        early_unsmoothed_overall_loss: early_raw.overall_loss,
        final_unsmoothed_overall_loss: final_raw.overall_loss,
        nesting_violations,
        nesting_tolerance,
        cells,
        early,
        final_model,
    })
}
