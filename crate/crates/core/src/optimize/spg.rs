//! Spectral projected gradient with a monotone Armijo line search.

use super::{OptimizeError, OptimizerOptions};

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 40;
const STEP_MIN: f64 = 1e-10;
const STEP_MAX: f64 = 1e10;

#[derive(Debug, Clone)]
pub(super) struct SpgResult {
    pub x: Vec<f64>,
    pub loss: f64,
    pub converged: bool,
    pub iterations: usize,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn projected_step<P: Fn(&mut [f64])>(x: &[f64], g: &[f64], step: f64, project: &P) -> Vec<f64> {
    let mut y: Vec<f64> = x.iter().zip(g).map(|(a, b)| a - step * b).collect();
    project(&mut y);
    y
}

pub(super) fn minimize<F, P>(
    f: &F,
    project: P,
    mut x: Vec<f64>,
    opts: &OptimizerOptions,
) -> Result<SpgResult, OptimizeError>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>), OptimizeError>,
    P: Fn(&mut [f64]),
{
    project(&mut x);
    let (mut fx, mut g) = f(&x)?;
    let g0 = inf_norm(&g);
    let mut step = if g0 > 0.0 {
        (0.1 / g0).clamp(STEP_MIN, STEP_MAX)
    } else {
        1.0
    };
    for it in 0..opts.max_iter {
        let pg: Vec<f64> = projected_step(&x, &g, 1.0, &project)
            .iter()
            .zip(&x)
            .map(|(a, b)| a - b)
            .collect();
        if inf_norm(&pg) <= opts.grad_tol {
            return Ok(SpgResult {
                x,
                loss: fx,
                converged: true,
                iterations: it,
            });
        }
        let trial = projected_step(&x, &g, step, &project);
        let d: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
        let slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        if slope >= 0.0 {
            // no descent along the projected direction at this step length
            return Ok(SpgResult {
                x,
                loss: fx,
                converged: false,
                iterations: it,
            });
        }
        let mut lam = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let mut xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + lam * b).collect();
            project(&mut xn);
            let (fn_, gn) = f(&xn)?;
            if fn_ <= fx + ARMIJO * lam * slope {
                accepted = Some((xn, fn_, gn));
                break;
            }
            // safeguarded quadratic interpolation
            let denom = 2.0 * (fn_ - fx - lam * slope);
            let lam_q = if denom > 0.0 {
                -slope * lam * lam / denom
            } else {
                0.5 * lam
            };
            lam = lam_q.clamp(0.1 * lam, 0.5 * lam);
        }
        let Some((xn, fn_, gn)) = accepted else {
            return Ok(SpgResult {
                x,
                loss: fx,
                converged: false,
                iterations: it + 1,
            });
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sty: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let sts: f64 = s.iter().map(|a| a * a).sum();
        step = if sty > 0.0 {
            (sts / sty).clamp(STEP_MIN, STEP_MAX)
        } else {
            STEP_MAX
        };
        let improvement = fx - fn_;
        x = xn;
        fx = fn_;
        g = gn;
        if improvement < opts.improvement_tol {
            return Ok(SpgResult {
                x,
                loss: fx,
                converged: true,
                iterations: it + 1,
            });
        }
    }
    Ok(SpgResult {
        x,
        loss: fx,
        converged: false,
        iterations: opts.max_iter,
    })
}
