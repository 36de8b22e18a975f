//! Finite mixtures of beta distributions and their EM fit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use super::JointError;
use crate::special::trigamma;

pub const MAX_COMPONENTS: usize = 3;
pub const MIN_FIT_SAMPLES: usize = 30;
const MAX_SHAPE: f64 = 1e7;

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

// Continued fraction for the regularized incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const FPMIN: f64 = 1e-300;
    const EPS: f64 = 1e-16;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < FPMIN {
        d = FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..20_000 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta `(I_x(a,b), 1 − I_x(a,b))`; the smaller of
/// the two is computed directly so both tails keep relative accuracy.
pub(crate) fn inc_beta_pair(a: f64, b: f64, x: f64, ln_b: f64) -> (f64, f64) {
    if x <= 0.0 {
        return (0.0, 1.0);
    }
    if x >= 1.0 {
        return (1.0, 0.0);
    }
    let front = (a * x.ln() + b * (-x).ln_1p() - ln_b).exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        let lower = (front * beta_cf(a, b, x) / a).min(1.0);
        (lower, 1.0 - lower)
    } else {
        let upper = (front * beta_cf(b, a, 1.0 - x) / b).min(1.0);
        (1.0 - upper, upper)
    }
}

/// Mixture `Σ w_j Beta(α_j, β_j)` on (0, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BetaMixtureRepr", into = "BetaMixtureRepr")]
pub struct BetaMixture {
    weights: Vec<f64>,
    alphas: Vec<f64>,
    betas: Vec<f64>,
    ln_norm: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct BetaMixtureRepr {
    weights: Vec<f64>,
    alphas: Vec<f64>,
    betas: Vec<f64>,
}

impl TryFrom<BetaMixtureRepr> for BetaMixture {
    type Error = JointError;
    fn try_from(r: BetaMixtureRepr) -> Result<Self, JointError> {
        BetaMixture::new(r.weights, r.alphas, r.betas)
    }
}

impl From<BetaMixture> for BetaMixtureRepr {
    fn from(m: BetaMixture) -> Self {
        BetaMixtureRepr {
            weights: m.weights,
            alphas: m.alphas,
            betas: m.betas,
        }
    }
}

impl BetaMixture {
    pub fn new(weights: Vec<f64>, alphas: Vec<f64>, betas: Vec<f64>) -> Result<Self, JointError> {
        let m = weights.len();
        if m == 0 || alphas.len() != m || betas.len() != m {
            return Err(JointError::InvalidMixture(
                "weights, alphas and betas must be nonempty and equally long".into(),
            ));
        }
        if weights.iter().any(|w| !(*w > 0.0 && *w <= 1.0)) {
            return Err(JointError::InvalidMixture(
                "weights must lie in (0, 1]".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(JointError::InvalidMixture(format!(
                "weights sum to {total}, not 1"
            )));
        }
        if alphas
            .iter()
            .chain(&betas)
            .any(|s| !(s.is_finite() && *s > 0.0))
        {
            return Err(JointError::InvalidMixture(
                "shape parameters must be positive and finite".into(),
            ));
        }
        let ln_norm = alphas
            .iter()
            .zip(&betas)
            .map(|(&a, &b)| ln_beta(a, b))
            .collect();
        Ok(Self {
            weights,
            alphas,
            betas,
            ln_norm,
        })
    }

    /// Single `Beta(α, β)` component.
    pub fn single(alpha: f64, beta: f64) -> Result<Self, JointError> {
        Self::new(vec![1.0], vec![alpha], vec![beta])
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }
    pub fn betas(&self) -> &[f64] {
        &self.betas
    }
    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if !(0.0..=1.0).contains(&x) {
            return 0.0;
        }
        let (lx, l1x) = (x.ln(), (-x).ln_1p());
        let mut total = 0.0;
        for j in 0..self.weights.len() {
            total += self.weights[j]
                * ((self.alphas[j] - 1.0) * lx + (self.betas[j] - 1.0) * l1x - self.ln_norm[j])
                    .exp();
        }
        total
    }

    fn component_ln_pdf(&self, j: usize, lx: f64, l1x: f64) -> f64 {
        (self.alphas[j] - 1.0) * lx + (self.betas[j] - 1.0) * l1x - self.ln_norm[j]
    }

    /// `(F(x), 1 − F(x))`.
    pub fn cdf_sf(&self, x: f64) -> (f64, f64) {
        let mut cdf = 0.0;
        let mut sf = 0.0;
        for j in 0..self.weights.len() {
            let (c, s) = inc_beta_pair(self.alphas[j], self.betas[j], x, self.ln_norm[j]);
            cdf += self.weights[j] * c;
            sf += self.weights[j] * s;
        }
        (cdf.min(1.0), sf.min(1.0))
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.cdf_sf(x).0
    }

    /// `P(lo ≤ Φ ≤ hi)`.
    pub fn interval_prob(&self, lo: f64, hi: f64) -> Result<f64, JointError> {
        if lo.partial_cmp(&hi).is_none_or(|o| o.is_gt()) {
            return Err(JointError::InvalidInterval { lo, hi });
        }
        let (c_lo, s_lo) = self.cdf_sf(lo);
        let (c_hi, s_hi) = self.cdf_sf(hi);
        // difference of the tail that is smaller, to limit cancellation
        let p = if c_hi <= s_lo {
            c_hi - c_lo
        } else {
            s_lo - s_hi
        };
        Ok(p.clamp(0.0, 1.0))
    }

    pub fn mean(&self) -> f64 {
        (0..self.weights.len())
            .map(|j| self.weights[j] * self.alphas[j] / (self.alphas[j] + self.betas[j]))
            .sum()
    }

    /// `E[Φ · 1{Φ > t}]` in closed form via `x·Beta(α,β) ∝ Beta(α+1,β)`.
    pub fn partial_mean_above(&self, t: f64) -> f64 {
        let mut total = 0.0;
        for j in 0..self.weights.len() {
            let (a, b) = (self.alphas[j], self.betas[j]);
            let mean = a / (a + b);
            let ln_b1 = self.ln_norm[j] + (mean).ln();
            let (_, sf) = inc_beta_pair(a + 1.0, b, t, ln_b1);
            total += self.weights[j] * mean * sf;
        }
        total
    }

    pub fn log_likelihood(&self, samples: &[f64]) -> f64 {
        samples
            .iter()
            .map(|&x| {
                let (lx, l1x) = (x.ln(), (-x).ln_1p());
                let terms: Vec<f64> = (0..self.weights.len())
                    .map(|j| self.weights[j].ln() + self.component_ln_pdf(j, lx, l1x))
                    .collect();
                log_sum_exp(&terms)
            })
            .sum()
    }

    /// Quantile from a (lower, upper) probability pair; the smaller one
    /// carries the accuracy.
    pub fn quantile_tails(&self, lower: f64, upper: f64) -> f64 {
        let use_lower = lower <= upper;
        let target = if use_lower { lower } else { upper };
        if target <= 0.0 {
            return if use_lower { 0.0 } else { 1.0 };
        }
        // g(x) is increasing in x and vanishes at the quantile
        let g = |x: f64| {
            let (c, s) = self.cdf_sf(x);
            if use_lower {
                c - lower
            } else {
                upper - s
            }
        };
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        let mut x = 0.5;
        for _ in 0..200 {
            let gx = g(x);
            if gx == 0.0 {
                return x;
            }
            if gx < 0.0 {
                lo = x;
            } else {
                hi = x;
            }
            let d = self.pdf(x);
            let newton = x - gx / d;
            let next = if d.is_finite() && d > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if (next - x).abs() <= 4.0 * f64::EPSILON * x.max(1e-300)
                || hi - lo <= 4.0 * f64::EPSILON * hi
            {
                return next;
            }
            x = next;
        }
        x
    }

    pub fn quantile(&self, u: f64) -> f64 {
        self.quantile_tails(u, 1.0 - u)
    }
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Tabulated CDF used to bracket quantile searches when drawing many samples.
pub(crate) struct QuantileTable<'a> {
    mix: &'a BetaMixture,
    grid: Vec<f64>,
    cdf: Vec<f64>,
    sf: Vec<f64>,
}

impl<'a> QuantileTable<'a> {
    pub(crate) fn new(mix: &'a BetaMixture, nodes: usize) -> Self {
        let grid: Vec<f64> = (0..=nodes).map(|i| i as f64 / nodes as f64).collect();
        let (cdf, sf) = grid.iter().map(|&x| mix.cdf_sf(x)).unzip();
        Self { mix, grid, cdf, sf }
    }

    pub(crate) fn invert(&self, lower: f64, upper: f64) -> f64 {
        let use_lower = lower <= upper;
        let n = self.grid.len();
        // first node whose value reaches the target
        let idx = if use_lower {
            self.cdf.partition_point(|&c| c < lower)
        } else {
            self.sf.partition_point(|&s| s > upper)
        };
        let (mut lo, mut hi) = if idx == 0 {
            (0.0, self.grid[0])
        } else if idx >= n {
            (self.grid[n - 1], 1.0)
        } else {
            (self.grid[idx - 1], self.grid[idx])
        };
        if lo == hi {
            return lo;
        }
        let g = |x: f64| {
            let (c, s) = self.mix.cdf_sf(x);
            if use_lower {
                c - lower
            } else {
                upper - s
            }
        };
        let mut x = 0.5 * (lo + hi);
        for _ in 0..200 {
            let gx = g(x);
            if gx == 0.0 {
                break;
            }
            if gx < 0.0 {
                lo = x;
            } else {
                hi = x;
            }
            let d = self.mix.pdf(x);
            let newton = x - gx / d;
            let next = if d.is_finite() && d > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            let done = (next - x).abs() <= 4.0 * f64::EPSILON * x.max(1e-300)
                || hi - lo <= 4.0 * f64::EPSILON * hi;
            x = next;
            if done {
                break;
            }
        }
        x
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmOptions {
    pub restarts: usize,
    pub max_iter: usize,
    pub rel_tol: f64,
    pub seed: u64,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            restarts: 5,
            max_iter: 500,
            rel_tol: 1e-8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureFit {
    pub mixture: BetaMixture,
    pub components: usize,
    pub log_likelihood: f64,
    pub bic: f64,
    pub iterations: usize,
    /// Log-likelihood after every EM iteration of the winning restart.
    #[serde(skip)]
    pub trace: Vec<f64>,
}

fn check_samples(samples: &[f64]) -> Result<(), JointError> {
    if samples.len() < MIN_FIT_SAMPLES {
        return Err(JointError::TooFewSamples {
            min: MIN_FIT_SAMPLES,
            got: samples.len(),
        });
    }
    for (row, &x) in samples.iter().enumerate() {
        if !(x > 0.0 && x < 1.0) {
            return Err(JointError::SampleOutsideOpenInterval { row, value: x });
        }
    }
    Ok(())
}

/// Maximizes `(a−1)s₁ + (b−1)s₂ − ln B(a,b)` by damped Newton steps from
/// `(a, b)`; never returns a point with a lower objective.
fn beta_mle_step(s1: f64, s2: f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let obj = |a: f64, b: f64| (a - 1.0) * s1 + (b - 1.0) * s2 - ln_beta(a, b);
    let mut cur = obj(a, b);
    for _ in 0..100 {
        let dab = digamma(a + b);
        let g1 = s1 - (digamma(a) - dab);
        let g2 = s2 - (digamma(b) - dab);
        let tab = trigamma(a + b);
        let m11 = trigamma(a) - tab;
        let m22 = trigamma(b) - tab;
        let m12 = -tab;
        let det = m11 * m22 - m12 * m12;
        let (mut da, mut db) = if det > 0.0 && det.is_finite() {
            ((m22 * g1 - m12 * g2) / det, (m11 * g2 - m12 * g1) / det)
        } else {
            (g1, g2)
        };
        let mut accepted = false;
        for _ in 0..60 {
            let (na, nb) = (a + da, b + db);
            if na > 0.0 && nb > 0.0 && na <= MAX_SHAPE && nb <= MAX_SHAPE {
                let v = obj(na, nb);
                if v >= cur {
                    let rel = (da.abs() / a).max(db.abs() / b);
                    a = na;
                    b = nb;
                    cur = v;
                    accepted = true;
                    if rel < 1e-12 {
                        return (a, b);
                    }
                    break;
                }
            }
            da *= 0.5;
            db *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    (a, b)
}

fn moment_shapes(mean: f64, var: f64) -> (f64, f64) {
    let common = if var > 0.0 {
        mean * (1.0 - mean) / var - 1.0
    } else {
        f64::INFINITY
    };
    if !(common.is_finite() && common > 0.0) {
        if common == f64::INFINITY {
            return (
                (mean * 1e6).clamp(1e-3, MAX_SHAPE),
                ((1.0 - mean) * 1e6).clamp(1e-3, MAX_SHAPE),
            );
        }
        return (1.0, 1.0);
    }
    (
        (mean * common).clamp(1e-3, MAX_SHAPE),
        ((1.0 - mean) * common).clamp(1e-3, MAX_SHAPE),
    )
}

struct EmRun {
    mixture: BetaMixture,
    loglik: f64,
    iterations: usize,
    trace: Vec<f64>,
}

fn run_em(samples: &[f64], resp0: Vec<Vec<f64>>, opts: &EmOptions) -> Option<EmRun> {
    let n = samples.len();
    let m = resp0.len();
    let lx: Vec<f64> = samples.iter().map(|x| x.ln()).collect();
    let l1x: Vec<f64> = samples.iter().map(|x| (-x).ln_1p()).collect();

    // initial M-step from responsibilities, shapes by weighted moments
    let mut weights = vec![0.0; m];
    let mut alphas = vec![1.0; m];
    let mut betas = vec![1.0; m];
    for j in 0..m {
        let wsum: f64 = resp0[j].iter().sum();
        if wsum <= 1e-8 {
            return None;
        }
        let mean = resp0[j]
            .iter()
            .zip(samples)
            .map(|(r, x)| r * x)
            .sum::<f64>()
            / wsum;
        let var = resp0[j]
            .iter()
            .zip(samples)
            .map(|(r, x)| r * (x - mean) * (x - mean))
            .sum::<f64>()
            / wsum;
        let (a0, b0) = moment_shapes(mean, var);
        let s1 = resp0[j].iter().zip(&lx).map(|(r, l)| r * l).sum::<f64>() / wsum;
        let s2 = resp0[j].iter().zip(&l1x).map(|(r, l)| r * l).sum::<f64>() / wsum;
        let (a, b) = beta_mle_step(s1, s2, a0, b0);
        weights[j] = wsum / n as f64;
        alphas[j] = a;
        betas[j] = b;
    }
    let norm: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= norm);

    let mut resp = vec![vec![0.0; n]; m];
    let mut ln_norm: Vec<f64> = (0..m).map(|j| ln_beta(alphas[j], betas[j])).collect();
    let mut prev = f64::NEG_INFINITY;
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut terms = vec![0.0; m];
    loop {
        // E-step
        let mut ll = 0.0;
        for i in 0..n {
            for j in 0..m {
                terms[j] = weights[j].ln() + (alphas[j] - 1.0) * lx[i] + (betas[j] - 1.0) * l1x[i]
                    - ln_norm[j];
            }
            let lse = log_sum_exp(&terms);
            ll += lse;
            for j in 0..m {
                resp[j][i] = (terms[j] - lse).exp();
            }
        }
        if !ll.is_finite() {
            return None;
        }
        trace.push(ll);
        if iterations >= opts.max_iter || (ll - prev) <= opts.rel_tol * ll.abs().max(1.0) {
            prev = prev.max(ll);
            break;
        }
        prev = ll;
        iterations += 1;
        // M-step
        for j in 0..m {
            let wsum: f64 = resp[j].iter().sum();
            if wsum <= 1e-8 * n as f64 {
                // starved component: keep its shape, give it a vanishing weight
                weights[j] = 1e-12;
                continue;
            }
            let s1 = resp[j].iter().zip(&lx).map(|(r, l)| r * l).sum::<f64>() / wsum;
            let s2 = resp[j].iter().zip(&l1x).map(|(r, l)| r * l).sum::<f64>() / wsum;
            let (a, b) = beta_mle_step(s1, s2, alphas[j], betas[j]);
            alphas[j] = a;
            betas[j] = b;
            ln_norm[j] = ln_beta(a, b);
            weights[j] = wsum / n as f64;
        }
        let norm: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= norm);
    }
    let mixture = BetaMixture::new(weights, alphas, betas).ok()?;
    Some(EmRun {
        mixture,
        loglik: prev,
        iterations,
        trace,
    })
}

/// Responsibilities that split the sorted sample into `m` blocks at the
/// given quantile cut points.
fn block_responsibilities(samples: &[f64], cuts: &[f64]) -> Vec<Vec<f64>> {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let edges: Vec<f64> = cuts
        .iter()
        .map(|&q| sorted[((q * n as f64) as usize).min(n - 1)])
        .collect();
    let m = cuts.len() + 1;
    let mut resp = vec![vec![0.0; n]; m];
    for (i, &x) in samples.iter().enumerate() {
        let j = edges.iter().filter(|&&e| x >= e).count();
        resp[j][i] = 1.0;
    }
    resp
}

/// EM fit with `m` components, best of `opts.restarts` initializations.
pub fn fit_beta_mixture(
    samples: &[f64],
    m: usize,
    opts: &EmOptions,
) -> Result<MixtureFit, JointError> {
    check_samples(samples)?;
    if m == 0 || m > MAX_COMPONENTS {
        return Err(JointError::InvalidComponentCount {
            m,
            max: MAX_COMPONENTS,
        });
    }
    let mut rng =
        ChaCha8Rng::seed_from_u64(opts.seed ^ (m as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let restarts = if m == 1 { 1 } else { opts.restarts.max(1) };
    let mut best: Option<EmRun> = None;
    for r in 0..restarts {
        let cuts: Vec<f64> = if r == 0 {
            (1..m).map(|j| j as f64 / m as f64).collect()
        } else {
            let mut c: Vec<f64> = (1..m).map(|_| rng.random_range(0.05..0.95)).collect();
            c.sort_by(f64::total_cmp);
            c
        };
        let resp = block_responsibilities(samples, &cuts);
        if let Some(run) = run_em(samples, resp, opts) {
            let better = best.as_ref().is_none_or(|b| run.loglik > b.loglik);
            if better {
                best = Some(run);
            }
        }
    }
    let run = best.ok_or(JointError::FitFailed(format!(
        "EM failed on every restart for m = {m}"
    )))?;
    let n = samples.len() as f64;
    let params = (3 * m - 1) as f64;
    Ok(MixtureFit {
        components: m,
        bic: -2.0 * run.loglik + params * n.ln(),
        log_likelihood: run.loglik,
        iterations: run.iterations,
        trace: run.trace,
        mixture: run.mixture,
    })
}

/// Fits `m = 1..=max_m` and returns all fits plus the index of the lowest BIC
/// (ties to the smaller `m`).
pub fn select_beta_mixture(
    samples: &[f64],
    max_m: usize,
    opts: &EmOptions,
) -> Result<(Vec<MixtureFit>, usize), JointError> {
    let mut fits = Vec::new();
    for m in 1..=max_m.min(MAX_COMPONENTS) {
        fits.push(fit_beta_mixture(samples, m, opts)?);
    }
    let mut best = 0;
    for (i, f) in fits.iter().enumerate() {
        if f.bic < fits[best].bic {
            best = i;
        }
    }
    Ok((fits, best))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::integrate;
    use rand_distr::{Beta, Distribution};
    use statrs::function::beta::beta_reg;

    #[test]
    fn incomplete_beta_matches_statrs() {
        for &(a, b) in &[
            (0.3, 0.7),
            (1.0, 1.0),
            (2.0, 5.0),
            (12.5, 3.2),
            (250.0, 300.0),
            (0.9, 40.0),
        ] {
            let lb = ln_beta(a, b);
            for i in 1..100 {
                let x = i as f64 / 100.0;
                let (c, s) = inc_beta_pair(a, b, x, lb);
                let reference = beta_reg(a, b, x);
                assert!(
                    (c - reference).abs() < 1e-13,
                    "a={a} b={b} x={x}: {c} vs {reference}"
                );
                assert!((c + s - 1.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn upper_tail_keeps_relative_accuracy() {
        let mix = BetaMixture::single(2.0, 5.0).unwrap();
        // closed form survival for Beta(2,5) at x: (1−x)^5 (1 + 5x)... via quadrature instead
        let x = 0.995;
        let sf = mix.cdf_sf(x).1;
        let q = integrate(|t| [mix.pdf(t)], x, 1.0, 1e-30, 1e-13, 100)
            .unwrap()
            .value[0];
        assert!(((sf - q) / q).abs() < 1e-10, "{sf} vs {q}");
    }

    #[test]
    fn interval_prob_examples() {
        let u = BetaMixture::single(1.0, 1.0).unwrap();
        assert!((u.interval_prob(0.2, 0.7).unwrap() - 0.5).abs() < 1e-15);
        let mix = BetaMixture::new(vec![0.3, 0.7], vec![0.5, 6.0], vec![2.0, 1.5]).unwrap();
        assert!((mix.interval_prob(0.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((mix.cdf(1.0) - 1.0).abs() < 1e-15);
        assert!(matches!(
            mix.interval_prob(0.6, 0.3),
            Err(JointError::InvalidInterval { .. })
        ));
        // against quadrature of the density
        let q = integrate(|t| [mix.pdf(t)], 0.3, 0.6, 1e-14, 1e-13, 100)
            .unwrap()
            .value[0];
        assert!((mix.interval_prob(0.3, 0.6).unwrap() - q).abs() < 1e-12);
    }

    #[test]
    fn partial_mean_matches_quadrature() {
        let mix = BetaMixture::new(vec![0.4, 0.6], vec![0.7, 5.0], vec![3.0, 1.2]).unwrap();
        for &t in &[0.0, 0.1, 0.5, 0.93] {
            let q = integrate(|x| [x * mix.pdf(x)], t, 1.0, 1e-13, 1e-12, 500)
                .unwrap()
                .value[0];
            assert!((mix.partial_mean_above(t) - q).abs() < 1e-10, "t={t}");
        }
        assert!((mix.partial_mean_above(0.0) - mix.mean()).abs() < 1e-14);
        assert_eq!(mix.partial_mean_above(1.0), 0.0);
        let u = BetaMixture::single(1.0, 1.0).unwrap();
        assert!((u.partial_mean_above(0.5) - 0.375).abs() < 1e-15);
    }

    #[test]
    fn quantile_roundtrip() {
        let mix = BetaMixture::new(vec![0.5, 0.5], vec![10.0, 2.0], vec![2.0, 10.0]).unwrap();
        let table = QuantileTable::new(&mix, 256);
        for &u in &[1e-9, 0.01, 0.3, 0.5, 0.77, 0.999_999] {
            let x = mix.quantile(u);
            assert!((mix.cdf(x) - u).abs() < 1e-12 * u.max(1e-3) * 1e3);
            let y = table.invert(u, 1.0 - u);
            assert!((x - y).abs() < 1e-12, "{x} vs {y}");
        }
        let x = table.invert(1.0 - 1e-12, 1e-12);
        assert!((mix.cdf_sf(x).1 - 1e-12).abs() < 1e-20);
    }

    #[test]
    fn single_beta_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = Beta::new(2.0, 5.0).unwrap();
        let xs: Vec<f64> = (0..10_000).map(|_| d.sample(&mut rng)).collect();
        let fit = fit_beta_mixture(&xs, 1, &EmOptions::default()).unwrap();
        let (a, b) = (fit.mixture.alphas()[0], fit.mixture.betas()[0]);
        assert!((a / (a + b) - 2.0 / 7.0).abs() <= 0.01);
        assert!(
            (a - 2.0).abs() < 0.15 && (b - 5.0).abs() < 0.4,
            "a={a} b={b}"
        );
    }

    #[test]
    fn concentrated_sample_fits() {
        let xs: Vec<f64> = (0..200)
            .map(|i| 0.49 + 0.02 * (i as f64 + 0.5) / 200.0)
            .collect();
        let fit = fit_beta_mixture(&xs, 1, &EmOptions::default()).unwrap();
        let (a, b) = (fit.mixture.alphas()[0], fit.mixture.betas()[0]);
        assert!(a > 500.0 && b > 500.0 && fit.log_likelihood.is_finite());
    }

    #[test]
    fn two_component_recovery_and_monotone_em() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let hi = Beta::new(10.0, 2.0).unwrap();
        let lo = Beta::new(2.0, 10.0).unwrap();
        let xs: Vec<f64> = (0..10_000)
            .map(|_| {
                if rng.random::<bool>() {
                    hi.sample(&mut rng)
                } else {
                    lo.sample(&mut rng)
                }
            })
            .collect();
        let fit = fit_beta_mixture(&xs, 2, &EmOptions::default()).unwrap();
        let means: Vec<f64> = (0..2)
            .map(|j| fit.mixture.alphas()[j] / (fit.mixture.alphas()[j] + fit.mixture.betas()[j]))
            .collect();
        assert!(
            means.iter().any(|&m| m > 0.5) && means.iter().any(|&m| m < 0.5),
            "{means:?}"
        );
        for w in fit.trace.windows(2) {
            assert!(
                w[1] >= w[0] - 1e-9 * w[0].abs(),
                "log-likelihood decreased: {w:?}"
            );
        }
        let (fits, best) = select_beta_mixture(&xs, 3, &EmOptions::default()).unwrap();
        assert_eq!(fits.len(), 3);
        assert!(fits[best].components >= 2);
    }

    #[test]
    fn rejects_bad_samples() {
        assert!(matches!(
            fit_beta_mixture(&[0.5; 10], 1, &EmOptions::default()),
            Err(JointError::TooFewSamples { .. })
        ));
        let mut xs = vec![0.5; 40];
        xs[7] = 1.0;
        assert!(matches!(
            fit_beta_mixture(&xs, 1, &EmOptions::default()),
            Err(JointError::SampleOutsideOpenInterval { row: 7, .. })
        ));
    }
}
