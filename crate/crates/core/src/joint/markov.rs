use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::beta_mixture::{
    fit_beta_mixture, select_beta_mixture, BetaMixture, EmOptions, QuantileTable, MAX_COMPONENTS,
};
use super::copula::{fit_pair_copula, PairCopula};
use super::JointError;
use crate::quadrature::integrate;
use crate::special::{norm_cdf, norm_pdf, norm_quantile_tails, Z_CAP};

/// Absolute tolerance of conditional partial-expectation integrals.
pub const QUAD_ABS_TOL: f64 = 1e-13;
pub const QUAD_REL_TOL: f64 = 1e-11;
pub const QUAD_MAX_INTERVALS: usize = 400;
/// Conditioning events lighter than this are treated as impossible.
pub const MIN_CONDITIONING_MASS: f64 = 1e-12;

/// Closed interval `[lo, hi]` of confidence values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self, JointError> {
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return Err(JointError::InvalidInterval { lo, hi });
        }
        Ok(Self { lo, hi })
    }
}

/// A marginal evaluated at one point: CDF, survival, normal score, density.
#[derive(Debug, Clone, Copy)]
pub(crate) struct MarginalPoint {
    pub x: f64,
    pub cdf: f64,
    pub sf: f64,
    pub z: f64,
    pub pdf: f64,
}

/// `P(a ≤ Z ≤ b)` for a standard normal, differencing the smaller tails.
#[inline]
pub(crate) fn norm_interval(a: f64, b: f64) -> f64 {
    if a > 0.0 {
        (norm_cdf(-a) - norm_cdf(-b)).max(0.0)
    } else {
        (norm_cdf(b) - norm_cdf(a)).max(0.0)
    }
}

/// First-order Markov model of the confidence vector: beta-mixture marginals
/// chained by Gaussian pair copulas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MarkovRepr", into = "MarkovRepr")]
pub struct MarkovJointModel {
    marginals: Vec<BetaMixture>,
    copulas: Vec<PairCopula>,
}

#[derive(Serialize, Deserialize)]
struct MarkovRepr {
    k: usize,
    marginals: Vec<BetaMixture>,
    copulas: Vec<PairCopula>,
}

impl TryFrom<MarkovRepr> for MarkovJointModel {
    type Error = JointError;
    fn try_from(r: MarkovRepr) -> Result<Self, JointError> {
        if r.marginals.len() != r.k {
            return Err(JointError::ShapeMismatch(format!(
                "k = {} but {} marginals",
                r.k,
                r.marginals.len()
            )));
        }
        MarkovJointModel::new(r.marginals, r.copulas)
    }
}

impl From<MarkovJointModel> for MarkovRepr {
    fn from(m: MarkovJointModel) -> Self {
        MarkovRepr {
            k: m.marginals.len(),
            marginals: m.marginals,
            copulas: m.copulas,
        }
    }
}

impl MarkovJointModel {
    pub fn new(marginals: Vec<BetaMixture>, copulas: Vec<PairCopula>) -> Result<Self, JointError> {
        if marginals.is_empty() {
            return Err(JointError::ShapeMismatch(
                "at least one marginal is required".into(),
            ));
        }
        if copulas.len() + 1 != marginals.len() {
            return Err(JointError::ShapeMismatch(format!(
                "{} marginals need {} copulas, got {}",
                marginals.len(),
                marginals.len() - 1,
                copulas.len()
            )));
        }
        Ok(Self { marginals, copulas })
    }

    pub fn k(&self) -> usize {
        self.marginals.len()
    }

    pub fn marginals(&self) -> &[BetaMixture] {
        &self.marginals
    }

    pub fn copulas(&self) -> &[PairCopula] {
        &self.copulas
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, JointError> {
        serde_json::from_str(s).map_err(|e| JointError::Parse(e.to_string()))
    }

    pub(crate) fn point(&self, i: usize, x: f64) -> MarginalPoint {
        if x <= 0.0 {
            return MarginalPoint {
                x,
                cdf: 0.0,
                sf: 1.0,
                z: -Z_CAP,
                pdf: 0.0,
            };
        }
        if x >= 1.0 {
            return MarginalPoint {
                x,
                cdf: 1.0,
                sf: 0.0,
                z: Z_CAP,
                pdf: 0.0,
            };
        }
        let mix = &self.marginals[i];
        let (cdf, sf) = mix.cdf_sf(x);
        MarginalPoint {
            x,
            cdf,
            sf,
            z: norm_quantile_tails(cdf, sf),
            pdf: mix.pdf(x),
        }
    }

    fn check_index(&self, i: usize, needs_parent: bool) -> Result<(), JointError> {
        if i >= self.k() || (needs_parent && i == 0) {
            return Err(JointError::IndexOutOfRange {
                index: i,
                k: self.k(),
            });
        }
        Ok(())
    }

    /// `P(Φ_i ∈ [lo, hi])` (0-based `i`).
    pub fn interval_prob(&self, i: usize, lo: f64, hi: f64) -> Result<f64, JointError> {
        self.check_index(i, false)?;
        self.marginals[i].interval_prob(lo, hi)
    }

    pub(crate) fn mass_between(a: &MarginalPoint, b: &MarginalPoint) -> f64 {
        let p = if b.cdf <= a.sf {
            b.cdf - a.cdf
        } else {
            a.sf - b.sf
        };
        p.clamp(0.0, 1.0)
    }

    /// `P(Φ_i ∈ [t₁,t₂] ∧ Φ_{i−1} ∈ [g₁,g₂])` from marginal points.
    pub(crate) fn rectangle(
        &self,
        i: usize,
        t1: &MarginalPoint,
        t2: &MarginalPoint,
        g1: &MarginalPoint,
        g2: &MarginalPoint,
    ) -> f64 {
        // the copula's first argument is the upstream score
        self.copulas[i - 1].rectangle_z(g1.z, g2.z, t1.z, t2.z)
    }

    /// `P(Φ_i ∈ target ∧ Φ_{i−1} ∈ given)`.
    pub fn joint_interval_prob(
        &self,
        i: usize,
        target: Interval,
        given: Interval,
    ) -> Result<f64, JointError> {
        self.check_index(i, true)?;
        let (t1, t2) = (self.point(i, target.lo), self.point(i, target.hi));
        let (g1, g2) = (self.point(i - 1, given.lo), self.point(i - 1, given.hi));
        Ok(self.rectangle(i, &t1, &t2, &g1, &g2))
    }

    /// `P(Φ_i ∈ target | Φ_{i−1} ∈ given)`.
    pub fn conditional_interval_prob(
        &self,
        i: usize,
        target: Interval,
        given: Interval,
    ) -> Result<f64, JointError> {
        self.check_index(i, true)?;
        let mass = self.marginals[i - 1].interval_prob(given.lo, given.hi)?;
        if mass < MIN_CONDITIONING_MASS {
            return Err(JointError::ZeroProbabilityCondition { mass });
        }
        let joint = self.joint_interval_prob(i, target, given)?;
        Ok((joint / mass).clamp(0.0, 1.0))
    }

    /// `E[Φ_i · 1{Φ_i > threshold} | Φ_{i−1} ∈ given]`, or the unconditional
    /// partial mean when `given` is `None`.
    pub fn partial_expectation(
        &self,
        i: usize,
        threshold: f64,
        given: Option<Interval>,
    ) -> Result<f64, JointError> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(JointError::InvalidInterval {
                lo: threshold,
                hi: 1.0,
            });
        }
        match given {
            None => {
                self.check_index(i, false)?;
                Ok(self.marginals[i].partial_mean_above(threshold))
            }
            Some(g) => {
                self.check_index(i, true)?;
                let (g1, g2) = (self.point(i - 1, g.lo), self.point(i - 1, g.hi));
                let mass = Self::mass_between(&g1, &g2);
                if mass < MIN_CONDITIONING_MASS {
                    return Err(JointError::ZeroProbabilityCondition { mass });
                }
                let [joint] = self.joint_partial_expectation::<1>(i, threshold, &g1, &g2)?;
                Ok(joint / mass)
            }
        }
    }

    /// `∫_{x > threshold} x f_i(x) P(Φ_{i−1} ∈ [g₁,g₂] | Φ_i = x) dx`; with
    /// `N = 3` also the two integrals needed for its derivatives in `g₂` and
    /// `g₁` (before the chain-rule factor).
    pub(crate) fn joint_partial_expectation<const N: usize>(
        &self,
        i: usize,
        threshold: f64,
        g1: &MarginalPoint,
        g2: &MarginalPoint,
    ) -> Result<[f64; N], JointError> {
        if threshold >= 1.0 {
            return Ok([0.0; N]);
        }
        let cop = &self.copulas[i - 1];
        let rho = cop.rho;
        let s = cop.residual_scale();
        let mix = &self.marginals[i];
        let (zg1, zg2) = (g1.z, g2.z);
        let f = |x: f64| {
            let (c, sf) = mix.cdf_sf(x);
            let z = norm_quantile_tails(c, sf);
            let dens = x * mix.pdf(x);
            let a = (zg1 - rho * z) / s;
            let b = (zg2 - rho * z) / s;
            let mut out = [0.0; N];
            out[0] = dens * norm_interval(a, b);
            if N == 3 {
                out[1] = dens * norm_pdf(b);
                out[2] = dens * norm_pdf(a);
            }
            out
        };
        let r = integrate(
            f,
            threshold,
            1.0,
            QUAD_ABS_TOL,
            QUAD_REL_TOL,
            QUAD_MAX_INTERVALS,
        )?;
        Ok(r.value)
    }

    /// Draws `n` confidence vectors, calling `sink` on each.
    pub fn sample_joint_with<F: FnMut(&[f64])>(
        &self,
        n: usize,
        seed: u64,
        mut sink: F,
    ) -> Result<(), JointError> {
        if n == 0 {
            return Err(JointError::EmptySample);
        }
        let k = self.k();
        let tables: Vec<QuantileTable<'_>> = self
            .marginals
            .iter()
            .map(|m| QuantileTable::new(m, 1024))
            .collect();
        let scales: Vec<f64> = self.copulas.iter().map(|c| c.residual_scale()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut row = vec![0.0; k];
        const EDGE: f64 = 1e-15;
        for _ in 0..n {
            let mut z: f64 = StandardNormal.sample(&mut rng);
            for i in 0..k {
                if i > 0 {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    z = self.copulas[i - 1].rho * z + scales[i - 1] * e;
                }
                let x = tables[i].invert(norm_cdf(z), norm_cdf(-z));
                row[i] = x.clamp(EDGE, 1.0 - EDGE);
            }
            sink(&row);
        }
        Ok(())
    }

    pub fn sample_joint(&self, n: usize, seed: u64) -> Result<Vec<Vec<f64>>, JointError> {
        let mut out = Vec::with_capacity(n);
        self.sample_joint_with(n, seed, |r| out.push(r.to_vec()))?;
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointFitOptions {
    /// Fixed mixture size; `None` selects by BIC over `1..=max_components`.
    pub components: Option<usize>,
    pub max_components: usize,
    pub em: EmOptions,
}

impl Default for JointFitOptions {
    fn default() -> Self {
        Self {
            components: None,
            max_components: MAX_COMPONENTS,
            em: EmOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentDiagnostics {
    pub components: usize,
    pub log_likelihood: f64,
    pub bic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalDiagnostics {
    pub model: usize,
    pub selected_components: usize,
    pub candidates: Vec<ComponentDiagnostics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointFitReport {
    pub n: usize,
    pub marginals: Vec<MarginalDiagnostics>,
    pub kendall_tau: Vec<f64>,
}

/// Fits marginals by EM and each neighbouring copula on CDF-transformed
/// pseudo-observations. `rows` holds one confidence vector per query.
pub fn fit_markov_model(
    rows: &[Vec<f64>],
    opts: &JointFitOptions,
) -> Result<(MarkovJointModel, JointFitReport), JointError> {
    let k = rows
        .first()
        .map(|r| r.len())
        .ok_or(JointError::TooFewSamples { min: 1, got: 0 })?;
    if k == 0 {
        return Err(JointError::ShapeMismatch(
            "confidence vectors are empty".into(),
        ));
    }
    if let Some(bad) = rows.iter().position(|r| r.len() != k) {
        return Err(JointError::ShapeMismatch(format!(
            "row {bad} has {} entries, expected {k}",
            rows[bad].len()
        )));
    }
    let mut marginals = Vec::with_capacity(k);
    let mut diagnostics = Vec::with_capacity(k);
    for i in 0..k {
        let col: Vec<f64> = rows.iter().map(|r| r[i]).collect();
        let em = EmOptions {
            seed: opts.em.seed.wrapping_add(i as u64),
            ..opts.em
        };
        let (fits, best) = match opts.components {
            Some(m) => (vec![fit_beta_mixture(&col, m, &em)?], 0),
            None => select_beta_mixture(&col, opts.max_components, &em)?,
        };
        diagnostics.push(MarginalDiagnostics {
            model: i + 1,
            selected_components: fits[best].components,
            candidates: fits
                .iter()
                .map(|f| ComponentDiagnostics {
                    components: f.components,
                    log_likelihood: f.log_likelihood,
                    bic: f.bic,
                })
                .collect(),
        });
        marginals.push(fits[best].mixture.clone());
    }
    let mut copulas = Vec::with_capacity(k.saturating_sub(1));
    let mut taus = Vec::new();
    for i in 1..k {
        let pairs: Vec<(f64, f64)> = rows
            .iter()
            .map(|r| (marginals[i - 1].cdf(r[i - 1]), marginals[i].cdf(r[i])))
            .collect();
        let cop = fit_pair_copula(&pairs)?;
        taus.push(std::f64::consts::FRAC_2_PI * cop.rho.asin());
        copulas.push(cop);
    }
    let model = MarkovJointModel::new(marginals, copulas)?;
    Ok((
        model,
        JointFitReport {
            n: rows.len(),
            marginals: diagnostics,
            kendall_tau: taus,
        },
    ))
}
