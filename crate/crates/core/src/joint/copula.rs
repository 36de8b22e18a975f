//! Bivariate Gaussian copula linking neighbouring confidence scores.

use serde::{Deserialize, Serialize};

use super::JointError;
use crate::special::{bvn_cdf, norm_cdf, norm_quantile};

pub const RHO_CLAMP: f64 = 0.999;
pub const MIN_COPULA_PAIRS: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CopulaFamily {
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PairCopulaRepr")]
pub struct PairCopula {
    pub family: CopulaFamily,
    pub rho: f64,
}

#[derive(Deserialize)]
struct PairCopulaRepr {
    family: CopulaFamily,
    rho: f64,
}

impl TryFrom<PairCopulaRepr> for PairCopula {
    type Error = JointError;
    fn try_from(r: PairCopulaRepr) -> Result<Self, JointError> {
        let c = PairCopula::gaussian(r.rho)?;
        Ok(PairCopula {
            family: r.family,
            ..c
        })
    }
}

impl PairCopula {
    pub fn gaussian(rho: f64) -> Result<Self, JointError> {
        if rho.abs().partial_cmp(&1.0) != Some(std::cmp::Ordering::Less) {
            return Err(JointError::InvalidCorrelation(rho));
        }
        Ok(Self {
            family: CopulaFamily::Gaussian,
            rho,
        })
    }

    #[inline]
    pub fn residual_scale(&self) -> f64 {
        (1.0 - self.rho * self.rho).sqrt()
    }

    /// `C(u, v)`.
    pub fn cdf(&self, u: f64, v: f64) -> f64 {
        if u <= 0.0 || v <= 0.0 {
            return 0.0;
        }
        if u >= 1.0 {
            return v.min(1.0);
        }
        if v >= 1.0 {
            return u;
        }
        bvn_cdf(norm_quantile(u), norm_quantile(v), self.rho)
    }

    /// Rectangle mass on normal scores: `P(a₁ ≤ Z₁ ≤ a₂, b₁ ≤ Z₂ ≤ b₂)`.
    pub fn rectangle_z(&self, a1: f64, a2: f64, b1: f64, b2: f64) -> f64 {
        let r = self.rho;
        let p = bvn_cdf(a2, b2, r) - bvn_cdf(a1, b2, r) - bvn_cdf(a2, b1, r) + bvn_cdf(a1, b1, r);
        p.clamp(0.0, 1.0)
    }

    /// `P(V ≤ v | U = u)` in normal scores.
    #[inline]
    pub fn conditional_cdf_z(&self, z_v: f64, z_u: f64) -> f64 {
        norm_cdf((z_v - self.rho * z_u) / self.residual_scale())
    }
}

/// Merge sort that counts inversions.
fn count_swaps(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = {
        let (l, r) = v.split_at_mut(mid);
        let (bl, br) = buf.split_at_mut(mid);
        count_swaps(l, bl) + count_swaps(r, br)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

fn tie_pairs(sorted: &[f64]) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Kendall's tau-b in O(n log n) (Knight's algorithm).
pub fn kendall_tau(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    assert_eq!(n, y.len());
    if n < 2 {
        return None;
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));
    let xs: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
    let mut ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();

    let x_ties = tie_pairs(&xs);
    let mut joint_ties = 0u64;
    let mut run = 1u64;
    for i in 1..n {
        if xs[i] == xs[i - 1] && ys[i] == ys[i - 1] {
            run += 1;
        } else {
            joint_ties += run * (run - 1) / 2;
            run = 1;
        }
    }
    joint_ties += run * (run - 1) / 2;

    let mut buf = vec![0.0; n];
    let swaps = count_swaps(&mut ys, &mut buf);
    let y_ties = tie_pairs(&ys);
    let total = (n as u64) * (n as u64 - 1) / 2;
    let denom = ((total - x_ties) as f64 * (total - y_ties) as f64).sqrt();
    if denom == 0.0 {
        return None;
    }
    let numer =
        total as f64 - x_ties as f64 - y_ties as f64 + joint_ties as f64 - 2.0 * swaps as f64;
    Some(numer / denom)
}

/// Gaussian copula fit by inverting Kendall's tau: `ρ = sin(π τ / 2)`.
pub fn fit_pair_copula(pairs: &[(f64, f64)]) -> Result<PairCopula, JointError> {
    if pairs.len() < MIN_COPULA_PAIRS {
        return Err(JointError::TooFewSamples {
            min: MIN_COPULA_PAIRS,
            got: pairs.len(),
        });
    }
    let (u, v): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
    let constant = |s: &[f64]| s.iter().all(|&x| x == s[0]);
    if constant(&u) || constant(&v) {
        return Err(JointError::DegenerateMargin);
    }
    let tau = kendall_tau(&u, &v).ok_or(JointError::DegenerateMargin)?;
    let rho = (std::f64::consts::FRAC_PI_2 * tau)
        .sin()
        .clamp(-RHO_CLAMP, RHO_CLAMP);
    PairCopula::gaussian(rho)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn brute_tau_b(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len();
        let (mut c, mut d, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
        for i in 0..n {
            for j in i + 1..n {
                let sx = (x[i] - x[j]).signum() as i64 * (x[i] != x[j]) as i64;
                let sy = (y[i] - y[j]).signum() as i64 * (y[i] != y[j]) as i64;
                if sx == 0 && sy == 0 {
                    continue;
                }
                if sx == 0 {
                    tx += 1;
                } else if sy == 0 {
                    ty += 1;
                } else if sx == sy {
                    c += 1;
                } else {
                    d += 1;
                }
            }
        }
        (c - d) as f64 / (((c + d + tx) as f64) * ((c + d + ty) as f64)).sqrt()
    }

    #[test]
    fn kendall_matches_brute_force_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for trial in 0..20 {
            let n = 5 + trial * 7;
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64).collect();
            let y: Vec<f64> = x
                .iter()
                .map(|v| v + rng.random_range(0..4) as f64)
                .collect();
            let fast = kendall_tau(&x, &y).unwrap();
            assert!((fast - brute_tau_b(&x, &y)).abs() < 1e-12, "trial {trial}");
        }
    }

    #[test]
    fn independent_pairs_give_small_rho() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pairs: Vec<(f64, f64)> = (0..10_000).map(|_| (rng.random(), rng.random())).collect();
        assert!(fit_pair_copula(&pairs).unwrap().rho.abs() <= 0.05);
    }

    #[test]
    fn comonotone_pairs_clamp() {
        let pairs: Vec<(f64, f64)> = (1..100)
            .map(|i| (i as f64 / 100.0, i as f64 / 100.0))
            .collect();
        assert_eq!(fit_pair_copula(&pairs).unwrap().rho, RHO_CLAMP);
    }

    #[test]
    fn gaussian_sample_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rho: f64 = 0.7;
        let s = (1.0 - rho * rho).sqrt();
        let pairs: Vec<(f64, f64)> = (0..10_000)
            .map(|_| {
                let a: f64 = rng.sample(StandardNormal);
                let b: f64 = rng.sample(StandardNormal);
                (norm_cdf(a), norm_cdf(rho * a + s * b))
            })
            .collect();
        let est = fit_pair_copula(&pairs).unwrap().rho;
        assert!((est - 0.7).abs() <= 0.04, "{est}");
    }

    #[test]
    fn degenerate_margin_rejected() {
        let pairs: Vec<(f64, f64)> = (0..40).map(|i| (0.5, i as f64 / 40.0)).collect();
        assert_eq!(fit_pair_copula(&pairs), Err(JointError::DegenerateMargin));
    }

    #[test]
    fn copula_has_uniform_margins() {
        let c = PairCopula::gaussian(0.6).unwrap();
        for &u in &[0.1, 0.5, 0.9] {
            assert!((c.cdf(u, 1.0) - u).abs() < 1e-15);
            assert!(
                (c.cdf(1.0 - 1e-15, u) - u).abs() < 1e-12,
                "{u} {}",
                c.cdf(1.0 - 1e-15, u)
            );
        }
        let ind = PairCopula::gaussian(0.0).unwrap();
        assert!((ind.cdf(0.3, 0.6) - 0.18).abs() < 1e-14);
    }
}
