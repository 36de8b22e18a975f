//! Scalar special functions: standard normal helpers, the trigamma function
//! and the bivariate normal CDF.

use statrs::function::erf::{erfc, erfc_inv};
use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

/// Largest magnitude returned by [`norm_quantile`]. Keeps `rho * z` finite
/// when a probability rounds to exactly 0 or 1.
pub const Z_CAP: f64 = 38.0;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    if x == f64::INFINITY {
        return 1.0;
    }
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal quantile, clamped to `[-Z_CAP, Z_CAP]`.
#[inline]
pub fn norm_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return -Z_CAP;
    }
    if p >= 1.0 {
        return Z_CAP;
    }
    if p > 0.5 {
        return -norm_quantile(1.0 - p);
    }
    let z = -SQRT_2 * erfc_inv(2.0 * p);
    if z < -Z_CAP {
        return -Z_CAP;
    }
    // one Halley step on the lower tail
    let d = norm_pdf(z);
    if d == 0.0 {
        return z;
    }
    let e = (norm_cdf(z) - p) / d;
    (z - e / (1.0 + 0.5 * z * e)).clamp(-Z_CAP, Z_CAP)
}

/// Normal quantile from a (cdf, survival) pair, using whichever tail is
/// represented more accurately.
#[inline]
pub fn norm_quantile_tails(cdf: f64, sf: f64) -> f64 {
    if cdf <= sf {
        norm_quantile(cdf)
    } else {
        -norm_quantile(sf)
    }
}

/// Trigamma function ψ₁(x) for x > 0.
pub fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    // asymptotic series with Bernoulli-number coefficients
    let series = inv
        + 0.5 * inv2
        + inv
            * inv2
            * (1.0 / 6.0
                + inv2
                    * (-1.0 / 30.0
                        + inv2 * (1.0 / 42.0 + inv2 * (-1.0 / 30.0 + inv2 * 5.0 / 66.0))));
    acc + series
}

#[allow(clippy::excessive_precision)]
const GL_W6: [f64; 3] = [
    0.171_324_492_379_170_5,
    0.360_761_573_048_138_4,
    0.467_913_934_572_690_4,
];
#[allow(clippy::excessive_precision)]
const GL_X6: [f64; 3] = [
    0.932_469_514_203_152_2,
    0.661_209_386_466_264_7,
    0.238_619_186_083_197_0,
];
#[allow(clippy::excessive_precision)]
const GL_W12: [f64; 6] = [
    0.047_175_336_386_511_77,
    0.106_939_325_995_318_3,
    0.160_078_328_543_346_4,
    0.203_167_426_723_065_9,
    0.233_492_536_538_354_7,
    0.249_147_045_813_402_9,
];
#[allow(clippy::excessive_precision)]
const GL_X12: [f64; 6] = [
    0.981_560_634_246_719_1,
    0.904_117_256_370_475_0,
    0.769_902_674_194_305_0,
    0.587_317_954_286_617_1,
    0.367_831_498_998_180_2,
    0.125_233_408_511_469_2,
];
#[allow(clippy::excessive_precision)]
const GL_W20: [f64; 10] = [
    0.017_614_007_139_152_12,
    0.040_601_429_800_386_94,
    0.062_672_048_334_109_06,
    0.083_276_741_576_704_75,
    0.101_930_119_817_240_4,
    0.118_194_531_961_518_4,
    0.131_688_638_449_176_6,
    0.142_096_109_318_382_1,
    0.149_172_986_472_603_7,
    0.152_753_387_130_725_9,
];
#[allow(clippy::excessive_precision)]
const GL_X20: [f64; 10] = [
    0.993_128_599_185_094_9,
    0.963_971_927_277_913_8,
    0.912_234_428_251_325_9,
    0.839_116_971_822_218_8,
    0.746_331_906_460_150_8,
    0.636_053_680_726_515_0,
    0.510_867_001_950_827_1,
    0.373_706_088_715_419_6,
    0.227_785_851_141_645_1,
    0.076_526_521_133_497_33,
];

/// Upper bivariate normal probability P(X > h, Y > k) for standard normals
/// with correlation `r` (Genz's BVNU, absolute error around 1e-15).
pub fn bvn_upper(h: f64, k: f64, r: f64) -> f64 {
    if h == f64::INFINITY || k == f64::INFINITY {
        return 0.0;
    }
    if h == f64::NEG_INFINITY {
        return if k == f64::NEG_INFINITY {
            1.0
        } else {
            norm_cdf(-k)
        };
    }
    if k == f64::NEG_INFINITY {
        return norm_cdf(-h);
    }
    if r == 0.0 {
        return norm_cdf(-h) * norm_cdf(-k);
    }
    let (w, x): (&[f64], &[f64]) = if r.abs() < 0.3 {
        (&GL_W6, &GL_X6)
    } else if r.abs() < 0.75 {
        (&GL_W12, &GL_X12)
    } else {
        (&GL_W20, &GL_X20)
    };
    let tp = 2.0 * PI;
    let mut k = k;
    let mut hk = h * k;
    let mut bvn = 0.0;
    if r.abs() < 0.925 {
        let hs = (h * h + k * k) / 2.0;
        let asr = r.asin() / 2.0;
        for (&wi, &xi) in w.iter().zip(x) {
            for node in [1.0 - xi, 1.0 + xi] {
                let sn = (asr * node).sin();
                bvn += wi * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
            }
        }
        bvn = bvn * asr / tp + norm_cdf(-h) * norm_cdf(-k);
    } else {
        if r < 0.0 {
            k = -k;
            hk = -hk;
        }
        if r.abs() < 1.0 {
            let as_ = 1.0 - r * r;
            let mut a = as_.sqrt();
            let bs = (h - k) * (h - k);
            let asr = -(bs / as_ + hk) / 2.0;
            let c = (4.0 - hk) / 8.0;
            let d = (12.0 - hk) / 80.0;
            if asr > -100.0 {
                bvn = a
                    * asr.exp()
                    * (1.0 - c * (bs - as_) * (1.0 - d * bs) / 3.0 + c * d * as_ * as_);
            }
            if hk > -100.0 {
                let b = bs.sqrt();
                let sp = tp.sqrt() * norm_cdf(-b / a);
                bvn -= (-hk / 2.0).exp() * sp * b * (1.0 - c * bs * (1.0 - d * bs) / 3.0);
            }
            a /= 2.0;
            let mut acc = 0.0;
            for (&wi, &xi) in w.iter().zip(x) {
                for node in [1.0 - xi, 1.0 + xi] {
                    let xs = (a * node) * (a * node);
                    let asr = -(bs / xs + hk) / 2.0;
                    if asr > -100.0 {
                        let sp = 1.0 + c * xs * (1.0 + 5.0 * d * xs);
                        let rs = (1.0 - xs).sqrt();
                        let ep = (-(hk / 2.0) * xs / ((1.0 + rs) * (1.0 + rs))).exp() / rs;
                        acc += wi * asr.exp() * (sp - ep);
                    }
                }
            }
            bvn = (a * acc - bvn) / tp;
        }
        if r > 0.0 {
            bvn += norm_cdf(-h.max(k));
        } else if h >= k {
            bvn = -bvn;
        } else {
            let l = if h < 0.0 {
                norm_cdf(k) - norm_cdf(h)
            } else {
                norm_cdf(-h) - norm_cdf(-k)
            };
            bvn = l - bvn;
        }
    }
    bvn.clamp(0.0, 1.0)
}

/// Bivariate normal CDF P(X ≤ h, Y ≤ k) with correlation `r`.
#[inline]
pub fn bvn_cdf(h: f64, k: f64, r: f64) -> f64 {
    bvn_upper(-h, -k, r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::integrate;

    // Independent route: Φ₂(h,k;r) = ∫_{-∞}^{h} φ(x) Φ((k − r x)/√(1−r²)) dx.
    fn bvn_by_quadrature(h: f64, k: f64, r: f64) -> f64 {
        let s = (1.0 - r * r).sqrt();
        let lo = -12.0;
        if h <= lo {
            return 0.0;
        }
        integrate(
            |x| [norm_pdf(x) * norm_cdf((k - r * x) / s)],
            lo,
            h,
            1e-15,
            1e-13,
            500,
        )
        .unwrap()
        .value[0]
    }

    #[test]
    fn bvn_matches_one_dimensional_quadrature() {
        let hs = [-2.5, -1.0, -0.1, 0.0, 0.4, 1.3, 3.0];
        let rs = [-0.999, -0.95, -0.6, -0.2, 0.1, 0.5, 0.8, 0.93, 0.999];
        for &h in &hs {
            for &k in &hs {
                for &r in &rs {
                    let a = bvn_cdf(h, k, r);
                    let b = bvn_by_quadrature(h, k, r);
                    assert!((a - b).abs() < 1e-10, "h={h} k={k} r={r}: {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn bvn_limits() {
        assert_eq!(bvn_cdf(f64::INFINITY, 0.3, 0.5), norm_cdf(0.3));
        assert_eq!(bvn_cdf(f64::NEG_INFINITY, 0.3, 0.5), 0.0);
        assert!((bvn_cdf(0.0, 0.0, 0.0) - 0.25).abs() < 1e-15);
        // P(X<0,Y<0) = 1/4 + asin(r)/(2π)
        let r: f64 = 0.7;
        assert!((bvn_cdf(0.0, 0.0, r) - (0.25 + r.asin() / (2.0 * PI))).abs() < 1e-14);
    }

    #[test]
    fn trigamma_known_values() {
        assert!((trigamma(1.0) - PI * PI / 6.0).abs() < 1e-12);
        assert!((trigamma(0.5) - PI * PI / 2.0).abs() < 1e-11);
        assert!((trigamma(10.0) - 0.105_166_335_681_685_3).abs() < 1e-12);
    }

    #[test]
    fn quantile_inverts_cdf() {
        for &p in &[1e-12, 1e-5, 0.01, 0.3, 0.5, 0.77, 0.999] {
            assert!((norm_cdf(norm_quantile(p)) - p).abs() < 1e-13 * p.max(1e-3) * 1e3);
        }
        assert_eq!(norm_quantile(0.0), -Z_CAP);
        assert!((norm_quantile_tails(1.0, 1e-10) - 6.361_340_902_404_056).abs() < 1e-8);
    }
}
