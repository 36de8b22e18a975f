//! Globally adaptive Gauss–Kronrod (10/21 point) quadrature for small
//! vector-valued integrands.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use thiserror::Error;

#[allow(clippy::excessive_precision)]
const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];

#[allow(clippy::excessive_precision)]
const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_208_067_828_205,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];

// Gauss weights for the odd-indexed Kronrod nodes XGK[1], XGK[3], ...
#[allow(clippy::excessive_precision)]
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

#[derive(Debug, Clone, Copy)]
pub struct QuadResult<const N: usize> {
    pub value: [f64; N],
    /// Estimated absolute error, maximised over components.
    pub abs_error: f64,
    pub intervals: usize,
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum QuadError {
    #[error("quadrature did not converge after {intervals} subintervals (estimated error {abs_error:.3e})")]
    NotConverged { abs_error: f64, intervals: usize },
    #[error("integrand produced a non-finite value at x = {x}")]
    NonFinite { x: f64 },
}

struct Segment<const N: usize> {
    a: f64,
    b: f64,
    value: [f64; N],
    err: f64,
}

impl<const N: usize> PartialEq for Segment<N> {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err
    }
}
impl<const N: usize> Eq for Segment<N> {}
impl<const N: usize> PartialOrd for Segment<N> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<const N: usize> Ord for Segment<N> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.err.total_cmp(&other.err)
    }
}

fn gk21<const N: usize, F>(f: &mut F, a: f64, b: f64) -> Result<([f64; N], f64), QuadError>
where
    F: FnMut(f64) -> [f64; N],
{
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut kron = [0.0; N];
    let mut gauss = [0.0; N];
    let mut resabs = [0.0; N];
    let fc = f(center);
    for c in 0..N {
        if !fc[c].is_finite() {
            return Err(QuadError::NonFinite { x: center });
        }
        kron[c] = fc[c] * WGK[10];
        resabs[c] = fc[c].abs() * WGK[10];
    }
    let mut samples = [[0.0; N]; 21];
    samples[20] = fc;
    for j in 0..10 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        for c in 0..N {
            if !f1[c].is_finite() {
                return Err(QuadError::NonFinite { x: center - dx });
            }
            if !f2[c].is_finite() {
                return Err(QuadError::NonFinite { x: center + dx });
            }
            kron[c] += WGK[j] * (f1[c] + f2[c]);
            resabs[c] += WGK[j] * (f1[c].abs() + f2[c].abs());
            if j % 2 == 1 {
                gauss[c] += WG[j / 2] * (f1[c] + f2[c]);
            }
        }
        samples[2 * j] = f1;
        samples[2 * j + 1] = f2;
    }
    let mut err = 0.0f64;
    for c in 0..N {
        let mean = kron[c] * 0.5;
        let mut resasc = WGK[10] * (fc[c] - mean).abs();
        for j in 0..10 {
            resasc +=
                WGK[j] * ((samples[2 * j][c] - mean).abs() + (samples[2 * j + 1][c] - mean).abs());
        }
        resasc *= half.abs();
        let mut e = ((kron[c] - gauss[c]) * half).abs();
        if resasc != 0.0 && e != 0.0 {
            e = resasc * (200.0 * e / resasc).powf(1.5).min(1.0);
        }
        let resabs_c = resabs[c] * half.abs();
        if resabs_c > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
            e = e.max(50.0 * f64::EPSILON * resabs_c);
        }
        err = err.max(e);
        kron[c] *= half;
    }
    Ok((kron, err))
}

/// Integrates `f` over `[a, b]` until the estimated absolute error is at most
/// `max(abs_tol, rel_tol * |I|)` for every component.
pub fn integrate<const N: usize, F>(
    mut f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_intervals: usize,
) -> Result<QuadResult<N>, QuadError>
where
    F: FnMut(f64) -> [f64; N],
{
    if a == b {
        return Ok(QuadResult {
            value: [0.0; N],
            abs_error: 0.0,
            intervals: 0,
        });
    }
    let (value, err) = gk21(&mut f, a, b)?;
    let mut heap = BinaryHeap::new();
    heap.push(Segment { a, b, value, err });
    let mut total = value;
    let mut total_err = err;
    loop {
        let tol = total
            .iter()
            .fold(abs_tol, |acc, v| acc.max(rel_tol * v.abs()));
        if total_err <= tol {
            break;
        }
        if heap.len() >= max_intervals {
            return Err(QuadError::NotConverged {
                abs_error: total_err,
                intervals: heap.len(),
            });
        }
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // interval cannot be split further in floating point
            return Err(QuadError::NotConverged {
                abs_error: total_err,
                intervals: heap.len() + 1,
            });
        }
        let (v1, e1) = gk21(&mut f, worst.a, mid)?;
        let (v2, e2) = gk21(&mut f, mid, worst.b)?;
        for c in 0..N {
            total[c] += v1[c] + v2[c] - worst.value[c];
        }
        total_err += e1 + e2 - worst.err;
        heap.push(Segment {
            a: worst.a,
            b: mid,
            value: v1,
            err: e1,
        });
        heap.push(Segment {
            a: mid,
            b: worst.b,
            value: v2,
            err: e2,
        });
        if heap.len() % 16 == 0 {
            // periodic exact re-sum of the running totals
            total = [0.0; N];
            total_err = 0.0;
            for s in heap.iter() {
                for (t, v) in total.iter_mut().zip(&s.value) {
                    *t += v;
                }
                total_err += s.err;
            }
        }
    }
    // final summation in interval order
    let mut segs: Vec<&Segment<N>> = heap.iter().collect();
    segs.sort_by(|x, y| x.a.total_cmp(&y.a));
    let mut value = [0.0; N];
    let mut abs_error = 0.0;
    for s in &segs {
        for (t, v) in value.iter_mut().zip(&s.value) {
            *t += v;
        }
        abs_error += s.err;
    }
    Ok(QuadResult {
        value,
        abs_error,
        intervals: segs.len(),
    })
}
