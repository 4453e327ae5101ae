//! Closed-form and exact oracles: Brownian exit probabilities, the Rayleigh
//! law, the Gaussian error function and an exact DP for the lattice walk.
//!
//! `erf`/`erfc` use W. J. Cody's rational Chebyshev approximations
//! (Math. Comp. 23, 1969), three ranges split at |x| = 0.46875 and 4. The
//! coefficient tables below are the published ones. Measured error against
//! 40-digit references: 2.2e-16 absolute for erf, 4e-16 relative for erfc.

use std::fmt::Write as _;

use crate::error::{LabError, Result};

const A: [f64; 5] = [
    3.16112374387056560e00,
    1.13864154151050156e02,
    3.77485237685302021e02,
    3.20937758913846947e03,
    1.85777706184603153e-1,
];
const B: [f64; 4] = [2.36012909523441209e01, 2.44024637934444173e02, 1.28261652607737228e03, 2.84423683343917062e03];
const C: [f64; 9] = [
    5.64188496988670089e-1,
    8.88314979438837594e00,
    6.61191906371416295e01,
    2.98635138197400131e02,
    8.81952221241769090e02,
    1.71204761263407058e03,
    2.05107837782607147e03,
    1.23033935479799725e03,
    2.15311535474403846e-8,
];
const D: [f64; 8] = [
    1.57449261107098347e01,
    1.17693950891312499e02,
    5.37181101862009858e02,
    1.62138957456669019e03,
    3.29079923573345963e03,
    4.36261909014324716e03,
    3.43936767414372164e03,
    1.23033935480374942e03,
];
const P: [f64; 6] = [
    3.05326634961232344e-1,
    3.60344899949804439e-1,
    1.25781726111229246e-1,
    1.60837851487422766e-2,
    6.58749161529837803e-4,
    1.63153871373020978e-2,
];
const Q: [f64; 5] = [
    2.56852019228982242e00,
    1.87295284992346725e00,
    5.27905102951428412e-1,
    6.05183413124413191e-2,
    2.33520497626869185e-3,
];
const SQRPI: f64 = 5.6418958354775628695e-1;
const XSMALL: f64 = 1.11e-16;
const XBIG: f64 = 26.543;

/// erf on |x| ≤ 0.46875.
fn erf_small(x: f64) -> f64 {
    let y = x.abs();
    let ysq = if y > XSMALL { y * y } else { 0.0 };
    let mut num = A[4] * ysq;
    let mut den = ysq;
    for i in 0..3 {
        num = (num + A[i]) * ysq;
        den = (den + B[i]) * ysq;
    }
    x * (num + A[3]) / (den + B[3])
}

/// erfc(y) for y > 0.46875.
fn erfc_large(y: f64) -> f64 {
    let r = if y <= 4.0 {
        let mut num = C[8] * y;
        let mut den = y;
        for i in 0..7 {
            num = (num + C[i]) * y;
            den = (den + D[i]) * y;
        }
        (num + C[7]) / (den + D[7])
    } else {
        if y >= XBIG {
            return 0.0;
        }
        let ysq = 1.0 / (y * y);
        let mut num = P[5] * ysq;
        let mut den = ysq;
        for i in 0..4 {
            num = (num + P[i]) * ysq;
            den = (den + Q[i]) * ysq;
        }
        let r = ysq * (num + P[4]) / (den + Q[4]);
        (SQRPI - r) / y
    };
    // exp(−y²) split as exp(−ysq²)·exp(−(y−ysq)(y+ysq)) keeps the argument exact
    let ysq = (y * 16.0).trunc() / 16.0;
    let del = (y - ysq) * (y + ysq);
    (-ysq * ysq).exp() * (-del).exp() * r
}

pub fn erf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    let y = x.abs();
    if y <= 0.46875 {
        return erf_small(x);
    }
    let v = (0.5 - erfc_large(y)) + 0.5;
    if x < 0.0 {
        -v
    } else {
        v
    }
}

pub fn erfc(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    let y = x.abs();
    if y <= 0.46875 {
        return 1.0 - erf_small(x);
    }
    let r = erfc_large(y);
    if x < 0.0 {
        2.0 - r
    } else {
        r
    }
}

/// Standard normal CDF Φ.
pub fn normal_cdf(x: f64) -> f64 {
    if x == f64::INFINITY {
        return 1.0;
    }
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && !v.is_nan() {
        Ok(())
    } else {
        Err(LabError::InvalidInput(format!("{name} must be positive, got {v}")))
    }
}

/// P(τ_y > n) for y + σB, i.e. erf(y / (σ√(2n))).
pub fn bm_exit_tail(y: f64, n: f64, sigma: f64) -> Result<f64> {
    check_positive("y", y)?;
    check_positive("n", n)?;
    check_positive("sigma", sigma)?;
    Ok(erf(y / (sigma * (2.0 * n).sqrt())))
}

/// P(τ_y > n, y + σB_n ∈ [a, b]) by the reflection principle. `a < 0` is
/// clipped to 0 and `b` may be infinite.
pub fn bm_exit_band(y: f64, n: f64, a: f64, b: f64, sigma: f64) -> Result<f64> {
    check_positive("y", y)?;
    check_positive("n", n)?;
    check_positive("sigma", sigma)?;
    let a = a.max(0.0);
    if !(b >= a) {
        return Err(LabError::InvalidInput(format!("band needs a ≤ b, got [{a}, {b}]")));
    }
    if a == b {
        return Ok(0.0);
    }
    let s = sigma * n.sqrt();
    let direct = normal_cdf((b - y) / s) - normal_cdf((a - y) / s);
    let mirror = normal_cdf((b + y) / s) - normal_cdf((a + y) / s);
    Ok((direct - mirror).max(0.0))
}

/// Φ⁺(t) = 1 − e^{−t²/2} for t ≥ 0, else 0.
pub fn rayleigh_cdf(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        -(-0.5 * t * t).exp_m1()
    }
}

/// Kolmogorov distance between a discrete law `(atom, mass)` (sorted by
/// atom, masses summing to 1) and a continuous CDF.
pub fn ks_distance_pmf(pmf: &[(f64, f64)], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut below = 0.0;
    let mut d: f64 = 0.0;
    for &(x, p) in pmf {
        let f = cdf(x);
        let above = below + p;
        d = d.max((f - below).abs()).max((above - f).abs());
        below = above;
    }
    d
}

/// The fair ±1 lattice walk started at level `start_level`, killed at ≤ 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeWalkSpec {
    pub start_level: u64,
    /// Physical step size (ln 2 for the coin law).
    pub step_log: f64,
    pub horizon: usize,
}

pub const MAX_DP_HORIZON: usize = 1 << 14;

#[derive(Debug, Clone, PartialEq)]
pub struct LatticeExit {
    /// `tail[n]` = P(τ > n) for n = 0..=horizon.
    pub tail: Vec<f64>,
    /// Level distribution at the horizon among survivors, normalized to 1.
    pub conditional_pmf: Vec<(u64, f64)>,
}

impl LatticeExit {
    /// CSV with columns `n,tail`.
    pub fn tail_csv(&self) -> String {
        let mut out = String::from("n,tail\n");
        for (n, t) in self.tail.iter().enumerate() {
            let _ = writeln!(out, "{n},{t:.17e}");
        }
        out
    }

    /// CSV with columns `level,prob`.
    pub fn pmf_csv(&self) -> String {
        let mut out = String::from("level,prob\n");
        for (l, p) in &self.conditional_pmf {
            let _ = writeln!(out, "{l},{p:.17e}");
        }
        out
    }
}

/// Exact forward recursion p_{n+1}(ℓ) = ½p_n(ℓ−1) + ½p_n(ℓ+1) on ℓ ≥ 1.
pub fn srw_exit_dp(spec: &LatticeWalkSpec) -> Result<LatticeExit> {
    if spec.start_level == 0 || spec.horizon == 0 {
        return Err(LabError::InvalidInput("start level and horizon must be ≥ 1".into()));
    }
    if spec.horizon > MAX_DP_HORIZON {
        return Err(LabError::InvalidInput(format!("horizon above {MAX_DP_HORIZON}")));
    }
    let k = spec.start_level as usize;
    let n = spec.horizon;
    let top = k + n + 1;
    let mut p = vec![0.0; top + 1];
    let mut next = vec![0.0; top + 1];
    p[k] = 1.0;
    let mut killed = 0.0;
    let mut tail = Vec::with_capacity(n + 1);
    tail.push(1.0);
    for step in 1..=n {
        // reachable levels before this step: [k − (step−1), k + (step−1)]
        let lo = k.saturating_sub(step).max(1);
        let hi = k + step;
        let p_one_before = p[1];
        killed += 0.5 * p[1];
        next[lo - 1] = 0.0;
        for l in lo..=hi {
            next[l] = 0.5 * (if l >= 2 { p[l - 1] } else { 0.0 }) + 0.5 * p[l + 1];
        }
        std::mem::swap(&mut p, &mut next);
        let alive: f64 = p[lo..=hi].iter().sum();
        let drift = (alive + killed - 1.0).abs();
        if drift > 1e-12 {
            return Err(LabError::MassDrift { step, drift });
        }
        // with nothing killed the tail is unchanged exactly
        tail.push(if p_one_before == 0.0 { tail[step - 1] } else { alive });
    }
    let alive = tail[n];
    let conditional_pmf = (1..=k + n).filter(|&l| p[l] > 0.0).map(|l| (l as u64, p[l] / alive)).collect();
    Ok(LatticeExit { tail, conditional_pmf })
}

#[cfg(test)]
mod tests {
    use super::*;

    // 40-digit values (mpmath) for x, erf(x), erfc(x)
    const ERF_TABLE: [(f64, f64, f64); 11] = [
        (0.1, 0.1124629160182848922, 0.8875370839817151078),
        (0.46875, 0.49261347321793799159, 0.50738652678206200841),
        (0.5, 0.52049987781304653768, 0.47950012218695346232),
        (1.0, 0.84270079294971486934, 0.15729920705028513066),
        (2.0, 0.99532226501895273416, 0.0046777349810472658379),
        (2.282, 0.998750073933265882956128490126, 1.24992606673411704e-3),
        (2.709, 0.999872430714928582665604613616, 1.27569285071417334e-4),
        (3.5, 0.99999925690162765859, 7.4309837234141274552e-7),
        (4.0, 0.99999998458274209972, 1.5417257900280018852e-8),
        (5.0, 0.99999999999846254021, 1.5374597944280348502e-12),
        (8.0, 1.0, 1.122429717298292708e-29),
    ];

    #[test]
    fn erf_matches_high_precision_table() {
        for &(x, e, c) in &ERF_TABLE {
            assert!((erf(x) - e).abs() < 1e-15, "erf({x})");
            assert!((erf(-x) + e).abs() < 1e-15, "erf(-{x})");
            assert!((erfc(x) - c).abs() <= 1e-14 * c, "erfc({x}) = {} vs {c}", erfc(x));
            assert!((erfc(-x) - (2.0 - c)).abs() < 1e-15);
        }
    }

    #[test]
    fn erf_agrees_with_libm_on_a_sweep() {
        for i in 0..=20_000 {
            let x = -7.0 + 14.0 * i as f64 / 20_000.0;
            let (e, c) = (libm::erf(x), libm::erfc(x));
            assert!((erf(x) - e).abs() < 1e-15, "x = {x}: {} vs {e}", erf(x));
            assert!((erfc(x) - c).abs() <= 1e-14 * c, "x = {x}: {} vs {c}", erfc(x));
        }
    }

    #[test]
    fn normal_cdf_values() {
        assert!((normal_cdf(-3.0) - 0.0013498980316300945267).abs() < 1e-17);
        assert!((normal_cdf(1.5) - 0.933192798731141934).abs() < 1e-15);
        assert_eq!(normal_cdf(f64::INFINITY), 1.0);
        assert_eq!(normal_cdf(0.0), 0.5);
    }

    #[test]
    fn bm_tail_examples() {
        let (sigma, n) = (0.8, 400.0);
        let s = sigma * f64::sqrt(n);
        assert!(bm_exit_tail(100.0 * s, n, sigma).unwrap() > 1.0 - 1e-10);
        // 2Φ(1) − 1
        assert!((bm_exit_tail(s, n, sigma).unwrap() - 0.68268949213708589717).abs() < 1e-12);
        let y = 1e-6;
        let slope = 2.0 * y / (sigma * (std::f64::consts::TAU * n).sqrt());
        assert!((bm_exit_tail(y, n, sigma).unwrap() / slope - 1.0).abs() < 1e-9);
        assert!(bm_exit_tail(0.0, n, sigma).is_err());
        assert!(bm_exit_tail(1.0, n, -1.0).is_err());
    }

    #[test]
    fn bm_band_examples() {
        let (sigma, n, y) = (1.3, 50.0, 2.0);
        let s = sigma * f64::sqrt(n);
        let tail = bm_exit_tail(y, n, sigma).unwrap();
        let inf = bm_exit_band(y, n, 0.0, f64::INFINITY, sigma).unwrap();
        assert!((inf - tail).abs() < 1e-9);
        let wide = bm_exit_band(y, n, 0.0, 50.0 * s, sigma).unwrap();
        assert!((wide - tail).abs() < 1e-9);
        let big = 1e3 * s;
        let band = bm_exit_band(big, n, big - s, big + s, sigma).unwrap();
        assert!((band - 0.68268949213708589717).abs() < 1e-10);
        assert_eq!(bm_exit_band(y, n, 1.0, 1.0, sigma).unwrap(), 0.0);
        let clipped = bm_exit_band(y, n, -5.0, 3.0, sigma).unwrap();
        assert_eq!(clipped, bm_exit_band(y, n, 0.0, 3.0, sigma).unwrap());
        assert!(bm_exit_band(y, n, 3.0, 1.0, sigma).is_err());
    }

    #[test]
    fn band_integrates_the_reflected_density() {
        // midpoint rule on e^{−(s−y)²/2v} − e^{−(s+y)²/2v}
        let (sigma, n, y, a, b) = (0.9, 10.0, 1.5, 0.5, 4.0);
        let v = sigma * sigma * n;
        let m = 20_000;
        let h = (b - a) / m as f64;
        let integral: f64 = (0..m)
            .map(|i| {
                let s = a + (i as f64 + 0.5) * h;
                ((-(s - y).powi(2) / (2.0 * v)).exp() - (-(s + y).powi(2) / (2.0 * v)).exp()) * h
            })
            .sum::<f64>()
            / (std::f64::consts::TAU * v).sqrt();
        assert!((bm_exit_band(y, n, a, b, sigma).unwrap() - integral).abs() < 1e-9);
    }

    #[test]
    fn rayleigh_examples() {
        assert_eq!(rayleigh_cdf(0.0), 0.0);
        assert_eq!(rayleigh_cdf(-1.0), 0.0);
        assert!((rayleigh_cdf((2.0 * 2f64.ln()).sqrt()) - 0.5).abs() < 1e-15);
        assert!(rayleigh_cdf(40.0) == 1.0);
    }

    fn dp(k: u64, horizon: usize) -> LatticeExit {
        srw_exit_dp(&LatticeWalkSpec { start_level: k, step_log: 2f64.ln(), horizon }).unwrap()
    }

    #[test]
    fn dp_small_cases() {
        let out = dp(1, 3);
        assert_eq!(out.tail, vec![1.0, 0.5, 0.5, 0.375]);
        assert_eq!(dp(1, 1).conditional_pmf, vec![(2, 1.0)]);
        assert!(dp(7, 6).tail.iter().all(|&t| t == 1.0));
        assert!(srw_exit_dp(&LatticeWalkSpec { start_level: 0, step_log: 1.0, horizon: 3 }).is_err());
        assert!(srw_exit_dp(&LatticeWalkSpec { start_level: 1, step_log: 1.0, horizon: 0 }).is_err());
    }

    #[test]
    fn dp_matches_enumeration() {
        // all 2^n sign sequences, k = 3, n = 12
        let (k, n) = (3i64, 12usize);
        let mut alive = vec![0u64; n + 1];
        for bits in 0u32..(1 << n) {
            let mut level = k;
            for (step, slot) in alive.iter_mut().enumerate().skip(1) {
                level += if bits >> (step - 1) & 1 == 1 { 1 } else { -1 };
                if level <= 0 {
                    break;
                }
                *slot += 1;
            }
        }
        let out = dp(k as u64, n);
        for (m, &count) in alive.iter().enumerate().skip(1) {
            let want = count as f64 / (1u64 << n) as f64;
            assert!((out.tail[m] - want).abs() < 1e-15, "n = {m}");
        }
    }

    #[test]
    fn dp_tail_is_monotone_and_pmf_normalized() {
        let out = dp(4, 2000);
        assert!(out.tail.windows(2).all(|w| w[1] <= w[0]));
        let total: f64 = out.conditional_pmf.iter().map(|p| p.1).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dp_vs_brownian_at_long_horizon() {
        let n = 1usize << 12;
        for k in [1u64, 3, 8] {
            let out = dp(k, n);
            let y = k as f64 * 2f64.ln();
            let bm = bm_exit_tail(y, n as f64, 2f64.ln()).unwrap();
            let ratio = out.tail[n] / bm;
            assert!((ratio - 1.0).abs() < 0.05, "k = {k}: ratio {ratio}");
        }
    }

    #[test]
    fn dp_conditional_law_is_rayleigh() {
        let n = 1usize << 12;
        let out = dp(1, n);
        let root = (n as f64).sqrt();
        let pmf: Vec<(f64, f64)> = out.conditional_pmf.iter().map(|&(l, p)| (l as f64 / root, p)).collect();
        let d = ks_distance_pmf(&pmf, rayleigh_cdf);
        assert!(d < 0.03, "KS = {d}");
    }

    #[test]
    fn ks_pmf_point_mass() {
        let d = ks_distance_pmf(&[(0.0, 1.0)], normal_cdf);
        assert!((d - 0.5).abs() < 1e-15);
    }

    #[test]
    fn csv_dumps() {
        let out = dp(1, 2);
        assert!(out.tail_csv().starts_with("n,tail\n0,"));
        assert_eq!(out.pmf_csv().lines().count(), 1 + out.conditional_pmf.len());
    }
}
