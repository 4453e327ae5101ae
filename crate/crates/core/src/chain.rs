//! The Markov chain X_n = (g_n, g_{n−1}…g_1 g·v̄) and its walk y + S_n.
//!
//! Products are never formed: the walk carries the unit vector
//! w_n = G_n g v / ‖G_n g v‖ and accumulates log-norms, so horizons far
//! beyond the overflow range of raw products are safe.

use std::fmt::Write as _;

use rand::RngCore;
use rayon::prelude::*;

use crate::error::{LabError, Result};
use crate::laws::MatrixLaw;
use crate::matgroup::{act, cocycle, dot, norm, push_unit, ChainState, GroupElement, Mat, ProjectivePoint};
use crate::rng::{unit_vector, Streams};
use crate::stats::{bootstrap_stderr, mean, mean_var, EstimateWithCI};

/// Positions `y + S_n` at or below this count as exited. Absorbs rounding
/// when a lattice walk lands exactly on 0.
pub const EXIT_SLACK: f64 = 1e-9;

const BOOTSTRAP_RESAMPLES: usize = 200;

/// Incremental walker: holds the running direction and scratch buffers.
pub(crate) struct Walker<'a> {
    law: &'a MatrixLaw,
    m: Mat,
    w: Vec<f64>,
    scratch: Vec<f64>,
}

impl<'a> Walker<'a> {
    /// Walker whose next matrix acts on the unit vector `w0`.
    pub(crate) fn new(law: &'a MatrixLaw, w0: &[f64]) -> Self {
        let d = law.dim();
        let n = norm(w0);
        Walker { law, m: Mat::zeros(d), w: w0.iter().map(|x| x / n).collect(), scratch: vec![0.0; d] }
    }

    /// Walker started at X_0 = `x0`: the first matrix acts on g·v̄.
    pub(crate) fn from_state(law: &'a MatrixLaw, x0: &ChainState) -> Self {
        Walker::new(law, x0.moved_dir().rep())
    }

    /// Draws g_{k+1}, returns ρ(X_{k+1}) and advances the direction.
    #[inline]
    pub(crate) fn step<R: RngCore + ?Sized>(&mut self, rng: &mut R) -> f64 {
        self.law.sample_into(rng, &mut self.m);
        push_unit(&self.m, &mut self.w, &mut self.scratch)
    }

    pub(crate) fn dir(&self) -> &[f64] {
        &self.w
    }
}

/// One transition: X = (g, v̄) ↦ (g_next, g·v̄), with increment
/// ρ(g_next, g·v̄).
pub fn step(state: &ChainState, g_next: &GroupElement) -> (ChainState, f64) {
    let dir = act(&state.g, &state.dir);
    let inc = cocycle(g_next, &dir);
    (ChainState { g: g_next.clone(), dir }, inc)
}

/// One simulated trajectory of y + S_n.
#[derive(Debug, Clone)]
pub struct WalkPath {
    pub start: ChainState,
    pub y: f64,
    /// S_1, …, S_k with k = min(exit index, horizon).
    pub s_values: Vec<f64>,
    pub exit_index: Option<usize>,
    pub censored_at: usize,
}

impl WalkPath {
    /// Debug dump with columns `step,S_n,alive`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,S_n,alive\n");
        let _ = writeln!(out, "0,0,1");
        for (k, s) in self.s_values.iter().enumerate() {
            let n = k + 1;
            let alive = self.exit_index.is_none_or(|e| n < e);
            let _ = writeln!(out, "{n},{s:.17e},{}", alive as u8);
        }
        out
    }
}

fn check_walk_args(law: &MatrixLaw, x0: &ChainState, y: f64) -> Result<()> {
    if !(y > 0.0) || !y.is_finite() {
        return Err(LabError::InvalidInput(format!("start level y must be positive, got {y}")));
    }
    if x0.dim() != law.dim() {
        return Err(LabError::InvalidInput("start state dimension does not match law".into()));
    }
    Ok(())
}

/// Simulates y + S_n from X_0 = `x0` until the first n with y + S_n ≤ 0, or
/// until `n_max`.
pub fn simulate_walk<R: RngCore + ?Sized>(
    law: &MatrixLaw,
    x0: &ChainState,
    y: f64,
    n_max: usize,
    rng: &mut R,
) -> Result<WalkPath> {
    check_walk_args(law, x0, y)?;
    if n_max == 0 {
        return Err(LabError::InvalidInput("horizon must be at least 1".into()));
    }
    let mut walker = Walker::from_state(law, x0);
    let mut s = 0.0;
    let mut s_values = Vec::new();
    let mut exit_index = None;
    for n in 1..=n_max {
        s += walker.step(rng);
        s_values.push(s);
        if y + s <= EXIT_SLACK {
            exit_index = Some(n);
            break;
        }
    }
    Ok(WalkPath { start: x0.clone(), y, s_values, exit_index, censored_at: n_max })
}

/// log ‖G_n g0 v‖ by pushing the raw vector through the product,
/// renormalizing after each factor.
pub fn log_norm_direct<R: RngCore + ?Sized>(
    law: &MatrixLaw,
    g0: &GroupElement,
    v: &[f64],
    n: usize,
    rng: &mut R,
) -> Result<f64> {
    if norm(v) == 0.0 || v.len() != law.dim() || v.len() != g0.dim() {
        return Err(LabError::InvalidInput("vector must be nonzero and match the law dimension".into()));
    }
    let d = law.dim();
    let mut u = g0.matrix().mul_vec(v);
    let mut acc = 0.0;
    let mut m = Mat::zeros(d);
    let mut next = vec![0.0; d];
    for _ in 0..n {
        law.sample_into(rng, &mut m);
        m.mul_vec_into(&u, &mut next);
        let len = norm(&next);
        acc += len.ln();
        for (a, b) in u.iter_mut().zip(&next) {
            *a = b / len;
        }
    }
    Ok(acc + norm(&u).ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SigmaMethod {
    /// Sample variance of S_n/√n across replicas.
    BatchVariance,
    /// Stationary variance plus twice the truncated autocovariance sum.
    CovarianceSeries,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SigmaEstimate {
    pub sigma2: f64,
    pub method: SigmaMethod,
    /// Autocovariance lag cutoff (series) or walk length (batch).
    pub truncation: usize,
    pub stderr: f64,
    pub n_reps: usize,
    /// Every replica produced the same value: the cocycle is a.s. constant.
    pub degenerate: bool,
}

impl SigmaEstimate {
    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }

    /// Standard error of σ by the delta method.
    pub fn sigma_stderr(&self) -> f64 {
        if self.sigma2 > 0.0 {
            self.stderr / (2.0 * self.sigma())
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaOptions {
    pub burn_in: usize,
    pub max_lag: usize,
}

impl Default for SigmaOptions {
    fn default() -> Self {
        SigmaOptions { burn_in: 1000, max_lag: 50 }
    }
}

/// Estimates the CLT variance σ² of S_n.
pub fn estimate_sigma2(
    law: &MatrixLaw,
    x0: &ChainState,
    n: usize,
    n_reps: usize,
    method: SigmaMethod,
    opts: SigmaOptions,
    streams: Streams,
) -> Result<SigmaEstimate> {
    if x0.dim() != law.dim() {
        return Err(LabError::InvalidInput("start state dimension does not match law".into()));
    }
    if n_reps < 2 {
        return Err(LabError::InvalidInput("sigma estimate needs at least 2 replicas".into()));
    }
    let run = streams.sub(1);
    let boot_seed = streams.sub(2).seed();
    match method {
        SigmaMethod::BatchVariance => {
            if n < 1000 {
                return Err(LabError::InvalidInput("batch sigma needs n ≥ 1000".into()));
            }
            let z: Vec<f64> = (0..n_reps as u64)
                .into_par_iter()
                .map(|r| {
                    let mut rng = run.stream(r);
                    let mut walker = Walker::from_state(law, x0);
                    for _ in 0..opts.burn_in {
                        walker.step(&mut rng);
                    }
                    let s: f64 = (0..n).map(|_| walker.step(&mut rng)).sum();
                    s / (n as f64).sqrt()
                })
                .collect();
            let (_, var) = mean_var(&z);
            let degenerate = z.iter().all(|&v| v == z[0]);
            let stderr = if degenerate {
                0.0
            } else {
                bootstrap_stderr(&z, BOOTSTRAP_RESAMPLES, boot_seed, |xs| mean_var(xs).1)
            };
            Ok(SigmaEstimate {
                sigma2: if degenerate { 0.0 } else { var },
                method,
                truncation: n,
                stderr,
                n_reps,
                degenerate,
            })
        }
        SigmaMethod::CovarianceSeries => {
            if opts.max_lag > 100 || opts.max_lag >= n {
                return Err(LabError::InvalidInput("series sigma needs lag ≤ 100 and lag < n".into()));
            }
            let paths: Vec<Vec<f64>> = (0..n_reps as u64)
                .into_par_iter()
                .map(|r| {
                    let mut rng = run.stream(r);
                    let mut walker = Walker::from_state(law, x0);
                    for _ in 0..opts.burn_in {
                        walker.step(&mut rng);
                    }
                    (0..n).map(|_| walker.step(&mut rng)).collect()
                })
                .collect();
            let first = paths[0][0];
            let degenerate = paths.iter().all(|p| p.iter().all(|&v| v == first));
            // one pooled mean: per-replica centring would bias each sum by
            // about −σ²(2·lag+1)/n
            let pooled = paths.iter().map(|p| p.iter().sum::<f64>()).sum::<f64>() / (n * n_reps) as f64;
            let values: Vec<f64> = paths.iter().map(|p| autocov_sum(p, pooled, opts.max_lag)).collect();
            let stderr = if degenerate { 0.0 } else { bootstrap_stderr(&values, BOOTSTRAP_RESAMPLES, boot_seed, mean) };
            Ok(SigmaEstimate {
                sigma2: if degenerate { 0.0 } else { mean(&values).max(0.0) },
                method,
                truncation: opts.max_lag,
                stderr,
                n_reps,
                degenerate,
            })
        }
    }
}

/// c_0 + 2 Σ_{k=1}^{lag} c_k with autocovariances centred at `m`.
fn autocov_sum(xs: &[f64], m: f64, lag: usize) -> f64 {
    let n = xs.len();
    let c = |k: usize| -> f64 { (0..n - k).map(|i| (xs[i] - m) * (xs[i + k] - m)).sum::<f64>() / n as f64 };
    c(0) + 2.0 * (1..=lag).map(c).sum::<f64>()
}

/// Tracks a pair of directions under a common product. The second direction
/// is stored in an orthonormal frame (q1, q2) around the first, as
/// α q1 + β q2 with β = e^{log_beta} ≥ 0, so tiny separations never
/// underflow.
struct PairTracker {
    q1: Vec<f64>,
    q2: Vec<f64>,
    alpha: f64,
    log_beta: f64,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl PairTracker {
    fn new(u: &[f64], v: &[f64]) -> Self {
        let c = dot(u, v);
        let mut perp: Vec<f64> = v.iter().zip(u).map(|(vi, ui)| vi - c * ui).collect();
        let p = norm(&perp);
        perp.iter_mut().for_each(|x| *x /= p);
        let scale = (c * c + p * p).sqrt();
        PairTracker {
            q1: u.to_vec(),
            q2: perp,
            alpha: c / scale,
            log_beta: (p / scale).ln(),
            a: vec![0.0; u.len()],
            b: vec![0.0; u.len()],
        }
    }

    /// `ln d(ū, v̄)` for the current pair.
    fn log_distance(&self) -> f64 {
        self.log_beta
    }

    fn apply(&mut self, m: &Mat) {
        m.mul_vec_into(&self.q1, &mut self.a);
        m.mul_vec_into(&self.q2, &mut self.b);
        let na = norm(&self.a);
        self.a.iter_mut().for_each(|x| *x /= na);
        let proj = dot(&self.b, &self.a);
        for (bi, ai) in self.b.iter_mut().zip(&self.a) {
            *bi -= proj * ai;
        }
        let e = norm(&self.b);
        self.b.iter_mut().for_each(|x| *x /= e);
        let beta = if self.log_beta > -700.0 { self.log_beta.exp() } else { 0.0 };
        let alpha = self.alpha * na + beta * proj;
        let log_beta = self.log_beta + e.ln();
        let beta_new = if log_beta > -700.0 { log_beta.exp() } else { 0.0 };
        let scale = alpha.hypot(beta_new);
        self.alpha = alpha / scale;
        self.log_beta = log_beta - scale.ln();
        std::mem::swap(&mut self.q1, &mut self.a);
        std::mem::swap(&mut self.q2, &mut self.b);
    }
}

/// Estimates ρ_ε = (E[d(G_n·v̄₁, G_n·v̄₂)^ε / d(v̄₁, v̄₂)^ε])^{1/n} over
/// random direction pairs with d(v̄₁, v̄₂) ≥ 10⁻³.
pub fn contraction_exponent(
    law: &MatrixLaw,
    epsilon: f64,
    n: usize,
    n_reps: usize,
    streams: Streams,
) -> Result<EstimateWithCI> {
    if !(epsilon > 0.0 && epsilon < 1.0) || n == 0 || n_reps < 2 {
        return Err(LabError::InvalidInput("contraction needs ε in (0,1), n ≥ 1, ≥ 2 reps".into()));
    }
    let d = law.dim();
    let ratios: Vec<f64> = (0..n_reps as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = streams.stream(r);
            let (u, v) = loop {
                let u = unit_vector(&mut rng, d);
                let v = unit_vector(&mut rng, d);
                let pu = ProjectivePoint::from_unit_unchecked(u.clone());
                let pv = ProjectivePoint::from_unit_unchecked(v.clone());
                if crate::matgroup::proj_distance(&pu, &pv) >= 1e-3 {
                    break (u, v);
                }
            };
            let mut pair = PairTracker::new(&u, &v);
            let start = pair.log_distance();
            let mut m = Mat::zeros(d);
            for _ in 0..n {
                law.sample_into(&mut rng, &mut m);
                pair.apply(&m);
            }
            (epsilon * (pair.log_distance() - start)).exp()
        })
        .collect();
    let mean_est = EstimateWithCI::from_samples(&ratios, streams.seed());
    let inv_n = 1.0 / n as f64;
    let value = mean_est.value.powf(inv_n);
    let stderr = if mean_est.value > 0.0 { inv_n * mean_est.value.powf(inv_n - 1.0) * mean_est.stderr } else { 0.0 };
    Ok(EstimateWithCI { value, stderr, n_samples: n_reps, seed: streams.seed() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::laws::{estimate_lyapunov, recenter_to_zero_lyapunov};
    use crate::matgroup::{make_group_element, proj_distance};

    fn ge(m: Mat) -> GroupElement {
        make_group_element(m).unwrap()
    }

    fn ln2() -> f64 {
        2f64.ln()
    }

    #[test]
    fn step_examples() {
        let x = ChainState::standard(2);
        let two = ge(Mat::diag(&[2.0, 2.0]));
        let (next, inc) = step(&x, &two);
        assert!((inc - ln2()).abs() < 1e-15);
        assert_eq!(next.g, two);
        assert!(next.dir.approx_eq(&ProjectivePoint::axis(2, 0), 1e-15));

        let x = ChainState::new(ge(Mat::diag(&[4.0, 1.0])), ProjectivePoint::new(&[1.0, 1.0]).unwrap()).unwrap();
        let (next, inc) = step(&x, &GroupElement::identity(2));
        assert!(inc.abs() < 1e-15);
        assert!(next.dir.approx_eq(&ProjectivePoint::new(&[4.0, 1.0]).unwrap(), 1e-14));
    }

    #[test]
    fn step_composition_on_eigenvector() {
        let g = ge(Mat::diag(&[2.0, 0.5]));
        let mut x = ChainState::standard(2);
        let mut s = 0.0;
        for _ in 0..40 {
            let (next, inc) = step(&x, &g);
            x = next;
            s += inc;
        }
        assert!((s - 40.0 * ln2()).abs() < 1e-12);
    }

    #[test]
    fn step_sum_is_log_norm_of_product() {
        // Σ increments = log‖G_n g v‖ − log‖g v‖
        let law = MatrixLaw::smooth_exponential(2, 0.7, 0.0).unwrap();
        let g0 = ge(Mat::from_row_major(vec![1.0, 0.5, -0.3, 2.0]).unwrap());
        let v = ProjectivePoint::new(&[0.3, 0.4]).unwrap();
        let mut rng = Streams::new(4).stream(0);
        let mut x = ChainState::new(g0.clone(), v.clone()).unwrap();
        let mut prod = g0.matrix().clone();
        let mut s = 0.0;
        for _ in 0..30 {
            let g = law.sample(&mut rng);
            prod = g.matrix() * &prod;
            let (next, inc) = step(&x, &g);
            x = next;
            s += inc;
        }
        let direct = norm(&prod.mul_vec(v.rep())).ln() - norm(&g0.matrix().mul_vec(v.rep())).ln();
        assert!((s - direct).abs() < 1e-9);
    }

    #[test]
    fn walk_examples() {
        let x0 = ChainState::standard(2);
        let half = MatrixLaw::point_mass(ge(Mat::diag(&[0.5, 0.5])));
        let mut rng = Streams::new(1).stream(0);
        let path = simulate_walk(&half, &x0, 1.0, 100, &mut rng).unwrap();
        assert_eq!(path.exit_index, Some(2));
        assert_eq!(path.s_values.len(), 2);

        let two = MatrixLaw::point_mass(ge(Mat::diag(&[2.0, 2.0])));
        let path = simulate_walk(&two, &x0, 1.0, 100, &mut rng).unwrap();
        assert_eq!(path.exit_index, None);
        assert_eq!(path.censored_at, 100);
        assert_eq!(path.s_values.len(), 100);

        assert!(simulate_walk(&two, &x0, 0.0, 10, &mut rng).is_err());
        assert!(simulate_walk(&two, &x0, 1.0, 0, &mut rng).is_err());
    }

    #[test]
    fn coin_single_step_exit() {
        let x0 = ChainState::standard(2);
        let coin = MatrixLaw::coin();
        let s = Streams::new(77);
        let n = 100_000;
        let exits = (0..n)
            .filter(|&i| {
                let p = simulate_walk(&coin, &x0, ln2(), 1, &mut s.stream(i)).unwrap();
                p.exit_index == Some(1)
            })
            .count();
        let p = exits as f64 / n as f64;
        assert!((p - 0.5).abs() <= 3.0 * (0.25 / n as f64).sqrt(), "{p}");
    }

    #[test]
    fn coin_lattice_ties_count_as_exit() {
        // from ln2·3, three down-steps land on 0 exactly in exact arithmetic
        let x0 = ChainState::standard(2);
        let down = MatrixLaw::point_mass(ge(Mat::diag(&[0.5, 2.0])));
        let mut rng = Streams::new(1).stream(0);
        let path = simulate_walk(&down, &x0, 3.0 * ln2(), 10, &mut rng).unwrap();
        assert_eq!(path.exit_index, Some(3));
    }

    #[test]
    fn first_passage_minimality() {
        let law = MatrixLaw::smooth_exponential(2, 0.8, 0.0).unwrap();
        let x0 = ChainState::standard(2);
        let s = Streams::new(5);
        for i in 0..200 {
            let p = simulate_walk(&law, &x0, 1.0, 500, &mut s.stream(i)).unwrap();
            if let Some(k) = p.exit_index {
                assert!(p.s_values[..k - 1].iter().all(|s| 1.0 + s > EXIT_SLACK));
                assert!(1.0 + p.s_values[k - 1] <= EXIT_SLACK);
            }
        }
    }

    #[test]
    fn walk_increments_are_cocycles() {
        let law = MatrixLaw::smooth_exponential(2, 0.9, 0.0).unwrap();
        let x0 = ChainState::new(
            ge(Mat::from_row_major(vec![1.2, 0.1, 0.0, 0.9]).unwrap()),
            ProjectivePoint::new(&[0.2, 1.0]).unwrap(),
        )
        .unwrap();
        let path = simulate_walk(&law, &x0, 50.0, 200, &mut Streams::new(6).stream(0)).unwrap();
        let mut rng = Streams::new(6).stream(0);
        let mut x = x0.clone();
        let mut prev = 0.0;
        for s in &path.s_values {
            let (next, inc) = step(&x, &law.sample(&mut rng));
            assert!((s - prev - inc).abs() < 1e-9);
            prev = *s;
            x = next;
        }
    }

    #[test]
    fn direct_log_norm_matches_walk() {
        let law = MatrixLaw::smooth_exponential(2, 0.6, 0.05).unwrap();
        let g0 = ge(Mat::from_row_major(vec![1.5, 0.2, -0.4, 0.8]).unwrap());
        let v = [0.6, -0.3];
        let x0 = ChainState::new(g0.clone(), ProjectivePoint::new(&v).unwrap()).unwrap();
        let y = norm(&g0.matrix().mul_vec(&v)).ln();
        let n = 1000;
        // a large y keeps the walk alive for the full horizon
        let big = 1e6;
        let path = simulate_walk(&law, &x0, big, n, &mut Streams::new(8).stream(3)).unwrap();
        let direct = log_norm_direct(&law, &g0, &v, n, &mut Streams::new(8).stream(3)).unwrap();
        let walk = y + path.s_values[n - 1];
        assert!((direct - walk).abs() < 1e-5_f64.min(1e-8 * n as f64), "{direct} vs {walk}");
    }

    #[test]
    fn direct_log_norm_trivial_cases() {
        let two = MatrixLaw::point_mass(ge(Mat::diag(&[2.0, 2.0])));
        let id = GroupElement::identity(2);
        let mut rng = Streams::new(1).stream(0);
        let v = [1.0, 0.0];
        let got = log_norm_direct(&two, &id, &v, 10, &mut rng).unwrap();
        assert!((got - 10.0 * ln2()).abs() < 1e-12);
        let g0 = ge(Mat::diag(&[3.0, 1.0]));
        let got = log_norm_direct(&two, &g0, &[2.0, 0.0], 0, &mut rng).unwrap();
        assert!((got - 6f64.ln()).abs() < 1e-15);
        assert!(log_norm_direct(&two, &g0, &[0.0, 0.0], 3, &mut rng).is_err());
    }

    #[test]
    fn sigma_coin_law() {
        let x0 = ChainState::standard(2);
        let est = estimate_sigma2(
            &MatrixLaw::coin(),
            &x0,
            1000,
            2000,
            SigmaMethod::BatchVariance,
            SigmaOptions { burn_in: 0, max_lag: 10 },
            Streams::new(3),
        )
        .unwrap();
        let want = ln2() * ln2();
        assert!((est.sigma2 - want).abs() <= 3.0 * est.stderr, "{est:?}");
        assert!(!est.degenerate);
    }

    #[test]
    fn sigma_point_mass_is_degenerate() {
        let two = MatrixLaw::point_mass(ge(Mat::diag(&[2.0, 2.0])));
        let x0 = ChainState::standard(2);
        for method in [SigmaMethod::BatchVariance, SigmaMethod::CovarianceSeries] {
            let est = estimate_sigma2(&two, &x0, 1000, 4, method, SigmaOptions::default(), Streams::new(1)).unwrap();
            assert!(est.degenerate, "{method:?}");
            assert_eq!(est.sigma2, 0.0);
            assert_eq!(est.stderr, 0.0);
        }
    }

    #[test]
    fn sigma_methods_agree_on_recentered_smooth_law() {
        let base = MatrixLaw::smooth_exponential(2, 0.8, 0.0).unwrap().with_drift(Mat::diag(&[0.6, -0.6])).unwrap();
        let e1 = ProjectivePoint::axis(2, 0);
        let gamma = estimate_lyapunov(&base, &e1, 20_000, 500, 8, Streams::new(10)).unwrap();
        let law = recenter_to_zero_lyapunov(&base, gamma.value).unwrap();
        let x0 = ChainState::standard(2);
        let opts = SigmaOptions { burn_in: 500, max_lag: 30 };
        let batch = estimate_sigma2(&law, &x0, 1000, 800, SigmaMethod::BatchVariance, opts, Streams::new(11)).unwrap();
        let series =
            estimate_sigma2(&law, &x0, 4000, 40, SigmaMethod::CovarianceSeries, opts, Streams::new(12)).unwrap();
        let joint = (batch.stderr.powi(2) + series.stderr.powi(2)).sqrt();
        assert!((batch.sigma2 - series.sigma2).abs() <= 3.0 * joint, "{batch:?} {series:?}");
    }

    #[test]
    fn sigma_argument_checks() {
        let x0 = ChainState::standard(2);
        let coin = MatrixLaw::coin();
        let o = SigmaOptions::default();
        assert!(estimate_sigma2(&coin, &x0, 999, 4, SigmaMethod::BatchVariance, o, Streams::new(1)).is_err());
        let bad = SigmaOptions { burn_in: 0, max_lag: 101 };
        assert!(estimate_sigma2(&coin, &x0, 5000, 4, SigmaMethod::CovarianceSeries, bad, Streams::new(1)).is_err());
    }

    #[test]
    fn pair_tracker_matches_direct_distance() {
        let law = MatrixLaw::smooth_exponential(3, 0.5, 0.0).unwrap();
        let mut rng = Streams::new(2).stream(0);
        let u = unit_vector(&mut rng, 3);
        let v = unit_vector(&mut rng, 3);
        let mut pair = PairTracker::new(&u, &v);
        let (mut pu, mut pv) = (ProjectivePoint::new(&u).unwrap(), ProjectivePoint::new(&v).unwrap());
        assert!((pair.log_distance() - proj_distance(&pu, &pv).ln()).abs() < 1e-12);
        for _ in 0..10 {
            let g = law.sample(&mut rng);
            pair.apply(g.matrix());
            pu = act(&g, &pu);
            pv = act(&g, &pv);
            let direct = proj_distance(&pu, &pv).ln();
            assert!((pair.log_distance() - direct).abs() < 1e-8, "{} vs {direct}", pair.log_distance());
        }
    }

    #[test]
    fn contraction_examples() {
        let rot = MatrixLaw::point_mass(ge(Mat::rotation(0.9)));
        let est = contraction_exponent(&rot, 0.5, 40, 16, Streams::new(1)).unwrap();
        assert!((est.value - 1.0).abs() < 1e-10);

        let hyper = MatrixLaw::point_mass(ge(Mat::diag(&[4.0, 0.25])));
        let est = contraction_exponent(&hyper, 0.5, 40, 16, Streams::new(1)).unwrap();
        assert!(est.value < 1.0);
        // by hand for one pair: d(G_n u, G_n v) ≈ d(u,v)·16^{-n}·C, so the
        // per-step rate tends to 16^{-ε}
        assert!((est.value - 16f64.powf(-0.5)).abs() < 0.1, "{est:?}");
    }

    #[test]
    fn contraction_smooth_law() {
        let base = MatrixLaw::smooth_exponential(2, 0.8, 0.0).unwrap();
        let est = contraction_exponent(&base, 0.25, 50, 400, Streams::new(9)).unwrap();
        assert!(est.value < 1.0 - 3.0 * est.stderr, "{est:?}");
    }

    #[test]
    fn csv_dump_has_header_and_rows() {
        let half = MatrixLaw::point_mass(ge(Mat::diag(&[0.5, 0.5])));
        let path = simulate_walk(&half, &ChainState::standard(2), 1.0, 10, &mut Streams::new(1).stream(0)).unwrap();
        let csv = path.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "step,S_n,alive");
        assert_eq!(lines.len(), 4);
        assert!(lines[3].ends_with(",0"));
        assert!(lines[2].ends_with(",1"));
    }
}
