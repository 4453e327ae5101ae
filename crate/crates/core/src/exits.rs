//! Exit-time statistics for y + S_n: survival curves, the harmonic function
//! V(x, y), the tail prefactor and the conditioned (Rayleigh) law.
//!
//! Path `i` of every estimator draws from stream `i` of the family it is
//! given, and a path's increments never depend on y, so runs at different
//! levels on one family share paths exactly.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::chain::{SigmaEstimate, Walker, EXIT_SLACK};
use crate::error::{LabError, Result};
use crate::laws::MatrixLaw;
use crate::matgroup::ChainState;
use crate::rng::Streams;
use crate::stats::{binomial_stderr, mean_var};

fn check_level(law: &MatrixLaw, x0: &ChainState, y: f64) -> Result<()> {
    if !(y > 0.0) || !y.is_finite() {
        return Err(LabError::InvalidInput(format!("level y must be positive, got {y}")));
    }
    if x0.dim() != law.dim() {
        return Err(LabError::InvalidInput("start state dimension does not match law".into()));
    }
    Ok(())
}

/// Runs one path from direction `w0` at level `y`, calling `visit(n, y+S_n)`
/// for every n ≤ horizon while alive. Returns the exit index.
fn run_path(
    law: &MatrixLaw,
    w0: &[f64],
    y: f64,
    horizon: usize,
    rng: &mut crate::rng::LabRng,
    mut visit: impl FnMut(usize, f64),
) -> Option<usize> {
    let mut walker = Walker::new(law, w0);
    let mut pos = y;
    for n in 1..=horizon {
        pos += walker.step(rng);
        if pos <= EXIT_SLACK {
            return Some(n);
        }
        visit(n, pos);
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailPoint {
    pub n: usize,
    pub p_hat: f64,
    pub stderr: f64,
}

/// Empirical P_x(τ_y > n) on a grid of horizons.
#[derive(Debug, Clone, PartialEq)]
pub struct TailCurve {
    pub x0: ChainState,
    pub y: f64,
    pub points: Vec<TailPoint>,
    pub n_paths: usize,
}

impl TailCurve {
    pub fn at(&self, n: usize) -> Option<&TailPoint> {
        self.points.iter().find(|p| p.n == n)
    }

    /// CSV with columns `n,p_hat,stderr`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,p_hat,stderr\n");
        for p in &self.points {
            let _ = writeln!(out, "{},{:.17e},{:.17e}", p.n, p.p_hat, p.stderr);
        }
        out
    }
}

/// The exit index of each of `n_paths` paths, censored at `horizon`.
fn exit_indices(
    law: &MatrixLaw,
    x0: &ChainState,
    y: f64,
    horizon: usize,
    n_paths: usize,
    streams: Streams,
) -> Vec<Option<usize>> {
    let w0 = x0.moved_dir();
    (0..n_paths as u64)
        .into_par_iter()
        .map(|i| run_path(law, w0.rep(), y, horizon, &mut streams.stream(i), |_, _| {}))
        .collect()
}

/// Survival fractions on a shared path set: the events {τ > n} are nested,
/// so the curve is non-increasing exactly.
pub fn tail_curve(
    law: &MatrixLaw,
    x0: &ChainState,
    y: f64,
    n_grid: &[usize],
    n_paths: usize,
    streams: Streams,
) -> Result<TailCurve> {
    check_level(law, x0, y)?;
    if n_grid.is_empty() || n_grid[0] == 0 || n_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(LabError::InvalidInput("n grid must be non-empty, positive and increasing".into()));
    }
    if n_paths == 0 {
        return Err(LabError::InvalidInput("need at least one path".into()));
    }
    let horizon = *n_grid.last().unwrap();
    let exits = exit_indices(law, x0, y, horizon, n_paths, streams);
    // survivors[n] counts paths with τ > n, via exit counts per step
    let mut exited_at = vec![0usize; horizon + 1];
    for e in exits.iter().flatten() {
        exited_at[*e] += 1;
    }
    let mut alive = n_paths;
    let mut survivors = vec![n_paths; horizon + 1];
    for n in 1..=horizon {
        alive -= exited_at[n];
        survivors[n] = alive;
    }
    let points = n_grid
        .iter()
        .map(|&n| {
            let p_hat = survivors[n] as f64 / n_paths as f64;
            TailPoint { n, p_hat, stderr: binomial_stderr(p_hat, n_paths) }
        })
        .collect();
    Ok(TailCurve { x0: x0.clone(), y, points, n_paths })
}

/// Ê_x[(y + S_n)·1{τ_y > n}] at the horizon and at half of it.
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicEstimate {
    pub x0: ChainState,
    pub y: f64,
    pub n_horizon: usize,
    pub v_hat: f64,
    pub stderr: f64,
    pub v_half: f64,
    /// Standard error of the paired difference `v_hat − v_half`.
    pub diff_stderr: f64,
    /// `|v_hat − v_half| ≤ 3·diff_stderr`.
    pub stabilized: bool,
    pub n_paths: usize,
}

pub fn harmonic_v(
    law: &MatrixLaw,
    x0: &ChainState,
    y: f64,
    n_horizon: usize,
    n_paths: usize,
    streams: Streams,
) -> Result<HarmonicEstimate> {
    check_level(law, x0, y)?;
    if n_horizon < 2 || n_paths < 2 {
        return Err(LabError::InvalidInput("harmonic estimate needs horizon ≥ 2 and ≥ 2 paths".into()));
    }
    let half = n_horizon / 2;
    let w0 = x0.moved_dir();
    let pairs: Vec<(f64, f64)> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let (mut at_half, mut at_end) = (0.0, 0.0);
            run_path(law, w0.rep(), y, n_horizon, &mut streams.stream(i), |n, pos| {
                if n == half {
                    at_half = pos;
                }
                if n == n_horizon {
                    at_end = pos;
                }
            });
            (at_end, at_half)
        })
        .collect();
    let ends: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let halves: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let diffs: Vec<f64> = pairs.iter().map(|p| p.0 - p.1).collect();
    let n = n_paths as f64;
    let (v_hat, var) = mean_var(&ends);
    let (v_half, _) = mean_var(&halves);
    let (d_mean, d_var) = mean_var(&diffs);
    let diff_stderr = (d_var / n).sqrt();
    Ok(HarmonicEstimate {
        x0: x0.clone(),
        y,
        n_horizon,
        v_hat,
        stderr: (var / n).sqrt(),
        v_half,
        diff_stderr,
        stabilized: d_mean.abs() <= 3.0 * diff_stderr,
        n_paths,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointResidual {
    /// |lhs − rhs| / rhs.
    pub residual: f64,
    pub stderr: f64,
    /// Ê_x[V̂(X_1, y+S_1); τ_y > 1].
    pub lhs: f64,
    /// V̂(x, y) at horizon inner_horizon + 1.
    pub rhs: f64,
}

impl FixedPointResidual {
    pub fn consistent(&self, k: f64) -> bool {
        self.residual <= k * self.stderr
    }
}

/// One step of the killed kernel applied to V̂: `n_paths` outer first steps,
/// each followed by `inner_reps` continuations of length `inner_horizon`.
/// The right side is V̂(x, y) at horizon inner_horizon + 1 on independent
/// streams with the same total path count.
pub fn harmonic_fixed_point_residual(
    law: &MatrixLaw,
    x0: &ChainState,
    y: f64,
    n_paths: usize,
    inner_horizon: usize,
    inner_reps: usize,
    streams: Streams,
) -> Result<FixedPointResidual> {
    check_level(law, x0, y)?;
    if n_paths < 2 || inner_reps == 0 || inner_horizon == 0 {
        return Err(LabError::InvalidInput("fixed point needs ≥ 2 outer paths and positive inner sizes".into()));
    }
    let outer = streams.sub(1);
    let inner = streams.sub(2);
    let w0 = x0.moved_dir();
    let lhs_samples: Vec<f64> = (0..n_paths as u64)
        .into_par_iter()
        .map(|j| {
            let mut rng = outer.stream(j);
            let mut walker = Walker::new(law, w0.rep());
            let y1 = y + walker.step(&mut rng);
            if y1 <= EXIT_SLACK {
                return 0.0;
            }
            let inner_j = inner.sub(j);
            let total: f64 = (0..inner_reps as u64)
                .map(|r| {
                    let mut end = 0.0;
                    run_path(law, walker.dir(), y1, inner_horizon, &mut inner_j.stream(r), |n, pos| {
                        if n == inner_horizon {
                            end = pos;
                        }
                    });
                    end
                })
                .sum();
            total / inner_reps as f64
        })
        .collect();
    let rhs_est = harmonic_v(law, x0, y, inner_horizon + 1, n_paths * inner_reps, streams.sub(3))?;
    let (lhs, lhs_var) = mean_var(&lhs_samples);
    let lhs_se = (lhs_var / n_paths as f64).sqrt();
    let rhs = rhs_est.v_hat;
    if rhs == 0.0 {
        return Err(LabError::Degenerate("V̂(x, y) is zero; the fixed-point ratio is undefined".into()));
    }
    Ok(FixedPointResidual {
        residual: (lhs - rhs).abs() / rhs,
        stderr: (lhs_se * lhs_se + rhs_est.stderr * rhs_est.stderr).sqrt() / rhs,
        lhs,
        rhs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrefactorPoint {
    pub n: usize,
    /// p̂(n)·σ̂·√(2πn) / (2·v̂).
    pub ratio: f64,
    pub stderr: f64,
    /// σ̂ = 0 or v̂ ≤ 0: the ratio is reported as +∞.
    pub degenerate: bool,
}

/// Tail against the predicted 2V/(σ√(2πn)), with first-order error
/// propagation from all three inputs.
pub fn prefactor_ratio(tail: &TailCurve, v: &HarmonicEstimate, sigma: &SigmaEstimate) -> Vec<PrefactorPoint> {
    let s = sigma.sigma();
    let s_se = sigma.sigma_stderr();
    tail.points
        .iter()
        .map(|p| {
            if !(s > 0.0) || !(v.v_hat > 0.0) {
                return PrefactorPoint { n: p.n, ratio: f64::INFINITY, stderr: f64::NAN, degenerate: true };
            }
            let ratio = p.p_hat * s * (std::f64::consts::TAU * p.n as f64).sqrt() / (2.0 * v.v_hat);
            let rel_p = if p.p_hat > 0.0 { p.stderr / p.p_hat } else { 0.0 };
            let rel = (rel_p.powi(2) + (s_se / s).powi(2) + (v.stderr / v.v_hat).powi(2)).sqrt();
            PrefactorPoint { n: p.n, ratio, stderr: ratio * rel, degenerate: false }
        })
        .collect()
}

/// Right-continuous step CDF of a sample.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalCDF {
    sorted_samples: Vec<f64>,
}

impl EmpiricalCDF {
    /// Sorts `samples`; NaN entries are rejected.
    pub fn new(mut samples: Vec<f64>) -> Result<Self> {
        if samples.iter().any(|x| x.is_nan()) {
            return Err(LabError::InvalidInput("NaN in sample".into()));
        }
        samples.sort_by(f64::total_cmp);
        Ok(EmpiricalCDF { sorted_samples: samples })
    }

    pub fn n(&self) -> usize {
        self.sorted_samples.len()
    }

    pub fn samples(&self) -> &[f64] {
        &self.sorted_samples
    }

    /// #{samples ≤ x} / n.
    pub fn eval(&self, x: f64) -> f64 {
        self.sorted_samples.partition_point(|&s| s <= x) as f64 / self.n() as f64
    }

    pub fn median(&self) -> f64 {
        let n = self.n();
        if n % 2 == 1 {
            self.sorted_samples[n / 2]
        } else {
            0.5 * (self.sorted_samples[n / 2 - 1] + self.sorted_samples[n / 2])
        }
    }

    /// CSV with columns `t,F`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,F\n");
        let n = self.n() as f64;
        for (i, s) in self.sorted_samples.iter().enumerate() {
            let _ = writeln!(out, "{s:.17e},{:.17e}", (i + 1) as f64 / n);
        }
        out
    }
}

/// sup_x |F_n(x) − F(x)|, taking both one-sided gaps at every sample.
pub fn ks_statistic(cdf: &EmpiricalCDF, reference: impl Fn(f64) -> f64) -> f64 {
    let n = cdf.n() as f64;
    cdf.sorted_samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = reference(x);
            ((i + 1) as f64 / n - f).max(f - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic Kolmogorov tail P(√n·D > λ) = 2 Σ (−1)^{k−1} e^{−2k²λ²}.
pub fn kolmogorov_pvalue(d: f64, n: usize) -> f64 {
    let lambda = d * (n as f64).sqrt();
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-18 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionalOptions {
    /// Hard cap on simulated paths.
    pub max_paths: usize,
    /// Paths per batch; survivors are taken in path-index order.
    pub batch_size: usize,
}

impl Default for ConditionalOptions {
    fn default() -> Self {
        ConditionalOptions { max_paths: 50_000_000, batch_size: 1 << 16 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionalProgress {
    pub paths: usize,
    pub accepted: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalSample {
    pub cdf: EmpiricalCDF,
    pub paths_used: usize,
    pub acceptance_rate: f64,
    /// σ̂ used in the scaling.
    pub sigma: f64,
}

pub const MIN_ACCEPTANCE: f64 = 1e-6;

/// Law of (y + S_n)/(σ̂√n) given τ_y > n, by rejection.
pub fn conditional_cdf(
    law: &MatrixLaw,
    x0: &ChainState,
    y: f64,
    n: usize,
    n_conditioned: usize,
    sigma: &SigmaEstimate,
    opts: ConditionalOptions,
    streams: Streams,
) -> Result<ConditionalSample> {
    conditional_cdf_with_progress(law, x0, y, n, n_conditioned, sigma, opts, streams, &mut |_| {})
}

#[allow(clippy::too_many_arguments)]
pub fn conditional_cdf_with_progress(
    law: &MatrixLaw,
    x0: &ChainState,
    y: f64,
    n: usize,
    n_conditioned: usize,
    sigma: &SigmaEstimate,
    opts: ConditionalOptions,
    streams: Streams,
    progress: &mut dyn FnMut(ConditionalProgress),
) -> Result<ConditionalSample> {
    check_level(law, x0, y)?;
    if n == 0 || n_conditioned == 0 || opts.batch_size == 0 {
        return Err(LabError::InvalidInput("conditioning needs positive n, sample size and batch".into()));
    }
    let s = sigma.sigma();
    if !(s > 0.0) {
        return Err(LabError::Degenerate("σ̂ = 0: the diffusive scaling is undefined".into()));
    }
    let scale = 1.0 / (s * (n as f64).sqrt());
    let w0 = x0.moved_dir();
    let mut kept = Vec::with_capacity(n_conditioned);
    let mut paths = 0usize;
    // rates this low are reported instead of waiting for the cap
    let probe = (3.0 / MIN_ACCEPTANCE) as usize;
    while kept.len() < n_conditioned {
        if paths >= opts.max_paths {
            return Err(LabError::InfeasibleConditioning { rate: kept.len() as f64 / paths as f64, paths });
        }
        let batch = opts.batch_size.min(opts.max_paths - paths);
        let found: Vec<Option<f64>> = (paths as u64..(paths + batch) as u64)
            .into_par_iter()
            .map(|i| {
                let mut end = None;
                run_path(law, w0.rep(), y, n, &mut streams.stream(i), |k, pos| {
                    if k == n {
                        end = Some(pos);
                    }
                });
                end
            })
            .collect();
        paths += batch;
        for pos in found.into_iter().flatten() {
            if kept.len() < n_conditioned {
                kept.push(pos * scale);
            }
        }
        progress(ConditionalProgress { paths, accepted: kept.len() });
        let rate = kept.len() as f64 / paths as f64;
        if kept.len() < n_conditioned && paths >= probe && rate < MIN_ACCEPTANCE {
            return Err(LabError::InfeasibleConditioning { rate, paths });
        }
    }
    Ok(ConditionalSample {
        cdf: EmpiricalCDF::new(kept)?,
        paths_used: paths,
        acceptance_rate: n_conditioned as f64 / paths as f64,
        sigma: s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::SigmaMethod;
    use crate::matgroup::{make_group_element, Mat};
    use crate::reference::{normal_cdf, rayleigh_cdf};

    fn point(m: Mat) -> MatrixLaw {
        MatrixLaw::point_mass(make_group_element(m).unwrap())
    }

    fn ln2() -> f64 {
        2f64.ln()
    }

    fn sigma_exact(s2: f64) -> SigmaEstimate {
        SigmaEstimate {
            sigma2: s2,
            method: SigmaMethod::BatchVariance,
            truncation: 0,
            stderr: 0.0,
            n_reps: 0,
            degenerate: s2 == 0.0,
        }
    }

    #[test]
    fn tail_examples() {
        let x0 = ChainState::standard(2);
        let half = point(Mat::diag(&[0.5, 0.5]));
        let t = tail_curve(&half, &x0, 1.0, &[1, 2, 3], 50, Streams::new(1)).unwrap();
        assert_eq!(t.at(1).unwrap().p_hat, 1.0);
        assert_eq!(t.at(2).unwrap().p_hat, 0.0);
        assert_eq!(t.at(2).unwrap().stderr, 0.0);

        let two = point(Mat::diag(&[2.0, 2.0]));
        let t = tail_curve(&two, &x0, 1.0, &[1, 10, 100], 20, Streams::new(1)).unwrap();
        assert!(t.points.iter().all(|p| p.p_hat == 1.0));

        assert!(tail_curve(&two, &x0, 0.0, &[1], 20, Streams::new(1)).is_err());
        assert!(tail_curve(&two, &x0, 1.0, &[3, 2], 20, Streams::new(1)).is_err());
    }

    #[test]
    fn coin_tail_small_n() {
        let x0 = ChainState::standard(2);
        let t = tail_curve(&MatrixLaw::coin(), &x0, ln2(), &[1, 2, 3], 100_000, Streams::new(2)).unwrap();
        for (n, want) in [(1, 0.5), (2, 0.5), (3, 0.375)] {
            let p = t.at(n).unwrap();
            assert!((p.p_hat - want).abs() <= 3.0 * binomial_stderr(want, t.n_paths), "n = {n}: {p:?}");
        }
    }

    #[test]
    fn tail_is_monotone_in_n_and_y() {
        let law = MatrixLaw::smooth_exponential(2, 0.7, 0.0).unwrap();
        let x0 = ChainState::standard(2);
        let grid: Vec<usize> = (1..=40).map(|k| 5 * k).collect();
        let mut prev: Option<TailCurve> = None;
        for y in [0.5, 1.0, 2.0] {
            let t = tail_curve(&law, &x0, y, &grid, 2000, Streams::new(3)).unwrap();
            assert!(t.points.windows(2).all(|w| w[1].p_hat <= w[0].p_hat));
            if let Some(lower) = &prev {
                for (a, b) in lower.points.iter().zip(&t.points) {
                    assert!(a.p_hat <= b.p_hat);
                }
            }
            prev = Some(t);
        }
    }

    #[test]
    fn harmonic_coin_is_level() {
        let x0 = ChainState::standard(2);
        let y = 3.0 * ln2();
        for horizon in [10, 200] {
            let v = harmonic_v(&MatrixLaw::coin(), &x0, y, horizon, 20_000, Streams::new(4)).unwrap();
            assert!((v.v_hat - y).abs() <= 3.0 * v.stderr, "{v:?}");
        }
    }

    #[test]
    fn harmonic_increasing_walk_is_flagged() {
        let two = point(Mat::diag(&[2.0, 2.0]));
        let v = harmonic_v(&two, &ChainState::standard(2), 1.0, 50, 10, Streams::new(1)).unwrap();
        assert!((v.v_hat - (1.0 + 50.0 * ln2())).abs() < 1e-12);
        assert!(!v.stabilized);
    }

    #[test]
    fn fixed_point_examples() {
        let x0 = ChainState::standard(2);
        let y = 3.0 * ln2();
        let r = harmonic_fixed_point_residual(&MatrixLaw::coin(), &x0, y, 4000, 50, 4, Streams::new(5)).unwrap();
        assert!(r.consistent(3.0), "{r:?}");

        let rot = point(Mat::rotation(0.4));
        let r = harmonic_fixed_point_residual(&rot, &x0, 1.0, 10, 20, 2, Streams::new(5)).unwrap();
        assert!(r.residual < 1e-12);
        assert!(r.consistent(3.0));
    }

    #[test]
    fn fixed_point_degenerate_when_v_vanishes() {
        let half = point(Mat::diag(&[0.5, 0.5]));
        let err = harmonic_fixed_point_residual(&half, &ChainState::standard(2), 1.0, 10, 5, 2, Streams::new(1));
        assert!(matches!(err, Err(LabError::Degenerate(_))));
    }

    #[test]
    fn prefactor_formula_and_degenerate_sigma() {
        let x0 = ChainState::standard(2);
        let tail = TailCurve {
            x0: x0.clone(),
            y: 1.0,
            points: vec![TailPoint { n: 100, p_hat: 0.2, stderr: 0.01 }],
            n_paths: 1000,
        };
        let v = HarmonicEstimate {
            x0,
            y: 1.0,
            n_horizon: 100,
            v_hat: 2.0,
            stderr: 0.0,
            v_half: 2.0,
            diff_stderr: 0.0,
            stabilized: true,
            n_paths: 1000,
        };
        let r = prefactor_ratio(&tail, &v, &sigma_exact(0.25));
        let want = 0.2 * 0.5 * (std::f64::consts::TAU * 100.0).sqrt() / 4.0;
        assert!((r[0].ratio - want).abs() < 1e-14);
        assert!((r[0].stderr - want * 0.05).abs() < 1e-14);
        let r = prefactor_ratio(&tail, &v, &sigma_exact(0.0));
        assert!(r[0].degenerate && r[0].ratio.is_infinite());
    }

    #[test]
    fn empirical_cdf_basics() {
        let c = EmpiricalCDF::new(vec![3.0, 1.0, 2.0, 2.0]).unwrap();
        assert_eq!(c.samples(), &[1.0, 2.0, 2.0, 3.0]);
        assert_eq!(c.eval(0.5), 0.0);
        assert_eq!(c.eval(2.0), 0.75);
        assert_eq!(c.eval(3.0), 1.0);
        assert_eq!(c.median(), 2.0);
        assert!(EmpiricalCDF::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn ks_examples() {
        let single = EmpiricalCDF::new(vec![0.0]).unwrap();
        assert!((ks_statistic(&single, normal_cdf) - 0.5).abs() < 1e-15);

        let below = EmpiricalCDF::new((0..100).map(|i| -10.0 - i as f64).collect()).unwrap();
        assert!(ks_statistic(&below, rayleigh_cdf) == 1.0);

        // Rayleigh by inversion: t = √(−2 ln(1−u))
        let mut rng = Streams::new(8).stream(0);
        let n = 10_000;
        let xs: Vec<f64> = (0..n).map(|_| (-2.0 * (1.0 - crate::rng::uniform(&mut rng)).ln()).sqrt()).collect();
        let d = ks_statistic(&EmpiricalCDF::new(xs).unwrap(), rayleigh_cdf);
        assert!(d < 1.63 / (n as f64).sqrt(), "{d}");
    }

    #[test]
    fn kolmogorov_pvalue_known_points() {
        // Q(1.36) ≈ 0.0494, Q(1.63) ≈ 0.0098
        assert!((kolmogorov_pvalue(1.36, 1) - 0.0494).abs() < 5e-4);
        assert!((kolmogorov_pvalue(1.63, 1) - 0.0098).abs() < 5e-4);
        assert_eq!(kolmogorov_pvalue(0.0, 100), 1.0);
    }

    #[test]
    fn conditional_coin_is_positive_and_near_rayleigh() {
        let x0 = ChainState::standard(2);
        let out = conditional_cdf(
            &MatrixLaw::coin(),
            &x0,
            ln2(),
            1024,
            2000,
            &sigma_exact(ln2() * ln2()),
            ConditionalOptions::default(),
            Streams::new(9),
        )
        .unwrap();
        assert_eq!(out.cdf.n(), 2000);
        assert!(out.cdf.samples().iter().all(|&t| t > 0.0));
        assert!(ks_statistic(&out.cdf, rayleigh_cdf) < 0.06);
    }

    #[test]
    fn conditional_is_thread_invariant() {
        let x0 = ChainState::standard(2);
        let law = MatrixLaw::smooth_exponential(2, 0.8, 0.0).unwrap();
        let opts = ConditionalOptions { max_paths: 100_000, batch_size: 500 };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| {
                conditional_cdf(&law, &x0, 1.0, 64, 300, &sigma_exact(0.5), opts, Streams::new(10)).unwrap()
            })
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn conditional_infeasible() {
        let x0 = ChainState::standard(2);
        let half = point(Mat::diag(&[0.5, 0.5]));
        let opts = ConditionalOptions { max_paths: 1000, batch_size: 100 };
        let err = conditional_cdf(&half, &x0, 1.0, 10, 5, &sigma_exact(1.0), opts, Streams::new(1));
        assert!(matches!(err, Err(LabError::InfeasibleConditioning { paths: 1000, .. })));
        let small = ConditionalOptions { max_paths: 10_000_000, batch_size: 1 << 20 };
        let err = conditional_cdf(&half, &x0, 1.0, 10, 5, &sigma_exact(1.0), small, Streams::new(1));
        match err {
            Err(LabError::InfeasibleConditioning { rate, paths }) => {
                assert_eq!(rate, 0.0);
                assert!(paths < 10_000_000);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn conditional_reports_progress() {
        let x0 = ChainState::standard(2);
        let mut seen = Vec::new();
        let opts = ConditionalOptions { max_paths: 10_000, batch_size: 100 };
        conditional_cdf_with_progress(
            &MatrixLaw::coin(),
            &x0,
            ln2(),
            16,
            50,
            &sigma_exact(ln2() * ln2()),
            opts,
            Streams::new(2),
            &mut |p| seen.push(p),
        )
        .unwrap();
        assert!(!seen.is_empty());
        assert_eq!(seen.last().unwrap().accepted, 50);
    }
}
