//! The transfer operator on P(R²), the Poisson equation θ − Pθ = ρ and the
//! martingale decomposition of S_n.
//!
//! P and P_t map functions of x = (g, v̄) to functions of g·v̄ alone, so the
//! grid discretizes the induced operator
//! (Q_t φ)(v̄) = E[e^{itρ(g, v̄)} φ(g·v̄)] on the projective line. Likewise
//! Pθ(x) = h(g·v̄) with h(w) = Σ_{n≥1} E_w ρ(X_n), and θ(x) = ρ(x) + h(g·v̄).

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::OnceLock;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::chain::Walker;
use crate::error::{LabError, Result};
use crate::laws::MatrixLaw;
use crate::matgroup::{cocycle, norm, ChainState, Mat};
use crate::rng::{derive_stream, fill_normals, Streams};
use crate::stats::{linear_fit, mean_var, EstimateWithCI};

pub const DEFAULT_ETA0: f64 = 0.5;
pub const MIN_NODES: usize = 64;
const MAX_ITERATIONS: usize = 100_000;

/// Dense m × m discretization of Q_t. Node i sits at angle (i + ½)π/m;
/// images are spread over the two neighbouring nodes by linear
/// interpolation in angle, with π identified with 0.
#[derive(Debug, Clone)]
pub struct OperatorGrid {
    pub m_nodes: usize,
    pub angles: Vec<f64>,
    /// Row-major; row i is the quadrature of Q_t at node i.
    pub matrix: Vec<Complex64>,
    pub t: f64,
    pub mc_per_node: usize,
}

impl OperatorGrid {
    pub fn entry(&self, i: usize, j: usize) -> Complex64 {
        self.matrix[i * self.m_nodes + j]
    }

    pub fn row_sums(&self) -> Vec<Complex64> {
        self.matrix.chunks(self.m_nodes).map(|r| r.iter().sum()).collect()
    }

    fn apply(&self, x: &[Complex64], out: &mut [Complex64]) {
        for (o, row) in out.iter_mut().zip(self.matrix.chunks(self.m_nodes)) {
            *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    fn apply_adjoint(&self, x: &[Complex64], out: &mut [Complex64]) {
        out.iter_mut().for_each(|o| *o = Complex64::new(0.0, 0.0));
        for (xi, row) in x.iter().zip(self.matrix.chunks(self.m_nodes)) {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a.conj() * xi;
            }
        }
    }

    /// CSV with columns `row,col,re,im`, nonzero entries only.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,col,re,im\n");
        for (k, a) in self.matrix.iter().enumerate() {
            if *a != Complex64::new(0.0, 0.0) {
                let _ = writeln!(out, "{},{},{:.17e},{:.17e}", k / self.m_nodes, k % self.m_nodes, a.re, a.im);
            }
        }
        out
    }
}

/// Monte Carlo quadrature of Q_t, `mc_per_node` draws per row on stream i.
pub fn discretize_operator(
    law: &MatrixLaw,
    t: f64,
    m_nodes: usize,
    mc_per_node: usize,
    eta0: f64,
    streams: Streams,
) -> Result<OperatorGrid> {
    if law.dim() != 2 {
        return Err(LabError::UnsupportedDimension(law.dim()));
    }
    if m_nodes < MIN_NODES || mc_per_node == 0 {
        return Err(LabError::InvalidInput(format!("grid needs ≥ {MIN_NODES} nodes and ≥ 1 draw per node")));
    }
    if !(t.abs() <= eta0) {
        return Err(LabError::InvalidInput(format!("|t| = {} exceeds η₀ = {eta0}", t.abs())));
    }
    let h = PI / m_nodes as f64;
    let angles: Vec<f64> = (0..m_nodes).map(|i| (i as f64 + 0.5) * h).collect();
    let weight = 1.0 / mc_per_node as f64;
    let rows: Vec<Vec<Complex64>> = angles
        .par_iter()
        .enumerate()
        .map(|(i, &a)| {
            let mut rng = streams.stream(i as u64);
            let mut row = vec![Complex64::new(0.0, 0.0); m_nodes];
            let v = [a.cos(), a.sin()];
            let mut m = Mat::zeros(2);
            let mut u = [0.0; 2];
            for _ in 0..mc_per_node {
                law.sample_into(&mut rng, &mut m);
                m.mul_vec_into(&v, &mut u);
                let r = norm(&u).ln();
                let image = u[1].atan2(u[0]).rem_euclid(PI);
                let pos = image / h - 0.5;
                let lo = pos.floor();
                let frac = pos - lo;
                let j0 = (lo as i64).rem_euclid(m_nodes as i64) as usize;
                let j1 = (j0 + 1) % m_nodes;
                let phase = if t == 0.0 { Complex64::new(1.0, 0.0) } else { Complex64::from_polar(1.0, t * r) };
                row[j0] += phase * ((1.0 - frac) * weight);
                row[j1] += phase * (frac * weight);
            }
            row
        })
        .collect();
    Ok(OperatorGrid { m_nodes, angles, matrix: rows.concat(), t, mc_per_node })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralReport {
    pub t: f64,
    pub leading: Complex64,
    pub second_modulus: f64,
    pub iterations: usize,
}

fn vnorm(x: &[Complex64]) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn inner(x: &[Complex64], y: &[Complex64]) -> Complex64 {
    x.iter().zip(y).map(|(a, b)| a.conj() * b).sum()
}

/// Power iteration from `start`; returns (eigenvalue, unit eigenvector,
/// iterations).
fn power_iteration(
    apply: impl Fn(&[Complex64], &mut [Complex64]),
    start: Vec<Complex64>,
    tol: f64,
) -> Result<(Complex64, Vec<Complex64>, usize)> {
    let mut x = start;
    let n0 = vnorm(&x);
    x.iter_mut().for_each(|z| *z /= n0);
    let mut y = vec![Complex64::new(0.0, 0.0); x.len()];
    let mut residual = f64::INFINITY;
    for it in 1..=MAX_ITERATIONS {
        apply(&x, &mut y);
        let lambda = inner(&x, &y);
        residual = y.iter().zip(&x).map(|(a, b)| (a - lambda * b).norm_sqr()).sum::<f64>().sqrt();
        let ny = vnorm(&y);
        if ny < 1e-300 {
            return Ok((Complex64::new(0.0, 0.0), x, it));
        }
        if residual <= tol * lambda.norm().max(1e-300) {
            return Ok((lambda, x, it));
        }
        for (a, b) in x.iter_mut().zip(&y) {
            *a = b / ny;
        }
    }
    Err(LabError::NonConvergence { iterations: MAX_ITERATIONS, residual })
}

/// Eigenvalues of a 2 × 2 complex matrix.
fn eig2(a: Complex64, b: Complex64, c: Complex64, d: Complex64) -> [Complex64; 2] {
    let half_tr = (a + d) * 0.5;
    let disc = (half_tr * half_tr - (a * d - b * c)).sqrt();
    [half_tr + disc, half_tr - disc]
}

/// Leading eigenvalue by power iteration from the constant vector, then
/// the spectral radius of the deflated operator B = A − λ r lᴴ/(lᴴ r).
///
/// The deflated radius is read from two-dimensional Rayleigh–Ritz on
/// span{z, Bz} along the power sequence, which resolves complex pairs of
/// equal modulus that plain norm growth would alias.
pub fn spectral_gap(grid: &OperatorGrid) -> Result<SpectralReport> {
    let m = grid.m_nodes;
    let ones = vec![Complex64::new(1.0, 0.0); m];
    let (lambda, r, it_right) = power_iteration(|x, y| grid.apply(x, y), ones.clone(), 1e-13)?;
    let (_, l, it_left) = power_iteration(|x, y| grid.apply_adjoint(x, y), ones, 1e-13)?;
    let lr = inner(&l, &r);
    let deflate = |x: &[Complex64], y: &mut [Complex64]| {
        grid.apply(x, y);
        let coef = lambda * inner(&l, x) / lr;
        for (yi, ri) in y.iter_mut().zip(&r) {
            *yi -= coef * ri;
        }
    };

    // deterministic generic start
    let mut rng = derive_stream(0x0005_EC0D, 0);
    let mut buf = vec![0.0; 2 * m];
    fill_normals(&mut rng, &mut buf);
    let mut z: Vec<Complex64> = buf.chunks(2).map(|p| Complex64::new(p[0], p[1])).collect();
    let nz = vnorm(&z);
    z.iter_mut().for_each(|v| *v /= nz);
    let mut w1 = vec![Complex64::new(0.0, 0.0); m];
    let mut w2 = vec![Complex64::new(0.0, 0.0); m];
    deflate(&z, &mut w1);
    let mut prev = f64::NAN;
    let mut stable = 0;
    let mut change = f64::INFINITY;
    for it in 1..=MAX_ITERATIONS {
        let n1 = vnorm(&w1);
        if n1 < 1e-300 {
            return Ok(SpectralReport {
                t: grid.t,
                leading: lambda,
                second_modulus: 0.0,
                iterations: it_right + it_left + it,
            });
        }
        deflate(&w1, &mut w2);
        let alpha = inner(&z, &w1);
        let resid: Vec<Complex64> = w1.iter().zip(&z).map(|(a, b)| a - alpha * b).collect();
        let beta = vnorm(&resid);
        let modulus = if beta <= 1e-12 * n1 {
            alpha.norm()
        } else {
            // B q2 = (w2 − α w1)/β with q2 = (w1 − α z)/β
            let bq2: Vec<Complex64> = w2.iter().zip(&w1).map(|(a, b)| (a - alpha * b) / beta).collect();
            let q2: Vec<Complex64> = resid.iter().map(|v| v / beta).collect();
            let h12 = inner(&z, &bq2);
            let h22 = inner(&q2, &bq2);
            let [e1, e2] = eig2(alpha, h12, Complex64::new(beta, 0.0), h22);
            e1.norm().max(e2.norm())
        };
        change = (modulus - prev).abs();
        if change <= 1e-10 * modulus.max(1e-12) {
            stable += 1;
            if stable >= 3 {
                return Ok(SpectralReport {
                    t: grid.t,
                    leading: lambda,
                    second_modulus: modulus,
                    iterations: it_right + it_left + it,
                });
            }
        } else {
            stable = 0;
        }
        prev = modulus;
        for (zi, wi) in z.iter_mut().zip(&w1) {
            *zi = wi / n1;
        }
        for (a, b) in w1.iter_mut().zip(&w2) {
            *a = b / n1;
        }
    }
    Err(LabError::NonConvergence { iterations: MAX_ITERATIONS, residual: change })
}

/// Estimate of θ(x) by the truncated series ρ(x) + Σ_{n=1}^{N} Pⁿρ(x).
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaEstimate {
    pub at: ChainState,
    pub theta: f64,
    pub theta_stderr: f64,
    pub rho: f64,
    pub truncation_n: usize,
    /// Bound on |Pⁿρ(x)| for n ≥ N/2: the geometric fit there plus four
    /// standard errors.
    pub tail_bound: f64,
    /// Ê_x ρ(X_n) for n = 1..=N.
    pub per_term: Vec<f64>,
    pub per_term_stderr: Vec<f64>,
    /// Fitted ratio r of |Pⁿρ(x)| ≈ c rⁿ; `None` when fewer than two
    /// leading terms stand above 3 standard errors.
    pub decay_ratio: Option<f64>,
}

impl ThetaEstimate {
    /// Pθ(x) = θ(x) − ρ(x).
    pub fn p_theta(&self) -> f64 {
        self.theta - self.rho
    }
}

pub const MAX_TRUNCATION: usize = 200;

/// Terms below this are rounding noise of an exactly vanishing Pⁿρ.
const ROUNDING_FLOOR: f64 = 1e-12;

/// Per-term Monte Carlo of Pⁿρ(x) on `reps_per_term` shared paths.
pub fn estimate_theta(
    law: &MatrixLaw,
    x: &ChainState,
    truncation_n: usize,
    reps_per_term: usize,
    streams: Streams,
) -> Result<ThetaEstimate> {
    if x.dim() != law.dim() {
        return Err(LabError::InvalidInput("state dimension does not match law".into()));
    }
    if truncation_n == 0 || truncation_n > MAX_TRUNCATION || reps_per_term < 2 {
        return Err(LabError::InvalidInput(format!("truncation must be in 1..={MAX_TRUNCATION} with ≥ 2 reps")));
    }
    let w0 = x.moved_dir();
    let paths: Vec<Vec<f64>> = (0..reps_per_term as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = streams.stream(i);
            let mut walker = Walker::new(law, w0.rep());
            (0..truncation_n).map(|_| walker.step(&mut rng)).collect()
        })
        .collect();
    let reps = reps_per_term as f64;
    let mut per_term = Vec::with_capacity(truncation_n);
    let mut per_term_stderr = Vec::with_capacity(truncation_n);
    for n in 0..truncation_n {
        let col: Vec<f64> = paths.iter().map(|p| p[n]).collect();
        let (m, v) = mean_var(&col);
        per_term.push(m);
        per_term_stderr.push((v / reps).sqrt());
    }
    let sums: Vec<f64> = paths.iter().map(|p| p.iter().sum()).collect();
    let (_, sum_var) = mean_var(&sums);
    let rho = cocycle(&x.g, &x.dir);

    let significant =
        per_term.iter().zip(&per_term_stderr).take_while(|(t, s)| t.abs() > 3.0 * **s + ROUNDING_FLOOR).count();
    let half = truncation_n / 2;
    let tail_noise = per_term_stderr[half.min(truncation_n - 1)..].iter().cloned().fold(0.0, f64::max);
    let (decay_ratio, fitted_at_half) = if significant >= 2 {
        let ns: Vec<f64> = (1..=significant).map(|n| n as f64).collect();
        let logs: Vec<f64> = per_term[..significant].iter().map(|t| t.abs().ln()).collect();
        let fit = linear_fit(&ns, &logs);
        let ratio = fit.slope.exp();
        if ratio >= 1.0 {
            return Err(LabError::NoDecay { ratio });
        }
        (Some(ratio), (fit.intercept + fit.slope * half as f64).exp())
    } else {
        (None, 0.0)
    };
    Ok(ThetaEstimate {
        at: x.clone(),
        theta: rho + per_term.iter().sum::<f64>(),
        theta_stderr: (sum_var / reps).sqrt(),
        rho,
        truncation_n,
        tail_bound: fitted_at_half + 4.0 * tail_noise,
        per_term,
        per_term_stderr,
        decay_ratio,
    })
}

/// ĥ(w) with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HValue {
    pub value: f64,
    pub stderr: f64,
}

pub const ANGLE_CELLS: usize = 4096;

/// Memoized ĥ(w) = Σ_{n=1}^{N} Ê_w ρ(X_n), so θ̂ and P̂θ̂ along paths come
/// from one consistent function.
///
/// For d = 2 directions are binned into `ANGLE_CELLS` cells of width
/// π/4096 and ĥ is evaluated once per cell at the cell centre. For d > 2
/// every direction is evaluated afresh. Either way the paths used for a
/// given cell or direction are fixed by the seed, so values never depend
/// on the order or thread of first use.
pub struct PoissonSolver<'a> {
    law: &'a MatrixLaw,
    truncation_n: usize,
    reps: usize,
    streams: Streams,
    cells: Vec<OnceLock<HValue>>,
}

impl<'a> PoissonSolver<'a> {
    pub fn new(law: &'a MatrixLaw, truncation_n: usize, reps: usize, streams: Streams) -> Result<Self> {
        if truncation_n == 0 || truncation_n > MAX_TRUNCATION || reps < 2 {
            return Err(LabError::InvalidInput(format!("truncation must be in 1..={MAX_TRUNCATION} with ≥ 2 reps")));
        }
        let cells = if law.dim() == 2 { (0..ANGLE_CELLS).map(|_| OnceLock::new()).collect() } else { Vec::new() };
        Ok(PoissonSolver { law, truncation_n, reps, streams, cells })
    }

    pub fn truncation_n(&self) -> usize {
        self.truncation_n
    }

    fn evaluate(&self, w: &[f64], family: Streams) -> HValue {
        let sums: Vec<f64> = (0..self.reps as u64)
            .map(|i| {
                let mut rng = family.stream(i);
                let mut walker = Walker::new(self.law, w);
                (0..self.truncation_n).map(|_| walker.step(&mut rng)).sum()
            })
            .collect();
        let (value, var) = mean_var(&sums);
        HValue { value, stderr: (var / self.reps as f64).sqrt() }
    }

    /// ĥ at the unit vector `w` (sign-invariant).
    pub fn h(&self, w: &[f64]) -> HValue {
        if self.law.dim() == 2 {
            let angle = w[1].atan2(w[0]).rem_euclid(PI);
            let cell = ((angle / PI * ANGLE_CELLS as f64) as usize).min(ANGLE_CELLS - 1);
            *self.cells[cell].get_or_init(|| {
                let centre = (cell as f64 + 0.5) * PI / ANGLE_CELLS as f64;
                self.evaluate(&[centre.cos(), centre.sin()], self.streams.sub(cell as u64))
            })
        } else {
            self.evaluate(w, self.streams.sub(direction_key(w)))
        }
    }

    /// P̂θ̂(x) = ĥ(g·v̄).
    pub fn p_theta(&self, x: &ChainState) -> HValue {
        self.h(x.moved_dir().rep())
    }

    /// θ̂(x) = ρ(x) + ĥ(g·v̄).
    pub fn theta(&self, x: &ChainState) -> f64 {
        cocycle(&x.g, &x.dir) + self.p_theta(x).value
    }
}

/// FNV-1a over the bits of the sign-normalized direction.
fn direction_key(w: &[f64]) -> u64 {
    let flip = w.iter().find(|v| **v != 0.0).is_some_and(|v| *v < 0.0);
    let mut hash = 0xCBF2_9CE4_8422_2325u64;
    for v in w {
        let v = if flip { -v } else { *v } + 0.0;
        for b in v.to_bits().to_le_bytes() {
            hash ^= b as u64;
            hash = hash.wrapping_mul(0x0000_0100_0000_01B3);
        }
    }
    hash
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoissonResidual {
    /// |θ̂(x) − P̂θ̂(x) − ρ(x)|.
    pub residual: f64,
    /// tail_bound + 3·mc_error.
    pub budget: f64,
    pub tail_bound: f64,
    pub mc_error: f64,
}

impl PoissonResidual {
    pub fn within_budget(&self) -> bool {
        self.residual <= self.budget
    }
}

/// Checks θ̂ − P̂θ̂ = ρ at `x`. θ̂(x) comes from the solver; P̂θ̂(x) is an
/// independent one-step average of θ̂ over `n_next` draws of X_1.
pub fn poisson_residual(
    solver: &PoissonSolver<'_>,
    x: &ChainState,
    tail_bound: f64,
    n_next: usize,
    streams: Streams,
) -> Result<PoissonResidual> {
    if n_next < 2 || x.dim() != solver.law.dim() {
        return Err(LabError::InvalidInput("need ≥ 2 next states of matching dimension".into()));
    }
    let w = x.moved_dir();
    let h_here = solver.h(w.rep());
    let next: Vec<(f64, f64)> = (0..n_next as u64)
        .into_par_iter()
        .map(|j| {
            let mut rng = streams.stream(j);
            let mut walker = Walker::new(solver.law, w.rep());
            let rho = walker.step(&mut rng);
            let h = solver.h(walker.dir());
            (rho + h.value, h.stderr * h.stderr)
        })
        .collect();
    let vals: Vec<f64> = next.iter().map(|p| p.0).collect();
    let (p_theta, var) = mean_var(&vals);
    // mean of cached errors bounds the variance of their average whatever
    // the cell multiplicities
    let cell_var = next.iter().map(|p| p.1).sum::<f64>() / n_next as f64;
    let mc_error = (h_here.stderr.powi(2) + var / n_next as f64 + cell_var).sqrt();
    let residual = (h_here.value - p_theta).abs();
    Ok(PoissonResidual { residual, budget: tail_bound + 3.0 * mc_error, tail_bound, mc_error })
}

/// S_k − M̂_k along simulated paths with M̂_k = Σ_{i≤k} θ̂(X_i) − P̂θ̂(X_{i−1}).
#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleReport {
    /// max over paths and k ≤ n of |S_k − M̂_k|.
    pub max_residual: f64,
    /// max |P̂θ̂| seen along the paths.
    pub max_abs_p_theta: f64,
    /// RMS of the ĥ standard errors met along the paths.
    pub mc_error: f64,
    /// Mean over paths of |S_k − M̂_k|, k = 1..=n.
    pub mean_residual: Vec<f64>,
    /// Mean per-path least-squares slope of |S_k − M̂_k| against k, over
    /// k ≥ fit_from.
    pub slope: EstimateWithCI,
    pub fit_from: usize,
}

impl MartingaleReport {
    /// 2·max|P̂θ̂| + 3·mc_error.
    pub fn bound(&self) -> f64 {
        2.0 * self.max_abs_p_theta + 3.0 * self.mc_error
    }
}

/// The slope fit starts at `fit_from`: from a fixed x0 the residual
/// climbs to its stationary level over the first few steps, and that
/// transient would register as growth.
pub fn martingale_residual(
    solver: &PoissonSolver<'_>,
    x0: &ChainState,
    n: usize,
    n_paths: usize,
    fit_from: usize,
    streams: Streams,
) -> Result<MartingaleReport> {
    if fit_from == 0 || fit_from + 3 > n || n_paths < 2 || x0.dim() != solver.law.dim() {
        return Err(LabError::InvalidInput("need 1 ≤ fit_from ≤ n − 3, ≥ 2 paths and matching dimension".into()));
    }
    let w0 = x0.moved_dir();
    struct PathOut {
        residuals: Vec<f64>,
        max_p: f64,
        se2: f64,
    }
    let outs: Vec<PathOut> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = streams.stream(i);
            let mut walker = Walker::new(solver.law, w0.rep());
            let mut prev = solver.h(w0.rep());
            let mut max_p = prev.value.abs();
            let mut se2 = prev.stderr * prev.stderr;
            let (mut s, mut m) = (0.0, 0.0);
            let mut residuals = Vec::with_capacity(n);
            for _ in 0..n {
                let rho = walker.step(&mut rng);
                let h = solver.h(walker.dir());
                s += rho;
                m += rho + h.value - prev.value;
                residuals.push((s - m).abs());
                max_p = max_p.max(h.value.abs());
                se2 = se2.max(h.stderr * h.stderr);
                prev = h;
            }
            PathOut { residuals, max_p, se2 }
        })
        .collect();
    let ks: Vec<f64> = (fit_from..=n).map(|k| k as f64).collect();
    let slopes: Vec<f64> = outs.iter().map(|o| linear_fit(&ks, &o.residuals[fit_from - 1..]).slope).collect();
    let mean_residual = (0..n).map(|k| outs.iter().map(|o| o.residuals[k]).sum::<f64>() / n_paths as f64).collect();
    Ok(MartingaleReport {
        max_residual: outs.iter().flat_map(|o| o.residuals.iter().copied()).fold(0.0, f64::max),
        max_abs_p_theta: outs.iter().map(|o| o.max_p).fold(0.0, f64::max),
        mc_error: outs.iter().map(|o| o.se2).fold(0.0, f64::max).sqrt(),
        mean_residual,
        slope: EstimateWithCI::from_samples(&slopes, streams.seed()),
        fit_from,
    })
}
