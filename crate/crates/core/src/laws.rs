//! Matrix laws μ on GL(d, R) and the checks that calibrate them.
//!
//! Random-word consumption per `sample` call is fixed for each kind:
//!
//! | kind                | words per sample                    |
//! |---------------------|-------------------------------------|
//! | `FiniteAtomic`      | 1                                   |
//! | `SmoothExponential` | 2·⌈d²/2⌉                            |
//! | `ScaledMixture`     | 1 + words of the base (always drawn)|

use rand::RngCore;
use rayon::prelude::*;

use crate::chain::Walker;
use crate::error::{LabError, Result};
use crate::matgroup::{expm2_into, make_group_element, GroupElement, Mat, ProjectivePoint};
use crate::rng::{fill_normals, uniform, unit_vector, Streams};
use crate::stats::EstimateWithCI;

#[derive(Debug, Clone)]
pub enum LawKind {
    /// Finitely many atoms with positive weights summing to one.
    FiniteAtomic { atoms: Vec<(f64, GroupElement)> },
    /// `exp(scale·(A + drift))·e^{log_shift}` with A a matrix of i.i.d.
    /// standard normals. `drift` breaks the orthogonal invariance of the
    /// plain Gaussian law.
    SmoothExponential { dim: usize, scale: f64, log_shift: f64, drift: Option<Mat> },
    /// With probability `alpha` emit `lambda·I`, else `base/lambda`.
    ScaledMixture { alpha: f64, lambda: f64, base: Box<MatrixLaw> },
}

/// A sampleable probability measure on GL(d, R).
#[derive(Debug, Clone)]
pub struct MatrixLaw {
    kind: LawKind,
    label: String,
    cumulative: Vec<f64>,
    /// Every sample is multiplied by `exp(log_scale)`; set by recentring.
    log_scale: f64,
}

impl MatrixLaw {
    pub fn finite_atomic(atoms: Vec<(f64, GroupElement)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(LabError::InvalidInput("finite law needs at least one atom".into()));
        }
        let dim = atoms[0].1.dim();
        if atoms.iter().any(|(w, g)| !(*w > 0.0) || g.dim() != dim) {
            return Err(LabError::InvalidInput("atom weights must be positive and atoms of equal dimension".into()));
        }
        let total: f64 = atoms.iter().map(|(w, _)| w).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(LabError::InvalidInput(format!("atom weights sum to {total}, not 1")));
        }
        let mut acc = 0.0;
        let cumulative = atoms
            .iter()
            .map(|(w, _)| {
                acc += w;
                acc
            })
            .collect();
        Ok(MatrixLaw { kind: LawKind::FiniteAtomic { atoms }, label: "finite".into(), cumulative, log_scale: 0.0 })
    }

    pub fn point_mass(g: GroupElement) -> Self {
        MatrixLaw::finite_atomic(vec![(1.0, g)]).expect("single atom").with_label("point-mass")
    }

    /// The diagonal coin law ½δ_{diag(2,½)} + ½δ_{diag(½,2)}. From e̅₁ its
    /// cocycle is a fair ±ln 2 coin.
    pub fn coin() -> Self {
        let up = make_group_element(Mat::diag(&[2.0, 0.5])).expect("invertible");
        let down = make_group_element(Mat::diag(&[0.5, 2.0])).expect("invertible");
        MatrixLaw::finite_atomic(vec![(0.5, up), (0.5, down)]).expect("valid").with_label("coin")
    }

    pub fn smooth_exponential(dim: usize, scale: f64, log_shift: f64) -> Result<Self> {
        if dim < 2 || !(scale > 0.0) || !scale.is_finite() || !log_shift.is_finite() {
            return Err(LabError::InvalidInput("smooth law needs d ≥ 2 and finite scale > 0".into()));
        }
        Ok(MatrixLaw {
            kind: LawKind::SmoothExponential { dim, scale, log_shift, drift: None },
            label: "smooth-exponential".into(),
            cumulative: Vec::new(),
            log_scale: 0.0,
        })
    }

    /// Adds a fixed drift matrix to the Gaussian generator (smooth laws only).
    pub fn with_drift(mut self, drift: Mat) -> Result<Self> {
        match &mut self.kind {
            LawKind::SmoothExponential { dim, drift: slot, .. } if *dim == drift.dim() => {
                *slot = Some(drift);
                Ok(self)
            }
            _ => Err(LabError::InvalidInput("drift needs a smooth law of matching dimension".into())),
        }
    }

    pub fn scaled_mixture(alpha: f64, lambda: f64, base: MatrixLaw) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) || !(lambda > 1.0) || !lambda.is_finite() {
            return Err(LabError::InvalidInput("mixture needs alpha in [0,1] and lambda > 1".into()));
        }
        Ok(MatrixLaw {
            kind: LawKind::ScaledMixture { alpha, lambda, base: Box::new(base) },
            label: "scaled-mixture".into(),
            cumulative: Vec::new(),
            log_scale: 0.0,
        })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn kind(&self) -> &LawKind {
        &self.kind
    }

    pub fn log_scale(&self) -> f64 {
        self.log_scale
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            LawKind::FiniteAtomic { atoms } => atoms[0].1.dim(),
            LawKind::SmoothExponential { dim, .. } => *dim,
            LawKind::ScaledMixture { base, .. } => base.dim(),
        }
    }

    /// Random words consumed by one `sample` call.
    pub fn words_per_sample(&self) -> usize {
        match &self.kind {
            LawKind::FiniteAtomic { .. } => 1,
            LawKind::SmoothExponential { dim, .. } => 2 * (dim * dim).div_ceil(2),
            LawKind::ScaledMixture { base, .. } => 1 + base.words_per_sample(),
        }
    }

    /// Writes one draw into `out` (which must be d×d).
    pub fn sample_into<R: RngCore + ?Sized>(&self, rng: &mut R, out: &mut Mat) {
        self.sample_unscaled(rng, out);
        if self.log_scale != 0.0 {
            out.scale_in_place(self.log_scale.exp());
        }
    }

    fn sample_unscaled<R: RngCore + ?Sized>(&self, rng: &mut R, out: &mut Mat) {
        match &self.kind {
            LawKind::FiniteAtomic { atoms } => {
                let u = uniform(rng);
                let idx = self.cumulative.partition_point(|&c| c <= u).min(atoms.len() - 1);
                out.as_mut_slice().copy_from_slice(atoms[idx].1.matrix().as_slice());
            }
            LawKind::SmoothExponential { dim, scale, log_shift, drift } => {
                let d = *dim;
                if d == 2 {
                    let mut a = [0.0; 4];
                    fill_normals(rng, &mut a);
                    if let Some(drift) = drift {
                        a.iter_mut().zip(drift.as_slice()).for_each(|(x, m)| *x += m);
                    }
                    a.iter_mut().for_each(|x| *x *= scale);
                    expm2_into(&a, out.as_mut_slice());
                } else {
                    let mut a = Mat::zeros(d);
                    fill_normals(rng, a.as_mut_slice());
                    if let Some(drift) = drift {
                        a.as_mut_slice().iter_mut().zip(drift.as_slice()).for_each(|(x, m)| *x += m);
                    }
                    a.scale_in_place(*scale);
                    out.as_mut_slice().copy_from_slice(a.expm().as_slice());
                }
                if *log_shift != 0.0 {
                    out.scale_in_place(log_shift.exp());
                }
            }
            LawKind::ScaledMixture { alpha, lambda, base } => {
                let u = uniform(rng);
                base.sample_into(rng, out);
                if u < *alpha {
                    let d = out.dim();
                    out.as_mut_slice().iter_mut().for_each(|x| *x = 0.0);
                    for i in 0..d {
                        out.set(i, i, *lambda);
                    }
                } else {
                    out.scale_in_place(1.0 / lambda);
                }
            }
        }
    }

    /// One draw from μ as a group element.
    ///
    /// # Panics
    /// If the drawn matrix is numerically singular, which the law kinds here
    /// exclude for any sane parameters.
    pub fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> GroupElement {
        let mut m = Mat::zeros(self.dim());
        self.sample_into(rng, &mut m);
        make_group_element(m).expect("law produced a singular matrix")
    }
}

/// Lyapunov exponent of the mixture `α δ_{λI} + (1−α) base(·/λ)` given the
/// base exponent.
pub fn mixture_lyapunov(alpha: f64, lambda: f64, base_gamma: f64) -> f64 {
    alpha * lambda.ln() + (1.0 - alpha) * (base_gamma - lambda.ln())
}

/// The α that makes `mixture_lyapunov` vanish.
pub fn balanced_alpha(lambda: f64, base_gamma: f64) -> f64 {
    let l = lambda.ln();
    (l - base_gamma) / (2.0 * l - base_gamma)
}

/// Trajectory average of the cocycle after burn-in, replicated over
/// independent streams `0..n_reps`.
pub fn estimate_lyapunov(
    law: &MatrixLaw,
    start: &ProjectivePoint,
    n_steps: usize,
    n_burnin: usize,
    n_reps: usize,
    streams: Streams,
) -> Result<EstimateWithCI> {
    if n_steps < 1000 || n_reps == 0 {
        return Err(LabError::InvalidInput("lyapunov estimate needs n_steps ≥ 1000, n_reps ≥ 1".into()));
    }
    if start.dim() != law.dim() {
        return Err(LabError::InvalidInput("start direction dimension mismatch".into()));
    }
    let per_rep: Vec<f64> = (0..n_reps as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = streams.stream(r);
            let mut walker = Walker::new(law, start.rep());
            for _ in 0..n_burnin {
                walker.step(&mut rng);
            }
            let mut sum = 0.0;
            for _ in 0..n_steps {
                sum += walker.step(&mut rng);
            }
            sum / n_steps as f64
        })
        .collect();
    Ok(EstimateWithCI::from_samples(&per_rep, streams.seed()))
}

/// Multiplies every draw by `e^{−gamma_hat}`, shifting the cocycle by
/// `−gamma_hat` and leaving the projective action untouched.
pub fn recenter_to_zero_lyapunov(law: &MatrixLaw, gamma_hat: f64) -> Result<MatrixLaw> {
    if !gamma_hat.is_finite() {
        return Err(LabError::InvalidInput("gamma_hat must be finite".into()));
    }
    let mut out = law.clone();
    out.log_scale -= gamma_hat;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct P1Report {
    /// Sample mean of N(g)^δ₀.
    pub moment: EstimateWithCI,
    pub max_log_n: f64,
    /// The top 1% of samples carries more than half of the mean.
    pub heavy_tail: bool,
}

/// Moment check `∫ N(g)^δ₀ dμ < ∞` on `n_samples` draws from stream 0.
pub fn check_p1(law: &MatrixLaw, delta0: f64, n_samples: usize, streams: Streams) -> Result<P1Report> {
    if !(delta0 > 0.0 && delta0 <= 1.0) || n_samples == 0 {
        return Err(LabError::InvalidInput("check_p1 needs delta0 in (0, 1] and samples".into()));
    }
    let mut rng = streams.stream(0);
    let mut values = Vec::with_capacity(n_samples);
    let mut max_log_n = f64::NEG_INFINITY;
    for _ in 0..n_samples {
        let g = law.sample(&mut rng);
        let n = g.n_norm();
        max_log_n = max_log_n.max(n.ln());
        values.push(n.powf(delta0));
    }
    let moment = EstimateWithCI::from_samples(&values, streams.seed());
    let total: f64 = values.iter().sum();
    let mut sorted = values.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let top = n_samples.div_ceil(100);
    let top_sum: f64 = sorted[..top].iter().sum();
    Ok(P1Report { moment, max_log_n, heavy_tail: top_sum > 0.5 * total })
}

#[derive(Debug, Clone, PartialEq)]
pub struct P5Report {
    pub min_probability: f64,
    /// Binomial standard error at the minimizing direction.
    pub stderr: f64,
    pub worst_direction: Vec<f64>,
    pub n_samples: usize,
}

/// Deterministic direction set: equally spaced on the half circle (d = 2),
/// spherical Fibonacci points (d = 3), seeded uniform draws otherwise.
pub fn probe_directions(dim: usize, count: usize, streams: Streams) -> Vec<Vec<f64>> {
    match dim {
        2 => (0..count)
            .map(|k| {
                let a = std::f64::consts::PI * k as f64 / count as f64;
                vec![a.cos(), a.sin()]
            })
            .collect(),
        3 => {
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            (0..count)
                .map(|k| {
                    let z = 1.0 - (2 * k + 1) as f64 / count as f64;
                    let r = (1.0 - z * z).sqrt();
                    let phi = golden * k as f64;
                    vec![r * phi.cos(), r * phi.sin(), z]
                })
                .collect()
        }
        _ => {
            let mut rng = streams.sub(0x5EED).stream(0);
            (0..count).map(|_| unit_vector(&mut rng, dim)).collect()
        }
    }
}

/// Empirical `inf_s μ(g : log‖g s‖ > δ)` over `n_directions` probe
/// directions, all scored on one common set of draws.
pub fn check_p5(
    law: &MatrixLaw,
    delta: f64,
    n_directions: usize,
    n_samples: usize,
    streams: Streams,
) -> Result<P5Report> {
    if n_directions < 64 || n_samples == 0 || !(delta > 0.0) {
        return Err(LabError::InvalidInput("check_p5 needs ≥ 64 directions, samples, delta > 0".into()));
    }
    let dim = law.dim();
    let dirs = probe_directions(dim, n_directions, streams);
    let mut counts = vec![0usize; dirs.len()];
    let mut rng = streams.stream(0);
    let mut m = Mat::zeros(dim);
    let mut img = vec![0.0; dim];
    for _ in 0..n_samples {
        law.sample_into(&mut rng, &mut m);
        for (c, s) in counts.iter_mut().zip(&dirs) {
            m.mul_vec_into(s, &mut img);
            if crate::matgroup::norm(&img).ln() > delta {
                *c += 1;
            }
        }
    }
    let (worst, &count) = counts.iter().enumerate().min_by_key(|(_, c)| **c).expect("non-empty");
    let p = count as f64 / n_samples as f64;
    Ok(P5Report {
        min_probability: p,
        stderr: crate::stats::binomial_stderr(p, n_samples),
        worst_direction: dirs[worst].clone(),
        n_samples,
    })
}
