//! Linear algebra on GL(d, R) and the projective space P(R^d).
//!
//! Everything here is deterministic. Matrices are small (d between 2 and
//! roughly 10) and stored densely in row-major order.

use std::fmt;
use std::ops::Mul;

use crate::error::{LabError, Result};

/// Condition numbers above this are treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

const POWER_ITER_TOL: f64 = 1e-14;
const POWER_ITER_MAX: usize = 10_000;

/// A dense square matrix, row-major.
#[derive(Clone, PartialEq)]
pub struct Mat {
    dim: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Mat").field("dim", &self.dim).field("data", &self.data).finish()
    }
}

impl Mat {
    pub fn zeros(dim: usize) -> Self {
        Mat { dim, data: vec![0.0; dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Mat::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Mat::zeros(values.len());
        for (i, &v) in values.iter().enumerate() {
            m.data[i * values.len() + i] = v;
        }
        m
    }

    /// Builds a matrix from a row-major flat list of d² entries.
    pub fn from_row_major(data: Vec<f64>) -> Result<Self> {
        let dim = (data.len() as f64).sqrt().round() as usize;
        if dim < 2 || dim * dim != data.len() {
            return Err(LabError::InvalidInput(format!(
                "matrix literal needs d² entries with d ≥ 2, got {}",
                data.len()
            )));
        }
        Ok(Mat { dim, data })
    }

    /// Rotation by `angle` radians in the plane.
    pub fn rotation(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Mat { dim: 2, data: vec![c, -s, s, c] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.dim + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.dim + col] = value;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Mat {
        let d = self.dim;
        let mut t = Mat::zeros(d);
        for i in 0..d {
            for j in 0..d {
                t.data[j * d + i] = self.data[i * d + j];
            }
        }
        t
    }

    pub fn scaled(&self, factor: f64) -> Mat {
        Mat { dim: self.dim, data: self.data.iter().map(|x| x * factor).collect() }
    }

    pub fn scale_in_place(&mut self, factor: f64) {
        self.data.iter_mut().for_each(|x| *x *= factor);
    }

    /// Writes `self · v` into `out`.
    #[inline]
    pub fn mul_vec_into(&self, v: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for (i, o) in out.iter_mut().enumerate().take(d) {
            let row = &self.data[i * d..(i + 1) * d];
            *o = row.iter().zip(v).map(|(a, b)| a * b).sum();
        }
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.mul_vec_into(v, &mut out);
        out
    }

    /// Max-abs entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    /// Matrix exponential: closed form for d = 2, scaling and squaring with
    /// a Taylor series otherwise.
    pub fn expm(&self) -> Mat {
        if self.dim == 2 {
            let mut out = Mat::zeros(2);
            expm2_into(&self.data, &mut out.data);
            out
        } else {
            expm_taylor(self)
        }
    }
}

impl Mul for &Mat {
    type Output = Mat;

    fn mul(self, rhs: &Mat) -> Mat {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch");
        let d = self.dim;
        let mut out = Mat::zeros(d);
        for i in 0..d {
            for k in 0..d {
                let a = self.data[i * d + k];
                if a == 0.0 {
                    continue;
                }
                for j in 0..d {
                    out.data[i * d + j] += a * rhs.data[k * d + j];
                }
            }
        }
        out
    }
}

/// exp of a 2×2 matrix via `M = (tr/2) I + N`, `N² = δ I`.
#[inline]
pub(crate) fn expm2_into(m: &[f64], out: &mut [f64]) {
    let half_tr = 0.5 * (m[0] + m[3]);
    let n00 = m[0] - half_tr;
    let n01 = m[1];
    let n10 = m[2];
    let delta = n00 * n00 + n01 * n10;
    let r = delta.abs().sqrt();
    let (c, s) = if r < 1e-8 {
        // second-order series; error below 1e-17
        (1.0 + 0.5 * delta, 1.0 + delta / 6.0)
    } else if delta > 0.0 {
        (r.cosh(), r.sinh() / r)
    } else {
        (r.cos(), r.sin() / r)
    };
    let e = half_tr.exp();
    out[0] = e * (c + s * n00);
    out[1] = e * s * n01;
    out[2] = e * s * n10;
    out[3] = e * (c - s * n00);
}

fn expm_taylor(m: &Mat) -> Mat {
    let d = m.dim;
    let norm = (0..d).map(|i| (0..d).map(|j| m.get(i, j).abs()).sum::<f64>()).fold(0.0, f64::max);
    let mut squarings = 0;
    if norm > 0.5 {
        squarings = (norm / 0.5).log2().ceil() as i32;
    }
    let a = m.scaled(0.5_f64.powi(squarings));
    let mut result = Mat::identity(d);
    let mut term = Mat::identity(d);
    for k in 1..=18 {
        term = &term * &a;
        term.scale_in_place(1.0 / k as f64);
        for (r, t) in result.data.iter_mut().zip(&term.data) {
            *r += t;
        }
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// Largest singular value of `m`, by power iteration on mᵀm.
///
/// The start vector is (1, …, 1)/√d. A second start with alternating signs
/// guards against the first one being orthogonal to the top singular vector;
/// the larger Rayleigh quotient wins.
pub fn op_norm(m: &Mat) -> Result<f64> {
    if !m.is_finite() {
        return Err(LabError::InvalidInput("matrix has non-finite entries".into()));
    }
    let gram = &m.transpose() * m;
    let d = m.dim();
    let inv_sqrt = 1.0 / (d as f64).sqrt();
    let flat: Vec<f64> = vec![inv_sqrt; d];
    let alternating: Vec<f64> = (0..d).map(|i| if i % 2 == 0 { inv_sqrt } else { -inv_sqrt }).collect();
    let a = rayleigh_power(&gram, flat);
    let b = rayleigh_power(&gram, alternating);
    Ok(a.max(b).max(0.0).sqrt())
}

fn rayleigh_power(gram: &Mat, mut x: Vec<f64>) -> f64 {
    let mut y = vec![0.0; x.len()];
    let mut estimate = 0.0;
    for _ in 0..POWER_ITER_MAX {
        gram.mul_vec_into(&x, &mut y);
        let next = dot(&x, &y);
        let ny = norm(&y);
        if ny == 0.0 {
            return 0.0;
        }
        for (xi, yi) in x.iter_mut().zip(&y) {
            *xi = yi / ny;
        }
        if (next - estimate).abs() <= POWER_ITER_TOL * next.abs() {
            return next;
        }
        estimate = next;
    }
    estimate
}

/// Inverse by Gauss–Jordan elimination with partial pivoting. On failure
/// returns the offending pivot magnitude.
fn invert(m: &Mat) -> std::result::Result<Mat, f64> {
    let d = m.dim();
    let scale = m.max_abs();
    if scale == 0.0 {
        return Err(0.0);
    }
    let mut a = m.clone();
    let mut inv = Mat::identity(d);
    for col in 0..d {
        let (pivot_row, pivot_abs) =
            (col..d)
                .map(|r| (r, a.get(r, col).abs()))
                .fold((col, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if pivot_abs <= f64::MIN_POSITIVE * scale {
            return Err(pivot_abs);
        }
        if pivot_row != col {
            for j in 0..d {
                a.data.swap(col * d + j, pivot_row * d + j);
                inv.data.swap(col * d + j, pivot_row * d + j);
            }
        }
        let p = a.get(col, col);
        for j in 0..d {
            a.data[col * d + j] /= p;
            inv.data[col * d + j] /= p;
        }
        for r in 0..d {
            if r == col {
                continue;
            }
            let f = a.get(r, col);
            if f == 0.0 {
                continue;
            }
            for j in 0..d {
                a.data[r * d + j] -= f * a.data[col * d + j];
                inv.data[r * d + j] -= f * inv.data[col * d + j];
            }
        }
    }
    Ok(inv)
}

/// An invertible matrix together with its inverse and both operator norms.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupElement {
    entries: Mat,
    inverse: Mat,
    op_norm: f64,
    inv_op_norm: f64,
}

/// Validates invertibility of `m` and caches inverse and norms.
pub fn make_group_element(m: Mat) -> Result<GroupElement> {
    if !m.is_finite() {
        return Err(LabError::InvalidInput("matrix has non-finite entries".into()));
    }
    let inverse = invert(&m).map_err(|pivot| LabError::NonInvertible { pivot })?;
    let op = op_norm(&m)?;
    let inv_op = op_norm(&inverse)?;
    if op * inv_op > MAX_CONDITION || !inverse.is_finite() {
        let pivot = smallest_pivot(&m);
        return Err(LabError::NonInvertible { pivot });
    }
    Ok(GroupElement { entries: m, inverse, op_norm: op, inv_op_norm: inv_op })
}

fn smallest_pivot(m: &Mat) -> f64 {
    // Elimination without the early exit, reporting the raw smallest pivot.
    let d = m.dim();
    let mut a = m.clone();
    let mut smallest = f64::INFINITY;
    for col in 0..d {
        let pivot_row = (col..d).max_by(|&r, &s| a.get(r, col).abs().total_cmp(&a.get(s, col).abs())).unwrap();
        for j in 0..d {
            a.data.swap(col * d + j, pivot_row * d + j);
        }
        let p = a.get(col, col);
        smallest = smallest.min(p.abs());
        if p == 0.0 {
            break;
        }
        for r in col + 1..d {
            let f = a.get(r, col) / p;
            for j in col..d {
                a.data[r * d + j] -= f * a.data[col * d + j];
            }
        }
    }
    smallest
}

impl GroupElement {
    pub fn identity(dim: usize) -> Self {
        make_group_element(Mat::identity(dim)).expect("identity is invertible")
    }

    pub fn dim(&self) -> usize {
        self.entries.dim()
    }

    pub fn matrix(&self) -> &Mat {
        &self.entries
    }

    pub fn inverse(&self) -> &Mat {
        &self.inverse
    }

    pub fn op_norm(&self) -> f64 {
        self.op_norm
    }

    pub fn inv_op_norm(&self) -> f64 {
        self.inv_op_norm
    }

    /// N(g) = max(‖g‖, ‖g⁻¹‖).
    pub fn n_norm(&self) -> f64 {
        self.op_norm.max(self.inv_op_norm)
    }

    /// Group product `self · other`.
    pub fn compose(&self, other: &GroupElement) -> Result<GroupElement> {
        make_group_element(&self.entries * &other.entries)
    }
}

/// A direction in P(R^d), stored as a unit vector. `v` and `-v` are the same
/// point.
#[derive(Debug, Clone)]
pub struct ProjectivePoint {
    rep: Vec<f64>,
}

/// Exact equality of directions: `v` equals `v` and `-v`.
impl PartialEq for ProjectivePoint {
    fn eq(&self, other: &Self) -> bool {
        self.rep == other.rep || self.rep.iter().zip(&other.rep).all(|(a, b)| *a == -*b)
    }
}

impl ProjectivePoint {
    pub fn new(v: &[f64]) -> Result<Self> {
        if v.len() < 2 || v.iter().any(|x| !x.is_finite()) {
            return Err(LabError::InvalidInput("direction must be a finite vector, d ≥ 2".into()));
        }
        let n = norm(v);
        if n == 0.0 {
            return Err(LabError::InvalidInput("direction vector is zero".into()));
        }
        Ok(ProjectivePoint { rep: v.iter().map(|x| x / n).collect() })
    }

    /// The i-th standard basis direction.
    pub fn axis(dim: usize, i: usize) -> Self {
        let mut rep = vec![0.0; dim];
        rep[i] = 1.0;
        ProjectivePoint { rep }
    }

    /// Direction at `angle` in the plane.
    pub fn from_angle(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        ProjectivePoint { rep: vec![c, s] }
    }

    pub(crate) fn from_unit_unchecked(rep: Vec<f64>) -> Self {
        ProjectivePoint { rep }
    }

    pub fn rep(&self) -> &[f64] {
        &self.rep
    }

    pub fn dim(&self) -> usize {
        self.rep.len()
    }

    /// Angle of the direction in [0, π), d = 2 only.
    pub fn angle(&self) -> f64 {
        let a = self.rep[1].atan2(self.rep[0]).rem_euclid(std::f64::consts::PI);
        if a >= std::f64::consts::PI {
            0.0
        } else {
            a
        }
    }

    /// Sign-invariant comparison within `tol` in Euclidean distance.
    pub fn approx_eq(&self, other: &ProjectivePoint, tol: f64) -> bool {
        let minus: f64 = self.rep.iter().zip(&other.rep).map(|(a, b)| (a - b).powi(2)).sum();
        let plus: f64 = self.rep.iter().zip(&other.rep).map(|(a, b)| (a + b).powi(2)).sum();
        minus.min(plus).sqrt() <= tol
    }
}

/// A state x = (g, v̄) of the Markov chain on G × P(V).
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub g: GroupElement,
    pub dir: ProjectivePoint,
}

impl ChainState {
    pub fn new(g: GroupElement, dir: ProjectivePoint) -> Result<Self> {
        if g.dim() != dir.dim() {
            return Err(LabError::InvalidInput(format!(
                "matrix dimension {} does not match direction dimension {}",
                g.dim(),
                dir.dim()
            )));
        }
        Ok(ChainState { g, dir })
    }

    /// The conventional start (I, e̅₁).
    pub fn standard(dim: usize) -> Self {
        ChainState { g: GroupElement::identity(dim), dir: ProjectivePoint::axis(dim, 0) }
    }

    pub fn dim(&self) -> usize {
        self.g.dim()
    }

    /// g·v̄, the direction the next matrix will act on.
    pub fn moved_dir(&self) -> ProjectivePoint {
        act(&self.g, &self.dir)
    }
}

/// Norm cocycle ρ(g, v̄) = log ‖g v‖ for unit v.
pub fn cocycle(g: &GroupElement, v: &ProjectivePoint) -> f64 {
    norm(&g.entries.mul_vec(&v.rep)).ln()
}

/// Projective action g·v̄.
pub fn act(g: &GroupElement, v: &ProjectivePoint) -> ProjectivePoint {
    let w = g.entries.mul_vec(&v.rep);
    let n = norm(&w);
    ProjectivePoint { rep: w.into_iter().map(|x| x / n).collect() }
}

/// Projective distance ‖u ∧ v‖ / (‖u‖ ‖v‖), via the Gram identity.
pub fn proj_distance(u: &ProjectivePoint, v: &ProjectivePoint) -> f64 {
    let c = dot(&u.rep, &v.rep);
    let uu = dot(&u.rep, &u.rep);
    let vv = dot(&v.rep, &v.rep);
    ((uu * vv - c * c).max(0.0).sqrt() / (uu * vv).sqrt()).min(1.0)
}

/// Applies `m` to the unit vector `w` in place, renormalizes, and returns
/// log ‖m w‖. `scratch` must have length d.
#[inline]
pub(crate) fn push_unit(m: &Mat, w: &mut [f64], scratch: &mut [f64]) -> f64 {
    m.mul_vec_into(w, scratch);
    let n = norm(scratch);
    let inv = 1.0 / n;
    for (wi, si) in w.iter_mut().zip(scratch.iter()) {
        *wi = si * inv;
    }
    n.ln()
}
