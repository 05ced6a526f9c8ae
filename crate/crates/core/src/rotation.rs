//! Rigid-body rotation from linear motion quantities.
//!
//! Angular velocity and angular acceleration are recovered from the relative
//! velocities and accelerations of three body points, and orientation is
//! carried as a log-rotation `M = θM̂` whose exponential is the coordinate
//! transformation matrix `A` (global components to body components,
//! `v' = A v`).
//!
//! The skew-matrix convention used throughout is
//!
//! ```text
//!          [  0   v3  -v2 ]
//! hat(v) = [ -v3   0   v1 ]
//!          [  v2  -v1   0 ]
//! ```
//!
//! which is the transpose of the usual cross-product matrix. With it,
//! `Ȧ = hat(ω') A` where `ω'` holds body-frame components.

use nalgebra::{Matrix3, Rotation3, Vector3};

use crate::error::{Error, Result};

/// Below this angle the trigonometric coefficients switch to Taylor series.
pub const SMALL_ANGLE: f64 = 1e-6;

/// Minimum admissible `|e1 x e2|` for a marker triad.
pub const MIN_CROSS_NORM: f64 = 1e-6;

/// Distance from `2π` at which the dexp-inverse is declared singular.
pub const DEXP_SINGULAR_MARGIN: f64 = 1e-3;

/// Skew matrix of `v` in the log-rotation sign convention.
pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, v.z, -v.y, -v.z, 0.0, v.x, v.y, -v.x, 0.0)
}

/// Inverse of [`hat`]: reads `(M₂₃, M₃₁, M₁₂)`.
pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(1, 2)], m[(2, 0)], m[(0, 1)])
}

/// Three non-collinear body points `R`, `P`, `Q` with `R` as the reference.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerTriad {
    pub ref_node: usize,
    pub p_node: usize,
    pub q_node: usize,
    pub p_vec: Vector3<f64>,
    pub q_vec: Vector3<f64>,
    pub p_len: f64,
    pub q_len: f64,
    basis: MarkerBasis,
}

/// Oblique marker basis: `e1 = p/|p|`, `e2 = q/|q|`, `e3 = e1×e2 / |e1×e2|`,
/// with `B` holding them as rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarkerBasis {
    pub e1: Vector3<f64>,
    pub e2: Vector3<f64>,
    pub e3: Vector3<f64>,
    pub b: Matrix3<f64>,
    pub cross_norm: f64,
}

impl MarkerTriad {
    /// Builds a triad from material coordinates of the three nodes.
    pub fn from_coords(
        ref_node: usize,
        p_node: usize,
        q_node: usize,
        r: Vector3<f64>,
        p: Vector3<f64>,
        q: Vector3<f64>,
    ) -> Result<Self> {
        Self::new(ref_node, p_node, q_node, p - r, q - r)
    }

    pub fn new(
        ref_node: usize,
        p_node: usize,
        q_node: usize,
        p_vec: Vector3<f64>,
        q_vec: Vector3<f64>,
    ) -> Result<Self> {
        let p_len = p_vec.norm();
        let q_len = q_vec.norm();
        if !(p_len > 0.0 && q_len > 0.0) {
            return Err(Error::DegenerateBasis { cross_norm: 0.0 });
        }
        let basis = compute_basis(&p_vec, &q_vec)?;
        Ok(MarkerTriad {
            ref_node,
            p_node,
            q_node,
            p_vec,
            q_vec,
            p_len,
            q_len,
            basis,
        })
    }

    pub fn basis(&self) -> &MarkerBasis {
        &self.basis
    }
}

fn compute_basis(p: &Vector3<f64>, q: &Vector3<f64>) -> Result<MarkerBasis> {
    let e1 = p / p.norm();
    let e2 = q / q.norm();
    let cross = e1.cross(&e2);
    let cross_norm = cross.norm();
    if !(cross_norm > MIN_CROSS_NORM) {
        return Err(Error::DegenerateBasis { cross_norm });
    }
    let e3 = cross / cross_norm;
    let b = Matrix3::from_rows(&[e1.transpose(), e2.transpose(), e3.transpose()]);
    Ok(MarkerBasis {
        e1,
        e2,
        e3,
        b,
        cross_norm,
    })
}

/// Marker basis of a triad. Fails for collinear markers.
pub fn basis_from_markers(triad: &MarkerTriad) -> Result<MarkerBasis> {
    compute_basis(&triad.p_vec, &triad.q_vec)
}

/// Angular velocity (body components) from the relative velocities of `P`
/// and `Q` with respect to `R`.
pub fn angular_velocity_g(
    triad: &MarkerTriad,
    v_pr: &Vector3<f64>,
    v_qr: &Vector3<f64>,
) -> Vector3<f64> {
    let MarkerBasis {
        e1,
        e2,
        e3,
        b,
        cross_norm,
    } = triad.basis;
    let w3 = v_pr.dot(&(e2 - e1 * e1.dot(&e2))) / (triad.p_len * cross_norm);
    let w2 = -v_pr.dot(&e3) / (triad.p_len * cross_norm);
    let w1 = v_qr.dot(&e3) / (triad.q_len * cross_norm);
    b.transpose() * Vector3::new(w1, w2, w3)
}

/// Angular acceleration (body components) from relative velocities and
/// accelerations of the markers and the current angular velocity.
pub fn angular_acceleration_h(
    triad: &MarkerTriad,
    v_pr: &Vector3<f64>,
    v_qr: &Vector3<f64>,
    a_pr: &Vector3<f64>,
    a_qr: &Vector3<f64>,
    omega: &Vector3<f64>,
) -> Vector3<f64> {
    let MarkerBasis {
        e1,
        e3,
        b,
        cross_norm,
        ..
    } = triad.basis;
    let wv_p = omega.cross(v_pr);
    let wv_q = omega.cross(v_qr);
    let a3 = (e3.cross(&wv_p) - e3.cross(a_pr)).dot(&e1) / triad.p_len;
    let a2 = (wv_p - a_pr).dot(&e3) / (triad.p_len * cross_norm);
    let a1 = (a_qr - wv_q).dot(&e3) / (triad.q_len * cross_norm);
    b.transpose() * Vector3::new(a1, a2, a3)
}

/// Rate of the body-frame components of a relative velocity:
/// `v̇' = a' - ω' × v'`.
pub fn relative_velocity_rate(
    v_rel: &Vector3<f64>,
    a_rel: &Vector3<f64>,
    omega: &Vector3<f64>,
) -> Vector3<f64> {
    a_rel - omega.cross(v_rel)
}

/// Angular velocity and angular acceleration in body components.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BodyRates {
    pub omega_body: Vector3<f64>,
    pub alpha_body: Vector3<f64>,
}

/// Log-rotation `M = θM̂`, stored as its antisymmetric matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRotation {
    m: Matrix3<f64>,
}

impl Default for LogRotation {
    fn default() -> Self {
        Self::zero()
    }
}

impl LogRotation {
    pub fn zero() -> Self {
        LogRotation {
            m: Matrix3::zeros(),
        }
    }

    /// From the rotation vector `θλ`.
    pub fn from_vector(v: &Vector3<f64>) -> Self {
        LogRotation { m: hat(v) }
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, theta: f64) -> Self {
        Self::from_vector(&(axis.normalize() * theta))
    }

    /// Accepts an antisymmetric matrix (within `1e-12` relative to its size).
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        let asym = (m + m.transpose()).amax();
        if asym > 1e-12 * m.amax().max(1.0) {
            return Err(Error::Numerical(format!(
                "log-rotation matrix is not antisymmetric (|M + Mᵀ| = {asym:.3e})"
            )));
        }
        // keep the exactly antisymmetric part
        Ok(LogRotation {
            m: (m - m.transpose()) * 0.5,
        })
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    pub fn vector(&self) -> Vector3<f64> {
        vee(&self.m)
    }

    pub fn theta(&self) -> f64 {
        self.vector().norm()
    }

    /// Unit rotation axis; `None` at zero angle.
    pub fn axis(&self) -> Option<Vector3<f64>> {
        let v = self.vector();
        let n = v.norm();
        (n > 0.0).then(|| v / n)
    }

    pub fn is_zero(&self) -> bool {
        self.m.iter().all(|&x| x == 0.0)
    }

    /// `M + s·ΔM`, keeping the antisymmetric part of `ΔM`.
    pub fn advanced(&self, delta: &Matrix3<f64>, scale: f64) -> Self {
        LogRotation {
            m: self.m + (delta - delta.transpose()) * (0.5 * scale),
        }
    }
}

impl std::ops::Add for LogRotation {
    type Output = LogRotation;
    fn add(self, rhs: Self) -> Self {
        LogRotation { m: self.m + rhs.m }
    }
}

/// `sin θ / θ` and `(1 - cos θ) / θ²`.
fn exp_coefficients(theta: f64) -> (f64, f64) {
    if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        (1.0 - t2 / 6.0, 0.5 - t2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / (theta * theta))
    }
}

/// Rodrigues form of the exponential: `A = I + sinθ M̂ + (1 − cosθ) M̂²`.
pub fn rotation_exp(log_rot: &LogRotation) -> Matrix3<f64> {
    let m = log_rot.matrix();
    let (s, c) = exp_coefficients(log_rot.theta());
    Matrix3::identity() + m * s + m * m * c
}

/// Log-rotation of a rotation matrix in this module's convention, so that
/// `rotation_exp(rotation_log(A)) == A`.
pub fn rotation_log(a: &Matrix3<f64>) -> LogRotation {
    // A = exp(hat(v)) is the transpose of the right-handed rotation by v.
    let v = Rotation3::from_matrix_unchecked(a.transpose()).scaled_axis();
    LogRotation::from_vector(&v)
}

/// `ad_X Y = XY − YX`.
fn ad(x: &Matrix3<f64>, y: &Matrix3<f64>) -> Matrix3<f64> {
    x * y - y * x
}

/// `(θ cot(θ/2) / 2 − 1) / θ²`, finite at zero.
fn dexp_inv_coefficient(theta: f64) -> f64 {
    if theta < SMALL_ANGLE {
        -1.0 / 12.0 - theta * theta / 720.0
    } else {
        let half = 0.5 * theta;
        (half / half.tan() - 1.0) / (theta * theta)
    }
}

/// Rate of the log-rotation for angular velocity `omega`:
/// `Ṁ = Ω − ½ ad_M Ω − c(θ) ad_M² Ω` with `Ω = hat(omega)`.
///
/// `omega` must be in the components for which `Ȧ = Ω A`; with `A` mapping
/// global to body components those are body-frame components.
pub fn dexp_inv_rate(log_rot: &LogRotation, omega: &Vector3<f64>) -> Result<Matrix3<f64>> {
    let omega_m = hat(omega);
    let theta = log_rot.theta();
    if theta == 0.0 {
        return Ok(omega_m);
    }
    if theta >= 2.0 * std::f64::consts::PI - DEXP_SINGULAR_MARGIN {
        return Err(Error::RebaseRequired { theta });
    }
    let m = log_rot.matrix();
    let ad1 = ad(m, &omega_m);
    let ad2 = ad(m, &ad1);
    Ok(omega_m - ad1 * 0.5 - ad2 * dexp_inv_coefficient(theta))
}

/// Folds the log-rotation into the base rotation. The total orientation
/// `A = exp(M) · base` is preserved and the returned log-rotation is zero.
pub fn rebase(log_rot: &LogRotation, base: &Matrix3<f64>) -> (LogRotation, Matrix3<f64>) {
    if log_rot.is_zero() {
        return (LogRotation::zero(), *base);
    }
    (LogRotation::zero(), rotation_exp(log_rot) * base)
}
