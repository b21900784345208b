//! Rigid-body parameters, the Z-Y-X Euler convention, the scanner to
//! reference coordinate chain and rotation-center estimation.
//!
//! Angles are stored in radians and translations in millimetres. Anything
//! that crosses a file boundary is converted to degrees.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Wrap an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a % (2.0 * PI);
    if w <= -PI {
        w += 2.0 * PI;
    } else if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// Six-DOF rigid motion: Euler angles `(alpha, beta, gamma)` about z, y, x
/// followed by a translation `(dx, dy, dz)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RigidParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
}

impl RigidParams {
    pub const ZERO: RigidParams =
        RigidParams { alpha: 0.0, beta: 0.0, gamma: 0.0, dx: 0.0, dy: 0.0, dz: 0.0 };

    /// Builds parameters with angles wrapped into `(-pi, pi]`.
    pub fn new(alpha: f64, beta: f64, gamma: f64, dx: f64, dy: f64, dz: f64) -> Self {
        RigidParams {
            alpha: wrap_angle(alpha),
            beta: wrap_angle(beta),
            gamma: wrap_angle(gamma),
            dx,
            dy,
            dz,
        }
    }

    pub fn from_array(v: [f64; 6]) -> Self {
        Self::new(v[0], v[1], v[2], v[3], v[4], v[5])
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.alpha, self.beta, self.gamma, self.dx, self.dy, self.dz]
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3], v[4], v[5])
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::from(self.to_array())
    }

    /// Angles in degrees followed by translations in mm.
    pub fn from_degrees_mm(v: [f64; 6]) -> Self {
        Self::new(v[0].to_radians(), v[1].to_radians(), v[2].to_radians(), v[3], v[4], v[5])
    }

    pub fn to_degrees_mm(&self) -> [f64; 6] {
        [
            self.alpha.to_degrees(),
            self.beta.to_degrees(),
            self.gamma.to_degrees(),
            self.dx,
            self.dy,
            self.dz,
        ]
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::new(self.dx, self.dy, self.dz)
    }

    pub fn rotation(&self) -> RotationMatrix {
        euler_to_matrix(self)
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Proper rotation (orthonormal, determinant +1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    pub fn identity() -> Self {
        RotationMatrix(Matrix3::identity())
    }

    /// Accepts `m` if it is a rotation to within `1e-10`.
    pub fn try_from_matrix(m: Matrix3<f64>) -> Result<Self> {
        let ortho = (m.transpose() * m - Matrix3::identity()).abs().max();
        let det = m.determinant();
        if !(ortho <= 1e-10 && (det - 1.0).abs() <= 1e-10) {
            return Err(Error::InvalidArgument(format!(
                "not a rotation: |R^T R - I| = {ortho:e}, det = {det}"
            )));
        }
        Ok(RotationMatrix(m))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        RotationMatrix(self.0.transpose())
    }

    pub fn compose(&self, other: &RotationMatrix) -> Self {
        RotationMatrix(self.0 * other.0)
    }

    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    pub fn rot_x(a: f64) -> Self {
        let (s, c) = a.sin_cos();
        RotationMatrix(Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c))
    }

    pub fn rot_y(a: f64) -> Self {
        let (s, c) = a.sin_cos();
        RotationMatrix(Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c))
    }

    pub fn rot_z(a: f64) -> Self {
        let (s, c) = a.sin_cos();
        RotationMatrix(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }
}

/// `R_z(alpha) * R_y(beta) * R_x(gamma)`.
pub fn euler_to_matrix(p: &RigidParams) -> RotationMatrix {
    let (sa, ca) = p.alpha.sin_cos();
    let (sb, cb) = p.beta.sin_cos();
    let (sg, cg) = p.gamma.sin_cos();
    RotationMatrix(Matrix3::new(
        ca * cb,
        ca * sb * sg - sa * cg,
        ca * sb * cg + sa * sg,
        sa * cb,
        sa * sb * sg + ca * cg,
        sa * sb * cg - ca * sg,
        -sb,
        cb * sg,
        cb * cg,
    ))
}

/// Inverse of [`euler_to_matrix`] on `beta` in `[-pi/2, pi/2]`.
///
/// At gimbal lock (`|beta| = pi/2`) gamma is set to zero and the whole
/// z-rotation is assigned to alpha. Translations are zero.
pub fn matrix_to_euler(r: &RotationMatrix) -> RigidParams {
    let m = &r.0;
    let s = (-m[(2, 0)]).clamp(-1.0, 1.0);
    let beta = s.asin();
    if s.abs() > 1.0 - 1e-12 {
        let alpha = (-m[(0, 1)]).atan2(m[(1, 1)]);
        RigidParams::new(alpha, beta, 0.0, 0.0, 0.0, 0.0)
    } else {
        let alpha = m[(1, 0)].atan2(m[(0, 0)]);
        let gamma = m[(2, 1)].atan2(m[(2, 2)]);
        RigidParams::new(alpha, beta, gamma, 0.0, 0.0, 0.0)
    }
}

/// Fixed transforms of the coordinate chain plus the random-walk covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub r_s: RotationMatrix,
    pub q_s: Vector3<f64>,
    pub c: Vector3<f64>,
    /// Random-walk covariance in radians / mm.
    pub sigma_d: Matrix6<f64>,
}

impl Default for Calibration {
    fn default() -> Self {
        Self::identity()
    }
}

impl Calibration {
    pub fn identity() -> Self {
        Calibration {
            r_s: RotationMatrix::identity(),
            q_s: Vector3::zeros(),
            c: Vector3::zeros(),
            sigma_d: Matrix6::zeros(),
        }
    }

    pub fn with_static(r_s: RotationMatrix, q_s: Vector3<f64>) -> Self {
        Calibration { r_s, q_s, ..Self::identity() }
    }

    /// Checks the symmetry and PSD constraints on `sigma_d`.
    pub fn validate(&self) -> Result<()> {
        let asym = (self.sigma_d - self.sigma_d.transpose()).abs().max();
        if asym > 1e-12 {
            return Err(Error::InvalidArgument(format!("sigma_d not symmetric ({asym:e})")));
        }
        let min_eig = self.sigma_d.symmetric_eigenvalues().min();
        if min_eig < -1e-10 {
            return Err(Error::InvalidArgument(format!(
                "sigma_d not positive semidefinite (eigenvalue {min_eig:e})"
            )));
        }
        Ok(())
    }

    /// Precomputed affine form of the chain for fixed motion parameters.
    pub fn chain(&self, p: &RigidParams) -> AffineMap {
        let rt = euler_to_matrix(p);
        let linear = rt.0 * self.r_s.0;
        let offset = rt.0 * (self.q_s - self.c) + p.translation() + self.c;
        AffineMap { linear, offset }
    }
}

/// `x -> linear * x + offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineMap {
    pub linear: Matrix3<f64>,
    pub offset: Vector3<f64>,
}

impl AffineMap {
    pub fn apply(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.linear * x + self.offset
    }
}

/// Maps a scanner-frame point into the reference frame:
/// `x_r = R_t((R_s x_o + q_s) - c) + q_t + c`.
pub fn scanner_to_reference(x_o: &Vector3<f64>, p: &RigidParams, cal: &Calibration) -> Vector3<f64> {
    let rt = euler_to_matrix(p);
    rt.apply(&((cal.r_s.apply(x_o) + cal.q_s) - cal.c)) + p.translation() + cal.c
}

/// Least-squares rotation center with its identifiability flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CenterEstimate {
    pub center: Vector3<f64>,
    /// Set when every rotation is the identity and the center is unidentifiable.
    pub degenerate: bool,
}

/// `argmin_c sum_t |q_t - (I - R_t) c|^2`, minimum-norm when rank deficient.
pub fn estimate_rotation_center(traj: &[(RotationMatrix, Vector3<f64>)]) -> Result<CenterEstimate> {
    if traj.is_empty() {
        return Err(Error::InvalidArgument("empty trajectory".into()));
    }
    let mut normal = Matrix3::zeros();
    let mut rhs = Vector3::zeros();
    for (r, q) in traj {
        let a = Matrix3::identity() - r.0;
        normal += a.transpose() * a;
        rhs += a.transpose() * q;
    }
    let svd = normal.svd(true, true);
    let sigma_max = svd.singular_values.max();
    if sigma_max < 1e-14 {
        return Ok(CenterEstimate { center: Vector3::zeros(), degenerate: true });
    }
    let center = svd
        .solve(&rhs, 1e-8 * sigma_max)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(CenterEstimate { center, degenerate: false })
}
