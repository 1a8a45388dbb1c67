//! Rotation-group mathematics used by the controller, plant and integrator.
//!
//! Rotations are stored as plain 3×3 matrices wrapped in [`RotationMatrix`]. The
//! wrapper only guarantees that the matrix passed the orthonormality and
//! determinant checks when it was built; arithmetic goes through the inner
//! `Matrix3` so products stay cheap.

use nalgebra::{Matrix3, Vector3, Vector6};
use rand::Rng;
use serde::{Serialize, Serializer};
use std::f64::consts::PI;
use std::fmt;
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Vec6 = Vector6<f64>;

/// Orthonormality tolerance on `‖RᵀR − I‖_F`.
pub const ORTHONORMALITY_TOL: f64 = 1e-9;
/// Default skew-symmetry tolerance for [`unskew`].
pub const SKEW_TOL: f64 = 1e-8;
/// Below this angle [`so3_exp`] switches to its Taylor branch.
pub const SMALL_ANGLE: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Se3Error {
    #[error("matrix is not skew-symmetric: ‖A + Aᵀ‖_F = {asymmetry:e} exceeds {tol:e}")]
    NotSkewSymmetric { asymmetry: f64, tol: f64 },
    #[error("cannot project onto SO(3): det = {det:e} is not positive")]
    Degenerate { det: f64 },
    #[error("not a rotation: ‖RᵀR − I‖_F = {orthonormality:e}, det = {det}")]
    NotARotation { orthonormality: f64, det: f64 },
    #[error("non-finite entry in input")]
    NonFinite,
}

/// An element of SO(3).
#[derive(Clone, Copy, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl fmt::Debug for RotationMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RotationMatrix({:?})", self.to_row_major())
    }
}

impl Serialize for RotationMatrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_row_major().serialize(serializer)
    }
}

impl Default for RotationMatrix {
    fn default() -> Self {
        Self::identity()
    }
}

impl RotationMatrix {
    pub fn identity() -> Self {
        RotationMatrix(Matrix3::identity())
    }

    /// Wraps `m` after checking orthonormality and the determinant.
    pub fn new(m: Matrix3<f64>) -> Result<Self, Se3Error> {
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Se3Error::NonFinite);
        }
        let orthonormality = orthonormality_error(&m);
        let det = m.determinant();
        if orthonormality > ORTHONORMALITY_TOL || (det - 1.0).abs() > ORTHONORMALITY_TOL {
            return Err(Se3Error::NotARotation {
                orthonormality,
                det,
            });
        }
        Ok(RotationMatrix(m))
    }

    /// Wraps `m` without checks. Callers must know `m` is a rotation
    /// (products of rotations, outputs of [`so3_exp`], ...).
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        RotationMatrix(m)
    }

    /// Row-major constructor with the full invariant check.
    pub fn from_row_major(r: &[f64; 9]) -> Result<Self, Se3Error> {
        Self::new(Matrix3::from_row_slice(r))
    }

    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.0;
        [
            m[(0, 0)],
            m[(0, 1)],
            m[(0, 2)],
            m[(1, 0)],
            m[(1, 1)],
            m[(1, 2)],
            m[(2, 0)],
            m[(2, 1)],
            m[(2, 2)],
        ]
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        RotationMatrix(self.0.transpose())
    }

    /// Group product `self · other`.
    pub fn compose(&self, other: &RotationMatrix) -> Self {
        RotationMatrix(self.0 * other.0)
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    pub fn orthonormality_error(&self) -> f64 {
        orthonormality_error(&self.0)
    }
}

pub fn orthonormality_error(m: &Matrix3<f64>) -> f64 {
    (m.transpose() * m - Matrix3::identity()).norm()
}

/// Rigid-body pose `(p, R)`: world position and body-to-world rotation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Pose {
    pub p: Vec3,
    pub r: RotationMatrix,
}

impl Pose {
    pub fn new(p: Vec3, r: RotationMatrix) -> Self {
        Pose { p, r }
    }

    /// Left action of a rigid transform `(rotation, translation)` on this pose.
    pub fn transformed_by(&self, rotation: &RotationMatrix, translation: &Vec3) -> Pose {
        Pose {
            p: rotation.rotate(&self.p) + translation,
            r: rotation.compose(&self.r),
        }
    }
}

/// Body-frame linear and angular velocity.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Twist {
    pub linear: Vec3,
    pub angular: Vec3,
}

impl Twist {
    pub fn new(linear: Vec3, angular: Vec3) -> Self {
        Twist { linear, angular }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_vec6(v: &Vec6) -> Self {
        Twist {
            linear: v.fixed_rows::<3>(0).into_owned(),
            angular: v.fixed_rows::<3>(3).into_owned(),
        }
    }

    pub fn to_vec6(&self) -> Vec6 {
        Vec6::new(
            self.linear.x,
            self.linear.y,
            self.linear.z,
            self.angular.x,
            self.angular.y,
            self.angular.z,
        )
    }
}

/// `S(v)`, the matrix with `S(v)·y = v × y`.
pub fn skew(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`skew`] with the default tolerance.
pub fn unskew(a: &Matrix3<f64>) -> Result<Vec3, Se3Error> {
    unskew_with_tol(a, SKEW_TOL)
}

pub fn unskew_with_tol(a: &Matrix3<f64>, tol: f64) -> Result<Vec3, Se3Error> {
    let asymmetry = (a + a.transpose()).norm();
    if !(asymmetry <= tol) {
        return Err(Se3Error::NotSkewSymmetric { asymmetry, tol });
    }
    Ok(vee(a))
}

// Antisymmetric-part extraction. Exact for matrices of the form B − Bᵀ.
fn vee(a: &Matrix3<f64>) -> Vec3 {
    Vec3::new(
        0.5 * (a[(2, 1)] - a[(1, 2)]),
        0.5 * (a[(0, 2)] - a[(2, 0)]),
        0.5 * (a[(1, 0)] - a[(0, 1)]),
    )
}

/// Matrix exponential of `S(v)` (Rodrigues).
pub fn so3_exp(v: &Vec3) -> RotationMatrix {
    let theta2 = v.norm_squared();
    let theta = theta2.sqrt();
    let s = skew(v);
    let s2 = s * s;
    let (a, b) = if theta < SMALL_ANGLE {
        (1.0, 0.5)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    RotationMatrix(Matrix3::identity() + s * a + s2 * b)
}

/// Inverse right Jacobian of SO(3): with `R(t) = R₀·exp(S(θ(t)))`,
/// `Ṙ = R·S(ω)` holds iff `θ̇ = J_r⁻¹(θ)·ω`.
pub fn so3_right_jacobian_inv(theta: &Vec3) -> Matrix3<f64> {
    let angle2 = theta.norm_squared();
    let angle = angle2.sqrt();
    let s = skew(theta);
    let c = if angle < 1e-4 {
        // series of 1/θ² − (1+cos θ)/(2θ sin θ)
        1.0 / 12.0 + angle2 / 720.0
    } else {
        1.0 / angle2 - (1.0 + angle.cos()) / (2.0 * angle * angle.sin())
    };
    Matrix3::identity() + s * 0.5 + s * s * c
}

/// Nearest rotation in Frobenius norm (orthogonal polar factor).
///
/// Uses the scaled Newton iteration `X ← ½(γX + (γX)⁻ᵀ)`.
pub fn project_so3(m: &Matrix3<f64>) -> Result<RotationMatrix, Se3Error> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Se3Error::NonFinite);
    }
    let det = m.determinant();
    if !(det > 0.0) {
        return Err(Se3Error::Degenerate { det });
    }
    let mut x = *m;
    for _ in 0..100 {
        let inv = x.try_inverse().ok_or(Se3Error::Degenerate { det })?;
        let inv_t = inv.transpose();
        // Frobenius scaling speeds up the first iterations; drop it once close.
        let gamma = (inv.norm() / x.norm()).sqrt();
        let gamma = if (gamma - 1.0).abs() < 1e-3 {
            1.0
        } else {
            gamma
        };
        let next = (x * gamma + inv_t / gamma) * 0.5;
        let delta = (next - x).norm();
        x = next;
        if delta < 1e-15 {
            break;
        }
    }
    Ok(RotationMatrix(x))
}

/// Orientation error `ψ = ½ tr[I − R_desᵀ R₂ᵀ R₁]`, clamped to `[0, 2]`.
pub fn psi_error(r1: &RotationMatrix, r2: &RotationMatrix, r_des: &RotationMatrix) -> f64 {
    psi_from_relative(&r2.transpose().compose(r1), r_des)
}

/// `ψ` from the relative rotation `Q = R₂ᵀR₁`.
pub fn psi_from_relative(q: &RotationMatrix, r_des: &RotationMatrix) -> f64 {
    let tr = (r_des.0.transpose() * q.0).trace();
    (0.5 * (3.0 - tr)).clamp(0.0, 2.0)
}

/// `e_R = S⁻¹(R₁ᵀR₂R_des − R_desᵀR₂ᵀR₁)`.
pub fn rotation_error_vec(
    r1: &RotationMatrix,
    r2: &RotationMatrix,
    r_des: &RotationMatrix,
) -> Vec3 {
    rotation_error_from_relative(&r2.transpose().compose(r1), r_des)
}

/// `e_R` from the relative rotation `Q = R₂ᵀR₁`.
pub fn rotation_error_from_relative(q: &RotationMatrix, r_des: &RotationMatrix) -> Vec3 {
    let b = q.0.transpose() * r_des.0;
    vee(&(b - b.transpose()))
}

/// Haar-uniform rotation (Shoemake's subgroup algorithm).
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> RotationMatrix {
    let u1: f64 = rng.gen();
    let u2: f64 = rng.gen();
    let u3: f64 = rng.gen();
    let a = (1.0 - u1).sqrt();
    let b = u1.sqrt();
    let (x, y) = (a * (2.0 * PI * u2).sin(), a * (2.0 * PI * u2).cos());
    let (z, w) = (b * (2.0 * PI * u3).sin(), b * (2.0 * PI * u3).cos());
    RotationMatrix(quaternion_to_matrix(w, x, y, z))
}

fn quaternion_to_matrix(w: f64, x: f64, y: f64, z: f64) -> Matrix3<f64> {
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}
