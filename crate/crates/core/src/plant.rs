//! Ground-truth rigid-body dynamics: `u = M·v̇ + C(v)·v + g(R) + w`.
//!
//! None of this is visible to the controller. The simulator owns it.

use crate::se3::{skew, RotationMatrix, Twist, Vec3, Vec6};
use nalgebra::{Matrix3, Matrix6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Inertia eigenvalues below this make `M` numerically singular.
pub const MIN_INERTIA_EIG: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error("mass must be positive and finite, got {0}")]
    InvalidMass(f64),
    #[error("inertia is not symmetric positive definite (min eigenvalue {min_eig:e})")]
    SingularInertia { min_eig: f64 },
    #[error("inertia is not symmetric: ‖J − Jᵀ‖_F = {0:e}")]
    AsymmetricInertia(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RigidBodyParams {
    pub mass: f64,
    #[serde(serialize_with = "serialize_matrix3")]
    pub inertia: Matrix3<f64>,
    pub radius: f64,
    pub sensing_radius: f64,
    /// World-frame vector whose body-frame image, scaled by the mass, is the
    /// `g(R)` term of the force balance.
    #[serde(serialize_with = "serialize_vec3")]
    pub gravity: Vec3,
}

fn serialize_matrix3<S: serde::Serializer>(m: &Matrix3<f64>, s: S) -> Result<S::Ok, S::Error> {
    let rows: [[f64; 3]; 3] = [
        [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
        [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
        [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
    ];
    rows.serialize(s)
}

fn serialize_vec3<S: serde::Serializer>(v: &Vec3, s: S) -> Result<S::Ok, S::Error> {
    [v.x, v.y, v.z].serialize(s)
}

impl RigidBodyParams {
    pub fn validate(&self) -> Result<(), PlantError> {
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return Err(PlantError::InvalidMass(self.mass));
        }
        let asym = (self.inertia - self.inertia.transpose()).norm();
        if asym > 1e-12 * (1.0 + self.inertia.norm()) {
            return Err(PlantError::AsymmetricInertia(asym));
        }
        let min_eig = self.inertia.symmetric_eigenvalues().min();
        if !(min_eig > MIN_INERTIA_EIG) {
            return Err(PlantError::SingularInertia { min_eig });
        }
        Ok(())
    }

    /// Generalized inertia `blockdiag(m·I₃, J)`.
    pub fn mass_matrix(&self) -> Matrix6<f64> {
        let mut m = Matrix6::zeros();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&(Matrix3::identity() * self.mass));
        m.fixed_view_mut::<3, 3>(3, 3).copy_from(&self.inertia);
        m
    }
}

/// `C(v) = [[m·S(ω), 0], [0, −S(J·ω)]]`, so `C(v)·v = (m ω×v_L, ω×Jω)`.
pub fn coriolis(params: &RigidBodyParams, v: &Twist) -> Matrix6<f64> {
    let mut c = Matrix6::zeros();
    c.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(skew(&v.angular) * params.mass));
    c.fixed_view_mut::<3, 3>(3, 3)
        .copy_from(&(-skew(&(params.inertia * v.angular))));
    c
}

/// `(m·Rᵀ·gravity, 0)`.
pub fn gravity_wrench(params: &RigidBodyParams, r: &RotationMatrix) -> Vec6 {
    let f = r.matrix().transpose() * params.gravity * params.mass;
    Vec6::new(f.x, f.y, f.z, 0.0, 0.0, 0.0)
}

/// Velocity-proportional sinusoid
/// `A·sin(‖p₁‖₁·tr(R_i)·ω·t + φ)·v_i`, used both for the exogenous disturbance
/// `w_i` and for the velocity measurement noise `n_i`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SinusoidalModel {
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
}

pub type DisturbanceModel = SinusoidalModel;
pub type NoiseModel = SinusoidalModel;

impl SinusoidalModel {
    pub fn new(amplitude: f64, frequency: f64, phase: f64) -> Self {
        SinusoidalModel {
            amplitude,
            frequency,
            phase,
        }
    }

    /// `anchor` is agent 1's world position, `r` the rotation of the agent the
    /// model belongs to.
    pub fn gain(&self, anchor: &Vec3, r: &RotationMatrix, t: f64) -> f64 {
        let l1 = anchor.x.abs() + anchor.y.abs() + anchor.z.abs();
        self.amplitude * (l1 * r.trace() * self.frequency * t + self.phase).sin()
    }

    pub fn apply(&self, anchor: &Vec3, r: &RotationMatrix, v: &Vec6, t: f64) -> Vec6 {
        v * self.gain(anchor, r, t)
    }
}

/// Exogenous disturbance `w_i`.
pub fn disturbance(
    model: &DisturbanceModel,
    anchor: &Vec3,
    r: &RotationMatrix,
    v: &Twist,
    t: f64,
) -> Vec6 {
    model.apply(anchor, r, &v.to_vec6(), t)
}

/// Noisy velocity feedback `ṽ_i = v_i + n_i`.
pub fn measured_velocity(
    model: &NoiseModel,
    anchor: &Vec3,
    r: &RotationMatrix,
    v: &Twist,
    t: f64,
) -> Twist {
    let v6 = v.to_vec6();
    Twist::from_vec6(&(v6 + model.apply(anchor, r, &v6, t)))
}

/// `v̇ = M⁻¹(u − C(v)v − g − w)`.
pub fn acceleration(
    params: &RigidBodyParams,
    v: &Twist,
    u: &Vec6,
    w: &Vec6,
    r: &RotationMatrix,
) -> Result<Vec6, PlantError> {
    let rhs = u - coriolis(params, v) * v.to_vec6() - gravity_wrench(params, r) - w;
    if !(params.mass > 0.0) {
        return Err(PlantError::InvalidMass(params.mass));
    }
    let chol = params
        .inertia
        .cholesky()
        .ok_or(PlantError::SingularInertia { min_eig: f64::NAN })?;
    let lin = rhs.fixed_rows::<3>(0) / params.mass;
    let ang = chol.solve(&rhs.fixed_rows::<3>(3).into_owned());
    if ang.iter().any(|x| !x.is_finite()) {
        return Err(PlantError::SingularInertia {
            min_eig: params.inertia.symmetric_eigenvalues().min(),
        });
    }
    Ok(Vec6::new(lin.x, lin.y, lin.z, ang.x, ang.y, ang.z))
}
