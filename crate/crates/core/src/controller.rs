//! Decentralized two-step control law.
//!
//! Step one turns relative edge measurements into a desired body-frame twist
//! per agent. Step two drives the agent's noisy measured twist toward it with
//! a per-component logarithmic barrier on the velocity error. Nothing in here
//! takes a world-frame position or orientation: the only geometric inputs are
//! [`RelativeMeasurement`]s.

use crate::funnel::{
    normalize, slope_e, slope_psi, slope_v, transform_e, transform_psi, transform_v, EdgeSpec,
    FunnelError, VelocityFunnel,
};
use crate::graph::{alpha_for_role, TreeGraph};
use crate::se3::{
    psi_from_relative, rotation_error_from_relative, Pose, RotationMatrix, Twist, Vec3, Vec6,
};
use serde::Serialize;

/// What the two agents of an edge can sense about each other.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RelativeMeasurement {
    /// `R_{k₁}ᵀ(p_{k₂} − p_{k₁})`
    pub rel_pos_in_tail: Vec3,
    /// `R_{k₂}ᵀR_{k₁}`
    pub rel_rot: RotationMatrix,
    pub distance: f64,
}

pub fn measure_edge(tail: &Pose, head: &Pose) -> RelativeMeasurement {
    let offset = head.p - tail.p;
    let rel_pos_in_tail = tail.r.matrix().transpose() * offset;
    RelativeMeasurement {
        rel_pos_in_tail,
        rel_rot: head.r.transpose().compose(&tail.r),
        distance: rel_pos_in_tail.norm(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ControllerGains {
    pub delta: f64,
    pub gamma: f64,
}

/// Per-edge errors and barrier terms, shared by both endpoint agents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeFeedback {
    pub measurement: RelativeMeasurement,
    pub e: f64,
    pub psi: f64,
    pub e_r: Vec3,
    pub rho_e: f64,
    pub rho_psi: f64,
    pub xi_e: f64,
    pub xi_psi: f64,
    pub eps_e: f64,
    pub eps_psi: f64,
    /// `2·r_e(ξ_e)·ε_e / ρ_e(t)`
    pub linear_gain: f64,
    /// `r_ψ(ξ_ψ) / ρ_ψ(t)`
    pub angular_gain: f64,
}

pub fn edge_feedback(
    spec: &EdgeSpec,
    m: &RelativeMeasurement,
    t: f64,
) -> Result<EdgeFeedback, FunnelError> {
    let e = m.rel_pos_in_tail.norm_squared() - spec.d_des * spec.d_des;
    let psi = psi_from_relative(&m.rel_rot, &spec.r_des);
    let e_r = rotation_error_from_relative(&m.rel_rot, &spec.r_des);
    let rho_e = spec.rho_e.eval(t)?;
    let rho_psi = spec.rho_psi.eval(t)?;
    let xi_e = normalize(e, rho_e);
    let xi_psi = normalize(psi, rho_psi).max(0.0);
    let eps_e = transform_e(xi_e, spec.c_col, spec.c_con)?;
    let eps_psi = transform_psi(xi_psi)?;
    let r_e = slope_e(xi_e, spec.c_col, spec.c_con)?;
    let r_psi = slope_psi(xi_psi)?;
    Ok(EdgeFeedback {
        measurement: *m,
        e,
        psi,
        e_r,
        rho_e,
        rho_psi,
        xi_e,
        xi_psi,
        eps_e,
        eps_psi,
        linear_gain: 2.0 * r_e * eps_e / rho_e,
        angular_gain: r_psi / rho_psi,
    })
}

/// Desired twist of `agent`. Only the entries of `feedback` (indexed by edge)
/// that belong to edges incident to `agent` are read.
pub fn desired_velocity(
    agent: usize,
    graph: &TreeGraph,
    feedback: &[EdgeFeedback],
    delta: f64,
) -> Twist {
    let mut linear = Vec3::zeros();
    let mut angular = Vec3::zeros();
    for &(k, role) in graph.incident_edges(agent) {
        let fb = &feedback[k];
        let alpha = alpha_for_role(role, &fb.measurement.rel_rot);
        linear += alpha * (fb.measurement.rel_pos_in_tail * fb.linear_gain);
        angular += alpha * (fb.e_r * fb.angular_gain);
    }
    Twist::new(linear * -delta, angular * -delta)
}

/// `e_v = ṽ − v_des`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityError(pub Vec6);

pub fn velocity_error(measured_v: &Twist, v_des: &Twist) -> VelocityError {
    VelocityError(measured_v.to_vec6() - v_des.to_vec6())
}

/// Generalized body-frame force/torque.
pub type Wrench = Vec6;

/// `u_ℓ = −γ·r_v(ξ_ℓ)·T_v(ξ_ℓ) / ρ_ℓ(t)` with `ξ_ℓ = e_{v,ℓ}/ρ_ℓ(t)`.
pub fn control_input(
    e_v: &VelocityError,
    vf: &VelocityFunnel,
    t: f64,
    gamma: f64,
) -> Result<Wrench, FunnelError> {
    let mut u = Wrench::zeros();
    for (l, pf) in vf.components.iter().enumerate() {
        let rho = pf.eval(t)?;
        let xi = normalize(e_v.0[l], rho);
        u[l] = -gamma / rho * slope_v(xi)? * transform_v(xi)?;
    }
    Ok(u)
}
