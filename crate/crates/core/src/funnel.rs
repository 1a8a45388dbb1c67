//! Exponential performance functions and the normalize → transform → slope
//! pipeline for distance, orientation and velocity errors.

use crate::se3::RotationMatrix;
use serde::Serialize;
use std::fmt;
use thiserror::Error;

/// Inputs closer than this to a funnel boundary count as a violation.
pub const GUARD_BAND: f64 = 1e-12;

/// Which funnel a normalized error belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FunnelKind {
    Distance,
    Orientation,
    Velocity,
}

impl fmt::Display for FunnelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FunnelKind::Distance => "distance",
            FunnelKind::Orientation => "orientation",
            FunnelKind::Velocity => "velocity",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FunnelError {
    #[error("performance function evaluated at negative time {0}")]
    NegativeTime(f64),
    #[error("invalid performance function: {0}")]
    InvalidPerformance(String),
    #[error("{kind} funnel violated: normalized error {xi} outside ({lower}, {upper})")]
    FunnelViolation {
        kind: FunnelKind,
        xi: f64,
        lower: f64,
        upper: f64,
    },
    #[error("infeasible formation: need d_col < d_des < d_con, got {d_col} / {d_des} / {d_con}")]
    InfeasibleFormation { d_col: f64, d_des: f64, d_con: f64 },
    #[error(
        "initial orientation error psi0 = {psi0} must satisfy psi0 < rho_psi0 = {rho_psi0} < 2"
    )]
    InitialOrientationTooFar { psi0: f64, rho_psi0: f64 },
}

/// `ρ(t) = (ρ₀ − ρ∞)e^{−lt} + ρ∞`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PerformanceFunction {
    pub rho0: f64,
    pub rho_inf: f64,
    pub rate: f64,
}

impl PerformanceFunction {
    pub fn new(rho0: f64, rho_inf: f64, rate: f64) -> Result<Self, FunnelError> {
        if !(rho_inf > 0.0 && rho_inf < rho0 && rho0.is_finite()) {
            return Err(FunnelError::InvalidPerformance(format!(
                "need 0 < rho_inf < rho0, got rho0 = {rho0}, rho_inf = {rho_inf}"
            )));
        }
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(FunnelError::InvalidPerformance(format!(
                "decay rate must be positive, got {rate}"
            )));
        }
        Ok(PerformanceFunction {
            rho0,
            rho_inf,
            rate,
        })
    }

    pub fn eval(&self, t: f64) -> Result<f64, FunnelError> {
        check_time(t)?;
        Ok((self.rho0 - self.rho_inf) * (-self.rate * t).exp() + self.rho_inf)
    }

    pub fn eval_deriv(&self, t: f64) -> Result<f64, FunnelError> {
        check_time(t)?;
        Ok(-self.rate * (self.rho0 - self.rho_inf) * (-self.rate * t).exp())
    }
}

fn check_time(t: f64) -> Result<(), FunnelError> {
    if t < 0.0 || t.is_nan() {
        Err(FunnelError::NegativeTime(t))
    } else {
        Ok(())
    }
}

/// Per-edge formation targets, constraint constants and funnels.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeSpec {
    pub d_col: f64,
    pub d_des: f64,
    pub d_con: f64,
    pub r_des: RotationMatrix,
    pub c_col: f64,
    pub c_con: f64,
    pub rho_e: PerformanceFunction,
    pub rho_psi: PerformanceFunction,
}

/// Arguments of [`make_edge_spec`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeSpecParams {
    pub d_col: f64,
    pub d_des: f64,
    pub d_con: f64,
    pub r_des: RotationMatrix,
    pub rho_e_inf: f64,
    pub l_e: f64,
    /// Orientation error at t = 0.
    pub psi0: f64,
    pub rho_psi0: f64,
    pub rho_psi_inf: f64,
    pub l_psi: f64,
}

pub fn make_edge_spec(p: &EdgeSpecParams) -> Result<EdgeSpec, FunnelError> {
    if !(p.d_col < p.d_des && p.d_des < p.d_con && p.d_col >= 0.0) {
        return Err(FunnelError::InfeasibleFormation {
            d_col: p.d_col,
            d_des: p.d_des,
            d_con: p.d_con,
        });
    }
    if !(p.psi0 < p.rho_psi0 && p.rho_psi0 < 2.0) {
        return Err(FunnelError::InitialOrientationTooFar {
            psi0: p.psi0,
            rho_psi0: p.rho_psi0,
        });
    }
    let c_col = p.d_des * p.d_des - p.d_col * p.d_col;
    let c_con = p.d_con * p.d_con - p.d_des * p.d_des;
    let c_max = c_col.max(c_con);
    if !(p.rho_e_inf > 0.0 && p.rho_e_inf < c_max) {
        return Err(FunnelError::InvalidPerformance(format!(
            "rho_e_inf = {} must lie in (0, max(C_col, C_con)) = (0, {c_max})",
            p.rho_e_inf
        )));
    }
    Ok(EdgeSpec {
        d_col: p.d_col,
        d_des: p.d_des,
        d_con: p.d_con,
        r_des: p.r_des,
        c_col,
        c_con,
        rho_e: PerformanceFunction::new(1.0, p.rho_e_inf / c_max, p.l_e)?,
        rho_psi: PerformanceFunction::new(p.rho_psi0, p.rho_psi_inf, p.l_psi)?,
    })
}

impl EdgeSpec {
    /// Distance-error funnel `(−C_col·ρ_e(t), C_con·ρ_e(t))`.
    pub fn distance_bounds(&self, t: f64) -> Result<(f64, f64), FunnelError> {
        let rho = self.rho_e.eval(t)?;
        Ok((-self.c_col * rho, self.c_con * rho))
    }
}

/// Six velocity-error funnels of one agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VelocityFunnel {
    pub components: [PerformanceFunction; 6],
}

impl VelocityFunnel {
    /// `ρ₀ = 2|e_v(0)| + 1` per component.
    pub fn from_initial_error(
        e_v0: &[f64; 6],
        rho_inf: f64,
        rate: f64,
    ) -> Result<Self, FunnelError> {
        let rho0: Vec<f64> = e_v0.iter().map(|e| 2.0 * e.abs() + 1.0).collect();
        Self::with_initial_values(&rho0.try_into().expect("six components"), rho_inf, rate)
    }

    pub fn with_initial_values(
        rho0: &[f64; 6],
        rho_inf: f64,
        rate: f64,
    ) -> Result<Self, FunnelError> {
        let mut components = [PerformanceFunction {
            rho0: 1.0,
            rho_inf: 0.5,
            rate: 1.0,
        }; 6];
        for (c, &r0) in components.iter_mut().zip(rho0) {
            *c = PerformanceFunction::new(r0, rho_inf, rate)?;
        }
        Ok(VelocityFunnel { components })
    }

    pub fn eval(&self, t: f64) -> Result<[f64; 6], FunnelError> {
        let mut out = [0.0; 6];
        for (o, c) in out.iter_mut().zip(&self.components) {
            *o = c.eval(t)?;
        }
        Ok(out)
    }
}

/// `ξ = e / ρ`.
pub fn normalize(e: f64, pf_value: f64) -> f64 {
    debug_assert!(pf_value > 0.0);
    e / pf_value
}

fn violation(kind: FunnelKind, xi: f64, lower: f64, upper: f64) -> FunnelError {
    FunnelError::FunnelViolation {
        kind,
        xi,
        lower,
        upper,
    }
}

fn check_e(xi: f64, c_col: f64, c_con: f64) -> Result<(), FunnelError> {
    if xi > -c_col + GUARD_BAND && xi < c_con - GUARD_BAND {
        Ok(())
    } else {
        Err(violation(FunnelKind::Distance, xi, -c_col, c_con))
    }
}

fn check_psi(xi: f64) -> Result<(), FunnelError> {
    if (0.0..1.0 - GUARD_BAND).contains(&xi) {
        Ok(())
    } else {
        Err(violation(FunnelKind::Orientation, xi, 0.0, 1.0))
    }
}

fn check_v(xi: f64) -> Result<(), FunnelError> {
    if xi.abs() < 1.0 - GUARD_BAND {
        Ok(())
    } else {
        Err(violation(FunnelKind::Velocity, xi, -1.0, 1.0))
    }
}

/// `T_e(ξ) = ln((1 + ξ/C_col) / (1 − ξ/C_con))` on `(−C_col, C_con)`.
pub fn transform_e(xi: f64, c_col: f64, c_con: f64) -> Result<f64, FunnelError> {
    check_e(xi, c_col, c_con)?;
    Ok(((1.0 + xi / c_col) / (1.0 - xi / c_con)).ln())
}

/// `T_ψ(ξ) = ln(1 / (1 − ξ))` on `[0, 1)`.
pub fn transform_psi(xi: f64) -> Result<f64, FunnelError> {
    check_psi(xi)?;
    Ok(-(-xi).ln_1p())
}

/// `T_v(ξ) = ln((1 + ξ) / (1 − ξ))` on `(−1, 1)`.
pub fn transform_v(xi: f64) -> Result<f64, FunnelError> {
    check_v(xi)?;
    Ok(xi.ln_1p() - (-xi).ln_1p())
}

/// `dT_e/dξ`.
pub fn slope_e(xi: f64, c_col: f64, c_con: f64) -> Result<f64, FunnelError> {
    check_e(xi, c_col, c_con)?;
    Ok((1.0 / c_col + 1.0 / c_con) / ((1.0 + xi / c_col) * (1.0 - xi / c_con)))
}

/// `dT_ψ/dξ = 1 / (1 − ξ)`.
pub fn slope_psi(xi: f64) -> Result<f64, FunnelError> {
    check_psi(xi)?;
    Ok(1.0 / (1.0 - xi))
}

/// `dT_v/dξ = 2 / ((1 + ξ)(1 − ξ))`.
pub fn slope_v(xi: f64) -> Result<f64, FunnelError> {
    check_v(xi)?;
    Ok(2.0 / ((1.0 + xi) * (1.0 - xi)))
}
