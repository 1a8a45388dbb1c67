//! Offline checks: funnel containment on recorded traces, consistency of
//! recorded error signals with their kinematic rates, and the algebraic
//! identities the controller relies on.

use crate::graph::{random_tree, weighted_laplacian_min_eig};
use crate::se3::{
    psi_error, random_rotation, rotation_error_vec, skew, unskew, Vec3, ORTHONORMALITY_TOL,
};
use crate::sim::{Scenario, Trace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerifyError {
    #[error("trace does not match scenario: {0}")]
    SchemaMismatch(String),
    #[error("trace time grid is not uniform at row {row}")]
    NonUniformGrid { row: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    DistanceLower,
    DistanceUpper,
    Orientation,
    Singularity,
    Collision,
    Disconnection,
    Manifold,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub row: usize,
    pub t: f64,
    /// 1-based edge id for edge checks.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub edge: Option<usize>,
    /// 1-based agent id for per-agent checks.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub agent: Option<usize>,
    pub observed: f64,
    pub bound: f64,
    /// Signed slack; `<= 0` for every record.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct ViolationReport {
    pub rows_checked: usize,
    pub violations: Vec<Violation>,
}

impl ViolationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

fn check_shape(trace: &Trace, sc: &Scenario) -> Result<(), VerifyError> {
    if trace.n_agents != sc.n_agents() || trace.n_edges != sc.n_edges() {
        return Err(VerifyError::SchemaMismatch(format!(
            "trace has {} agents / {} edges, scenario has {} / {}",
            trace.n_agents,
            trace.n_edges,
            sc.n_agents(),
            sc.n_edges()
        )));
    }
    for (i, row) in trace.rows.iter().enumerate() {
        if row.agents.len() != sc.n_agents() || row.edges.len() != sc.n_edges() {
            return Err(VerifyError::SchemaMismatch(format!(
                "row {i} has the wrong width"
            )));
        }
    }
    Ok(())
}

/// Strict funnel, distance-constraint, singularity and manifold checks at
/// every row. Funnel bounds are recomputed from the scenario, not read back
/// from the trace.
pub fn check_funnels(trace: &Trace, sc: &Scenario) -> Result<ViolationReport, VerifyError> {
    check_shape(trace, sc)?;
    let mut report = ViolationReport {
        rows_checked: trace.rows.len(),
        violations: Vec::new(),
    };
    for (r, row) in trace.rows.iter().enumerate() {
        let t = row.t;
        let mut push = |kind,
                        edge: Option<usize>,
                        agent: Option<usize>,
                        observed: f64,
                        bound: f64,
                        margin: f64| {
            report.violations.push(Violation {
                kind,
                row: r,
                t,
                edge,
                agent,
                observed,
                bound,
                margin,
            })
        };
        for (k, (e, spec)) in row.edges.iter().zip(&sc.edges).enumerate() {
            let edge = Some(k + 1);
            let (Ok(rho_e), Ok(rho_psi)) = (spec.rho_e.eval(t), spec.rho_psi.eval(t)) else {
                return Err(VerifyError::SchemaMismatch(format!(
                    "row {r}: negative time {t}"
                )));
            };
            let (lb, ub) = (-spec.c_col * rho_e, spec.c_con * rho_e);
            if !(e.e > lb) {
                push(ViolationKind::DistanceLower, edge, None, e.e, lb, e.e - lb);
            }
            if !(e.e < ub) {
                push(ViolationKind::DistanceUpper, edge, None, e.e, ub, ub - e.e);
            }
            if !(e.psi < rho_psi && e.psi >= 0.0) {
                let margin = (rho_psi - e.psi).min(e.psi);
                push(
                    ViolationKind::Orientation,
                    edge,
                    None,
                    e.psi,
                    rho_psi,
                    margin,
                );
            }
            if !(e.psi < 2.0) {
                push(
                    ViolationKind::Singularity,
                    edge,
                    None,
                    e.psi,
                    2.0,
                    2.0 - e.psi,
                );
            }
            if !(e.dist > spec.d_col) {
                push(
                    ViolationKind::Collision,
                    edge,
                    None,
                    e.dist,
                    spec.d_col,
                    e.dist - spec.d_col,
                );
            }
            if !(e.dist < spec.d_con) {
                push(
                    ViolationKind::Disconnection,
                    edge,
                    None,
                    e.dist,
                    spec.d_con,
                    spec.d_con - e.dist,
                );
            }
        }
        for (i, a) in row.agents.iter().enumerate() {
            let err = a.r.orthonormality_error();
            if !(err <= ORTHONORMALITY_TOL) {
                push(
                    ViolationKind::Manifold,
                    None,
                    Some(i + 1),
                    err,
                    ORTHONORMALITY_TOL,
                    ORTHONORMALITY_TOL - err,
                );
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeResidual {
    pub edge: usize,
    pub max_e: f64,
    pub max_psi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DynamicsResiduals {
    pub dt: f64,
    pub edges: Vec<EdgeResidual>,
    pub max_e: f64,
    pub max_psi: f64,
    /// Largest twist norm `‖v_i‖` over all rows and agents.
    pub peak_velocity: f64,
    /// `50·dt²·peak_velocity`.
    pub tolerance: f64,
}

impl DynamicsResiduals {
    pub fn max(&self) -> f64 {
        self.max_e.max(self.max_psi)
    }

    pub fn within_tolerance(&self) -> bool {
        self.max() < self.tolerance
    }
}

/// Compares central differences of the recorded `e_k`, `ψ_k` with
///
/// * `ė_k = 2(R_{k₁}ᵀp̃)ᵀ(R_{k₁}ᵀR_{k₂}v_{k₂,L} − v_{k₁,L})`
/// * `ψ̇_k = ½·e_{R_k}ᵀ(R_{k₁}ᵀR_{k₂}ω_{k₂} − ω_{k₁})`
///
/// evaluated on the recorded states at interior rows.
pub fn check_error_dynamics(
    trace: &Trace,
    sc: &Scenario,
) -> Result<DynamicsResiduals, VerifyError> {
    check_shape(trace, sc)?;
    let rows = &trace.rows;
    let dt = if rows.len() >= 2 {
        rows[1].t - rows[0].t
    } else {
        sc.dt
    };
    for (i, w) in rows.windows(2).enumerate() {
        if ((w[1].t - w[0].t) - dt).abs() > 1e-9 * dt.max(1.0) {
            return Err(VerifyError::NonUniformGrid { row: i + 1 });
        }
    }
    let mut edges: Vec<EdgeResidual> = (0..sc.n_edges())
        .map(|k| EdgeResidual {
            edge: k + 1,
            max_e: 0.0,
            max_psi: 0.0,
        })
        .collect();
    let mut peak_velocity = 0.0f64;
    for row in rows {
        for a in &row.agents {
            peak_velocity = peak_velocity.max(a.v.norm());
        }
    }
    for i in 1..rows.len().saturating_sub(1) {
        let (prev, row, next) = (&rows[i - 1], &rows[i], &rows[i + 1]);
        for (k, (&(a, b), spec)) in sc.graph.edges().iter().zip(&sc.edges).enumerate() {
            let (s1, s2) = (&row.agents[a], &row.agents[b]);
            let r1t = s1.r.matrix().transpose();
            let rel = r1t * s2.r.matrix();
            let p_tail = r1t * (s2.p - s1.p);
            let v1 = s1.v.fixed_rows::<3>(0).into_owned();
            let v2 = s2.v.fixed_rows::<3>(0).into_owned();
            let w1 = s1.v.fixed_rows::<3>(3).into_owned();
            let w2 = s2.v.fixed_rows::<3>(3).into_owned();
            let e_dot = 2.0 * p_tail.dot(&(rel * v2 - v1));
            let e_r = rotation_error_vec(&s1.r, &s2.r, &spec.r_des);
            let psi_dot = 0.5 * e_r.dot(&(rel * w2 - w1));
            let fd_e = (next.edges[k].e - prev.edges[k].e) / (2.0 * dt);
            let fd_psi = (next.edges[k].psi - prev.edges[k].psi) / (2.0 * dt);
            edges[k].max_e = edges[k].max_e.max((fd_e - e_dot).abs());
            edges[k].max_psi = edges[k].max_psi.max((fd_psi - psi_dot).abs());
        }
    }
    let max_e = edges.iter().map(|e| e.max_e).fold(0.0, f64::max);
    let max_psi = edges.iter().map(|e| e.max_psi).fold(0.0, f64::max);
    Ok(DynamicsResiduals {
        dt,
        edges,
        max_e,
        max_psi,
        peak_velocity,
        tolerance: 50.0 * dt * dt * peak_velocity,
    })
}

/// `f(x) = eˣ(eˣ − 1) − x²`.
pub fn exp_gap(x: f64) -> f64 {
    x.exp() * x.exp_m1() - x * x
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityReport {
    pub samples: usize,
    pub seed: u64,
    /// max |‖e_R‖² − 4ψ(2−ψ)| over random rotation triples.
    pub error_vector_identity: f64,
    /// min f(x) over a uniform grid on [0, 20].
    pub exp_gap_min: f64,
    /// min λ_min(DᵀΔD) over random trees and gains.
    pub laplacian_min_eig: f64,
    /// Largest deviation over the skew-map identities.
    pub skew_identity: f64,
    /// Range of tr(R) over random rotations.
    pub trace_min: f64,
    pub trace_max: f64,
}

pub const ERROR_VECTOR_TOL: f64 = 1e-10;
pub const EXP_GAP_TOL: f64 = 1e-12;
pub const SKEW_IDENTITY_TOL: f64 = 1e-12;
pub const LAPLACIAN_TOL: f64 = 1e-12;

impl IdentityReport {
    pub fn passed(&self) -> bool {
        self.error_vector_identity < ERROR_VECTOR_TOL
            && self.exp_gap_min >= -EXP_GAP_TOL
            && self.laplacian_min_eig > LAPLACIAN_TOL
            && self.skew_identity <= SKEW_IDENTITY_TOL
            && self.trace_min >= -1.0 - 1e-12
            && self.trace_max <= 3.0 + 1e-12
    }
}

/// Runs the identity suite: `samples` rotation triples and skew samples,
/// `10·samples` grid points for f, and `samples / 10` (at least 1) random
/// trees with 2 to 8 agents.
pub fn check_identities(samples: usize, seed: u64) -> IdentityReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut error_vector_identity = 0.0f64;
    let (mut trace_min, mut trace_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..samples {
        let (r1, r2, rd) = (
            random_rotation(&mut rng),
            random_rotation(&mut rng),
            random_rotation(&mut rng),
        );
        let psi = psi_error(&r1, &r2, &rd);
        let e_r = rotation_error_vec(&r1, &r2, &rd);
        error_vector_identity =
            error_vector_identity.max((e_r.norm_squared() - 4.0 * psi * (2.0 - psi)).abs());
        let tr = r2.transpose().compose(&r1).trace();
        trace_min = trace_min.min(tr);
        trace_max = trace_max.max(tr);
    }

    let grid = 10 * samples.max(1);
    let exp_gap_min = (0..=grid)
        .map(|j| exp_gap(20.0 * j as f64 / grid as f64))
        .fold(f64::INFINITY, f64::min);

    let mut laplacian_min_eig = f64::INFINITY;
    for _ in 0..(samples / 10).max(1) {
        let n = rng.gen_range(2..=8);
        let g = random_tree(&mut rng, n);
        let delta: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..10.0)).collect();
        laplacian_min_eig = laplacian_min_eig.min(weighted_laplacian_min_eig(&g, &delta));
    }

    let mut skew_identity = 0.0f64;
    let vec3 = |rng: &mut ChaCha8Rng| Vec3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
    for _ in 0..samples {
        let (x, y) = (vec3(&mut rng), vec3(&mut rng));
        let r = random_rotation(&mut rng);
        let sx = skew(&x);
        let devs = [
            (sx * y - x.cross(&y)).amax(),
            (x.transpose() * skew(&y) * x)[0].abs(),
            (sx + sx.transpose()).amax(),
            (unskew(&sx).map_or(f64::INFINITY, |u| (u - x).amax())),
            (r.matrix() * sx * r.matrix().transpose() - skew(&r.rotate(&x))).amax(),
        ];
        skew_identity = devs.into_iter().fold(skew_identity, f64::max);
    }

    IdentityReport {
        samples,
        seed,
        error_vector_identity,
        exp_gap_min,
        laplacian_min_eig,
        skew_identity,
        trace_min,
        trace_max,
    }
}
