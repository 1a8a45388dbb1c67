//! Closed-loop simulation: scenario loading, integration, trace and summary.

pub mod integrator;
pub mod scenario;
pub mod trace;

pub use integrator::{repair_rotations, rkmk4_step, State, REPAIR_THRESHOLD};
pub use scenario::{load_scenario, Scenario, ScenarioError, ScenarioFile};
pub use trace::{AgentRow, EdgeRow, Trace, TraceError, TraceRow};

use crate::controller::{
    control_input, desired_velocity, edge_feedback, measure_edge, velocity_error, EdgeFeedback,
};
use crate::funnel::FunnelError;
use crate::plant::{acceleration, disturbance, measured_velocity, PlantError};
use crate::se3::{Pose, Twist, Vec6};
use rayon::prelude::*;
use serde::Serialize;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("t = {t}: edge {edge} ({tail},{head}): {source}")]
    EdgeFunnel {
        t: f64,
        edge: usize,
        tail: usize,
        head: usize,
        source: FunnelError,
    },
    #[error("t = {t}: agent {agent}: {source}")]
    VelocityFunnel {
        t: f64,
        agent: usize,
        source: FunnelError,
    },
    #[error("t = {t}: agent {agent}: {source}")]
    Plant {
        t: f64,
        agent: usize,
        source: PlantError,
    },
    #[error("t = {t}: agent {agent}: state is not finite")]
    NonFinite { t: f64, agent: usize },
}

impl SimError {
    pub fn is_funnel_violation(&self) -> bool {
        matches!(
            self,
            SimError::EdgeFunnel {
                source: FunnelError::FunnelViolation { .. },
                ..
            } | SimError::VelocityFunnel {
                source: FunnelError::FunnelViolation { .. },
                ..
            }
        )
    }
}

/// Everything the closed loop computes at one instant.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub feedback: Vec<EdgeFeedback>,
    pub v_meas: Vec<Twist>,
    pub v_des: Vec<Twist>,
    pub u: Vec<Vec6>,
    pub accel: Vec<Vec6>,
}

/// Controller and plant at time `t`. Agent and edge ids in errors are 1-based.
pub fn evaluate(
    sc: &Scenario,
    t: f64,
    poses: &[Pose],
    twists: &[Twist],
) -> Result<Evaluation, SimError> {
    let g = &sc.graph;
    let feedback = g
        .edges()
        .iter()
        .zip(&sc.edges)
        .enumerate()
        .map(|(k, (&(a, b), spec))| {
            edge_feedback(spec, &measure_edge(&poses[a], &poses[b]), t).map_err(|source| {
                SimError::EdgeFunnel {
                    t,
                    edge: k + 1,
                    tail: a + 1,
                    head: b + 1,
                    source,
                }
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let anchor = poses[0].p;
    let n = sc.n_agents();
    let mut out = Evaluation {
        feedback,
        v_meas: Vec::with_capacity(n),
        v_des: Vec::with_capacity(n),
        u: Vec::with_capacity(n),
        accel: Vec::with_capacity(n),
    };
    for (i, agent) in sc.agents.iter().enumerate() {
        let (pose, twist) = (&poses[i], &twists[i]);
        let v_des = desired_velocity(i, g, &out.feedback, agent.gains.delta);
        let v_meas = measured_velocity(&agent.noise, &anchor, &pose.r, twist, t);
        let e_v = velocity_error(&v_meas, &v_des);
        let u = control_input(&e_v, &agent.velocity_funnel, t, agent.gains.gamma).map_err(
            |source| SimError::VelocityFunnel {
                t,
                agent: i + 1,
                source,
            },
        )?;
        let w = disturbance(&agent.disturbance, &anchor, &pose.r, twist, t);
        let a = acceleration(&agent.params, twist, &u, &w, &pose.r).map_err(|source| {
            SimError::Plant {
                t,
                agent: i + 1,
                source,
            }
        })?;
        if a.iter().any(|x| !x.is_finite()) {
            return Err(SimError::NonFinite { t, agent: i + 1 });
        }
        out.v_des.push(v_des);
        out.v_meas.push(v_meas);
        out.u.push(u);
        out.accel.push(a);
    }
    Ok(out)
}

/// Upper estimate of the fastest velocity-error decay rate (1/s) at the state
/// `ev` was computed from.
///
/// Linearizing `u_ℓ = −γ·r_v(ξ)·T_v(ξ)/ρ` in `e_ℓ` gives the slope
/// `γ·(r_v'(ξ)·T_v(ξ) + r_v(ξ)²)/ρ²`, which the plant divides by the mass (or
/// the smallest principal inertia) and the noise can inflate by `1 + |A_n|`.
pub fn velocity_loop_rate(sc: &Scenario, t: f64, ev: &Evaluation) -> f64 {
    let mut rate = 0.0f64;
    for (i, agent) in sc.agents.iter().enumerate() {
        let Ok(rho) = agent.velocity_funnel.eval(t) else {
            continue;
        };
        let e_v = ev.v_meas[i].to_vec6() - ev.v_des[i].to_vec6();
        let inertia = agent.params.inertia.symmetric_eigenvalues().min();
        let noise = 1.0 + agent.noise.amplitude.abs();
        for l in 0..6 {
            let xi = (e_v[l] / rho[l]).clamp(-0.999_999, 0.999_999);
            let q = 1.0 - xi * xi;
            let r = 2.0 / q;
            let dr = 4.0 * xi / (q * q);
            let tv = ((1.0 + xi) / (1.0 - xi)).ln();
            let m = if l < 3 { agent.params.mass } else { inertia };
            let lambda = agent.gains.gamma * (dr * tv + r * r) * noise / (rho[l] * rho[l] * m);
            rate = rate.max(lambda);
        }
    }
    rate
}

/// Substeps per macro step so that `h·rate <= bound`, capped at [`MAX_SUBSTEPS`].
pub fn substeps_for(dt: f64, rate: f64, bound: Option<f64>) -> usize {
    match bound {
        Some(b) => ((dt * rate / b).ceil() as usize).clamp(1, MAX_SUBSTEPS),
        None => 1,
    }
}

pub const MAX_SUBSTEPS: usize = 64;

fn record(sc: &Scenario, state: &State, ev: &Evaluation, repairs: usize) -> TraceRow {
    let agents = (0..sc.n_agents())
        .map(|i| AgentRow {
            p: state.poses[i].p,
            r: state.poses[i].r,
            v: state.twists[i].to_vec6(),
            v_des: ev.v_des[i].to_vec6(),
            u: ev.u[i],
            v_meas: Some(ev.v_meas[i].to_vec6()),
        })
        .collect();
    let edges = ev
        .feedback
        .iter()
        .zip(&sc.edges)
        .map(|(fb, spec)| EdgeRow {
            e: fb.e,
            psi: fb.psi,
            dist: fb.measurement.distance,
            lb_e: -spec.c_col * fb.rho_e,
            ub_e: spec.c_con * fb.rho_e,
            rho_psi: fb.rho_psi,
        })
        .collect();
    TraceRow {
        t: state.t,
        agents,
        edges,
        repairs,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    FunnelViolation,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeSummary {
    /// 1-based `[tail, head]`.
    pub edge: [usize; 2],
    pub min_distance: f64,
    pub max_distance: f64,
    pub final_e: f64,
    pub final_psi: f64,
    /// Smallest distance of `e` to either funnel boundary over the run.
    pub min_margin_e: f64,
    pub min_margin_psi: f64,
    /// Smallest gap to `d_col` or `d_con`.
    pub min_margin_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub status: RunStatus,
    pub violation_count: usize,
    pub abort: Option<String>,
    pub t_final: f64,
    pub rows: usize,
    pub edges: Vec<EdgeSummary>,
    pub max_orthonormality_error: f64,
    pub repairs: usize,
    /// RK4 substeps taken in total, and the most in any one step.
    pub substeps: usize,
    pub max_substeps: usize,
    /// Steps redone with a finer split after leaving a funnel.
    pub rejected_steps: usize,
    pub wall_clock_s: f64,
    pub scenario_hash: String,
    pub prng: String,
    pub config: Scenario,
}

impl Summary {
    fn from_trace(sc: &Scenario, trace: &Trace, error: Option<&SimError>, wall: f64) -> Self {
        let mut edges: Vec<EdgeSummary> = sc
            .graph
            .edges_one_based()
            .into_iter()
            .map(|edge| EdgeSummary {
                edge,
                min_distance: f64::INFINITY,
                max_distance: f64::NEG_INFINITY,
                final_e: f64::NAN,
                final_psi: f64::NAN,
                min_margin_e: f64::INFINITY,
                min_margin_psi: f64::INFINITY,
                min_margin_distance: f64::INFINITY,
            })
            .collect();
        let mut max_orth = 0.0f64;
        let mut repairs = 0;
        let mut row_violations = 0;
        for row in &trace.rows {
            repairs += row.repairs;
            for a in &row.agents {
                max_orth = max_orth.max(a.r.orthonormality_error());
            }
            for ((s, e), spec) in edges.iter_mut().zip(&row.edges).zip(&sc.edges) {
                s.min_distance = s.min_distance.min(e.dist);
                s.max_distance = s.max_distance.max(e.dist);
                let m_e = (e.e - e.lb_e).min(e.ub_e - e.e);
                let m_psi = e.rho_psi - e.psi;
                let m_d = (e.dist - spec.d_col).min(spec.d_con - e.dist);
                s.min_margin_e = s.min_margin_e.min(m_e);
                s.min_margin_psi = s.min_margin_psi.min(m_psi);
                s.min_margin_distance = s.min_margin_distance.min(m_d);
                if !(m_e > 0.0 && m_psi > 0.0 && m_d > 0.0 && e.psi < 2.0) {
                    row_violations += 1;
                }
            }
        }
        if let Some(last) = trace.rows.last() {
            for (s, e) in edges.iter_mut().zip(&last.edges) {
                s.final_e = e.e;
                s.final_psi = e.psi;
            }
        }
        let online = error.map_or(0, |e| usize::from(e.is_funnel_violation()));
        let status = match error {
            None => RunStatus::Completed,
            Some(e) if e.is_funnel_violation() => RunStatus::FunnelViolation,
            Some(_) => RunStatus::Failed,
        };
        Summary {
            status,
            violation_count: online + row_violations,
            abort: error.map(|e| e.to_string()),
            t_final: trace.rows.last().map_or(0.0, |r| r.t),
            rows: trace.rows.len(),
            edges,
            max_orthonormality_error: max_orth,
            repairs,
            substeps: 0,
            max_substeps: 0,
            rejected_steps: 0,
            wall_clock_s: wall,
            scenario_hash: sc.hash(),
            prng: sc.prng.to_string(),
            config: sc.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: Trace,
    pub summary: Summary,
    /// Set when the run aborted; the trace holds every row recorded before it.
    pub error: Option<SimError>,
}

/// One macro step of length `sc.dt` split into `n_sub` equal RKMK4 substeps.
fn advance(sc: &Scenario, state: &State, k1: &[Vec6], n_sub: usize) -> Result<State, SimError> {
    let h = sc.dt / n_sub as f64;
    let stage = |t: f64, p: &[Pose], v: &[Twist]| evaluate(sc, t, p, v).map(|e| e.accel);
    let mut s = rkmk4_step(state, h, k1, stage)?;
    for j in 1..n_sub {
        s.t = state.t + j as f64 * h;
        let k1 = stage(s.t, &s.poses, &s.twists)?;
        s = rkmk4_step(&s, h, &k1, stage)?;
    }
    Ok(s)
}

/// Integrates the closed loop from `t = 0` to `t_end`, recording one row per
/// step (`n_steps + 1` rows on success).
///
/// With substepping enabled, a step that leaves a funnel is redone from the
/// same state with twice the substeps, up to [`MAX_SUBSTEPS`]; only a
/// violation that survives the finest split aborts the run.
pub fn run(sc: &Scenario) -> RunOutput {
    let start = Instant::now();
    let n_steps = sc.n_steps();
    let mut trace = Trace::new(sc.n_agents(), sc.n_edges());
    trace.rows.reserve(n_steps + 1);
    let mut state = State {
        t: 0.0,
        poses: sc.initial_poses(),
        twists: sc.initial_twists(),
    };
    let mut repairs = 0;
    let (mut substeps, mut max_substeps, mut rejected) = (0, 0, 0);
    let mut error = None;
    let mut ev = match evaluate(sc, 0.0, &state.poses, &state.twists) {
        Ok(ev) => Some(ev),
        Err(e) => {
            error = Some(e);
            None
        }
    };
    for k in 0..=n_steps {
        let Some(cur) = ev.take() else { break };
        trace.rows.push(record(sc, &state, &cur, repairs));
        if k == n_steps {
            break;
        }
        let t_next = (k + 1) as f64 * sc.dt;
        let mut n_sub = substeps_for(
            sc.dt,
            velocity_loop_rate(sc, state.t, &cur),
            sc.substep_bound,
        );
        let step = loop {
            let attempt = advance(sc, &state, &cur.accel, n_sub).and_then(|mut s| {
                s.t = t_next;
                let r = repair_rotations(&mut s.poses);
                evaluate(sc, t_next, &s.poses, &s.twists).map(|e| (s, e, r))
            });
            match attempt {
                Err(e)
                    if e.is_funnel_violation()
                        && sc.substep_bound.is_some()
                        && n_sub < MAX_SUBSTEPS =>
                {
                    log::debug!("t = {}: step rejected with {n_sub} substeps: {e}", state.t);
                    rejected += 1;
                    n_sub = (2 * n_sub).min(MAX_SUBSTEPS);
                }
                other => break other,
            }
        };
        substeps += n_sub;
        max_substeps = max_substeps.max(n_sub);
        match step {
            Ok((s, e, r)) => {
                state = s;
                ev = Some(e);
                repairs = r;
            }
            Err(e) => {
                error = Some(e);
                break;
            }
        }
    }
    if let Some(e) = &error {
        log::warn!("run aborted: {e}");
    }
    let wall = start.elapsed().as_secs_f64();
    let mut summary = Summary::from_trace(sc, &trace, error.as_ref(), wall);
    summary.substeps = substeps;
    summary.max_substeps = max_substeps;
    summary.rejected_steps = rejected;
    log::info!(
        "run finished: {} rows, {} violations, {:.3} s",
        summary.rows,
        summary.violation_count,
        wall
    );
    RunOutput {
        trace,
        summary,
        error,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepEntry {
    pub seed: u64,
    pub status: RunStatus,
    pub violation_count: usize,
    pub abort: Option<String>,
    pub error: Option<String>,
}

/// Runs `file` once per seed, concurrently. Results come back in seed order.
/// `on_done` receives each finished run (for writing its trace).
pub fn sweep(
    file: &ScenarioFile,
    seeds: &[u64],
    on_done: impl Fn(u64, &RunOutput) + Sync,
) -> Vec<SweepEntry> {
    seeds
        .par_iter()
        .map(|&seed| {
            let mut f = file.clone();
            f.seed = seed;
            match f.resolve() {
                Ok(sc) => {
                    let out = run(&sc);
                    on_done(seed, &out);
                    SweepEntry {
                        seed,
                        status: out.summary.status,
                        violation_count: out.summary.violation_count,
                        abort: out.summary.abort.clone(),
                        error: None,
                    }
                }
                Err(e) => SweepEntry {
                    seed,
                    status: RunStatus::Failed,
                    violation_count: 0,
                    abort: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(p2: [f64; 3], r2: [f64; 9], t_end: f64) -> ScenarioFile {
        let text = format!(
            r#"{{
  "schema": 1,
  "seed": 11,
  "integration": {{"dt": 0.001, "t_end": {t_end}}},
  "agents": [
    {{"p": [0,0,0], "R": [1,0,0,0,1,0,0,0,1], "radius": 1, "sensing_radius": 4, "delta": 0.1, "gamma": 15}},
    {{"p": {p2:?}, "R": {r2:?}, "radius": 1, "sensing_radius": 4, "delta": 0.1, "gamma": 15}}
  ],
  "edges": [[1,2]],
  "edge_defaults": {{"d_des": 2.5, "R_des": [1,0,0,0,1,0,0,0,1], "rho_e_inf": 0.1, "l_e": 1.5,
                     "rho_psi0": 1.99, "rho_psi_inf": 0.1, "l_psi": 1.5}},
  "velocity_funnel": {{"rho_inf": 0.1, "l": 0.2}}
}}"#
        );
        ScenarioFile::from_json_str(&text).unwrap()
    }

    const I: [f64; 9] = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];

    #[test]
    fn equilibrium_stays_put() {
        let sc = pair([2.5, 0.0, 0.0], I, 1.0).resolve().unwrap();
        let out = run(&sc);
        assert!(out.error.is_none());
        assert_eq!(out.trace.rows.len(), 1001);
        for row in &out.trace.rows {
            assert!(row.edges[0].e.abs() < 1e-6);
            assert!(row.edges[0].psi.abs() < 1e-12);
        }
        assert_eq!(out.summary.violation_count, 0);
    }

    #[test]
    fn single_edge_converges_inside_funnels() {
        let r2 = crate::se3::so3_exp(&crate::se3::Vec3::new(0.4, -1.0, 0.3)).to_row_major();
        let sc = pair([3.2, 0.5, -0.4], r2, 3.0).resolve().unwrap();
        let out = run(&sc);
        assert!(out.error.is_none(), "{:?}", out.error);
        assert_eq!(out.summary.status, RunStatus::Completed);
        assert_eq!(out.summary.violation_count, 0);
        let first = &out.trace.rows[0].edges[0];
        let last = &out.trace.rows.last().unwrap().edges[0];
        assert!(last.e.abs() < first.e.abs());
        assert!(last.psi < first.psi);
        assert_eq!(out.trace.rows.last().unwrap().t, 3.0);
    }

    #[test]
    fn abort_keeps_partial_trace() {
        // A funnel that collapses far faster than the dynamics can follow.
        let mut f = pair([3.5, 0.0, 0.0], I, 2.0);
        f.edge_defaults.l_e = 200.0;
        let sc = f.resolve().unwrap();
        let out = run(&sc);
        let err = out.error.expect("must abort");
        assert!(err.is_funnel_violation(), "{err}");
        assert_eq!(out.summary.status, RunStatus::FunnelViolation);
        assert!(out.summary.violation_count >= 1);
        assert!(!out.trace.rows.is_empty());
        assert!(out.trace.rows.len() < 2001);
    }

    #[test]
    fn rejected_steps_are_redone_finer() {
        // ψ(0) = 1.95 against ρ_ψ(0) = 1.99 with a fast funnel: a single
        // 1 ms step overshoots the velocity funnel.
        let r2 =
            crate::se3::so3_exp(&crate::se3::Vec3::new(0.0, 0.0, (-0.95f64).acos())).to_row_major();
        let mut f = pair([2.5, 0.0, 0.0], r2, 0.5);
        f.seed = 1;
        f.edge_defaults.l_psi = 3.0;
        let out = run(&f.resolve().unwrap());
        assert!(out.error.is_none(), "{:?}", out.error);
        assert!(out.summary.rejected_steps > 0);
        assert_eq!(out.trace.rows.len(), 501);

        f.integration.substep_bound = None;
        let plain = run(&f.resolve().unwrap());
        assert!(plain
            .error
            .expect("plain RK4 overshoots")
            .is_funnel_violation());
        assert_eq!(plain.summary.rejected_steps, 0);
    }

    #[test]
    fn sweep_reports_in_seed_order() {
        let f = pair([3.0, 0.0, 0.0], I, 0.05);
        let seeds = [5, 1, 3];
        let res = sweep(&f, &seeds, |_, _| {});
        assert_eq!(res.iter().map(|r| r.seed).collect::<Vec<_>>(), seeds);
        assert!(res.iter().all(|r| r.status == RunStatus::Completed));
    }
}
