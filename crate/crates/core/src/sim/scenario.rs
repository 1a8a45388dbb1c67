//! Scenario files: JSON schema, randomized parameter draws and validation.
//!
//! Loading is two-phase. [`ScenarioFile`] is the raw document and can be
//! tweaked (CLI overrides) before [`ScenarioFile::resolve`] draws the random
//! parameters, projects input rotations, builds funnels and checks every
//! initial-condition inequality.

use crate::controller::{
    desired_velocity, edge_feedback, measure_edge, velocity_error, ControllerGains,
};
use crate::funnel::{make_edge_spec, EdgeSpec, EdgeSpecParams, VelocityFunnel};
use crate::graph::{validate_tree, TreeGraph};
use crate::plant::{measured_velocity, NoiseModel, RigidBodyParams, SinusoidalModel};
use crate::se3::{
    orthonormality_error, project_so3, psi_from_relative, Pose, RotationMatrix, Twist, Vec3, Vec6,
};
use nalgebra::Matrix3;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

/// Input rotations further than this from SO(3) are rejected instead of projected.
pub const MAX_PROJECTION_ERROR: f64 = 0.5;

/// Identifier of the parameter-drawing scheme, echoed in run summaries.
pub const PRNG_ID: &str =
    "chacha8 (rand_chacha 0.3, seed_from_u64(seed), stream = agent index) / u64>>11 * 2^-53";

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid scenario at `{field}`: {message}")]
    Validation { field: String, message: String },
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Validation {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    pub seed: u64,
    pub integration: IntegrationConfig,
    #[serde(default)]
    pub gravity: [f64; 3],
    pub agents: Vec<AgentConfig>,
    /// 1-based `[tail, head]` pairs.
    pub edges: Vec<[usize; 2]>,
    pub edge_defaults: EdgeConfig,
    /// Optional per-edge overrides, same order and length as `edges`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub edge_params: Vec<EdgeOverride>,
    pub velocity_funnel: VelocityFunnelConfig,
    #[serde(default)]
    pub random: RandomRanges,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrationConfig {
    pub dt: f64,
    pub t_end: f64,
    /// Largest `h·λ` allowed per RK4 substep, `λ` being the estimated
    /// velocity-loop rate. `None` disables substepping.
    #[serde(default = "default_substep_bound")]
    pub substep_bound: Option<f64>,
}

fn default_substep_bound() -> Option<f64> {
    Some(DEFAULT_SUBSTEP_BOUND)
}

/// RK4's real-axis stability limit is about 2.785; this leaves room for the
/// barrier's curvature and coupling between components.
pub const DEFAULT_SUBSTEP_BOUND: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub p: [f64; 3],
    /// Row-major.
    #[serde(rename = "R")]
    pub r: [f64; 9],
    #[serde(default)]
    pub v: [f64; 6],
    pub radius: f64,
    pub sensing_radius: f64,
    pub delta: f64,
    pub gamma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mass: Option<f64>,
    /// Either 3 diagonal entries or 9 row-major entries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inertia: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disturbance: Option<SinusoidalModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<SinusoidalModel>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeConfig {
    pub d_des: f64,
    /// Defaults to the sum of the two body radii.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_col: Option<f64>,
    /// Defaults to the smaller of the two sensing radii.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_con: Option<f64>,
    #[serde(rename = "R_des")]
    pub r_des: [f64; 9],
    pub rho_e_inf: f64,
    pub l_e: f64,
    pub rho_psi0: f64,
    pub rho_psi_inf: f64,
    pub l_psi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeOverride {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_des: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_col: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d_con: Option<f64>,
    #[serde(rename = "R_des", default, skip_serializing_if = "Option::is_none")]
    pub r_des: Option<[f64; 9]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_e_inf: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_e: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_psi0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_psi_inf: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_psi: Option<f64>,
}

impl EdgeOverride {
    fn apply(&self, base: &EdgeConfig) -> EdgeConfig {
        EdgeConfig {
            d_des: self.d_des.unwrap_or(base.d_des),
            d_col: self.d_col.or(base.d_col),
            d_con: self.d_con.or(base.d_con),
            r_des: self.r_des.unwrap_or(base.r_des),
            rho_e_inf: self.rho_e_inf.unwrap_or(base.rho_e_inf),
            l_e: self.l_e.unwrap_or(base.l_e),
            rho_psi0: self.rho_psi0.unwrap_or(base.rho_psi0),
            rho_psi_inf: self.rho_psi_inf.unwrap_or(base.rho_psi_inf),
            l_psi: self.l_psi.unwrap_or(base.l_psi),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VelocityFunnelConfig {
    pub rho_inf: f64,
    pub l: f64,
    /// Fixed `ρ_v(0)` for every agent. When absent each component gets
    /// `2|e_v(0)| + 1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho0: Option<[f64; 6]>,
}

/// Half-open sampling ranges `[lo, hi)` for parameters the file leaves out.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomRanges {
    pub mass: [f64; 2],
    pub inertia: [f64; 2],
    pub disturbance: [f64; 2],
    pub noise: [f64; 2],
}

impl Default for RandomRanges {
    fn default() -> Self {
        RandomRanges {
            mass: [0.1, 1.0],
            inertia: [0.1, 1.0],
            disturbance: [0.0, 0.1],
            noise: [0.0, 0.1],
        }
    }
}

/// Per-agent quantities drawn from the seed before overrides are applied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DrawnParams {
    pub mass: f64,
    pub inertia_diag: [f64; 3],
    pub disturbance: SinusoidalModel,
    pub noise: SinusoidalModel,
}

/// Uniform double in `[0, 1)` from the top 53 bits of one `u64`.
fn unit(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn uniform(rng: &mut ChaCha8Rng, range: [f64; 2]) -> f64 {
    range[0] + (range[1] - range[0]) * unit(rng)
}

/// Draws agent `agent`'s (0-based) parameters. Always consumes the same ten
/// values in the same order so overriding one field never shifts another.
pub fn draw_agent_params(seed: u64, agent: usize, ranges: &RandomRanges) -> DrawnParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(agent as u64);
    let mass = uniform(&mut rng, ranges.mass);
    let inertia_diag = [
        uniform(&mut rng, ranges.inertia),
        uniform(&mut rng, ranges.inertia),
        uniform(&mut rng, ranges.inertia),
    ];
    let mut sinusoid = |range| {
        let amplitude = uniform(&mut rng, range);
        let frequency = uniform(&mut rng, range);
        let phase = uniform(&mut rng, range);
        SinusoidalModel::new(amplitude, frequency, phase)
    };
    let disturbance = sinusoid(ranges.disturbance);
    let noise = sinusoid(ranges.noise);
    DrawnParams {
        mass,
        inertia_diag,
        disturbance,
        noise,
    }
}

/// One agent after resolution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Agent {
    pub pose0: Pose,
    pub twist0: Twist,
    pub params: RigidBodyParams,
    pub disturbance: SinusoidalModel,
    pub noise: NoiseModel,
    pub gains: ControllerGains,
    pub velocity_funnel: VelocityFunnel,
}

/// An input rotation that was moved onto SO(3) at load time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Projection {
    pub field: String,
    pub orthonormality_error: f64,
    pub correction: f64,
}

/// Fully validated simulation input.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub seed: u64,
    pub dt: f64,
    pub t_end: f64,
    pub substep_bound: Option<f64>,
    #[serde(serialize_with = "serialize_graph")]
    pub graph: TreeGraph,
    pub agents: Vec<Agent>,
    pub edges: Vec<EdgeSpec>,
    pub drawn: Vec<DrawnParams>,
    pub projections: Vec<Projection>,
    pub prng: &'static str,
}

fn serialize_graph<S: serde::Serializer>(g: &TreeGraph, s: S) -> Result<S::Ok, S::Error> {
    g.edges_one_based().serialize(s)
}

impl Scenario {
    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Number of integration steps; the trace has one more row.
    pub fn n_steps(&self) -> usize {
        // absorb representation error in ratios like 5 / 0.001
        ((self.t_end / self.dt) * (1.0 + 1e-12)).floor() as usize
    }

    pub fn initial_poses(&self) -> Vec<Pose> {
        self.agents.iter().map(|a| a.pose0).collect()
    }

    pub fn initial_twists(&self) -> Vec<Twist> {
        self.agents.iter().map(|a| a.twist0).collect()
    }

    /// SHA-256 of the canonical JSON of the resolved scenario.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("scenario serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    ScenarioFile::from_path(path)?.resolve()
}

fn finite(field: &str, values: &[f64]) -> Result<(), ScenarioError> {
    match values.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(invalid(format!("{field}[{i}]"), "must be finite")),
        None => Ok(()),
    }
}

fn positive(field: &str, x: f64) -> Result<(), ScenarioError> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(invalid(
            field,
            format!("must satisfy 0 < {field} < inf, got {x}"),
        ))
    }
}

fn rotation_input(
    field: &str,
    r: &[f64; 9],
    projections: &mut Vec<Projection>,
) -> Result<RotationMatrix, ScenarioError> {
    finite(field, r)?;
    let m = Matrix3::from_row_slice(r);
    let err = orthonormality_error(&m);
    if let Ok(rot) = RotationMatrix::new(m) {
        return Ok(rot);
    }
    if err > MAX_PROJECTION_ERROR || !(m.determinant() > 0.0) {
        return Err(invalid(
            field,
            format!(
                "not a rotation: need ‖RᵀR − I‖_F <= {MAX_PROJECTION_ERROR} and det R > 0, got {err:.3e} and {:.4}",
                m.determinant()
            ),
        ));
    }
    let rot = project_so3(&m).map_err(|e| invalid(field, e.to_string()))?;
    let correction = (rot.matrix() - m).norm();
    log::warn!(
        "{field}: projected onto SO(3) (orthonormality error {err:.3e}, moved by {correction:.3e})"
    );
    projections.push(Projection {
        field: field.to_string(),
        orthonormality_error: err,
        correction,
    });
    Ok(rot)
}

impl ScenarioFile {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn from_json_str(text: &str) -> Result<Self, ScenarioError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn resolve(&self) -> Result<Scenario, ScenarioError> {
        if self.schema != SCHEMA_VERSION {
            return Err(invalid(
                "schema",
                format!(
                    "unsupported version {}, expected {SCHEMA_VERSION}",
                    self.schema
                ),
            ));
        }
        positive("integration.dt", self.integration.dt)?;
        if !(self.integration.t_end >= 0.0 && self.integration.t_end.is_finite()) {
            return Err(invalid(
                "integration.t_end",
                "must satisfy 0 <= t_end < inf",
            ));
        }
        if let Some(b) = self.integration.substep_bound {
            positive("integration.substep_bound", b)?;
        }
        finite("gravity", &self.gravity)?;
        for (name, r) in [
            ("random.mass", self.random.mass),
            ("random.inertia", self.random.inertia),
        ] {
            if !(r[0] > 0.0 && r[0] <= r[1] && r[1].is_finite()) {
                return Err(invalid(name, format!("need 0 < lo <= hi, got {r:?}")));
            }
        }
        for (name, r) in [
            ("random.disturbance", self.random.disturbance),
            ("random.noise", self.random.noise),
        ] {
            if !(r[0] <= r[1] && r[0].is_finite() && r[1].is_finite()) {
                return Err(invalid(name, format!("need lo <= hi, got {r:?}")));
            }
        }

        let n = self.agents.len();
        let edge_pairs: Vec<(usize, usize)> = self.edges.iter().map(|e| (e[0], e[1])).collect();
        let graph = validate_tree(n, &edge_pairs).map_err(|e| invalid("edges", e.to_string()))?;

        let mut projections = Vec::new();
        let mut drawn = Vec::with_capacity(n);
        let mut partial = Vec::with_capacity(n);
        let gravity = Vec3::from(self.gravity);
        for (i, a) in self.agents.iter().enumerate() {
            let field = |name: &str| format!("agents[{i}].{name}");
            finite(&field("p"), &a.p)?;
            finite(&field("v"), &a.v)?;
            let r = rotation_input(&field("R"), &a.r, &mut projections)?;
            positive(&field("radius"), a.radius)?;
            positive(&field("sensing_radius"), a.sensing_radius)?;
            positive(&field("delta"), a.delta)?;
            positive(&field("gamma"), a.gamma)?;

            let d = draw_agent_params(self.seed, i, &self.random);
            drawn.push(d);
            let mass = a.mass.unwrap_or(d.mass);
            let inertia = match a.inertia.as_deref() {
                None => Matrix3::from_diagonal(&Vec3::from(d.inertia_diag)),
                Some(diag @ [_, _, _]) => Matrix3::from_diagonal(&Vec3::from_row_slice(diag)),
                Some(full) if full.len() == 9 => Matrix3::from_row_slice(full),
                Some(other) => {
                    return Err(invalid(
                        field("inertia"),
                        format!("expected 3 or 9 entries, got {}", other.len()),
                    ))
                }
            };
            let params = RigidBodyParams {
                mass,
                inertia,
                radius: a.radius,
                sensing_radius: a.sensing_radius,
                gravity,
            };
            params
                .validate()
                .map_err(|e| invalid(field("inertia|mass"), e.to_string()))?;
            let disturbance = a.disturbance.unwrap_or(d.disturbance);
            let noise = a.noise.unwrap_or(d.noise);
            for (name, m) in [("disturbance", disturbance), ("noise", noise)] {
                finite(&field(name), &[m.amplitude, m.frequency, m.phase])?;
            }
            partial.push((
                Pose::new(Vec3::from(a.p), r),
                Twist::from_vec6(&Vec6::from(a.v)),
                params,
                disturbance,
                noise,
                ControllerGains {
                    delta: a.delta,
                    gamma: a.gamma,
                },
            ));
        }

        for i in 0..n {
            for &(k, _) in graph.incident_edges(i) {
                let (a, b) = graph.edge(k);
                let j = if a == i { b } else { a };
                let need = self.agents[i].radius + self.agents[j].radius;
                if !(self.agents[i].sensing_radius > need) {
                    return Err(invalid(
                        format!("agents[{i}].sensing_radius"),
                        format!(
                            "must exceed r_{} + r_{} = {need}, got {}",
                            i + 1,
                            j + 1,
                            self.agents[i].sensing_radius
                        ),
                    ));
                }
            }
        }

        if !self.edge_params.is_empty() && self.edge_params.len() != self.edges.len() {
            return Err(invalid(
                "edge_params",
                format!(
                    "needs one entry per edge ({}), got {}",
                    self.edges.len(),
                    self.edge_params.len()
                ),
            ));
        }
        let mut edges = Vec::with_capacity(graph.n_edges());
        for (k, &(a, b)) in graph.edges().iter().enumerate() {
            let field = |name: &str| format!("edges[{k}].{name}");
            let cfg = match self.edge_params.get(k) {
                Some(o) => o.apply(&self.edge_defaults),
                None => self.edge_defaults,
            };
            let (ta, tb) = (&self.agents[a], &self.agents[b]);
            let d_col = cfg.d_col.unwrap_or(ta.radius + tb.radius);
            let d_con = cfg
                .d_con
                .unwrap_or(ta.sensing_radius.min(tb.sensing_radius));
            finite(
                &field("params"),
                &[
                    cfg.d_des,
                    d_col,
                    d_con,
                    cfg.rho_e_inf,
                    cfg.l_e,
                    cfg.rho_psi0,
                    cfg.rho_psi_inf,
                    cfg.l_psi,
                ],
            )?;
            let r_des = rotation_input(&field("R_des"), &cfg.r_des, &mut projections)?;
            let (tail, head) = (&partial[a].0, &partial[b].0);
            let m = measure_edge(tail, head);
            if !(d_col < m.distance && m.distance < d_con) {
                return Err(invalid(
                    field("initial_distance"),
                    format!(
                        "need d_col = {d_col} < ‖p_{}(0) − p_{}(0)‖ = {} < d_con = {d_con}",
                        b + 1,
                        a + 1,
                        m.distance
                    ),
                ));
            }
            let psi0 = psi_from_relative(&m.rel_rot, &r_des);
            let spec = make_edge_spec(&EdgeSpecParams {
                d_col,
                d_des: cfg.d_des,
                d_con,
                r_des,
                rho_e_inf: cfg.rho_e_inf,
                l_e: cfg.l_e,
                psi0,
                rho_psi0: cfg.rho_psi0,
                rho_psi_inf: cfg.rho_psi_inf,
                l_psi: cfg.l_psi,
            })
            .map_err(|e| invalid(field("params"), e.to_string()))?;
            let (lb, ub) = spec.distance_bounds(0.0).expect("t = 0");
            let e0 = m.rel_pos_in_tail.norm_squared() - spec.d_des * spec.d_des;
            if !(lb < e0 && e0 < ub) {
                return Err(invalid(
                    field("initial_distance"),
                    format!("need −C_col = {lb} < e(0) = {e0} < C_con = {ub}"),
                ));
            }
            edges.push(spec);
        }

        // Velocity funnels depend on v_des(0), which needs every edge.
        let poses: Vec<Pose> = partial.iter().map(|p| p.0).collect();
        let feedback: Vec<_> = graph
            .edges()
            .iter()
            .zip(&edges)
            .enumerate()
            .map(|(k, (&(a, b), spec))| {
                edge_feedback(spec, &measure_edge(&poses[a], &poses[b]), 0.0).map_err(|e| {
                    invalid(
                        format!("edges[{k}]"),
                        format!("initial state outside funnel: {e}"),
                    )
                })
            })
            .collect::<Result<_, _>>()?;
        let anchor = poses[0].p;
        let mut agents = Vec::with_capacity(n);
        for (i, (pose0, twist0, params, disturbance, noise, gains)) in
            partial.into_iter().enumerate()
        {
            let v_des = desired_velocity(i, &graph, &feedback, gains.delta);
            let v_meas = measured_velocity(&noise, &anchor, &pose0.r, &twist0, 0.0);
            let e_v0: [f64; 6] = velocity_error(&v_meas, &v_des).0.into();
            let vf = self.velocity_funnel;
            let velocity_funnel = match vf.rho0 {
                None => VelocityFunnel::from_initial_error(&e_v0, vf.rho_inf, vf.l),
                Some(rho0) => {
                    if let Some(l) = (0..6).find(|&l| !(rho0[l] > e_v0[l].abs())) {
                        return Err(invalid(
                            format!("velocity_funnel.rho0[{l}]"),
                            format!(
                                "need rho_v(0) = {} > |e_v(0)| = {} for agent {}",
                                rho0[l],
                                e_v0[l].abs(),
                                i + 1
                            ),
                        ));
                    }
                    VelocityFunnel::with_initial_values(&rho0, vf.rho_inf, vf.l)
                }
            }
            .map_err(|e| invalid("velocity_funnel", e.to_string()))?;
            agents.push(Agent {
                pose0,
                twist0,
                params,
                disturbance,
                noise,
                gains,
                velocity_funnel,
            });
        }

        Ok(Scenario {
            seed: self.seed,
            dt: self.integration.dt,
            t_end: self.integration.t_end,
            substep_bound: self.integration.substep_bound,
            graph,
            agents,
            edges,
            drawn,
            projections,
            prng: PRNG_ID,
        })
    }
}
