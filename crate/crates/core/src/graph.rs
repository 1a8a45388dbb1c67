//! Tree sensing graph, incidence matrices and the rotation-dressed incidence
//! matrix that couples body-frame velocities to edge error rates.
//!
//! Agents are 1-based in configuration files and 0-based everywhere in code.
//! Edge `k` stored as `(tail, head)`; the tail is the first element of the
//! configured pair.

use crate::se3::RotationMatrix;
use nalgebra::{DMatrix, Matrix3};
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("graph needs at least 2 agents, got {0}")]
    TooFewAgents(usize),
    #[error("edge {edge} references agent {agent}, valid range is 1..={n}")]
    BadIndex { edge: usize, agent: usize, n: usize },
    #[error("edge {edge} is a self-loop on agent {agent}")]
    SelfLoop { edge: usize, agent: usize },
    #[error("edge {edge} ({tail},{head}) closes a cycle")]
    HasCycle {
        edge: usize,
        tail: usize,
        head: usize,
    },
    #[error("graph is not connected: agent {agent} is unreachable from agent 1")]
    NotConnected { agent: usize },
}

/// Which end of an edge an agent sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeRole {
    Tail,
    Head,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeGraph {
    n_agents: usize,
    edges: Vec<(usize, usize)>,
    incident: Vec<Vec<(usize, EdgeRole)>>,
}

impl TreeGraph {
    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Edges as 0-based `(tail, head)`.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge(&self, k: usize) -> (usize, usize) {
        self.edges[k]
    }

    /// Edges touching `agent`, in edge order, with the agent's role.
    pub fn incident_edges(&self, agent: usize) -> &[(usize, EdgeRole)] {
        &self.incident[agent]
    }

    pub fn role(&self, agent: usize, k: usize) -> Option<EdgeRole> {
        let (tail, head) = self.edges[k];
        if agent == tail {
            Some(EdgeRole::Tail)
        } else if agent == head {
            Some(EdgeRole::Head)
        } else {
            None
        }
    }

    /// Edge list back in 1-based configuration form.
    pub fn edges_one_based(&self) -> Vec<[usize; 2]> {
        self.edges.iter().map(|&(a, b)| [a + 1, b + 1]).collect()
    }
}

/// Checks that `edges` (1-based `(tail, head)` pairs) form a spanning tree on
/// `n` agents.
pub fn validate_tree(n: usize, edges: &[(usize, usize)]) -> Result<TreeGraph, GraphError> {
    if n < 2 {
        return Err(GraphError::TooFewAgents(n));
    }
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }

    let mut zero_based = Vec::with_capacity(edges.len());
    for (idx, &(tail, head)) in edges.iter().enumerate() {
        let edge = idx + 1;
        for agent in [tail, head] {
            if agent == 0 || agent > n {
                return Err(GraphError::BadIndex { edge, agent, n });
            }
        }
        if tail == head {
            return Err(GraphError::SelfLoop { edge, agent: tail });
        }
        let (a, b) = (find(&mut parent, tail - 1), find(&mut parent, head - 1));
        if a == b {
            return Err(GraphError::HasCycle { edge, tail, head });
        }
        parent[a] = b;
        zero_based.push((tail - 1, head - 1));
    }
    let root = find(&mut parent, 0);
    for agent in 1..n {
        if find(&mut parent, agent) != root {
            return Err(GraphError::NotConnected { agent: agent + 1 });
        }
    }

    let mut incident = vec![Vec::new(); n];
    for (k, &(tail, head)) in zero_based.iter().enumerate() {
        incident[tail].push((k, EdgeRole::Tail));
        incident[head].push((k, EdgeRole::Head));
    }
    Ok(TreeGraph {
        n_agents: n,
        edges: zero_based,
        incident,
    })
}

/// Random labelled tree on `n ≥ 2` agents: node j attaches to a uniformly
/// chosen earlier node, then labels and edge orientations are shuffled.
pub fn random_tree<R: Rng + ?Sized>(rng: &mut R, n: usize) -> TreeGraph {
    let mut labels: Vec<usize> = (1..=n).collect();
    for i in (1..n).rev() {
        labels.swap(i, rng.gen_range(0..=i));
    }
    let mut edges = Vec::new();
    for j in 1..n {
        let parent = rng.gen_range(0..j);
        let (a, b) = (labels[parent], labels[j]);
        edges.push(if rng.gen_bool(0.5) { (a, b) } else { (b, a) });
    }
    validate_tree(n, &edges).expect("attachment construction always yields a tree")
}

/// N×K incidence matrix: +1 on the head row, −1 on the tail row.
#[derive(Debug, Clone, PartialEq)]
pub struct IncidenceMatrix(DMatrix<i8>);

impl IncidenceMatrix {
    pub fn entries(&self) -> &DMatrix<i8> {
        &self.0
    }

    pub fn to_f64(&self) -> DMatrix<f64> {
        self.0.map(f64::from)
    }
}

pub fn incidence(g: &TreeGraph) -> IncidenceMatrix {
    let mut d = DMatrix::<i8>::zeros(g.n_agents, g.n_edges());
    for (k, &(tail, head)) in g.edges.iter().enumerate() {
        d[(tail, k)] = -1;
        d[(head, k)] = 1;
    }
    IncidenceMatrix(d)
}

/// `α(i, k, R_{k₁}, R_{k₂})`: `−I` for the tail, `R_{k₂}ᵀR_{k₁}` for the head,
/// zero otherwise.
pub fn alpha(
    g: &TreeGraph,
    agent: usize,
    k: usize,
    r_tail: &RotationMatrix,
    r_head: &RotationMatrix,
) -> Matrix3<f64> {
    match g.role(agent, k) {
        Some(role) => alpha_for_role(role, &r_head.transpose().compose(r_tail)),
        None => Matrix3::zeros(),
    }
}

/// `α` written in terms of the relative rotation `R_{k₂}ᵀR_{k₁}` the agents
/// measure directly.
pub fn alpha_for_role(role: EdgeRole, rel_rot: &RotationMatrix) -> Matrix3<f64> {
    match role {
        EdgeRole::Tail => -Matrix3::identity(),
        EdgeRole::Head => *rel_rot.matrix(),
    }
}

/// `D_R = R̄ᵀ (D ⊗ I₃) R̂`, with `R̄ = blockdiag(R_i)` and
/// `R̂ = blockdiag(R_{k₁})`. Block `(i, k)` equals `α(i, k, ·)`.
pub fn orientation_incidence(g: &TreeGraph, rotations: &[RotationMatrix]) -> DMatrix<f64> {
    assert_eq!(rotations.len(), g.n_agents, "one rotation per agent");
    let n = g.n_agents;
    let k_count = g.n_edges();
    let d = incidence(g).to_f64();
    let kron = d.kronecker(&DMatrix::<f64>::identity(3, 3));
    let mut r_bar = DMatrix::<f64>::zeros(3 * n, 3 * n);
    for (i, r) in rotations.iter().enumerate() {
        r_bar.view_mut((3 * i, 3 * i), (3, 3)).copy_from(r.matrix());
    }
    let mut r_hat = DMatrix::<f64>::zeros(3 * k_count, 3 * k_count);
    for (k, &(tail, _)) in g.edges.iter().enumerate() {
        r_hat
            .view_mut((3 * k, 3 * k), (3, 3))
            .copy_from(rotations[tail].matrix());
    }
    r_bar.transpose() * kron * r_hat
}

/// Smallest eigenvalue of `Dᵀ·diag(δ)·D`, positive for every tree.
pub fn weighted_laplacian_min_eig(g: &TreeGraph, delta: &[f64]) -> f64 {
    assert_eq!(delta.len(), g.n_agents, "one weight per agent");
    let d = incidence(g).to_f64();
    let weights = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(delta));
    let m = d.transpose() * weights * &d;
    m.symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}
