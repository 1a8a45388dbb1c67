//! Time-series record of a run and its CSV form.

use crate::se3::{RotationMatrix, Vec3, Vec6};
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("trace schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("row {row}, column `{column}`: cannot parse {value:?}")]
    BadValue {
        row: usize,
        column: String,
        value: String,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentRow {
    pub p: Vec3,
    pub r: RotationMatrix,
    pub v: Vec6,
    pub v_des: Vec6,
    pub u: Vec6,
    /// Noisy feedback `ṽ`; kept in memory only, absent when read from CSV.
    pub v_meas: Option<Vec6>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeRow {
    pub e: f64,
    pub psi: f64,
    pub dist: f64,
    pub lb_e: f64,
    pub ub_e: f64,
    pub rho_psi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub agents: Vec<AgentRow>,
    pub edges: Vec<EdgeRow>,
    /// Rotations re-projected during the step that produced this row.
    pub repairs: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trace {
    pub n_agents: usize,
    pub n_edges: usize,
    pub rows: Vec<TraceRow>,
}

const AGENT_COLS: usize = 3 + 9 + 6 + 6 + 6;
const EDGE_COLS: usize = 6;

/// Column names, agents and edges 1-based.
pub fn header(n_agents: usize, n_edges: usize) -> Vec<String> {
    let mut h = Vec::with_capacity(1 + n_agents * AGENT_COLS + n_edges * EDGE_COLS);
    h.push("t".to_string());
    for i in 1..=n_agents {
        for c in ["x", "y", "z"] {
            h.push(format!("p_{i}_{c}"));
        }
        for r in 1..=3 {
            for c in 1..=3 {
                h.push(format!("R_{i}_{r}{c}"));
            }
        }
        for prefix in ["v", "vdes", "u"] {
            for l in 1..=6 {
                h.push(format!("{prefix}_{i}_{l}"));
            }
        }
    }
    for k in 1..=n_edges {
        for name in ["e", "psi", "dist", "lb_e", "ub_e", "rho_psi"] {
            h.push(format!("{name}_{k}"));
        }
    }
    h
}

/// 17 significant digits, enough to round-trip every `f64`.
fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

impl Trace {
    pub fn new(n_agents: usize, n_edges: usize) -> Self {
        Trace {
            n_agents,
            n_edges,
            rows: Vec::new(),
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), TraceError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(header(self.n_agents, self.n_edges))?;
        let mut rec = Vec::with_capacity(1 + self.n_agents * AGENT_COLS + self.n_edges * EDGE_COLS);
        for row in &self.rows {
            rec.clear();
            rec.push(fmt(row.t));
            for a in &row.agents {
                rec.extend(a.p.iter().map(|&x| fmt(x)));
                rec.extend(a.r.to_row_major().iter().map(|&x| fmt(x)));
                for v in [&a.v, &a.v_des, &a.u] {
                    rec.extend(v.iter().map(|&x| fmt(x)));
                }
            }
            for e in &row.edges {
                rec.extend([e.e, e.psi, e.dist, e.lb_e, e.ub_e, e.rho_psi].map(fmt));
            }
            out.write_record(&rec)?;
        }
        out.flush().map_err(|source| TraceError::Io {
            path: "<trace>".into(),
            source,
        })?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: impl AsRef<Path>) -> Result<(), TraceError> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|source| TraceError::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Parses a trace for a scenario with the given agent and edge counts.
    /// The header must match [`header`] exactly.
    pub fn read_csv<R: Read>(r: R, n_agents: usize, n_edges: usize) -> Result<Self, TraceError> {
        let mut rdr = csv::Reader::from_reader(r);
        let expected = header(n_agents, n_edges);
        let got: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if got != expected {
            let detail = match got.iter().zip(&expected).position(|(a, b)| a != b) {
                Some(i) => format!("column {i} is `{}`, expected `{}`", got[i], expected[i]),
                None => format!("{} columns, expected {}", got.len(), expected.len()),
            };
            return Err(TraceError::SchemaMismatch(detail));
        }
        let mut trace = Trace::new(n_agents, n_edges);
        for (row_idx, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let mut vals = Vec::with_capacity(rec.len());
            for (c, field) in rec.iter().enumerate() {
                vals.push(
                    field
                        .trim()
                        .parse::<f64>()
                        .map_err(|_| TraceError::BadValue {
                            row: row_idx,
                            column: expected[c].clone(),
                            value: field.to_string(),
                        })?,
                );
            }
            let mut it = vals.into_iter();
            let mut take = |n: usize| -> Vec<f64> { it.by_ref().take(n).collect() };
            let t = take(1)[0];
            let agents = (0..n_agents)
                .map(|_| {
                    let p = take(3);
                    let r: [f64; 9] = take(9).try_into().expect("9 entries");
                    AgentRow {
                        p: Vec3::from_row_slice(&p),
                        r: RotationMatrix::from_matrix_unchecked(
                            nalgebra::Matrix3::from_row_slice(&r),
                        ),
                        v: Vec6::from_row_slice(&take(6)),
                        v_des: Vec6::from_row_slice(&take(6)),
                        u: Vec6::from_row_slice(&take(6)),
                        v_meas: None,
                    }
                })
                .collect();
            let edges = (0..n_edges)
                .map(|_| {
                    let e = take(6);
                    EdgeRow {
                        e: e[0],
                        psi: e[1],
                        dist: e[2],
                        lb_e: e[3],
                        ub_e: e[4],
                        rho_psi: e[5],
                    }
                })
                .collect();
            trace.rows.push(TraceRow {
                t,
                agents,
                edges,
                repairs: 0,
            });
        }
        Ok(trace)
    }

    pub fn read_csv_file(
        path: impl AsRef<Path>,
        n_agents: usize,
        n_edges: usize,
    ) -> Result<Self, TraceError> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|source| TraceError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::read_csv(std::io::BufReader::new(file), n_agents, n_edges)
    }
}
