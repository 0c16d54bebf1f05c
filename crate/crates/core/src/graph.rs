//! Weighted graphs read off `S`, DOT output and graph comparison.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::measured_from_output;

/// Undirected edge between zero-based nodes `i < j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedGraph {
    pub measured: Vec<bool>,
    pub edges: Vec<GraphEdge>,
}

impl WeightedGraph {
    pub fn n(&self) -> usize {
        self.measured.len()
    }
}

/// One edge per `i < j` with `|S_ij| > prune_tol`, sign preserved. Nodes
/// with a zero column in `c_target` are flagged unmeasured.
pub fn graph_from_s(
    s: &DMatrix<f64>,
    c_target: Option<&DMatrix<f64>>,
    prune_tol: f64,
) -> WeightedGraph {
    let n = s.nrows();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if s[(i, j)].abs() > prune_tol {
                edges.push(GraphEdge {
                    i,
                    j,
                    weight: s[(i, j)],
                });
            }
        }
    }
    WeightedGraph {
        measured: measured_from_output(c_target, n),
        edges,
    }
}

/// `printf("%.4g")`.
pub fn format_g4(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.3e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if !(-4..4).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim(mantissa), exp.abs())
    } else {
        let decimals = (3 - exp).max(0) as usize;
        trim(&format!("{x:.decimals$}"))
    }
}

/// Deterministic undirected DOT with one-based node labels; unmeasured
/// nodes are drawn red.
pub fn emit_dot(graph: &WeightedGraph) -> String {
    let mut out = String::from("graph rc {\n");
    for (i, measured) in graph.measured.iter().enumerate() {
        if *measured {
            let _ = writeln!(out, "  {};", i + 1);
        } else {
            let _ = writeln!(out, "  {} [color=red];", i + 1);
        }
    }
    for e in &graph.edges {
        let _ = writeln!(
            out,
            "  {} -- {} [label=\"{}\"];",
            e.i + 1,
            e.j + 1,
            format_g4(e.weight)
        );
    }
    out.push_str("}\n");
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Identical,
    SameTopology,
    Different,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphComparison {
    pub precision: f64,
    pub recall: f64,
    pub matched_edges: usize,
    pub true_edges: usize,
    pub reconstructed_edges: usize,
    /// Largest `|w_true - w_rec|` over edges present in both graphs.
    pub max_weight_deviation: f64,
    pub verdict: Verdict,
}

pub fn compare_graphs(
    truth: &WeightedGraph,
    rec: &WeightedGraph,
    weight_tol: f64,
) -> Result<GraphComparison> {
    if truth.n() != rec.n() {
        return Err(Error::NodeCountMismatch {
            left: truth.n(),
            right: rec.n(),
        });
    }
    let index = |g: &WeightedGraph| {
        g.edges
            .iter()
            .map(|e| ((e.i, e.j), e.weight))
            .collect::<BTreeMap<_, _>>()
    };
    let (t, r) = (index(truth), index(rec));
    let mut matched = 0;
    let mut deviation = 0.0_f64;
    for (key, wt) in &t {
        if let Some(wr) = r.get(key) {
            matched += 1;
            deviation = deviation.max((wt - wr).abs());
        }
    }
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            1.0
        } else {
            num as f64 / den as f64
        }
    };
    let same_topology = matched == t.len() && matched == r.len();
    let verdict = if same_topology && deviation <= weight_tol {
        Verdict::Identical
    } else if same_topology {
        Verdict::SameTopology
    } else {
        Verdict::Different
    };
    Ok(GraphComparison {
        precision: ratio(matched, r.len()),
        recall: ratio(matched, t.len()),
        matched_edges: matched,
        true_edges: t.len(),
        reconstructed_edges: r.len(),
        max_weight_deviation: deviation,
        verdict,
    })
}
