//! Random RC instances: a connected graph with integer conductances gives
//! `S = -I K I^T` (`I` the incidence matrix), `G = I`, and the observed
//! model is obtained by a random change of coordinates.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::condition_number;
use crate::model::StateSpaceModel;

pub const MAX_ATTEMPTS: usize = 1000;
pub const MAX_SCRAMBLE_CONDITION: f64 = 1e4;

/// An edge between zero-based nodes `i < j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub conductance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RcInstance {
    pub n: usize,
    pub m: usize,
    pub seed: u64,
    #[serde(with = "crate::io::matrix_serde")]
    pub s_true: DMatrix<f64>,
    pub g_true: Vec<f64>,
    #[serde(with = "crate::io::matrix_serde")]
    pub c_target: DMatrix<f64>,
    #[serde(with = "crate::io::matrix_serde")]
    pub t_tilde: DMatrix<f64>,
    #[serde(with = "crate::io::matrix_serde")]
    pub a_hat: DMatrix<f64>,
    #[serde(with = "crate::io::matrix_serde")]
    pub c_hat: DMatrix<f64>,
    pub edges: Vec<Edge>,
}

impl RcInstance {
    /// The identified model `(A_hat, C_hat)` with target output `C`.
    pub fn model(&self) -> StateSpaceModel {
        StateSpaceModel::with_output(
            self.a_hat.clone(),
            self.c_hat.clone(),
            self.c_target.clone(),
        )
        .expect("generated instances are consistent")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerateOptions {
    pub edge_probability: f64,
    /// Inclusive range of the integer conductances.
    pub conductance_range: (u32, u32),
}

impl Default for GenerateOptions {
    fn default() -> Self {
        GenerateOptions {
            edge_probability: 0.3,
            conductance_range: (1, 3),
        }
    }
}

/// `S = -I K I^T`: off-diagonal `S_ij = k_ij`, rows summing to zero.
pub fn laplacian_from_edges(n: usize, edges: &[Edge]) -> Result<DMatrix<f64>> {
    let mut s = DMatrix::zeros(n, n);
    for e in edges {
        if e.i >= n || e.j >= n || e.i == e.j {
            return Err(Error::InvalidInput(format!(
                "bad edge ({}, {}) for {n} nodes",
                e.i, e.j
            )));
        }
        s[(e.i, e.j)] += e.conductance;
        s[(e.j, e.i)] += e.conductance;
        s[(e.i, e.i)] -= e.conductance;
        s[(e.j, e.j)] -= e.conductance;
    }
    Ok(s)
}

fn connected(n: usize, edges: &[Edge]) -> bool {
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    while let Some(v) = stack.pop() {
        for e in edges {
            let other = if e.i == v {
                e.j
            } else if e.j == v {
                e.i
            } else {
                continue;
            };
            if !seen[other] {
                seen[other] = true;
                stack.push(other);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

/// Output matrix measuring the first `m` node potentials.
pub fn projection(m: usize, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m, n, |r, c| if r == c { 1.0 } else { 0.0 })
}

/// Builds an instance from a known graph and scramble.
pub fn from_edges(
    n: usize,
    m: usize,
    edges: Vec<Edge>,
    t_tilde: DMatrix<f64>,
    seed: u64,
) -> Result<RcInstance> {
    if m == 0 || m > n || t_tilde.shape() != (n, n) {
        return Err(Error::Dimension(format!(
            "need 1 <= m <= n and an {n}x{n} scramble"
        )));
    }
    let s_true = laplacian_from_edges(n, &edges)?;
    let t_inv = t_tilde
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::InvalidInput("scramble is singular".into()))?;
    let c_target = projection(m, n);
    Ok(RcInstance {
        n,
        m,
        seed,
        a_hat: &t_inv * &s_true * &t_tilde,
        c_hat: &c_target * &t_tilde,
        s_true,
        g_true: vec![1.0; n],
        c_target,
        t_tilde,
        edges,
    })
}

/// Seeded random instance: a connected `G(n, p)` graph and a scramble with
/// uniform entries in `[-1, 1]` and condition number at most 1e4.
pub fn random_rc_instance(
    n: usize,
    m: usize,
    opts: &GenerateOptions,
    seed: u64,
) -> Result<RcInstance> {
    let (lo, hi) = opts.conductance_range;
    if n == 0
        || m == 0
        || m > n
        || lo == 0
        || lo > hi
        || !(0.0..=1.0).contains(&opts.edge_probability)
    {
        return Err(Error::InvalidInput(format!(
            "invalid generation request n={n} m={m} p={} conductances={lo}..={hi}",
            opts.edge_probability
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = None;
    for _ in 0..MAX_ATTEMPTS {
        let mut cand = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.gen_bool(opts.edge_probability) {
                    cand.push(Edge {
                        i,
                        j,
                        conductance: rng.gen_range(lo..=hi) as f64,
                    });
                }
            }
        }
        if connected(n, &cand) {
            edges = Some(cand);
            break;
        }
    }
    let edges = edges.ok_or_else(|| Error::GenerationBudgetExceeded {
        attempts: MAX_ATTEMPTS,
        reason: "no connected graph drawn".into(),
    })?;
    for _ in 0..MAX_ATTEMPTS {
        let t = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..=1.0));
        if condition_number(&t) <= MAX_SCRAMBLE_CONDITION {
            return from_edges(n, m, edges, t, seed);
        }
    }
    Err(Error::GenerationBudgetExceeded {
        attempts: MAX_ATTEMPTS,
        reason: "no well-conditioned scramble drawn".into(),
    })
}
