//! Search over the free orthogonal factor `U` for an `S` that is Metzler
//! (feasibility) and, optionally, sparse (smallest entrywise 1-norm).
//!
//! `O(1)` and `O(0)` are enumerated. Larger families use multistart local
//! search in the chart `U exp(Xi)`, `Xi` skew-symmetric, starting half of
//! the restarts in each connected component of `O(k)`.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    expm, polar_orthonormal, random_orthogonal_with, skew_from_coords, skew_pairs, Component,
    DEFAULT_SKEW_SCALE,
};
use crate::lm::{levenberg_marquardt, LeastSquares, LmOptions};
use crate::model::StateSpaceModel;
use crate::rotation::{
    assemble_realization, default_prune_tol, metzler_violation, RcRealization, RotationFamily,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub restarts: usize,
    pub max_iters: usize,
    /// Initial weight of the squared hinge penalty in the 1-norm search.
    pub penalty_weight: f64,
    /// Factor applied to the penalty weight at each continuation stage.
    pub penalty_growth: f64,
    pub metzler_tol: f64,
    /// Zero-norm threshold; `None` means `1e-6 max |S_ij|`.
    pub prune_tol: Option<f64>,
    pub skew_scale: f64,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            restarts: 20,
            max_iters: 500,
            penalty_weight: 1.0,
            penalty_growth: 10.0,
            metzler_tol: 1e-8,
            prune_tol: None,
            skew_scale: DEFAULT_SKEW_SCALE,
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.restarts >= 1
            && self.max_iters >= 1
            && self.penalty_weight >= 0.0
            && self.penalty_growth >= 1.0
            && self.metzler_tol > 0.0
            && self.prune_tol.is_none_or(|t| t > 0.0)
            && self.skew_scale >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!(
                "invalid search configuration {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartLog {
    pub index: usize,
    /// Seed of the restart's private generator.
    pub seed: u64,
    pub component: Component,
    pub objective: f64,
    pub violation: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: RcRealization,
    #[serde(with = "crate::io::matrix_serde")]
    pub ubar: DMatrix<f64>,
    /// Entrywise 1-norm of the best `S`.
    pub objective: f64,
    pub feasible: bool,
    pub per_restart_log: Vec<RestartLog>,
}

/// Whether every off-diagonal entry is at least `-tol`, and by how much the
/// most negative one falls below zero.
pub fn is_metzler(s: &DMatrix<f64>, tol: f64) -> (bool, f64) {
    let v = metzler_violation(s);
    (v <= tol, v)
}

/// Precomputed pieces for evaluating `S(U) = sqrt(G) Q^T X Q sqrt(G)` with
/// `X = P^-1 A_hat P`.
struct Context<'a> {
    family: &'a RotationFamily,
    x: DMatrix<f64>,
    sqrt_g: DVector<f64>,
    pairs: Vec<(usize, usize)>,
}

impl<'a> Context<'a> {
    fn new(
        family: &'a RotationFamily,
        p: &DMatrix<f64>,
        g: &[f64],
        model: &StateSpaceModel,
    ) -> Result<Self> {
        let p_inv = p.clone().try_inverse().ok_or(Error::NotPositiveDefinite {
            min_eigenvalue: 0.0,
        })?;
        Ok(Context {
            family,
            x: p_inv * &model.a_hat * p,
            sqrt_g: DVector::from_iterator(g.len(), g.iter().map(|v| v.sqrt())),
            pairs: skew_pairs(family.k),
        })
    }

    fn scale(&self, m: &mut DMatrix<f64>) {
        let n = m.nrows();
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] *= self.sqrt_g[i] * self.sqrt_g[j];
            }
        }
    }

    fn s_of_q(&self, q: &DMatrix<f64>) -> DMatrix<f64> {
        let mut s = q.transpose() * &self.x * q;
        self.scale(&mut s);
        s
    }

    fn s(&self, u: &DMatrix<f64>) -> DMatrix<f64> {
        self.s_of_q(&self.family.q(u))
    }

    /// Derivatives of `S` along each chart coordinate at `U`.
    fn ds(&self, u: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let q = self.family.q(u);
        let xq = &self.x * &q;
        let qtx = q.transpose() * &self.x;
        let wu = &self.family.wbar * u;
        let k = self.family.k;
        self.pairs
            .iter()
            .map(|&(a, b)| {
                let mut xi = DMatrix::zeros(k, k);
                xi[(a, b)] = 1.0;
                xi[(b, a)] = -1.0;
                let dq = &wu * xi * self.family.zbar.transpose();
                let mut d = dq.transpose() * &xq + &qtx * dq;
                self.scale(&mut d);
                d
            })
            .collect()
    }

    fn retract(&self, u: &DMatrix<f64>, coords: &[f64]) -> DMatrix<f64> {
        polar_orthonormal(&(u * expm(&skew_from_coords(self.family.k, coords))))
    }

    /// Penalized, Huber-smoothed entrywise 1-norm and its chart gradient.
    fn penalized(&self, u: &DMatrix<f64>, width: f64, mu: f64) -> (f64, DVector<f64>) {
        let q = self.family.q(u);
        let s = self.s_of_q(&q);
        let n = s.nrows();
        let mut value = 0.0;
        let mut gm = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let v = s[(i, j)];
                let (h, dh) = huber(v, width);
                value += h;
                gm[(i, j)] = dh;
                if i != j && v < 0.0 {
                    value += mu * v * v;
                    gm[(i, j)] += 2.0 * mu * v;
                }
            }
        }
        // dS = sqrtG (dQ^T X Q + Q^T X dQ) sqrtG, so df = <E, dQ> with
        // E = X Q Y^T + X^T Q Y and Y = sqrtG Gm sqrtG
        let mut y = gm;
        self.scale(&mut y);
        let e = &self.x * &q * y.transpose() + self.x.transpose() * &q * &y;
        let f = u.transpose() * self.family.wbar.transpose() * e * &self.family.zbar;
        let grad = DVector::from_iterator(
            self.pairs.len(),
            self.pairs.iter().map(|&(a, b)| f[(a, b)] - f[(b, a)]),
        );
        (value, grad)
    }
}

fn huber(v: f64, width: f64) -> (f64, f64) {
    let a = v.abs();
    if a <= width {
        (v * v / (2.0 * width), v / width)
    } else {
        (a - width / 2.0, v.signum())
    }
}

/// Squared hinge on the symmetrized off-diagonal entries.
struct Hinge<'c, 'a> {
    ctx: &'c Context<'a>,
}

impl LeastSquares for Hinge<'_, '_> {
    type Point = DMatrix<f64>;

    fn residuals(&self, u: &DMatrix<f64>) -> DVector<f64> {
        let s = self.ctx.s(u);
        let n = s.nrows();
        DVector::from_iterator(
            n * (n - 1) / 2,
            (0..n)
                .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                .map(|(i, j)| {
                    let v = 0.5 * (s[(i, j)] + s[(j, i)]);
                    v.min(0.0)
                }),
        )
    }

    fn jacobian(&self, u: &DMatrix<f64>) -> DMatrix<f64> {
        let s = self.ctx.s(u);
        let ds = self.ctx.ds(u);
        let n = s.nrows();
        let rows: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .collect();
        DMatrix::from_fn(rows.len(), ds.len(), |r, c| {
            let (i, j) = rows[r];
            if s[(i, j)] + s[(j, i)] < 0.0 {
                0.5 * (ds[c][(i, j)] + ds[c][(j, i)])
            } else {
                0.0
            }
        })
    }

    fn retract(&self, u: &DMatrix<f64>, step: &DVector<f64>) -> DMatrix<f64> {
        self.ctx.retract(u, step.as_slice())
    }
}

fn split_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Restart 0 starts at `I`, restart 1 at the anchor of the other
/// component, and the rest at random points alternating between them.
fn start_point(k: usize, index: usize, seed: u64, skew_scale: f64) -> (DMatrix<f64>, Component) {
    let component = if index.is_multiple_of(2) {
        Component::Plus
    } else {
        Component::Minus
    };
    if index < 2 {
        return (component.anchor(k), component);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (
        random_orthogonal_with(&mut rng, k, component, skew_scale).u,
        component,
    )
}

struct Candidate {
    index: usize,
    u: DMatrix<f64>,
    real: RcRealization,
    feasible: bool,
}

fn lexicographic(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Ordering {
    let scale = a.amax().max(b.amax()).max(f64::MIN_POSITIVE);
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            let (x, y) = (a[(i, j)], b[(i, j)]);
            if (x - y).abs() > 1e-12 * scale {
                return x.total_cmp(&y);
            }
        }
    }
    Ordering::Equal
}

/// Feasible first, then smaller violation (both infeasible), then smaller
/// 1-norm (ties within 1e-9 relative), zero-norm, vectorized `S`, index.
fn compare(a: &Candidate, b: &Candidate) -> Ordering {
    b.feasible
        .cmp(&a.feasible)
        .then_with(|| {
            if a.feasible {
                Ordering::Equal
            } else {
                a.real
                    .metzler_violation
                    .total_cmp(&b.real.metzler_violation)
            }
        })
        .then_with(|| {
            let (x, y) = (a.real.one_norm, b.real.one_norm);
            if (x - y).abs() <= 1e-9 * x.abs().max(y.abs()) {
                Ordering::Equal
            } else {
                x.total_cmp(&y)
            }
        })
        .then_with(|| a.real.zero_norm.cmp(&b.real.zero_norm))
        .then_with(|| lexicographic(&a.real.s, &b.real.s))
        .then_with(|| a.index.cmp(&b.index))
}

fn candidate(
    index: usize,
    u: DMatrix<f64>,
    ctx: &Context<'_>,
    p: &DMatrix<f64>,
    g: &[f64],
    model: &StateSpaceModel,
    config: &SearchConfig,
) -> Result<Candidate> {
    let q = ctx.family.q(&u);
    let real = assemble_realization(p, g, &q, model, config.prune_tol)?;
    let feasible = real.metzler_violation <= config.metzler_tol;
    Ok(Candidate {
        index,
        u,
        real,
        feasible,
    })
}

fn finish(mut candidates: Vec<Candidate>, log: Vec<RestartLog>) -> SearchResult {
    candidates.sort_by(compare);
    let best = candidates.swap_remove(0);
    SearchResult {
        objective: best.real.one_norm,
        feasible: best.feasible,
        ubar: best.u,
        best: best.real,
        per_restart_log: log,
    }
}

/// `k <= 1`: evaluates every element of `O(k)`.
pub fn solve_exhaustive_small_k(
    family: &RotationFamily,
    p: &DMatrix<f64>,
    g: &[f64],
    model: &StateSpaceModel,
    config: &SearchConfig,
) -> Result<SearchResult> {
    if family.k > 1 {
        return Err(Error::InvalidInput(format!(
            "exhaustive search needs k <= 1, got {}",
            family.k
        )));
    }
    let ctx = Context::new(family, p, g, model)?;
    let options: Vec<(DMatrix<f64>, Component)> = if family.k == 0 {
        vec![(DMatrix::zeros(0, 0), Component::Plus)]
    } else {
        vec![
            (DMatrix::from_element(1, 1, 1.0), Component::Plus),
            (DMatrix::from_element(1, 1, -1.0), Component::Minus),
        ]
    };
    let mut candidates = Vec::new();
    let mut log = Vec::new();
    for (index, (u, component)) in options.into_iter().enumerate() {
        let c = candidate(index, u, &ctx, p, g, model, config)?;
        log.push(RestartLog {
            index,
            seed: 0,
            component,
            objective: c.real.one_norm,
            violation: c.real.metzler_violation,
            iterations: 0,
        });
        candidates.push(c);
    }
    Ok(finish(candidates, log))
}

fn lm_options(config: &SearchConfig) -> LmOptions {
    LmOptions {
        max_iters: config.max_iters,
        stop_tol: 0.1 * config.metzler_tol,
    }
}

fn multistart<F>(
    family: &RotationFamily,
    p: &DMatrix<f64>,
    g: &[f64],
    model: &StateSpaceModel,
    config: &SearchConfig,
    run: F,
) -> Result<SearchResult>
where
    F: Fn(&Context<'_>, DMatrix<f64>) -> (DMatrix<f64>, usize) + Sync,
{
    config.validate()?;
    if family.k < 2 {
        return Err(Error::InvalidInput(format!(
            "local search needs k >= 2, got {}",
            family.k
        )));
    }
    let ctx = Context::new(family, p, g, model)?;
    let outcomes: Vec<Result<(Candidate, RestartLog)>> = (0..config.restarts)
        .into_par_iter()
        .map(|index| {
            let seed = split_seed(config.seed, index as u64);
            let (u0, component) = start_point(family.k, index, seed, config.skew_scale);
            let (u, iterations) = run(&ctx, u0);
            let c = candidate(index, u, &ctx, p, g, model, config)?;
            let entry = RestartLog {
                index,
                seed,
                component,
                objective: c.real.one_norm,
                violation: c.real.metzler_violation,
                iterations,
            };
            Ok((c, entry))
        })
        .collect();
    let mut candidates = Vec::new();
    let mut log = Vec::new();
    for outcome in outcomes {
        let (c, entry) = outcome?;
        candidates.push(c);
        log.push(entry);
    }
    Ok(finish(candidates, log))
}

/// `k >= 2`: drives the squared hinge on negative off-diagonal entries to
/// zero from each start.
pub fn solve_metzler(
    family: &RotationFamily,
    p: &DMatrix<f64>,
    g: &[f64],
    model: &StateSpaceModel,
    config: &SearchConfig,
) -> Result<SearchResult> {
    let opts = lm_options(config);
    multistart(family, p, g, model, config, |ctx, u0| {
        let rep = levenberg_marquardt(&Hinge { ctx }, u0, opts);
        (rep.point, rep.iterations)
    })
}

/// Objective values after each accepted step of a descent run.
#[derive(Debug, Clone)]
pub struct DescentTrace {
    pub u: DMatrix<f64>,
    pub objective: Vec<f64>,
}

/// Riemannian BFGS in left-trivialized coordinates with Armijo
/// backtracking on `sum huber(S_ij) + penalty * sum_{i != j} min(0, S_ij)^2`.
fn bfgs(
    ctx: &Context<'_>,
    u0: DMatrix<f64>,
    width: f64,
    penalty: f64,
    max_iters: usize,
) -> DescentTrace {
    let dim = ctx.pairs.len();
    let mut u = u0;
    let (mut f, mut grad) = ctx.penalized(&u, width, penalty);
    let mut trace = vec![f];
    let gmax = grad.amax();
    let mut h = DMatrix::identity(dim, dim) * (0.1 / gmax.max(1e-12));
    for _ in 0..max_iters {
        if grad.amax() <= 1e-13 * f.abs().max(1.0) {
            break;
        }
        let mut dir = -(&h * &grad);
        let mut slope = grad.dot(&dir);
        if slope >= 0.0 {
            h = DMatrix::identity(dim, dim) * (0.1 / grad.amax().max(1e-12));
            dir = -(&h * &grad);
            slope = grad.dot(&dir);
        }
        let mut t = 1.0;
        let mut accepted = None;
        while t > 1e-12 {
            let step = &dir * t;
            let cand = ctx.retract(&u, step.as_slice());
            let (fc, gc) = ctx.penalized(&cand, width, penalty);
            if fc <= f + 1e-4 * t * slope && fc < f {
                accepted = Some((cand, fc, gc, step));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, fc, gc, s)) = accepted else {
            break;
        };
        let y = &gc - &grad;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let id = DMatrix::<f64>::identity(dim, dim);
            let left = &id - &s * y.transpose() * rho;
            let right = &id - &y * s.transpose() * rho;
            h = &left * &h * right + &s * s.transpose() * rho;
        }
        u = cand;
        f = fc;
        grad = gc;
        trace.push(f);
    }
    DescentTrace {
        u,
        objective: trace,
    }
}

/// Smoothed 1-norm descent from `u0` with a fixed Huber width and penalty
/// weight. Each recorded objective is no larger than the one before.
#[allow(clippy::too_many_arguments)]
pub fn l1_descent(
    family: &RotationFamily,
    p: &DMatrix<f64>,
    g: &[f64],
    model: &StateSpaceModel,
    u0: &DMatrix<f64>,
    huber_width: f64,
    penalty: f64,
    max_iters: usize,
) -> Result<DescentTrace> {
    if family.k < 2 || u0.shape() != (family.k, family.k) {
        return Err(Error::InvalidInput(
            "descent needs k >= 2 and a k x k start".into(),
        ));
    }
    let ctx = Context::new(family, p, g, model)?;
    Ok(bfgs(&ctx, u0.clone(), huber_width, penalty, max_iters))
}

/// `k >= 2`: per restart, find a Metzler point, then descend the smoothed
/// 1-norm under a growing hinge penalty while shrinking the Huber width to
/// `prune_tol / 10`, and finally restore feasibility. The feasibility point
/// is kept when the sparsified one is worse.
pub fn minimize_l1(
    family: &RotationFamily,
    p: &DMatrix<f64>,
    g: &[f64],
    model: &StateSpaceModel,
    config: &SearchConfig,
) -> Result<SearchResult> {
    let opts = lm_options(config);
    let cfg = *config;
    multistart(family, p, g, model, config, move |ctx, u0| {
        let feas = levenberg_marquardt(&Hinge { ctx }, u0, opts);
        let mut iterations = feas.iterations;
        let s0 = ctx.s(&feas.point);
        let scale = s0.amax().max(f64::MIN_POSITIVE);
        let final_width = cfg.prune_tol.unwrap_or_else(|| default_prune_tol(&s0)) / 10.0;
        let mut width = 0.1 * scale;
        let mut mu = cfg.penalty_weight / scale;
        let per_stage = (cfg.max_iters / 4).max(20);
        let mut u = feas.point.clone();
        loop {
            let w = width.max(final_width);
            let tr = bfgs(ctx, u, w, mu, per_stage);
            iterations += tr.objective.len() - 1;
            u = tr.u;
            if w <= final_width {
                break;
            }
            width *= 0.1;
            mu *= cfg.penalty_growth;
        }
        let polish = levenberg_marquardt(&Hinge { ctx }, u, opts);
        iterations += polish.iterations;
        let judge = |u: &DMatrix<f64>| {
            let s = ctx.s(u);
            let v = metzler_violation(&s);
            (
                v <= cfg.metzler_tol,
                v,
                s.iter().map(|x| x.abs()).sum::<f64>(),
            )
        };
        let (fa, va, oa) = judge(&feas.point);
        let (fb, vb, ob) = judge(&polish.point);
        let keep_polished = match (fa, fb) {
            (true, true) => ob <= oa,
            (false, true) => true,
            (true, false) => false,
            (false, false) => vb < va,
        };
        (
            if keep_polished {
                polish.point
            } else {
                feas.point
            },
            iterations,
        )
    })
}

/// Sparsity-seeking search, or plain feasibility, dispatching on `k`.
pub fn search(
    family: &RotationFamily,
    p: &DMatrix<f64>,
    g: &[f64],
    model: &StateSpaceModel,
    config: &SearchConfig,
    sparsify: bool,
) -> Result<SearchResult> {
    if family.k <= 1 {
        solve_exhaustive_small_k(family, p, g, model, config)
    } else if sparsify {
        minimize_l1(family, p, g, model, config)
    } else {
        solve_metzler(family, p, g, model, config)
    }
}
