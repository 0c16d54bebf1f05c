use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{build_scaling_system, determined_nodes, ConeVariable, ScalingMethod, ScalingSolution};
use crate::error::{Error, Result};
use crate::linalg::Diagonalization;
use crate::lm::{levenberg_marquardt, LeastSquares, LmOptions};
use crate::lp::nnls;
use crate::model::StateSpaceModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointOptions {
    pub restarts: usize,
    pub max_iters: usize,
    /// Largest residual entry accepted as feasible.
    pub feas_tol: f64,
    pub seed: u64,
}

impl Default for JointOptions {
    fn default() -> Self {
        JointOptions {
            restarts: 20,
            max_iters: 500,
            feas_tol: 1e-8,
            seed: 0,
        }
    }
}

/// Weights of the output, input and cross equations in the relaxed objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelaxedWeights {
    pub output: f64,
    pub input: f64,
    pub cross: f64,
}

impl Default for RelaxedWeights {
    fn default() -> Self {
        RelaxedWeights {
            output: 1.0,
            input: 1.0,
            cross: 1.0,
        }
    }
}

/// `D` blocks as `L L^T` with log-diagonal `L`, and `G = diag(exp(gamma))`
/// for the free capacitances.
struct Params {
    n: usize,
    blocks: Vec<Vec<usize>>,
    /// For each block, offset of its `L` entries in the parameter vector.
    offsets: Vec<usize>,
    gamma_nodes: Vec<usize>,
    gamma_offset: usize,
}

impl Params {
    fn new(diag: &Diagonalization, gamma_nodes: Vec<usize>) -> Self {
        let mut offsets = Vec::new();
        let mut off = 0;
        for b in &diag.blocks {
            offsets.push(off);
            off += b.len() * (b.len() + 1) / 2;
        }
        Params {
            n: diag.dim(),
            blocks: diag.blocks.clone(),
            offsets,
            gamma_nodes,
            gamma_offset: off,
        }
    }

    fn len(&self) -> usize {
        self.gamma_offset + self.gamma_nodes.len()
    }

    /// Lower-triangular entries `(r, c)` of a block, row-major.
    fn tri(size: usize) -> impl Iterator<Item = (usize, usize)> {
        (0..size).flat_map(|r| (0..=r).map(move |c| (r, c)))
    }

    fn block_l(&self, x: &DVector<f64>, b: usize) -> DMatrix<f64> {
        let s = self.blocks[b].len();
        let mut l = DMatrix::zeros(s, s);
        for (k, (r, c)) in Self::tri(s).enumerate() {
            let v = x[self.offsets[b] + k];
            l[(r, c)] = if r == c { v.exp() } else { v };
        }
        l
    }

    fn d(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n, self.n);
        for (b, idx) in self.blocks.iter().enumerate() {
            let l = self.block_l(x, b);
            let db = &l * l.transpose();
            for (i, &gi) in idx.iter().enumerate() {
                for (j, &gj) in idx.iter().enumerate() {
                    d[(gi, gj)] = db[(i, j)];
                }
            }
        }
        d
    }

    /// Derivatives of `D` along every `L` parameter.
    fn d_derivatives(&self, x: &DVector<f64>) -> Vec<DMatrix<f64>> {
        let mut out = Vec::with_capacity(self.gamma_offset);
        for (b, idx) in self.blocks.iter().enumerate() {
            let s = idx.len();
            let l = self.block_l(x, b);
            for (r, c) in Self::tri(s) {
                let mut dl = DMatrix::zeros(s, s);
                dl[(r, c)] = if r == c { l[(r, c)] } else { 1.0 };
                let db = &dl * l.transpose() + &l * dl.transpose();
                let mut full = DMatrix::zeros(self.n, self.n);
                for (i, &gi) in idx.iter().enumerate() {
                    for (j, &gj) in idx.iter().enumerate() {
                        full[(gi, gj)] = db[(i, j)];
                    }
                }
                out.push(full);
            }
        }
        out
    }

    fn g(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::repeat(self.n, 1.0);
        for (k, &node) in self.gamma_nodes.iter().enumerate() {
            g[node] = x[self.gamma_offset + k].exp();
        }
        g
    }

    fn random_start(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let mut x = DVector::zeros(self.len());
        for (b, idx) in self.blocks.iter().enumerate() {
            for (k, (r, c)) in Self::tri(idx.len()).enumerate() {
                x[self.offsets[b] + k] = if r == c {
                    rng.gen_range(-1.0..1.0)
                } else {
                    rng.gen_range(-0.5..0.5)
                };
            }
        }
        for k in 0..self.gamma_nodes.len() {
            x[self.gamma_offset + k] = rng.gen_range(-1.0..1.0);
        }
        x
    }
}

struct ScalingProblem<'a> {
    params: Params,
    cv: Option<DMatrix<f64>>,
    c: Option<&'a DMatrix<f64>>,
    wb: Option<DMatrix<f64>>,
    b: Option<&'a DMatrix<f64>>,
    cb_hat: Option<DMatrix<f64>>,
    weights: [f64; 3],
}

fn push_upper(out: &mut Vec<f64>, m: &DMatrix<f64>, w: f64) {
    for i in 0..m.nrows() {
        for j in i..m.ncols() {
            out.push(w * m[(i, j)]);
        }
    }
}

fn push_all(out: &mut Vec<f64>, m: &DMatrix<f64>, w: f64) {
    out.extend(m.iter().map(|v| w * v));
}

impl<'a> ScalingProblem<'a> {
    fn new(
        model: &'a StateSpaceModel,
        diag: &Diagonalization,
        weights: RelaxedWeights,
        gamma_nodes: Vec<usize>,
    ) -> Self {
        let out = model.has_output_constraint();
        let inp = model.has_input_constraint();
        let cross = out && inp && weights.cross > 0.0;
        ScalingProblem {
            params: Params::new(diag, gamma_nodes),
            cv: (out && weights.output > 0.0).then(|| &model.c_hat * &diag.v),
            c: model.c_target.as_ref().filter(|_| out),
            wb: (inp && weights.input > 0.0)
                .then(|| &diag.w * model.b_hat.as_ref().expect("input")),
            b: model.b_target.as_ref().filter(|_| inp),
            cb_hat: cross.then(|| &model.c_hat * model.b_hat.as_ref().expect("input")),
            weights: [
                weights.output.sqrt(),
                weights.input.sqrt(),
                weights.cross.sqrt(),
            ],
        }
    }

    fn h_matrix(g: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_diagonal(&g.map(|v| 1.0 / v))
    }
}

impl LeastSquares for ScalingProblem<'_> {
    type Point = DVector<f64>;

    fn residuals(&self, x: &DVector<f64>) -> DVector<f64> {
        let d = self.params.d(x);
        let h = Self::h_matrix(&self.params.g(x));
        let mut r = Vec::new();
        if let (Some(cv), Some(c)) = (&self.cv, self.c) {
            push_upper(
                &mut r,
                &(cv * &d * cv.transpose() - c * &h * c.transpose()),
                self.weights[0],
            );
        }
        if let (Some(wb), Some(b)) = (&self.wb, self.b) {
            let dinv = d
                .clone()
                .try_inverse()
                .unwrap_or_else(|| DMatrix::from_element(d.nrows(), d.ncols(), f64::NAN));
            push_upper(
                &mut r,
                &(wb.transpose() * dinv * wb - b.transpose() * &h * b),
                self.weights[1],
            );
        }
        if let (Some(cb), Some(c), Some(b)) = (&self.cb_hat, self.c, self.b) {
            push_all(&mut r, &(cb - c * &h * b), self.weights[2]);
        }
        DVector::from_vec(r)
    }

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let d = self.params.d(x);
        let g = self.params.g(x);
        let dinv = d.clone().try_inverse();
        let mut cols: Vec<DVector<f64>> = Vec::with_capacity(self.params.len());
        for dd in self.params.d_derivatives(x) {
            let mut col = Vec::new();
            if let Some(cv) = &self.cv {
                push_upper(&mut col, &(cv * &dd * cv.transpose()), self.weights[0]);
            }
            if let Some(wb) = &self.wb {
                let di = dinv.as_ref().expect("D invertible");
                push_upper(
                    &mut col,
                    &(-(wb.transpose() * di * &dd * di * wb)),
                    self.weights[1],
                );
            }
            if let (Some(c), Some(b)) = (self.c.filter(|_| self.cb_hat.is_some()), self.b) {
                push_all(
                    &mut col,
                    &DMatrix::zeros(c.nrows(), b.ncols()),
                    self.weights[2],
                );
            }
            cols.push(DVector::from_vec(col));
        }
        for &node in &self.params.gamma_nodes {
            // d(1/g)/dgamma = -1/g, so each term gains +h_i * outer product
            let hi = 1.0 / g[node];
            let mut col = Vec::new();
            if let (Some(_), Some(c)) = (&self.cv, self.c) {
                let ci = c.column(node);
                push_upper(&mut col, &(ci * ci.transpose() * hi), self.weights[0]);
            }
            if let (Some(_), Some(b)) = (&self.wb, self.b) {
                let bi = b.row(node);
                push_upper(&mut col, &(bi.transpose() * bi * hi), self.weights[1]);
            }
            if let (Some(_), Some(c), Some(b)) = (&self.cb_hat, self.c, self.b) {
                push_all(
                    &mut col,
                    &(c.column(node) * b.row(node) * hi),
                    self.weights[2],
                );
            }
            cols.push(DVector::from_vec(col));
        }
        if cols.is_empty() {
            return DMatrix::zeros(0, 0);
        }
        DMatrix::from_columns(&cols)
    }

    fn retract(&self, x: &DVector<f64>, step: &DVector<f64>) -> DVector<f64> {
        x + step
    }
}

fn split_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Multistart LM; returns the best parameter vector and its residual norm.
fn multistart(problem: &ScalingProblem<'_>, opts: &JointOptions) -> (DVector<f64>, f64) {
    let restarts = opts.restarts.max(1);
    let lm = LmOptions {
        max_iters: opts.max_iters,
        stop_tol: opts.feas_tol * 0.1,
    };
    let runs: Vec<(usize, DVector<f64>, f64)> = (0..restarts)
        .into_par_iter()
        .map(|i| {
            let start = if i == 0 {
                DVector::zeros(problem.params.len())
            } else {
                problem
                    .params
                    .random_start(&mut ChaCha8Rng::seed_from_u64(split_seed(
                        opts.seed, i as u64,
                    )))
            };
            let rep = levenberg_marquardt(problem, start, lm);
            let cost = problem.residuals(&rep.point).norm();
            (
                i,
                rep.point,
                if cost.is_finite() {
                    cost
                } else {
                    f64::INFINITY
                },
            )
        })
        .collect();
    runs.into_iter()
        .min_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)))
        .map(|(_, x, c)| (x, c))
        .expect("at least one restart")
}

fn free_gamma(model: &StateSpaceModel) -> Vec<usize> {
    let det = determined_nodes(model);
    (0..model.n()).filter(|&i| det[i]).collect()
}

/// Both constraints active: the equations are quadratic in `(D, G)`.
/// Succeeds only when some restart drives every residual below `feas_tol`.
pub fn solve_joint_nonconvex(
    model: &StateSpaceModel,
    diag: &Diagonalization,
    opts: &JointOptions,
) -> Result<ScalingSolution> {
    if !(model.has_output_constraint() && model.has_input_constraint()) {
        return Err(Error::InvalidInput(
            "the joint scaling solve needs both B and C targets".into(),
        ));
    }
    let problem = ScalingProblem::new(model, diag, RelaxedWeights::default(), free_gamma(model));
    let (x, _) = multistart(&problem, opts);
    let undetermined = determined_nodes(model).iter().map(|d| !d).collect();
    let sol = ScalingSolution::assemble(
        model,
        diag,
        problem.params.d(&x),
        problem.params.g(&x),
        undetermined,
        None,
        ScalingMethod::Joint,
    )?;
    if sol.residual > opts.feas_tol {
        return Err(Error::NoFeasiblePoint {
            residual: sol.residual,
        });
    }
    Ok(sol)
}

/// Minimizes the weighted squared residuals of the active equations. Always
/// returns a positive scaling; `residual` is the largest weighted residual
/// entry, while `residuals` keeps the unweighted per-equation values.
pub fn solve_relaxed(
    model: &StateSpaceModel,
    diag: &Diagonalization,
    weights: RelaxedWeights,
    opts: &JointOptions,
) -> Result<ScalingSolution> {
    let mut sol = relaxed_unweighted(model, diag, weights, opts)?;
    let r = sol.residuals;
    sol.residual = [
        r.output.map(|v| v * weights.output),
        r.input.map(|v| v * weights.input),
        r.cross.map(|v| v * weights.cross),
    ]
    .iter()
    .flatten()
    .fold(0.0, |a, &b| a.max(b));
    Ok(sol)
}

fn relaxed_unweighted(
    model: &StateSpaceModel,
    diag: &Diagonalization,
    weights: RelaxedWeights,
    opts: &JointOptions,
) -> Result<ScalingSolution> {
    let n = model.n();
    let out = model.has_output_constraint() && weights.output > 0.0;
    let inp = model.has_input_constraint() && weights.input > 0.0;
    let cross =
        model.has_output_constraint() && model.has_input_constraint() && weights.cross > 0.0;
    let undetermined: Vec<bool> = determined_nodes(model).iter().map(|d| !d).collect();
    if !out && !inp && !cross {
        return ScalingSolution::assemble(
            model,
            diag,
            DMatrix::identity(n, n),
            DVector::repeat(n, 1.0),
            undetermined,
            None,
            ScalingMethod::Relaxed,
        );
    }
    let one_sided = model.has_output_constraint() != model.has_input_constraint();
    if one_sided && diag.all_distinct() {
        return relaxed_simplex(model, diag, undetermined);
    }
    let mut gamma = free_gamma(model);
    if one_sided && !gamma.is_empty() {
        // the one-sided equations are homogeneous; pin the overall scale
        gamma.remove(0);
    }
    let problem = ScalingProblem::new(model, diag, weights, gamma);
    let (x, _) = multistart(&problem, opts);
    ScalingSolution::assemble(
        model,
        diag,
        problem.params.d(&x),
        problem.params.g(&x),
        undetermined,
        None,
        ScalingMethod::Relaxed,
    )
}

/// One-sided, diagonal `D`: `min |E x|^2` over the simplex of required
/// coordinates is a convex problem, solved exactly through NNLS on the
/// augmented system `[E; 1^T] x ~ [0; 1]` (whose minimizer points in the
/// same direction for any scaling of the last row).
fn relaxed_simplex(
    model: &StateSpaceModel,
    diag: &Diagonalization,
    undetermined: Vec<bool>,
) -> Result<ScalingSolution> {
    let cone = build_scaling_system(model, diag)?;
    let required = cone.required();
    let idx: Vec<usize> = (0..required.len()).filter(|&i| required[i]).collect();
    let e = &cone.equality;
    let scale = e.amax().max(f64::MIN_POSITIVE);
    let rows = e.nrows();
    let a = DMatrix::from_fn(rows + 1, idx.len(), |r, c| {
        if r < rows {
            e[(r, idx[c])] / scale
        } else {
            1.0
        }
    });
    let mut rhs = DVector::zeros(rows + 1);
    rhs[rows] = 1.0;
    let (y, _) = nnls(&a, &rhs);
    let mut x = DVector::zeros(cone.num_variables());
    for (k, &i) in idx.iter().enumerate() {
        x[i] = y[k];
    }
    let max = x.amax();
    if max <= 0.0 {
        return Err(Error::NoStrictlyPositive);
    }
    for &i in &idx {
        x[i] = x[i].max(1e-8 * max);
    }
    let h_det: Vec<usize> = cone
        .layout
        .iter()
        .enumerate()
        .filter(|(_, v)| matches!(v, ConeVariable::H { node } if cone.determined[*node]))
        .map(|(i, _)| i)
        .collect();
    if !h_det.is_empty() {
        let mean = h_det.iter().map(|&i| x[i]).sum::<f64>() / h_det.len() as f64;
        x /= mean;
    }
    let n = model.n();
    let mut d = DMatrix::zeros(n, n);
    let mut g = DVector::repeat(n, 1.0);
    for (c, var) in cone.layout.iter().enumerate() {
        match *var {
            ConeVariable::D { row, .. } => d[(row, row)] = x[c],
            ConeVariable::DInverse { row, .. } => d[(row, row)] = 1.0 / x[c],
            ConeVariable::H { node } if cone.determined[node] => g[node] = 1.0 / x[c],
            ConeVariable::H { .. } => {}
        }
    }
    ScalingSolution::assemble(
        model,
        diag,
        d,
        g,
        undetermined,
        None,
        ScalingMethod::Relaxed,
    )
}
