//! Scaling part of the transformation: the block-structured `D` (with
//! `M = V D V^T = P^2`) and the diagonal capacitance matrix `G`.
//!
//! With a single structural constraint the problem is linear in `(D, H)`
//! (`H = G^-1`, or `(D^-1, H)` for the input side) and its solutions form a
//! polyhedral cone whose extreme rays are enumerated exactly. With both
//! constraints the problem is nonconvex and solved by multistart local
//! search; the relaxed variant minimizes the residuals instead.

mod cone;
mod nonconvex;

pub use cone::{
    build_scaling_system, enumerate_generators, is_conic_combination, select_positive_solution,
    ConeVariable, ScalingCone,
};
pub use nonconvex::{solve_joint_nonconvex, solve_relaxed, JointOptions, RelaxedWeights};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{max_abs, spd_sqrt, Diagonalization};
use crate::model::StateSpaceModel;

/// Which structural equation a one-sided problem encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintSide {
    /// `C_hat V D V^T C_hat^T = C H C^T`
    Output,
    /// `B_hat^T W^T D^-1 W B_hat = B^T H B`
    Input,
}

/// How a point is picked from the solution cone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    /// Maximize the smallest required coordinate on the slice `sum(alpha) = 1`.
    Chebyshev,
    /// Least-squares fit of `diag(G) = 1` on the determined coordinates.
    TargetIdentity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScalingMethod {
    /// No structural constraint: `D = I`, `G = I`.
    Unconstrained,
    Cone,
    Joint,
    Relaxed,
}

/// Residuals (largest absolute entry) of the equations linking `(D, G)` to
/// the model. Absent constraint sides are `None`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ScalingResiduals {
    pub output: Option<f64>,
    pub input: Option<f64>,
    /// `C_hat B_hat = C G^-1 B`
    pub cross: Option<f64>,
}

impl ScalingResiduals {
    pub fn max(&self) -> f64 {
        [self.output, self.input, self.cross]
            .iter()
            .flatten()
            .fold(0.0, |a, &b| a.max(b))
    }
}

/// Evaluates every equation that applies to `model`.
pub fn scaling_residuals(
    model: &StateSpaceModel,
    diag: &Diagonalization,
    d: &DMatrix<f64>,
    g: &DVector<f64>,
) -> ScalingResiduals {
    let h = DMatrix::from_diagonal(&g.map(|x| 1.0 / x));
    let mut out = ScalingResiduals::default();
    if model.has_output_constraint() {
        let c = model.c_target.as_ref().expect("output constraint");
        let cv = &model.c_hat * &diag.v;
        out.output = Some(max_abs(
            &(&cv * d * cv.transpose() - c * &h * c.transpose()),
        ));
    }
    if model.has_input_constraint() {
        let b = model.b_target.as_ref().expect("input constraint");
        let wb = &diag.w * model.b_hat.as_ref().expect("input constraint");
        out.input = match d.clone().try_inverse() {
            Some(dinv) => Some(max_abs(
                &(wb.transpose() * dinv * &wb - b.transpose() * &h * b),
            )),
            None => Some(f64::INFINITY),
        };
        if model.has_output_constraint() {
            let c = model.c_target.as_ref().expect("output constraint");
            let bh = model.b_hat.as_ref().expect("input constraint");
            out.cross = Some(max_abs(&(&model.c_hat * bh - c * &h * b)));
        }
    }
    out
}

/// A point `(D, G)` with the derived `M = V D V^T` and `P = sqrt(M)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingSolution {
    #[serde(with = "crate::io::matrix_serde")]
    pub d: DMatrix<f64>,
    /// Diagonal of `G`.
    pub g: Vec<f64>,
    #[serde(with = "crate::io::matrix_serde")]
    pub m: DMatrix<f64>,
    #[serde(with = "crate::io::matrix_serde")]
    pub p: DMatrix<f64>,
    pub residual: f64,
    pub residuals: ScalingResiduals,
    /// `max |A_hat M - M A_hat^T|`.
    pub commutation_residual: f64,
    /// `G` entries the equations do not pin; they are set to 1.
    pub undetermined: Vec<bool>,
    /// Generator coefficients when the solution was picked from a cone.
    pub alphas: Option<Vec<f64>>,
    pub method: ScalingMethod,
}

impl ScalingSolution {
    pub fn g_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_vec(self.g.clone()))
    }

    pub(crate) fn assemble(
        model: &StateSpaceModel,
        diag: &Diagonalization,
        d: DMatrix<f64>,
        g: DVector<f64>,
        undetermined: Vec<bool>,
        alphas: Option<Vec<f64>>,
        method: ScalingMethod,
    ) -> Result<Self> {
        if g.iter().any(|&x| x <= 0.0 || !x.is_finite()) {
            return Err(Error::NotPositiveDefinite {
                min_eigenvalue: g.min(),
            });
        }
        let d = (&d + d.transpose()) * 0.5;
        let m = &diag.v * &d * diag.v.transpose();
        let m = (&m + m.transpose()) * 0.5;
        let p = spd_sqrt(&m)?;
        let residuals = scaling_residuals(model, diag, &d, &g);
        let commutation_residual = max_abs(&(&model.a_hat * &m - &m * model.a_hat.transpose()));
        Ok(ScalingSolution {
            residual: residuals.max(),
            d,
            g: g.iter().copied().collect(),
            m,
            p,
            residuals,
            commutation_residual,
            undetermined,
            alphas,
            method,
        })
    }
}

/// Node `i` carries a determined capacitance when it appears in an active
/// structural matrix (a nonzero column of `C` or row of `B`).
pub fn determined_nodes(model: &StateSpaceModel) -> Vec<bool> {
    let n = model.n();
    (0..n)
        .map(|i| {
            let by_c = model.has_output_constraint()
                && model
                    .c_target
                    .as_ref()
                    .is_some_and(|c| c.column(i).iter().any(|x| *x != 0.0));
            let by_b = model.has_input_constraint()
                && model
                    .b_target
                    .as_ref()
                    .is_some_and(|b| b.row(i).iter().any(|x| *x != 0.0));
            by_c || by_b
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniquenessAdvice {
    pub threshold: f64,
    pub unique_ray_expected: bool,
}

/// Generic-data heuristic: with `p` measured outputs out of `n` nodes the
/// cone is expected to be a single ray once `p >= (sqrt(8n - 7) + 1) / 2`.
pub fn uniqueness_heuristic(n: usize, p: usize) -> UniquenessAdvice {
    let threshold = ((8.0 * n as f64 - 7.0).max(0.0).sqrt() + 1.0) / 2.0;
    UniquenessAdvice {
        threshold,
        unique_ray_expected: p as f64 >= threshold,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ScalingOptions {
    pub strategy: Strategy,
    pub relaxed: bool,
    pub weights: RelaxedWeights,
    pub joint: JointOptions,
}

impl Default for ScalingOptions {
    fn default() -> Self {
        ScalingOptions {
            strategy: Strategy::TargetIdentity,
            relaxed: false,
            weights: RelaxedWeights::default(),
            joint: JointOptions::default(),
        }
    }
}

/// Everything the scaling stage produced, for reporting.
#[derive(Debug, Clone)]
pub struct ScalingOutcome {
    pub solution: ScalingSolution,
    pub cone: Option<ScalingCone>,
    pub generators: Vec<DVector<f64>>,
}

/// Picks the right solver for the constraint configuration.
pub fn solve_scaling(
    model: &StateSpaceModel,
    diag: &Diagonalization,
    opts: &ScalingOptions,
) -> Result<ScalingOutcome> {
    let n = model.n();
    let (out, inp) = (model.has_output_constraint(), model.has_input_constraint());
    if !out && !inp {
        let solution = ScalingSolution::assemble(
            model,
            diag,
            DMatrix::identity(n, n),
            DVector::repeat(n, 1.0),
            vec![true; n],
            None,
            ScalingMethod::Unconstrained,
        )?;
        return Ok(ScalingOutcome {
            solution,
            cone: None,
            generators: vec![],
        });
    }
    if out && inp {
        let solution = if opts.relaxed {
            solve_relaxed(model, diag, opts.weights, &opts.joint)?
        } else {
            solve_joint_nonconvex(model, diag, &opts.joint)?
        };
        return Ok(ScalingOutcome {
            solution,
            cone: None,
            generators: vec![],
        });
    }
    let cone = build_scaling_system(model, diag)?;
    if opts.relaxed {
        let solution = solve_relaxed(model, diag, opts.weights, &opts.joint)?;
        return Ok(ScalingOutcome {
            solution,
            cone: Some(cone),
            generators: vec![],
        });
    }
    if !diag.all_distinct() {
        // non-polyhedral case: local search on the convex residual, judged exactly
        let solution = solve_relaxed(model, diag, RelaxedWeights::default(), &opts.joint)?;
        if solution.residual > opts.joint.feas_tol {
            return Err(Error::NoFeasiblePoint {
                residual: solution.residual,
            });
        }
        return Ok(ScalingOutcome {
            solution,
            cone: Some(cone),
            generators: vec![],
        });
    }
    let generators = enumerate_generators(&cone)?;
    let solution = select_positive_solution(&cone, &generators, opts.strategy, model, diag)?;
    Ok(ScalingOutcome {
        solution,
        cone: Some(cone),
        generators,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heuristic_thresholds() {
        let a = uniqueness_heuristic(4, 3);
        assert!((a.threshold - 3.0).abs() < 1e-12 && a.unique_ray_expected);
        let b = uniqueness_heuristic(10, 8);
        assert!((b.threshold - 4.772).abs() < 1e-3 && b.unique_ray_expected);
        let c = uniqueness_heuristic(12, 6);
        assert!((c.threshold - 5.217).abs() < 1e-3 && c.unique_ray_expected);
        assert!(!uniqueness_heuristic(12, 5).unique_ray_expected);
    }
}
