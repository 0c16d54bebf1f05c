//! End-to-end reconstruction: diagonalize, scale, parameterize `Q`, search.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::linalg::{default_eig_tol, max_abs, real_diagonalize, Diagonalization};
use crate::metzler::{search, RestartLog, SearchConfig, SearchResult};
use crate::model::StateSpaceModel;
use crate::rotation::{
    build_zw, default_rank_tol, rotation_family, RcRealization, RotationFamily, DEFAULT_GRAM_TOL,
};
use crate::scaling::{
    solve_scaling, uniqueness_heuristic, ConeVariable, JointOptions, RelaxedWeights, ScalingMethod,
    ScalingOptions, ScalingResiduals, ScalingSolution, Strategy, UniquenessAdvice,
};

/// Metzler tolerance used when the scaling is only approximate.
pub const RELAXED_METZLER_TOL: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Diagonalize,
    Scaling,
    Rotation,
    Search,
}

/// An error tagged with the stage that raised it.
#[derive(Debug, thiserror::Error)]
#[error("{stage:?} stage failed: {error}")]
pub struct StageError {
    pub stage: Stage,
    pub error: Error,
}

impl StageError {
    fn at(stage: Stage) -> impl Fn(Error) -> StageError {
        move |error| StageError { stage, error }
    }

    pub fn exit_code(&self) -> i32 {
        exit_code(&self.error)
    }
}

/// 1: input or configuration problem, 2: no RC realization exists for this
/// data, 3: a search ran out of budget without a feasible point.
pub fn exit_code(error: &Error) -> i32 {
    match error {
        Error::NotRcRealizable(_)
        | Error::GramMismatch { .. }
        | Error::NotPositiveDefinite { .. }
        | Error::NonPolyhedralCone
        | Error::TrivialCone
        | Error::NoStrictlyPositive
        | Error::SingularT { .. } => 2,
        Error::NoFeasiblePoint { .. } => 3,
        Error::BothConstraintsActive
        | Error::NoConstraintActive
        | Error::GenerationBudgetExceeded { .. }
        | Error::NodeCountMismatch { .. }
        | Error::Dimension(_)
        | Error::InvalidInput(_)
        | Error::Parse(_) => 1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub strategy: Strategy,
    pub relaxed: bool,
    pub enforce_input: bool,
    pub enforce_output: bool,
    /// `None`: `1e-7 |A_hat|_inf`.
    pub eig_tol: Option<f64>,
    pub weights: RelaxedWeights,
    pub joint: JointOptions,
    /// `None`: 1e-8, or 1e-5 with `relaxed`.
    pub metzler_tol: Option<f64>,
    pub search: SearchConfig,
    /// Minimize the 1-norm after reaching feasibility (k >= 2).
    pub sparsify: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            strategy: Strategy::TargetIdentity,
            relaxed: false,
            enforce_input: true,
            enforce_output: true,
            eig_tol: None,
            weights: RelaxedWeights::default(),
            joint: JointOptions::default(),
            metzler_tol: None,
            search: SearchConfig::default(),
            sparsify: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagonalizationReport {
    pub eigenvalues: Vec<f64>,
    pub blocks: Vec<Vec<usize>>,
    pub eig_tol: f64,
    pub eigen_residual: f64,
    pub inverse_residual: f64,
    pub condition: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingReport {
    pub method: ScalingMethod,
    pub strategy: Strategy,
    pub d: Vec<f64>,
    pub g: Vec<f64>,
    pub residuals: ScalingResiduals,
    pub residual: f64,
    pub commutation_residual: f64,
    pub undetermined: Vec<bool>,
    pub layout: Vec<ConeVariable>,
    pub generators: Vec<Vec<f64>>,
    pub alphas: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RotationReport {
    pub k: usize,
    pub rank_z: usize,
    pub columns: usize,
    pub gram_residual: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchReport {
    pub feasible: bool,
    pub metzler_tol: f64,
    pub objective: f64,
    pub zero_norm: usize,
    pub prune_tol: f64,
    pub metzler_violation: f64,
    pub symmetry_residual: f64,
    pub output_residual: Option<f64>,
    pub input_residual: Option<f64>,
    /// `max |G T^-1 A_hat T - S|` with `S` recomputed from `Q`.
    pub definition_residual: f64,
    /// Largest gap between the sorted spectra of `G^-1 S` and `A_hat`.
    pub spectrum_residual: f64,
    pub t_condition: f64,
    pub restarts: Vec<RestartLog>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub n: usize,
    pub output_constraint: bool,
    pub input_constraint: bool,
    pub relaxed: bool,
    pub advisory: Option<UniquenessAdvice>,
    pub diagonalization: DiagonalizationReport,
    pub scaling: ScalingReport,
    pub rotation: RotationReport,
    pub search: SearchReport,
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub model: StateSpaceModel,
    pub diagonalization: Diagonalization,
    pub scaling: ScalingSolution,
    pub family: RotationFamily,
    pub search: SearchResult,
    pub report: Report,
}

impl Reconstruction {
    pub fn realization(&self) -> &RcRealization {
        &self.search.best
    }

    pub fn feasible(&self) -> bool {
        self.search.feasible
    }
}

/// What `realization.json` holds: the realization plus the output matrix,
/// so measured nodes can be identified later.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RealizationDocument {
    #[serde(flatten)]
    pub realization: RcRealization,
    #[serde(
        default,
        with = "crate::io::option_matrix_serde",
        skip_serializing_if = "Option::is_none"
    )]
    pub c_target: Option<DMatrix<f64>>,
}

/// Sorted real eigenvalues of `G^-1 S`, via the similar symmetric matrix
/// `G^-1/2 sym(S) G^-1/2`.
pub fn realized_spectrum(s: &DMatrix<f64>, g: &[f64]) -> Vec<f64> {
    let n = s.nrows();
    let sym = DMatrix::from_fn(n, n, |i, j| {
        0.5 * (s[(i, j)] + s[(j, i)]) / (g[i] * g[j]).sqrt()
    });
    let mut ev: Vec<f64> = sym.symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

pub fn diagonalize_model(
    model: &StateSpaceModel,
    eig_tol: Option<f64>,
) -> Result<(Diagonalization, f64), Error> {
    let tol = eig_tol.unwrap_or_else(|| default_eig_tol(&model.a_hat));
    Ok((real_diagonalize(&model.a_hat, tol)?, tol))
}

pub fn reconstruct(
    model: &StateSpaceModel,
    config: &PipelineConfig,
) -> Result<Reconstruction, StageError> {
    let model = model.restricted(config.enforce_input, config.enforce_output);
    let (diag, eig_tol) =
        diagonalize_model(&model, config.eig_tol).map_err(StageError::at(Stage::Diagonalize))?;

    let scaling_opts = ScalingOptions {
        strategy: config.strategy,
        relaxed: config.relaxed,
        weights: config.weights,
        joint: config.joint,
    };
    let outcome =
        solve_scaling(&model, &diag, &scaling_opts).map_err(StageError::at(Stage::Scaling))?;
    let sol = outcome.solution;

    let gram_tol = if config.relaxed {
        f64::INFINITY
    } else {
        DEFAULT_GRAM_TOL
    };
    let rot = StageError::at(Stage::Rotation);
    let (z, w) = build_zw(&sol.p, &sol.g, &model, gram_tol).map_err(&rot)?;
    let family = rotation_family(&z, &w, default_rank_tol(&z)).map_err(&rot)?;
    let gram_residual = max_abs(&(z.transpose() * &z - w.transpose() * &w));

    let metzler_tol = config.metzler_tol.unwrap_or(if config.relaxed {
        RELAXED_METZLER_TOL
    } else {
        config.search.metzler_tol
    });
    let search_cfg = SearchConfig {
        metzler_tol,
        ..config.search
    };
    let result = search(
        &family,
        &sol.p,
        &sol.g,
        &model,
        &search_cfg,
        config.sparsify,
    )
    .map_err(StageError::at(Stage::Search))?;
    let best = &result.best;

    let p_inv = sol.p.clone().try_inverse().expect("P is positive definite");
    let x = &p_inv * &model.a_hat * &sol.p;
    let q = family.q(&result.ubar);
    let sqrt_g = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        sol.g.len(),
        sol.g.iter().map(|v| v.sqrt()),
    ));
    let s_direct = &sqrt_g * q.transpose() * x * q * &sqrt_g;
    let spectrum = realized_spectrum(&best.s, &best.g);
    let spectrum_residual = spectrum
        .iter()
        .zip(&diag.eigenvalues)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    let n = model.n();
    let report = Report {
        n,
        output_constraint: model.has_output_constraint(),
        input_constraint: model.has_input_constraint(),
        relaxed: config.relaxed,
        advisory: model
            .has_output_constraint()
            .then(|| uniqueness_heuristic(n, model.c_hat.nrows())),
        diagonalization: DiagonalizationReport {
            eigenvalues: diag.eigenvalues.clone(),
            blocks: diag.blocks.clone(),
            eig_tol,
            eigen_residual: diag.eigen_residual,
            inverse_residual: diag.inverse_residual,
            condition: diag.condition,
        },
        scaling: ScalingReport {
            method: sol.method,
            strategy: config.strategy,
            d: sol.d.diagonal().iter().copied().collect(),
            g: sol.g.clone(),
            residuals: sol.residuals,
            residual: sol.residual,
            commutation_residual: sol.commutation_residual,
            undetermined: sol.undetermined.clone(),
            layout: outcome
                .cone
                .as_ref()
                .map(|c| c.layout.clone())
                .unwrap_or_default(),
            generators: outcome
                .generators
                .iter()
                .map(|g| g.iter().copied().collect())
                .collect(),
            alphas: sol.alphas.clone(),
        },
        rotation: RotationReport {
            k: family.k,
            rank_z: family.rank_z,
            columns: z.ncols(),
            gram_residual,
        },
        search: SearchReport {
            feasible: result.feasible,
            metzler_tol,
            objective: result.objective,
            zero_norm: best.zero_norm,
            prune_tol: best.prune_tol,
            metzler_violation: best.metzler_violation,
            symmetry_residual: best.symmetry_residual,
            output_residual: best.output_residual,
            input_residual: best.input_residual,
            definition_residual: max_abs(&(&s_direct - &best.s)),
            spectrum_residual,
            t_condition: best.condition,
            restarts: result.per_restart_log.clone(),
        },
    };
    Ok(Reconstruction {
        model,
        diagonalization: diag,
        scaling: sol,
        family,
        search: result,
        report,
    })
}
