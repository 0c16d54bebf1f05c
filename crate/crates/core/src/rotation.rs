//! The orthogonal factor `Q` of `T = P Q sqrt(G)`.
//!
//! Given a scaling `(P, G)`, every admissible `Q` satisfies `Q Z = W` for the
//! stacked constraint matrices built here. When `Z` has rank `n` the
//! solution is unique; otherwise the solutions are
//! `Q = W Z^+ + Wbar U Zbar^T` with `U` ranging over `O(n - rank Z)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{condition_number, max_abs, orthonormal_complement};
use crate::model::StateSpaceModel;

/// Condition number of `T` above which a realization is rejected.
pub const MAX_T_CONDITION: f64 = 1e12;

/// Relative tolerance of the `Z^T Z = W^T W` check for exact scalings.
pub const DEFAULT_GRAM_TOL: f64 = 1e-7;

/// Stacks the active constraints: `W = [P C_hat^T | P^-1 B_hat]` and
/// `Z = [G^-1/2 C^T | G^-1/2 B]`. Fails with `GramMismatch` when
/// `Z^T Z` and `W^T W` differ by more than `gram_tol` relative to their size.
pub fn build_zw(
    p: &DMatrix<f64>,
    g: &[f64],
    model: &StateSpaceModel,
    gram_tol: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = model.n();
    if p.shape() != (n, n) || g.len() != n {
        return Err(Error::Dimension(
            "P and G must match the model order".into(),
        ));
    }
    let inv_sqrt_g =
        DMatrix::from_diagonal(&DVector::from_iterator(n, g.iter().map(|x| 1.0 / x.sqrt())));
    let mut z_cols: Vec<DVector<f64>> = Vec::new();
    let mut w_cols: Vec<DVector<f64>> = Vec::new();
    if model.has_output_constraint() {
        let c = model.c_target.as_ref().expect("output constraint");
        let w = p * model.c_hat.transpose();
        let z = &inv_sqrt_g * c.transpose();
        w_cols.extend(w.column_iter().map(|c| c.into_owned()));
        z_cols.extend(z.column_iter().map(|c| c.into_owned()));
    }
    if model.has_input_constraint() {
        let p_inv = p.clone().try_inverse().ok_or(Error::NotPositiveDefinite {
            min_eigenvalue: 0.0,
        })?;
        let w = p_inv * model.b_hat.as_ref().expect("input constraint");
        let z = &inv_sqrt_g * model.b_target.as_ref().expect("input constraint");
        w_cols.extend(w.column_iter().map(|c| c.into_owned()));
        z_cols.extend(z.column_iter().map(|c| c.into_owned()));
    }
    let stack = |cols: &[DVector<f64>]| {
        if cols.is_empty() {
            DMatrix::zeros(n, 0)
        } else {
            DMatrix::from_columns(cols)
        }
    };
    let (z, w) = (stack(&z_cols), stack(&w_cols));
    let gz = z.transpose() * &z;
    let gw = w.transpose() * &w;
    let residual = max_abs(&(&gz - &gw));
    let tolerance = gram_tol * max_abs(&gz).max(max_abs(&gw)).max(1.0);
    if residual > tolerance {
        return Err(Error::GramMismatch {
            residual,
            tolerance,
        });
    }
    Ok((z, w))
}

/// Absolute rank threshold `1e-9 |Z|` used by the family construction.
pub fn default_rank_tol(z: &DMatrix<f64>) -> f64 {
    1e-9 * z.norm().max(f64::MIN_POSITIVE)
}

/// Column subset selection by pivoted Gram-Schmidt on `Z`. Returns
/// `(Z L, W L, L)` with `L` a column selector.
pub fn reduce_full_column_rank(
    z: &DMatrix<f64>,
    w: &DMatrix<f64>,
    tol_rank: f64,
) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let q = z.ncols();
    let mut residual = z.clone();
    let mut kept: Vec<usize> = Vec::new();
    loop {
        let best = (0..q)
            .filter(|j| !kept.contains(j))
            .map(|j| (j, residual.column(j).norm()))
            .fold(None::<(usize, f64)>, |acc, (j, v)| match acc {
                Some((_, bv)) if bv >= v => acc,
                _ => Some((j, v)),
            });
        match best {
            Some((j, v)) if v > tol_rank => {
                let u = residual.column(j) / v;
                let proj = &u * (u.transpose() * &residual);
                residual -= proj;
                kept.push(j);
            }
            _ => break,
        }
    }
    kept.sort_unstable();
    let l = DMatrix::from_fn(q, kept.len(), |r, c| if kept[c] == r { 1.0 } else { 0.0 });
    (z * &l, w * &l, l)
}

/// All orthonormal `Q` with `Q Z = W`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RotationFamily {
    #[serde(with = "crate::io::matrix_serde")]
    pub base: DMatrix<f64>,
    #[serde(with = "crate::io::matrix_serde")]
    pub wbar: DMatrix<f64>,
    #[serde(with = "crate::io::matrix_serde")]
    pub zbar: DMatrix<f64>,
    pub k: usize,
    pub rank_z: usize,
}

impl RotationFamily {
    /// `Q(U) = base + Wbar U Zbar^T`.
    pub fn q(&self, u: &DMatrix<f64>) -> DMatrix<f64> {
        if self.k == 0 {
            return self.base.clone();
        }
        &self.base + &self.wbar * u * self.zbar.transpose()
    }

    pub fn n(&self) -> usize {
        self.base.nrows()
    }
}

/// Parameterizes the solutions of `Q Z = W`. The particular solution is
/// replaced by its nearest partial isometry, which is a no-op on exact data
/// and keeps `Q` orthonormal when the scaling is only approximate.
pub fn rotation_family(
    z: &DMatrix<f64>,
    w: &DMatrix<f64>,
    tol_rank: f64,
) -> Result<RotationFamily> {
    if z.shape() != w.shape() {
        return Err(Error::Dimension("Z and W differ in shape".into()));
    }
    let n = z.nrows();
    let (z, w, _) = reduce_full_column_rank(z, w, tol_rank);
    let r = z.ncols();
    if r == 0 {
        let (ident, _) = orthonormal_complement(&DMatrix::zeros(n, 0), 0.5);
        return Ok(RotationFamily {
            base: DMatrix::zeros(n, n),
            wbar: ident.clone(),
            zbar: ident,
            k: n,
            rank_z: 0,
        });
    }
    let gram = z.transpose() * &z;
    let gram_inv = gram
        .try_inverse()
        .ok_or_else(|| Error::Dimension("reduced Z is rank deficient".into()))?;
    let raw = &w * gram_inv * z.transpose();
    let svd = raw.svd(true, true);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .total_cmp(&svd.singular_values[a])
            .then(a.cmp(&b))
    });
    let ur = DMatrix::from_fn(n, r, |i, c| u[(i, order[c])]);
    let vr = DMatrix::from_fn(n, r, |i, c| vt[(order[c], i)]);
    let base = &ur * vr.transpose();
    let (wbar, _) = orthonormal_complement(&ur, 0.5);
    let (zbar, _) = orthonormal_complement(&vr, 0.5);
    Ok(RotationFamily {
        base,
        wbar,
        zbar,
        k: n - r,
        rank_z: r,
    })
}

/// A candidate network: `T`, `S = G T^-1 A_hat T` and diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RcRealization {
    #[serde(with = "crate::io::matrix_serde")]
    pub t: DMatrix<f64>,
    #[serde(with = "crate::io::matrix_serde")]
    pub s: DMatrix<f64>,
    pub g: Vec<f64>,
    #[serde(with = "crate::io::matrix_serde")]
    pub q: DMatrix<f64>,
    /// `max |S - S^T|`.
    pub symmetry_residual: f64,
    /// `max(0, -min_{i != j} S_ij)`.
    pub metzler_violation: f64,
    /// Entries with `|S_ij| > prune_tol`.
    pub zero_norm: usize,
    /// Entrywise `sum |S_ij|`.
    pub one_norm: f64,
    pub prune_tol: f64,
    /// `max |C_hat T - C|` when an output target is present.
    pub output_residual: Option<f64>,
    /// `max |T^-1 B_hat - G^-1 B|` when an input target is present.
    pub input_residual: Option<f64>,
    pub condition: f64,
}

/// Most negative off-diagonal entry, clamped at zero.
pub fn metzler_violation(s: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..s.nrows() {
        for j in 0..s.ncols() {
            if i != j {
                worst = worst.max(-s[(i, j)]);
            }
        }
    }
    worst
}

/// Prune threshold relative to the largest entry of `S`.
pub fn default_prune_tol(s: &DMatrix<f64>) -> f64 {
    1e-6 * max_abs(s)
}

/// `T = P Q sqrt(G)` and `S = G T^-1 A_hat T` with diagnostics. A
/// `prune_tol` of `None` means `1e-6 max |S_ij|`.
pub fn assemble_realization(
    p: &DMatrix<f64>,
    g: &[f64],
    q: &DMatrix<f64>,
    model: &StateSpaceModel,
    prune_tol: Option<f64>,
) -> Result<RcRealization> {
    let n = model.n();
    if p.shape() != (n, n) || q.shape() != (n, n) || g.len() != n {
        return Err(Error::Dimension(
            "P, Q and G must match the model order".into(),
        ));
    }
    let gvec = DVector::from_column_slice(g);
    let sqrt_g = DMatrix::from_diagonal(&gvec.map(f64::sqrt));
    let t = p * q * sqrt_g;
    let condition = condition_number(&t);
    if condition.is_nan() || condition > MAX_T_CONDITION {
        return Err(Error::SingularT { condition });
    }
    let lu = t.clone().lu();
    let t_inv_at = lu.solve(&(&model.a_hat * &t)).ok_or(Error::SingularT {
        condition: f64::INFINITY,
    })?;
    let s = DMatrix::from_diagonal(&gvec) * t_inv_at;
    let output_residual = model
        .has_output_constraint()
        .then(|| max_abs(&(&model.c_hat * &t - model.c_target.as_ref().expect("output"))));
    let input_residual = if model.has_input_constraint() {
        let tb = lu
            .solve(model.b_hat.as_ref().expect("input"))
            .ok_or(Error::SingularT {
                condition: f64::INFINITY,
            })?;
        let ginv_b = DMatrix::from_diagonal(&gvec.map(|x| 1.0 / x))
            * model.b_target.as_ref().expect("input");
        Some(max_abs(&(tb - ginv_b)))
    } else {
        None
    };
    let prune_tol = prune_tol.unwrap_or_else(|| default_prune_tol(&s));
    Ok(RcRealization {
        symmetry_residual: max_abs(&(&s - s.transpose())),
        metzler_violation: metzler_violation(&s),
        zero_norm: s.iter().filter(|x| x.abs() > prune_tol).count(),
        one_norm: s.iter().map(|x| x.abs()).sum(),
        prune_tol,
        output_residual,
        input_residual,
        condition,
        t,
        s,
        g: g.to_vec(),
        q: q.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicated_column_is_dropped() {
        let z = DMatrix::from_row_slice(3, 3, &[1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let (zr, wr, l) = reduce_full_column_rank(&z, &z, 1e-9);
        assert_eq!(zr.ncols(), 2);
        assert_eq!(wr, zr);
        assert_eq!(l.shape(), (3, 2));
    }

    #[test]
    fn full_rank_identity_family() {
        let id = DMatrix::<f64>::identity(3, 3);
        let fam = rotation_family(&id, &id, 1e-9).unwrap();
        assert_eq!(fam.k, 0);
        assert!((fam.base - id).amax() < 1e-14);
    }

    #[test]
    fn trivial_realization() {
        let a = DMatrix::from_row_slice(2, 2, &[-2.0, 1.0, 1.0, -3.0]);
        let id = DMatrix::<f64>::identity(2, 2);
        let model = StateSpaceModel::with_output(a.clone(), id.clone(), id.clone()).unwrap();
        let (z, w) = build_zw(&id, &[1.0, 1.0], &model, DEFAULT_GRAM_TOL).unwrap();
        assert_eq!(z, w);
        let real = assemble_realization(&id, &[1.0, 1.0], &id, &model, None).unwrap();
        assert!((real.s - a).amax() < 1e-14);
        assert_eq!(real.symmetry_residual, 0.0);
        assert_eq!(real.output_residual, Some(0.0));
    }

    #[test]
    fn gram_mismatch_detected() {
        let a = DMatrix::from_row_slice(2, 2, &[-2.0, 1.0, 1.0, -3.0]);
        let model = StateSpaceModel::with_output(
            a,
            DMatrix::from_row_slice(1, 2, &[2.0, 0.0]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        )
        .unwrap();
        let id = DMatrix::<f64>::identity(2, 2);
        assert!(matches!(
            build_zw(&id, &[1.0, 1.0], &model, DEFAULT_GRAM_TOL),
            Err(Error::GramMismatch { .. })
        ));
    }

    #[test]
    fn violation_of_diagonal_matrix_is_zero() {
        let s = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, -2.0]));
        assert_eq!(metzler_violation(&s), 0.0);
    }
}
