//! Dense numerical kernels shared by the solvers.
//!
//! Everything here is a pure function of its inputs. Bases that are only
//! defined up to a rotation (eigenspaces of repeated eigenvalues, orthogonal
//! complements) are put into a canonical form so that results are
//! reproducible bit for bit across runs.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Threshold on the eigenvector condition number beyond which a matrix is
/// treated as defective.
pub const DEFECTIVE_CONDITION: f64 = 1e12;

/// Largest absolute entry.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// Induced infinity norm (largest absolute row sum).
pub fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|row| row.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Default eigenvalue clustering tolerance, `1e-7 * ||A||_inf`.
pub fn default_eig_tol(a: &DMatrix<f64>) -> f64 {
    1e-7 * inf_norm(a)
}

pub fn is_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|x| x.is_finite())
}

/// Singular values sorted in decreasing order together with the matching
/// left and right singular vectors (as columns).
fn sorted_svd(m: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let v = svd.v_t.expect("v_t requested").transpose();
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| {
        svd.singular_values[j]
            .partial_cmp(&svd.singular_values[i])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let sigma = order.iter().map(|&i| svd.singular_values[i]).collect();
    let u = DMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
    let v = DMatrix::from_fn(v.nrows(), order.len(), |r, c| v[(r, order[c])]);
    (u, sigma, v)
}

/// Ratio of largest to smallest singular value (infinite when singular).
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 1.0;
    }
    let (_, sigma, _) = sorted_svd(m);
    let smax = sigma.first().copied().unwrap_or(0.0);
    let smin = sigma.last().copied().unwrap_or(0.0);
    if smin <= 0.0 {
        f64::INFINITY
    } else {
        smax / smin
    }
}

/// Orthonormal factor `U V^T` of the polar decomposition.
pub fn polar_orthonormal(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.is_empty() {
        return m.clone();
    }
    let svd = m.clone().svd(true, true);
    svd.u.expect("u requested") * svd.v_t.expect("v_t requested")
}

/// Moore-Penrose pseudo-inverse with an absolute singular value cutoff.
pub fn pseudo_inverse(m: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    if m.is_empty() {
        return DMatrix::zeros(m.ncols(), m.nrows());
    }
    let (u, sigma, v) = sorted_svd(m);
    let mut out = DMatrix::zeros(m.ncols(), m.nrows());
    for (i, s) in sigma.iter().enumerate() {
        if *s > tol {
            out += (v.column(i) * u.column(i).transpose()) / *s;
        }
    }
    out
}

/// Rewrites an orthonormal basis into a canonical basis of the same
/// subspace: pivoted Gram-Schmidt on the columns of the orthogonal
/// projector. The result depends only on the subspace, and each column
/// has a positive entry at its pivot row.
pub fn canonical_basis(basis: &DMatrix<f64>) -> DMatrix<f64> {
    let n = basis.nrows();
    let s = basis.ncols();
    if s == 0 {
        return DMatrix::zeros(n, 0);
    }
    let mut residual = basis * basis.transpose();
    let mut out = DMatrix::zeros(n, s);
    for c in 0..s {
        let norms: Vec<f64> = residual.column_iter().map(|col| col.norm()).collect();
        let best = norms.iter().cloned().fold(0.0_f64, f64::max);
        // first column within a relative whisker of the maximum, so ties
        // resolve by index rather than by rounding noise
        let pivot = norms
            .iter()
            .position(|&x| x >= best * (1.0 - 1e-9))
            .unwrap_or(0);
        let q = residual.column(pivot) / norms[pivot].max(f64::MIN_POSITIVE);
        out.set_column(c, &q);
        let proj = &q * (q.transpose() * &residual);
        residual -= proj;
    }
    out
}

/// Orthonormal basis of `(Img m)^perp` and the numerical rank of `m`.
///
/// Singular values at or below `tol_rank` count as zero.
pub fn orthonormal_complement(m: &DMatrix<f64>, tol_rank: f64) -> (DMatrix<f64>, usize) {
    let n = m.nrows();
    if n == 0 {
        return (DMatrix::zeros(0, 0), 0);
    }
    let cols = m.ncols().max(n);
    let mut padded = DMatrix::zeros(n, cols);
    padded.view_mut((0, 0), (n, m.ncols())).copy_from(m);
    let (u, sigma, _) = sorted_svd(&padded);
    let rank = sigma.iter().filter(|&&s| s > tol_rank).count().min(n);
    let rest = u.columns(rank, n - rank).into_owned();
    (canonical_basis(&rest), rank)
}

/// Orthonormal basis of `Img m` and its numerical rank.
pub fn column_space(m: &DMatrix<f64>, tol_rank: f64) -> (DMatrix<f64>, usize) {
    let n = m.nrows();
    if n == 0 || m.ncols() == 0 {
        return (DMatrix::zeros(n, 0), 0);
    }
    let (u, sigma, _) = sorted_svd(m);
    let rank = sigma.iter().filter(|&&s| s > tol_rank).count();
    (canonical_basis(&u.columns(0, rank).into_owned()), rank)
}

/// Orthonormal basis of the null space of `m` (as columns).
pub fn null_space(m: &DMatrix<f64>, tol_rank: f64) -> DMatrix<f64> {
    orthonormal_complement(&m.transpose(), tol_rank).0
}

/// Real diagonalization `A = V diag(eigenvalues) W` with `W = V^-1`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Diagonalization {
    /// Right eigenvectors as columns, unit 2-norm.
    #[serde(with = "crate::io::matrix_serde")]
    pub v: DMatrix<f64>,
    /// Eigenvalues in ascending order.
    pub eigenvalues: Vec<f64>,
    /// Left eigenvectors as rows.
    #[serde(with = "crate::io::matrix_serde")]
    pub w: DMatrix<f64>,
    /// Groups of indices sharing one eigenvalue, in ascending order.
    pub blocks: Vec<Vec<usize>>,
    /// `max |A V - V diag(eigenvalues)|`.
    pub eigen_residual: f64,
    /// `max |W V - I|`.
    pub inverse_residual: f64,
    /// Condition number of `V`.
    pub condition: f64,
}

impl Diagonalization {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn lambda(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_vec(self.eigenvalues.clone()))
    }

    /// True when every eigenvalue is simple, i.e. D is forced to be diagonal.
    pub fn all_distinct(&self) -> bool {
        self.blocks.iter().all(|b| b.len() == 1)
    }

    /// `max |V diag(eigenvalues) W - A|`.
    pub fn reconstruction_residual(&self, a: &DMatrix<f64>) -> f64 {
        max_abs(&(&self.v * self.lambda() * &self.w - a))
    }
}

fn first_significant_positive(v: &mut DVector<f64>) {
    if let Some(x) = v.iter().find(|x| x.abs() > 1e-10).copied() {
        if x < 0.0 {
            v.neg_mut();
        }
    }
}

/// Diagonalizes `a` over the reals.
///
/// Eigenvalues closer than `tol_eig` (single linkage on the sorted spectrum)
/// are merged into one block and share their mean value.
pub fn real_diagonalize(a: &DMatrix<f64>, tol_eig: f64) -> Result<Diagonalization> {
    if !a.is_square() {
        return Err(Error::Dimension(format!(
            "state matrix must be square, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if !is_finite(a) {
        return Err(Error::InvalidInput(
            "state matrix has non-finite entries".into(),
        ));
    }
    let n = a.nrows();
    if n == 0 {
        return Ok(Diagonalization {
            v: DMatrix::zeros(0, 0),
            eigenvalues: vec![],
            w: DMatrix::zeros(0, 0),
            blocks: vec![],
            eigen_residual: 0.0,
            inverse_residual: 0.0,
            condition: 1.0,
        });
    }
    let norm = inf_norm(a);
    let tol_eig = tol_eig.max(0.0);

    let schur = a
        .clone()
        .try_schur(f64::EPSILON, 100_000)
        .ok_or_else(|| Error::NotRcRealizable("Schur iteration did not converge".into()))?;
    let complex = schur.complex_eigenvalues();
    let imag_tol = tol_eig.max(1e-12 * norm);
    if let Some(z) = complex.iter().find(|z| z.im.abs() > imag_tol) {
        return Err(Error::NotRcRealizable(format!(
            "complex eigenvalue {:.6} {:+.6}i",
            z.re, z.im
        )));
    }
    let mut values: Vec<f64> = complex.iter().map(|z| z.re).collect();
    values.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));

    // single-linkage clusters over the sorted spectrum
    let mut clusters: Vec<Vec<f64>> = Vec::new();
    for &x in &values {
        match clusters.last_mut() {
            Some(c) if x - c.last().copied().unwrap_or(x) <= tol_eig => c.push(x),
            _ => clusters.push(vec![x]),
        }
    }

    let defect_floor = 1e3 * f64::EPSILON * norm.max(f64::MIN_POSITIVE);
    let mut v = DMatrix::zeros(n, n);
    let mut eigenvalues = Vec::with_capacity(n);
    let mut blocks = Vec::with_capacity(clusters.len());
    let mut col = 0;
    for cluster in &clusters {
        let r = cluster.len();
        let lambda = cluster.iter().sum::<f64>() / r as f64;
        let shifted = a - DMatrix::identity(n, n) * lambda;
        let (_, sigma, right) = sorted_svd(&shifted);
        let worst = sigma[n - r];
        let defect_tol = (10.0 * r as f64 * tol_eig).max(defect_floor);
        if worst > defect_tol {
            return Err(Error::NotRcRealizable(format!(
                "eigenvalue {lambda:.6} is defective (multiplicity {r}, eigenspace residual {worst:.3e})"
            )));
        }
        let space = right.columns(n - r, r).into_owned();
        let basis = if r == 1 {
            space
        } else {
            canonical_basis(&space)
        };
        let mut block = Vec::with_capacity(r);
        for j in 0..r {
            let mut vec = basis.column(j).into_owned();
            let nrm = vec.norm();
            vec /= nrm;
            first_significant_positive(&mut vec);
            v.set_column(col, &vec);
            eigenvalues.push(lambda);
            block.push(col);
            col += 1;
        }
        blocks.push(block);
    }

    let condition = condition_number(&v);
    if !condition.is_finite() || condition > DEFECTIVE_CONDITION {
        return Err(Error::NotRcRealizable(format!(
            "eigenvector matrix is numerically singular (condition {condition:.3e}); matrix is defective"
        )));
    }
    let w = v
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::NotRcRealizable("eigenvector matrix is singular".into()))?;
    let lam = DMatrix::from_diagonal(&DVector::from_vec(eigenvalues.clone()));
    let eigen_residual = max_abs(&(a * &v - &v * &lam));
    let inverse_residual = max_abs(&(&w * &v - DMatrix::identity(n, n)));
    Ok(Diagonalization {
        v,
        eigenvalues,
        w,
        blocks,
        eigen_residual,
        inverse_residual,
        condition,
    })
}

/// Pattern of entries of D allowed by `Lambda D = D Lambda`: `true` exactly
/// where the row and column indices share an eigenvalue block.
pub fn commuting_pattern(diag: &Diagonalization) -> DMatrix<bool> {
    let n = diag.dim();
    let mut owner = vec![0usize; n];
    for (b, block) in diag.blocks.iter().enumerate() {
        for &i in block {
            owner[i] = b;
        }
    }
    DMatrix::from_fn(n, n, |i, j| owner[i] == owner[j])
}

/// Orthonormal `Q` with `Q source = target`, given equal Gram matrices.
///
/// Built from orthonormal bases of both column spaces; the complements are
/// matched basis vector to basis vector using the canonical complement
/// bases, so the result is deterministic when the rank is below `n`.
pub fn gram_rotation(
    target: &DMatrix<f64>,
    source: &DMatrix<f64>,
    tol: f64,
) -> Result<DMatrix<f64>> {
    if target.shape() != source.shape() {
        return Err(Error::Dimension(format!(
            "gram_rotation operands differ in shape: {:?} vs {:?}",
            target.shape(),
            source.shape()
        )));
    }
    let n = source.nrows();
    let gs = source.transpose() * source;
    let gt = target.transpose() * target;
    let scale = max_abs(&gs).max(max_abs(&gt));
    let residual = max_abs(&(&gt - &gs));
    let tolerance = tol * scale.max(f64::MIN_POSITIVE);
    if residual > tolerance {
        return Err(Error::GramMismatch {
            residual,
            tolerance,
        });
    }
    if source.ncols() == 0 || scale == 0.0 {
        return Ok(DMatrix::identity(n, n));
    }
    let (u, sigma, v) = sorted_svd(source);
    let smax = sigma.first().copied().unwrap_or(0.0);
    let rank = sigma.iter().filter(|&&s| s > 1e-10 * smax).count();
    let us = u.columns(0, rank).into_owned();
    let inv_sigma = DMatrix::from_fn(rank, rank, |i, j| if i == j { 1.0 / sigma[i] } else { 0.0 });
    let ut = polar_orthonormal(&(target * v.columns(0, rank) * inv_sigma));
    let (cs, _) = orthonormal_complement(&us, 0.5);
    let (ct, _) = orthonormal_complement(&ut, 0.5);
    Ok(&ut * us.transpose() + ct * cs.transpose())
}

/// Symmetric positive definite square root.
pub fn spd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::Dimension("spd_sqrt needs a square matrix".into()));
    }
    let n = m.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let scale = max_abs(m);
    let asym = max_abs(&(m - m.transpose()));
    if asym > 1e-10 * scale {
        return Err(Error::InvalidInput(format!(
            "spd_sqrt input is not symmetric (asymmetry {asym:.3e})"
        )));
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let min_eigenvalue = eig.eigenvalues.min();
    if min_eigenvalue <= n as f64 * f64::EPSILON * scale {
        return Err(Error::NotPositiveDefinite { min_eigenvalue });
    }
    let roots = eig.eigenvalues.map(f64::sqrt);
    let p = &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose();
    Ok((&p + p.transpose()) * 0.5)
}

/// Matrix exponential by scaling and squaring of a Taylor series.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let norm = a.norm();
    let squarings = if norm > 0.25 {
        (norm / 0.25).log2().ceil() as i32
    } else {
        0
    };
    let b = a / 2f64.powi(squarings);
    let mut sum = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..=24 {
        term = &term * &b / k as f64;
        sum += &term;
        if max_abs(&term) < f64::EPSILON * 1e-3 {
            break;
        }
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// Index pairs `(a, b)` with `a < b`, the coordinates of `so(k)`.
pub fn skew_pairs(k: usize) -> Vec<(usize, usize)> {
    (0..k)
        .flat_map(|a| (a + 1..k).map(move |b| (a, b)))
        .collect()
}

/// Skew-symmetric matrix from its strictly-upper coordinates.
pub fn skew_from_coords(k: usize, coords: &[f64]) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(k, k);
    for (&(a, b), &x) in skew_pairs(k).iter().zip(coords) {
        s[(a, b)] = x;
        s[(b, a)] = -x;
    }
    s
}

/// Connected component of `O(k)`, distinguished by the determinant sign.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Plus,
    Minus,
}

impl Component {
    /// Representative of the component: `I` or `diag(-1, 1, ..., 1)`.
    pub fn anchor(self, k: usize) -> DMatrix<f64> {
        let mut m = DMatrix::identity(k, k);
        if self == Component::Minus && k > 0 {
            m[(0, 0)] = -1.0;
        }
        m
    }

    pub fn sign(self) -> f64 {
        match self {
            Component::Plus => 1.0,
            Component::Minus => -1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrthoSample {
    #[serde(with = "crate::io::matrix_serde")]
    pub u: DMatrix<f64>,
    pub component: Component,
    #[serde(with = "crate::io::matrix_serde")]
    pub skew_seed: DMatrix<f64>,
}

/// Default half-width of the uniform distribution for skew entries.
pub const DEFAULT_SKEW_SCALE: f64 = std::f64::consts::PI;

/// Draws `exp(S) A` with the strictly-upper entries of `S` uniform in
/// `[-skew_scale, skew_scale]` and `A` the anchor of `component`.
pub fn random_orthogonal_with<R: Rng>(
    rng: &mut R,
    k: usize,
    component: Component,
    skew_scale: f64,
) -> OrthoSample {
    if k == 0 {
        return OrthoSample {
            u: DMatrix::zeros(0, 0),
            component: Component::Plus,
            skew_seed: DMatrix::zeros(0, 0),
        };
    }
    let coords: Vec<f64> = skew_pairs(k)
        .iter()
        .map(|_| {
            if skew_scale > 0.0 {
                rng.gen_range(-skew_scale..=skew_scale)
            } else {
                0.0
            }
        })
        .collect();
    let skew = skew_from_coords(k, &coords);
    let u = polar_orthonormal(&(expm(&skew) * component.anchor(k)));
    OrthoSample {
        u,
        component,
        skew_seed: skew,
    }
}

/// Seeded draw from one connected component of `O(k)`.
pub fn random_orthogonal(
    k: usize,
    seed: u64,
    component: Component,
    skew_scale: f64,
) -> OrthoSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_orthogonal_with(&mut rng, k, component, skew_scale)
}
