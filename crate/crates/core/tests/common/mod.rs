//! Shared fixtures and independent reference computations.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rcnet_core::StateSpaceModel;

pub fn m(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, data)
}

/// `A_hat` consistent with the printed `S` and `C_hat` of the worked example.
pub fn example1_a_hat() -> DMatrix<f64> {
    m(
        4,
        4,
        &[
            -10.0, -4.0, -23.0, 4.0, 1.0, -1.0, 3.0, -1.0, 3.0, 1.0, 7.0, -2.0, 1.0, -1.0, 3.0,
            -6.0,
        ],
    )
}

/// `A_hat` exactly as printed, which is not similar to the printed `S`.
pub fn example1_printed_a_hat() -> DMatrix<f64> {
    m(
        4,
        4,
        &[
            -10.0, -4.0, -23.0, 5.0, 1.0, -1.0, 3.0, -1.0, 3.0, 1.0, 7.0, -2.0, 1.0, -1.0, 3.0,
            -4.0,
        ],
    )
}

pub fn example1_c_hat() -> DMatrix<f64> {
    m(
        3,
        4,
        &[1.0, 0.0, 3.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0],
    )
}

pub fn example1_c() -> DMatrix<f64> {
    m(
        3,
        4,
        &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0],
    )
}

pub fn example1_model() -> StateSpaceModel {
    StateSpaceModel::with_output(example1_a_hat(), example1_c_hat(), example1_c()).unwrap()
}

pub fn example1_s1() -> DMatrix<f64> {
    m(
        4,
        4,
        &[
            -4.0, 1.0, 1.0, 2.0, 1.0, -1.0, 0.0, 0.0, 1.0, 0.0, -2.0, 1.0, 2.0, 0.0, 1.0, -3.0,
        ],
    )
}

pub fn example1_s2() -> DMatrix<f64> {
    m(
        4,
        4,
        &[
            -4.0, 1.0, 1.0, -2.0, 1.0, -1.0, 0.0, 0.0, 1.0, 0.0, -2.0, -1.0, -2.0, 0.0, -1.0, -3.0,
        ],
    )
}

/// Published first generator, paired with the eigenvalue each `D` entry
/// belongs to (eigenvalues of `S1`).
pub fn example1_v1_by_eigenvalue() -> Vec<(f64, f64)> {
    let s = example1_s1();
    let mut ev: Vec<f64> = s.symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    // published order lists D for eigenvalues -5.709, -3.194, 0, -1.097
    let (l1, l2, l3, l4) = (ev[0], ev[1], ev[3], ev[2]);
    vec![(l1, 1.98), (l2, 11.334), (l3, 7.5), (l4, 3.186)]
}

fn combinations(n: usize, r: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, r: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == r {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, r, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, r, &mut Vec::new(), &mut out);
    out
}

fn rank(a: &DMatrix<f64>) -> usize {
    if a.is_empty() {
        return 0;
    }
    let sv = a.clone().svd(false, false).singular_values;
    let smax = sv.max();
    sv.iter().filter(|&&s| s > 1e-10 * smax.max(1.0)).count()
}

/// Vertices of `{x >= 0, E x = 0, sum x = 1}` by enumerating every basis of
/// the augmented equality system.
pub fn slice_vertices(e: &DMatrix<f64>) -> Vec<DVector<f64>> {
    let nv = e.ncols();
    let mut aug = e.clone().insert_row(e.nrows(), 1.0);
    let scale = aug.amax();
    aug /= scale;
    let mut rhs = DVector::zeros(aug.nrows());
    rhs[aug.nrows() - 1] = 1.0 / scale;
    let r = rank(&aug);
    let mut out: Vec<DVector<f64>> = Vec::new();
    for cols in combinations(nv, r) {
        let sub = DMatrix::from_fn(aug.nrows(), r, |i, j| aug[(i, cols[j])]);
        if rank(&sub) < r {
            continue;
        }
        let Ok(sol) = sub.clone().svd(true, true).solve(&rhs, 1e-12) else {
            continue;
        };
        if (&sub * &sol - &rhs).amax() > 1e-9 || sol.iter().any(|&v| v < -1e-10) {
            continue;
        }
        let mut x = DVector::zeros(nv);
        for (k, &c) in cols.iter().enumerate() {
            x[c] = sol[k].max(0.0);
        }
        x /= x.sum();
        if !out.iter().any(|y| (y - &x).amax() < 1e-8) {
            out.push(x);
        }
    }
    out
}

/// Orthonormal completion of `basis` (n x r, orthonormal columns) by
/// Gram-Schmidt against the coordinate vectors.
pub fn complete_basis(basis: &DMatrix<f64>) -> DMatrix<f64> {
    let n = basis.nrows();
    let mut cols: Vec<DVector<f64>> = basis.column_iter().map(|c| c.into_owned()).collect();
    let mut extra = Vec::new();
    for i in 0..n {
        let mut v = DVector::zeros(n);
        v[i] = 1.0;
        for c in cols.iter() {
            v -= c * c.dot(&v);
        }
        if v.norm() > 1e-6 {
            let v = v.normalize();
            cols.push(v.clone());
            extra.push(v);
        }
        if cols.len() == n {
            break;
        }
    }
    if extra.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&extra)
    }
}

/// Orthonormal basis of `Img a` by modified Gram-Schmidt.
pub fn gram_schmidt(a: &DMatrix<f64>) -> DMatrix<f64> {
    let mut cols: Vec<DVector<f64>> = Vec::new();
    for c in a.column_iter() {
        let mut v = c.into_owned();
        for q in &cols {
            v -= q * q.dot(&v);
        }
        if v.norm() > 1e-9 * a.amax().max(1.0) {
            cols.push(v.normalize());
        }
    }
    if cols.is_empty() {
        DMatrix::zeros(a.nrows(), 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

pub fn is_orthonormal(q: &DMatrix<f64>, tol: f64) -> bool {
    (q.transpose() * q - DMatrix::identity(q.ncols(), q.ncols())).amax() <= tol
}

/// Planar rotation or reflection by angle `t` (k = 2), sign for k = 1.
pub fn o_element(k: usize, angles: &[f64], reflect: bool) -> DMatrix<f64> {
    match k {
        0 => DMatrix::zeros(0, 0),
        1 => DMatrix::from_element(1, 1, if reflect { -1.0 } else { 1.0 }),
        2 => {
            let (s, c) = angles[0].sin_cos();
            let r = m(2, 2, &[c, -s, s, c]);
            if reflect {
                r * m(2, 2, &[-1.0, 0.0, 0.0, 1.0])
            } else {
                r
            }
        }
        _ => unimplemented!("grid oracle covers k <= 2"),
    }
}

/// Model whose exact solution is `(T, S, G)`:
/// `A_hat = T G^-1 S T^-1`, `C_hat = C T^-1`, `B_hat = T G^-1 B`.
pub fn scrambled_model(
    s: &DMatrix<f64>,
    g: &[f64],
    t: &DMatrix<f64>,
    c: Option<&DMatrix<f64>>,
    b: Option<&DMatrix<f64>>,
) -> StateSpaceModel {
    let n = s.nrows();
    let g_inv = DMatrix::from_diagonal(&DVector::from_iterator(n, g.iter().map(|v| 1.0 / v)));
    let t_inv = t.clone().try_inverse().unwrap();
    let a_hat = t * &g_inv * s * &t_inv;
    let (c_hat, c_target) = match c {
        Some(c) => (c * &t_inv, Some(c.clone())),
        None => (DMatrix::zeros(0, n), None),
    };
    let (b_hat, b_target) = match b {
        Some(b) => (Some(t * &g_inv * b), Some(b.clone())),
        None => (None, None),
    };
    StateSpaceModel::new(a_hat, b_hat, c_hat, b_target, c_target).unwrap()
}

/// Deterministic, reasonably conditioned pseudo-random matrix.
pub fn test_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut state = seed
        .wrapping_mul(6364136223846793005)
        .wrapping_add(1442695040888963407);
    DMatrix::from_fn(rows, cols, |_, _| {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    })
}

/// Well-conditioned random transformation `I + 0.4 R`.
pub fn test_transform(n: usize, seed: u64) -> DMatrix<f64> {
    DMatrix::identity(n, n) + test_matrix(n, n, seed) * 0.4
}

pub fn laplacian(n: usize, edges: &[(usize, usize, f64)]) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(n, n);
    for &(i, j, k) in edges {
        s[(i, j)] += k;
        s[(j, i)] += k;
        s[(i, i)] -= k;
        s[(j, j)] -= k;
    }
    s
}

/// First `p` coordinates.
pub fn projection(p: usize, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(p, n, |r, c| if r == c { 1.0 } else { 0.0 })
}

/// Cone coordinates of the exact scaling induced by a known `T` and `G`:
/// `M = T G^-1 T^T`, `D = W M W^T`, `H = G^-1`.
pub fn true_cone_point(
    cone: &rcnet_core::scaling::ScalingCone,
    diag: &rcnet_core::linalg::Diagonalization,
    t: &DMatrix<f64>,
    g: &[f64],
) -> DVector<f64> {
    use rcnet_core::scaling::ConeVariable;
    let n = t.nrows();
    let g_inv = DMatrix::from_diagonal(&DVector::from_iterator(n, g.iter().map(|v| 1.0 / v)));
    let mm = t * g_inv * t.transpose();
    let d = &diag.w * mm * diag.w.transpose();
    let d_inv = d.clone().try_inverse().unwrap();
    DVector::from_iterator(
        cone.layout.len(),
        cone.layout.iter().map(|v| match *v {
            ConeVariable::D { row, col } => d[(row, col)],
            ConeVariable::DInverse { row, col } => d_inv[(row, col)],
            ConeVariable::H { node } => 1.0 / g[node],
        }),
    )
}

/// Moore-Penrose pseudo-inverse through an SVD with a relative cutoff.
pub fn pinv(a: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = a.clone().svd(true, true);
    let cutoff = 1e-10 * svd.singular_values.max().max(1.0);
    svd.pseudo_inverse(cutoff).unwrap()
}

/// Every `Q = [Wo | Wc U] [Zo | Zc]^T` with `U` on a grid over `O(k)`
/// (both components) that is orthonormal and maps `Z` to `W` within `tol`.
/// Bases are built independently of the library by Gram-Schmidt.
pub fn procrustes_sweep(
    z: &DMatrix<f64>,
    w: &DMatrix<f64>,
    step: f64,
    tol: f64,
) -> Vec<DMatrix<f64>> {
    let n = z.nrows();
    let zo = gram_schmidt(z);
    let wo = w * pinv(z) * &zo;
    let zc = complete_basis(&zo);
    let wc = complete_basis(&gram_schmidt(&wo));
    let k = zc.ncols();
    assert_eq!(wc.ncols(), k);
    let zfull = if k == 0 {
        zo.clone()
    } else {
        DMatrix::from_columns(
            &zo.column_iter()
                .chain(zc.column_iter())
                .map(|c| c.into_owned())
                .collect::<Vec<_>>(),
        )
    };
    let mut grid = Vec::new();
    match k {
        0 => grid.push(DMatrix::zeros(0, 0)),
        1 => {
            grid.push(o_element(1, &[], false));
            grid.push(o_element(1, &[], true));
        }
        2 => {
            let steps = (std::f64::consts::TAU / step).ceil() as usize;
            for i in 0..steps {
                let t = i as f64 * step;
                grid.push(o_element(2, &[t], false));
                grid.push(o_element(2, &[t], true));
            }
        }
        _ => unimplemented!(),
    }
    let mut out = Vec::new();
    for u in grid {
        let right = if k == 0 {
            wo.clone()
        } else {
            DMatrix::from_columns(
                &wo.column_iter()
                    .map(|c| c.into_owned())
                    .chain((&wc * &u).column_iter().map(|c| c.into_owned()))
                    .collect::<Vec<_>>(),
            )
        };
        let q = right * zfull.transpose();
        assert_eq!(q.shape(), (n, n));
        if is_orthonormal(&q, tol) && (&q * z - w).amax() <= tol {
            out.push(q);
        }
    }
    out
}

/// Closest member of the family to `q`: `U = polar(Wbar^T q Zbar)`.
pub fn nearest_family_member(
    fam: &rcnet_core::rotation::RotationFamily,
    q: &DMatrix<f64>,
) -> DMatrix<f64> {
    if fam.k == 0 {
        return fam.q(&DMatrix::zeros(0, 0));
    }
    let u = fam.wbar.transpose() * q * &fam.zbar;
    let svd = u.svd(true, true);
    fam.q(&(svd.u.unwrap() * svd.v_t.unwrap()))
}

/// Random instance `W = Q0 Z` with `Z` of rank `n - k`.
pub fn random_zw(n: usize, k: usize, seed: u64) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let z = test_matrix(n, n - k, seed);
    let (q0, _) = test_matrix(n, n, seed + 1000).qr().unpack();
    let w = &q0 * &z;
    (z, w, q0)
}
