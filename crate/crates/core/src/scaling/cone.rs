use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{determined_nodes, ConstraintSide, ScalingMethod, ScalingSolution, Strategy};
use crate::error::{Error, Result};
use crate::linalg::{null_space, Diagonalization};
use crate::lp::{maximize, nnls, LpOutcome};
use crate::model::StateSpaceModel;

/// One unknown of the linear scaling system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConeVariable {
    /// Entry of `D` (eigen-coordinates), `row <= col`.
    D { row: usize, col: usize },
    /// Entry of `D^-1`, used for the input side.
    DInverse { row: usize, col: usize },
    /// Diagonal entry of `H = G^-1`.
    H { node: usize },
}

impl ConeVariable {
    fn is_scaling(self) -> bool {
        !matches!(self, ConeVariable::H { .. })
    }
}

/// The homogeneous system `E x = 0`, `x >= 0` describing one-sided scalings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalingCone {
    pub side: ConstraintSide,
    #[serde(with = "crate::io::matrix_serde")]
    pub equality: DMatrix<f64>,
    pub layout: Vec<ConeVariable>,
    /// Per node: does some equation involve its capacitance?
    pub determined: Vec<bool>,
}

impl ScalingCone {
    pub fn num_variables(&self) -> usize {
        self.layout.len()
    }

    /// Coordinate fixed to 1 when generators are normalized: the first
    /// determined `H` entry.
    pub fn designated(&self) -> Option<usize> {
        self.layout
            .iter()
            .position(|v| matches!(v, ConeVariable::H { node } if self.determined[*node]))
    }

    /// Coordinates that must be strictly positive in a valid scaling.
    pub fn required(&self) -> Vec<bool> {
        self.layout
            .iter()
            .map(|v| match v {
                ConeVariable::H { node } => self.determined[*node],
                _ => true,
            })
            .collect()
    }

    fn is_diagonal_pattern(&self) -> bool {
        self.layout.iter().all(|v| match v {
            ConeVariable::D { row, col } | ConeVariable::DInverse { row, col } => row == col,
            ConeVariable::H { .. } => true,
        })
    }
}

/// Builds `E` for the single active constraint side.
pub fn build_scaling_system(
    model: &StateSpaceModel,
    diag: &Diagonalization,
) -> Result<ScalingCone> {
    let (out, inp) = (model.has_output_constraint(), model.has_input_constraint());
    let (side, factors, k) = match (out, inp) {
        (true, true) => return Err(Error::BothConstraintsActive),
        (false, false) => return Err(Error::NoConstraintActive),
        (true, false) => (
            ConstraintSide::Output,
            &model.c_hat * &diag.v,
            model.c_target.clone().expect("output constraint"),
        ),
        (false, true) => (
            ConstraintSide::Input,
            (&diag.w * model.b_hat.as_ref().expect("input constraint")).transpose(),
            model
                .b_target
                .as_ref()
                .expect("input constraint")
                .transpose(),
        ),
    };
    let n = model.n();
    let mut layout = Vec::new();
    for block in &diag.blocks {
        for (a, &i) in block.iter().enumerate() {
            for &j in &block[a..] {
                layout.push(match side {
                    ConstraintSide::Output => ConeVariable::D { row: i, col: j },
                    ConstraintSide::Input => ConeVariable::DInverse { row: i, col: j },
                });
            }
        }
    }
    layout.extend((0..n).map(|node| ConeVariable::H { node }));

    let p = factors.nrows();
    let rows: Vec<(usize, usize)> = (0..p).flat_map(|a| (a..p).map(move |b| (a, b))).collect();
    let mut e = DMatrix::zeros(rows.len(), layout.len());
    for (r, &(a, b)) in rows.iter().enumerate() {
        for (c, var) in layout.iter().enumerate() {
            e[(r, c)] = match *var {
                ConeVariable::D { row, col } | ConeVariable::DInverse { row, col }
                    if row == col =>
                {
                    factors[(a, row)] * factors[(b, row)]
                }
                ConeVariable::D { row, col } | ConeVariable::DInverse { row, col } => {
                    factors[(a, row)] * factors[(b, col)] + factors[(a, col)] * factors[(b, row)]
                }
                ConeVariable::H { node } => -k[(a, node)] * k[(b, node)],
            };
        }
    }
    Ok(ScalingCone {
        side,
        equality: e,
        layout,
        determined: determined_nodes(model),
    })
}

const RAY_TOL: f64 = 1e-9;

/// Extreme rays of `{y : A y >= 0}` for a pointed cone (`A` has full column
/// rank), by the double-description method.
fn double_description(a: &DMatrix<f64>) -> Vec<DVector<f64>> {
    let (m, d) = a.shape();
    let rows: Vec<DVector<f64>> = (0..m)
        .map(|i| {
            let r = a.row(i).transpose();
            let norm = r.norm();
            if norm > 0.0 {
                r / norm
            } else {
                r
            }
        })
        .collect();

    // greedy choice of d independent constraints for the initial simplex
    let mut chosen: Vec<usize> = Vec::new();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    while chosen.len() < d {
        let best = (0..m)
            .filter(|i| !chosen.contains(i))
            .map(|i| {
                let mut r = rows[i].clone();
                for q in &basis {
                    r -= q * q.dot(&r);
                }
                (i, r)
            })
            .max_by(|x, y| x.1.norm().total_cmp(&y.1.norm()).then(y.0.cmp(&x.0)));
        match best {
            Some((i, r)) if r.norm() > 1e-9 => {
                chosen.push(i);
                basis.push(r.normalize());
            }
            _ => return Vec::new(),
        }
    }
    let a_s = DMatrix::from_fn(d, d, |r, c| rows[chosen[r]][c]);
    let Some(inv) = a_s.try_inverse() else {
        return Vec::new();
    };

    struct Ray {
        y: DVector<f64>,
        zeros: Vec<bool>,
    }
    let normalize = |y: DVector<f64>| {
        let s = y.amax();
        if s > 0.0 {
            y / s
        } else {
            y
        }
    };
    let tight = |y: &DVector<f64>, i: usize| rows[i].dot(y).abs() <= RAY_TOL;

    let mut processed = chosen.clone();
    let mut rays: Vec<Ray> = (0..d)
        .map(|j| {
            let y = normalize(inv.column(j).into_owned());
            let zeros = (0..m)
                .map(|i| processed.contains(&i) && tight(&y, i))
                .collect();
            Ray { y, zeros }
        })
        .collect();

    for (i, row) in rows.iter().enumerate() {
        if chosen.contains(&i) {
            continue;
        }
        let values: Vec<f64> = rays.iter().map(|r| row.dot(&r.y)).collect();
        let pos: Vec<usize> = (0..rays.len()).filter(|&r| values[r] > RAY_TOL).collect();
        let neg: Vec<usize> = (0..rays.len()).filter(|&r| values[r] < -RAY_TOL).collect();
        let mut next: Vec<Ray> = Vec::new();
        for &p in &pos {
            for &q in &neg {
                let common: Vec<usize> = processed
                    .iter()
                    .copied()
                    .filter(|&j| rays[p].zeros[j] && rays[q].zeros[j])
                    .collect();
                if common.len() + 2 < d {
                    continue;
                }
                let dominated = rays
                    .iter()
                    .enumerate()
                    .any(|(r, ray)| r != p && r != q && common.iter().all(|&j| ray.zeros[j]));
                if dominated {
                    continue;
                }
                let y = normalize(&rays[q].y * values[p] - &rays[p].y * values[q]);
                let mut zeros = vec![false; m];
                for &j in processed.iter().chain(std::iter::once(&i)) {
                    zeros[j] = tight(&y, j);
                }
                next.push(Ray { y, zeros });
            }
        }
        for (r, mut ray) in rays.into_iter().enumerate() {
            if values[r] >= -RAY_TOL {
                ray.zeros[i] = values[r].abs() <= RAY_TOL;
                next.push(ray);
            }
        }
        rays = next;
        processed.push(i);
    }
    rays.into_iter().map(|r| r.y).collect()
}

/// True when `x` is a non-negative combination of `gens` up to `tol`
/// (relative to `|x|`).
pub fn is_conic_combination(gens: &[DVector<f64>], x: &DVector<f64>, tol: f64) -> bool {
    if gens.is_empty() {
        return x.norm() <= tol;
    }
    let g = DMatrix::from_columns(gens);
    let (_, residual) = nnls(&g, x);
    residual <= tol * x.norm().max(1.0)
}

fn normalize_generator(cone: &ScalingCone, x: &DVector<f64>) -> DVector<f64> {
    let max = x.max();
    let mut x = match cone.designated() {
        Some(i) if x[i] > 1e-9 * max => x / x[i],
        _ => x / max,
    };
    for v in x.iter_mut() {
        if v.abs() < 1e-12 {
            *v = 0.0;
        }
    }
    x
}

fn support_key(x: &DVector<f64>) -> Vec<usize> {
    (0..x.len()).filter(|&i| x[i] != 0.0).collect()
}

/// Extreme rays of the cone, normalized (designated coordinate 1, else
/// largest entry 1) and sorted by support, then values.
pub fn enumerate_generators(cone: &ScalingCone) -> Result<Vec<DVector<f64>>> {
    if !cone.is_diagonal_pattern() {
        return Err(Error::NonPolyhedralCone);
    }
    let e = &cone.equality;
    let nvars = cone.num_variables();
    let scale = e.amax().max(f64::MIN_POSITIVE);
    let e_scaled = e / scale;
    let nb = if e_scaled.nrows() == 0 {
        DMatrix::identity(nvars, nvars)
    } else {
        null_space(&e_scaled, 1e-9)
    };
    if nb.ncols() == 0 {
        return Err(Error::TrivialCone);
    }

    let mut gens: Vec<DVector<f64>> = Vec::new();
    for y in double_description(&nb) {
        let mut x = &nb * y;
        let max = x.amax();
        if max == 0.0 {
            continue;
        }
        x /= max;
        if x.iter().any(|&v| v < -1e-7) {
            continue;
        }
        x.apply(|v| {
            if *v < 1e-10 {
                *v = 0.0
            }
        });
        if (&e_scaled * &x).amax() > 1e-7 {
            continue;
        }
        gens.push(normalize_generator(cone, &x));
    }
    gens.sort_by(|a, b| {
        support_key(a).cmp(&support_key(b)).then_with(|| {
            a.iter()
                .zip(b.iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    gens.dedup_by(|a, b| support_key(a) == support_key(b) && (&*a - &*b).amax() <= 1e-9 * b.amax());

    // drop anything expressible through the others
    let mut k = 0;
    while k < gens.len() && gens.len() > 1 {
        let others: Vec<DVector<f64>> = gens
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != k)
            .map(|(_, g)| g.clone())
            .collect();
        if is_conic_combination(&others, &gens[k], 1e-9) {
            gens.remove(k);
        } else {
            k += 1;
        }
    }
    if gens.is_empty() {
        return Err(Error::TrivialCone);
    }
    Ok(gens)
}

fn chebyshev_point(gens: &[&DVector<f64>], required: &[usize]) -> Option<DVector<f64>> {
    let k = gens.len();
    // variables (alpha_1..alpha_k, t), rows: t - sum alpha g[c] <= 0, sum alpha <= 1
    let mut a = DMatrix::zeros(required.len() + 1, k + 1);
    for (r, &c) in required.iter().enumerate() {
        for (j, g) in gens.iter().enumerate() {
            a[(r, j)] = -g[c];
        }
        a[(r, k)] = 1.0;
    }
    for j in 0..k {
        a[(required.len(), j)] = 1.0;
    }
    let mut b = vec![0.0; required.len()];
    b.push(1.0);
    let mut c = vec![0.0; k];
    c.push(1.0);
    match maximize(&c, &a, &b) {
        LpOutcome::Optimal { x, value } if value > 1e-12 => {
            Some(DVector::from_column_slice(&x[..k]))
        }
        _ => None,
    }
}

/// Picks a point with every required coordinate strictly positive and
/// converts it into `(D, G)`.
pub fn select_positive_solution(
    cone: &ScalingCone,
    generators: &[DVector<f64>],
    strategy: Strategy,
    model: &StateSpaceModel,
    diag: &Diagonalization,
) -> Result<ScalingSolution> {
    if generators.is_empty() {
        return Err(Error::TrivialCone);
    }
    let required_mask = cone.required();
    let required: Vec<usize> = (0..required_mask.len())
        .filter(|&i| required_mask[i])
        .collect();
    let free: Vec<bool> = generators
        .iter()
        .map(|g| required.iter().all(|&c| g[c] == 0.0))
        .collect();
    let core_idx: Vec<usize> = (0..generators.len()).filter(|&i| !free[i]).collect();
    if core_idx.is_empty() {
        return Err(Error::NoStrictlyPositive);
    }
    let core: Vec<&DVector<f64>> = core_idx.iter().map(|&i| &generators[i]).collect();
    let combine = |alpha: &DVector<f64>| {
        core.iter()
            .zip(alpha.iter())
            .fold(DVector::zeros(cone.num_variables()), |acc, (g, &a)| {
                acc + *g * a
            })
    };
    let positive = |x: &DVector<f64>| {
        let max = x.amax();
        max > 0.0 && required.iter().all(|&c| x[c] > 1e-10 * max)
    };
    let h_det: Vec<usize> = cone
        .layout
        .iter()
        .enumerate()
        .filter(|(_, v)| matches!(v, ConeVariable::H { node } if cone.determined[*node]))
        .map(|(i, _)| i)
        .collect();

    let cheb = chebyshev_point(&core, &required).ok_or(Error::NoStrictlyPositive)?;
    let x_cheb = combine(&cheb);
    if !positive(&x_cheb) {
        return Err(Error::NoStrictlyPositive);
    }
    let rescale_to_unit_h = |alpha: DVector<f64>| {
        let x = combine(&alpha);
        if h_det.is_empty() {
            return alpha;
        }
        let mean = h_det.iter().map(|&i| x[i]).sum::<f64>() / h_det.len() as f64;
        if mean > 0.0 {
            alpha / mean
        } else {
            alpha
        }
    };
    let alpha = match strategy {
        Strategy::Chebyshev => cheb,
        Strategy::TargetIdentity if h_det.is_empty() => cheb,
        Strategy::TargetIdentity => {
            let a = DMatrix::from_fn(h_det.len(), core.len(), |r, j| core[j][h_det[r]]);
            let (alpha, _) = nnls(&a, &DVector::repeat(h_det.len(), 1.0));
            if positive(&combine(&alpha)) {
                alpha
            } else {
                rescale_to_unit_h(cheb)
            }
        }
    };
    let x = combine(&alpha);

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
    debug_assert!(cone.layout.iter().filter(|v| v.is_scaling()).count() == n);
    let mut alphas = vec![0.0; generators.len()];
    for (j, &i) in core_idx.iter().enumerate() {
        alphas[i] = alpha[j];
    }
    for (i, &is_free) in free.iter().enumerate() {
        if is_free {
            alphas[i] = 1.0;
        }
    }
    let undetermined = cone.determined.iter().map(|d| !d).collect();
    ScalingSolution::assemble(
        model,
        diag,
        d,
        g,
        undetermined,
        Some(alphas),
        ScalingMethod::Cone,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dd_positive_orthant() {
        let rays = double_description(&DMatrix::identity(3, 3));
        assert_eq!(rays.len(), 3);
    }

    #[test]
    fn dd_square_pyramid() {
        // cone over a square: x >= |y|, x >= |z| has 4 extreme rays
        let a = DMatrix::from_row_slice(
            4,
            3,
            &[1.0, 1.0, 0.0, 1.0, -1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, -1.0],
        );
        let mut rays = double_description(&a);
        rays.iter_mut().for_each(|r| *r /= r[0]);
        assert_eq!(rays.len(), 4);
        for r in &rays {
            assert!((r[1].abs() - 1.0).abs() < 1e-12 && (r[2].abs() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dd_redundant_constraints() {
        // 2D cone between (1,0) and (1,1) with duplicated rows
        let a = DMatrix::from_row_slice(4, 2, &[0.0, 1.0, 1.0, -1.0, 0.0, 2.0, 1.0, 0.0]);
        let rays = double_description(&a);
        assert_eq!(rays.len(), 2);
    }
}
