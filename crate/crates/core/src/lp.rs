//! Small dense solvers for the linear programs the scaling step needs:
//! non-negative least squares and a tableau simplex.

use nalgebra::{DMatrix, DVector};

fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    if a.ncols() == 0 {
        return DVector::zeros(0);
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = smax * 1e-13 * a.nrows().max(a.ncols()) as f64;
    svd.solve(b, eps)
        .unwrap_or_else(|_| DVector::zeros(a.ncols()))
}

/// Lawson-Hanson non-negative least squares: `min |A x - b|` with `x >= 0`.
/// Returns the minimizer and the residual norm.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, f64) {
    let n = a.ncols();
    let mut x = DVector::zeros(n);
    if n == 0 {
        return (x, b.norm());
    }
    let norm1 = a.column_iter().map(|c| c.abs().sum()).fold(0.0, f64::max);
    let tol = 10.0 * f64::EPSILON * norm1 * a.nrows().max(n) as f64;
    let mut passive = vec![false; n];
    let max_outer = 3 * n + 10;

    for _ in 0..max_outer {
        let w = a.transpose() * (b - a * &x);
        let candidate = (0..n)
            .filter(|&j| !passive[j] && w[j] > tol)
            .max_by(|&i, &j| {
                w[i].partial_cmp(&w[j])
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then(j.cmp(&i))
            });
        let Some(j) = candidate else { break };
        passive[j] = true;

        let mut inner = 0;
        loop {
            inner += 1;
            let idx: Vec<usize> = (0..n).filter(|&i| passive[i]).collect();
            let sub = DMatrix::from_fn(a.nrows(), idx.len(), |r, c| a[(r, idx[c])]);
            let zp = lstsq(&sub, b);
            let mut z = DVector::zeros(n);
            for (k, &i) in idx.iter().enumerate() {
                z[i] = zp[k];
            }
            if idx.iter().all(|&i| z[i] > 0.0) || inner > 3 * n {
                x = z.map(|v| v.max(0.0));
                break;
            }
            let mut alpha = f64::INFINITY;
            for &i in &idx {
                if z[i] <= 0.0 {
                    let denom = x[i] - z[i];
                    if denom > 0.0 {
                        alpha = alpha.min(x[i] / denom);
                    }
                }
            }
            if !alpha.is_finite() {
                alpha = 0.0;
            }
            x += (&z - &x) * alpha;
            for &i in &idx {
                if x[i] <= tol {
                    x[i] = 0.0;
                    passive[i] = false;
                }
            }
        }
    }
    let residual = (a * &x - b).norm();
    (x, residual)
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpOutcome {
    Optimal { x: Vec<f64>, value: f64 },
    Unbounded,
}

/// Maximizes `c^T x` subject to `A x <= b`, `x >= 0`, for `b >= 0`
/// (the origin is feasible). Bland's rule keeps degenerate problems from
/// cycling.
pub fn maximize(c: &[f64], a: &DMatrix<f64>, b: &[f64]) -> LpOutcome {
    let (m, n) = a.shape();
    assert_eq!(c.len(), n, "objective length");
    assert_eq!(b.len(), m, "rhs length");
    assert!(b.iter().all(|&v| v >= 0.0), "origin must be feasible");
    let width = n + m + 1;
    let mut t = DMatrix::<f64>::zeros(m + 1, width);
    for i in 0..m {
        for j in 0..n {
            t[(i, j)] = a[(i, j)];
        }
        t[(i, n + i)] = 1.0;
        t[(i, width - 1)] = b[i];
    }
    for j in 0..n {
        t[(m, j)] = -c[j];
    }
    let mut basis: Vec<usize> = (n..n + m).collect();
    let tol = 1e-12;

    for _ in 0..10_000 {
        let Some(enter) = (0..n + m).find(|&j| t[(m, j)] < -tol) else {
            break;
        };
        let mut leave: Option<usize> = None;
        let mut best = f64::INFINITY;
        for i in 0..m {
            let coef = t[(i, enter)];
            if coef > tol {
                let ratio = t[(i, width - 1)] / coef;
                let better = ratio < best - 1e-15
                    || (ratio <= best + 1e-15 && leave.is_some_and(|l| basis[i] < basis[l]));
                if leave.is_none() || better {
                    best = ratio;
                    leave = Some(i);
                }
            }
        }
        let Some(row) = leave else {
            return LpOutcome::Unbounded;
        };
        let pivot = t[(row, enter)];
        for j in 0..width {
            t[(row, j)] /= pivot;
        }
        for i in 0..=m {
            if i != row {
                let factor = t[(i, enter)];
                if factor != 0.0 {
                    for j in 0..width {
                        t[(i, j)] -= factor * t[(row, j)];
                    }
                }
            }
        }
        basis[row] = enter;
    }

    let mut x = vec![0.0; n];
    for (i, &var) in basis.iter().enumerate() {
        if var < n {
            x[var] = t[(i, width - 1)];
        }
    }
    LpOutcome::Optimal {
        value: t[(m, width - 1)],
        x,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nnls_clips_negative_direction() {
        let a = DMatrix::identity(2, 2);
        let b = DVector::from_vec(vec![1.0, -2.0]);
        let (x, r) = nnls(&a, &b);
        assert!((x[0] - 1.0).abs() < 1e-12 && x[1] == 0.0);
        assert!((r - 2.0).abs() < 1e-12);
    }

    #[test]
    fn nnls_exact_conic_combination() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 0.0, 1.0]);
        let b = DVector::from_vec(vec![2.0, 5.0, 3.0]);
        let (x, r) = nnls(&a, &b);
        assert!(r < 1e-12);
        assert!((x[0] - 2.0).abs() < 1e-12 && (x[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn simplex_small_problem() {
        // max 3x + 2y, x + y <= 4, x + 3y <= 6, x <= 3
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 1.0, 3.0, 1.0, 0.0]);
        match maximize(&[3.0, 2.0], &a, &[4.0, 6.0, 3.0]) {
            LpOutcome::Optimal { x, value } => {
                assert!((value - 11.0).abs() < 1e-12);
                assert!((x[0] - 3.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn simplex_unbounded() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, -1.0]);
        assert_eq!(maximize(&[0.0, 1.0], &a, &[1.0]), LpOutcome::Unbounded);
    }
}
