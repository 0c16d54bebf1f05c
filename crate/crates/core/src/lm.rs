//! Levenberg-Marquardt over a retraction, shared by the scaling solvers
//! (Euclidean parameters) and the rotation search (the orthogonal group).

use nalgebra::{DMatrix, DVector};

pub(crate) trait LeastSquares {
    type Point: Clone;

    fn residuals(&self, x: &Self::Point) -> DVector<f64>;

    /// Derivative of the residuals along the chart coordinates at `x`.
    fn jacobian(&self, x: &Self::Point) -> DMatrix<f64>;

    fn retract(&self, x: &Self::Point, step: &DVector<f64>) -> Self::Point;
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LmOptions {
    pub max_iters: usize,
    /// Converged once every residual is at most this in absolute value.
    pub stop_tol: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct LmReport<P> {
    pub point: P,
    pub iterations: usize,
}

fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |a, x| a.max(x.abs()))
}

pub(crate) fn levenberg_marquardt<L: LeastSquares>(
    problem: &L,
    start: L::Point,
    opts: LmOptions,
) -> LmReport<L::Point> {
    let mut x = start;
    let mut r = problem.residuals(&x);
    let mut cost = r.norm_squared();
    let mut lambda = -1.0;
    let mut iterations = 0;

    while iterations < opts.max_iters && max_abs(&r) > opts.stop_tol {
        let jac = problem.jacobian(&x);
        if jac.ncols() == 0 {
            break;
        }
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &r;
        if grad.norm() == 0.0 {
            break;
        }
        let dmax = jtj.diagonal().max().max(f64::MIN_POSITIVE);
        if lambda < 0.0 {
            lambda = 1e-3;
        }
        let scale = jtj.diagonal().map(|d| d.max(1e-9 * dmax));
        let mut accepted = false;
        while lambda < 1e16 {
            let mut system = jtj.clone();
            for i in 0..system.nrows() {
                system[(i, i)] += lambda * scale[i];
            }
            let step = match system.clone().cholesky() {
                Some(ch) => ch.solve(&(-&grad)),
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let candidate = problem.retract(&x, &step);
            let r_new = problem.residuals(&candidate);
            let cost_new = r_new.norm_squared();
            if cost_new.is_finite() && cost_new < cost {
                x = candidate;
                r = r_new;
                cost = cost_new;
                lambda = (lambda * 0.3).max(1e-15);
                accepted = true;
                break;
            }
            lambda *= 10.0;
        }
        iterations += 1;
        if !accepted {
            break;
        }
    }
    LmReport {
        point: x,
        iterations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Rosenbrock;

    impl LeastSquares for Rosenbrock {
        type Point = DVector<f64>;
        fn residuals(&self, x: &DVector<f64>) -> DVector<f64> {
            DVector::from_vec(vec![10.0 * (x[1] - x[0] * x[0]), 1.0 - x[0]])
        }
        fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::from_row_slice(2, 2, &[-20.0 * x[0], 10.0, -1.0, 0.0])
        }
        fn retract(&self, x: &DVector<f64>, step: &DVector<f64>) -> DVector<f64> {
            x + step
        }
    }

    #[test]
    fn solves_rosenbrock() {
        let opts = LmOptions {
            max_iters: 200,
            stop_tol: 1e-12,
        };
        let rep = levenberg_marquardt(&Rosenbrock, DVector::from_vec(vec![-1.2, 1.0]), opts);
        assert!(max_abs(&Rosenbrock.residuals(&rep.point)) <= 1e-12);
        assert!((rep.point[0] - 1.0).abs() < 1e-10);
    }
}
