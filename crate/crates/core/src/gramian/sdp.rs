//! Small dense log-barrier interior-point solver for linear objectives under
//! affine linear matrix inequalities `F(y) = F0 + Σ y_i F_i ⪰ 0`.

use nalgebra::Cholesky;
use thiserror::Error;

use crate::linalg::{Matrix, Vector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SdpError {
    #[error("starting point is not strictly feasible")]
    InfeasibleStart,
    #[error("barrier method did not converge: {0}")]
    NoConvergence(String),
}

/// One affine matrix inequality.
#[derive(Debug, Clone)]
pub struct Lmi {
    pub f0: Matrix,
    pub fs: Vec<Matrix>,
}

impl Lmi {
    pub fn eval(&self, y: &Vector) -> Matrix {
        let mut f = self.f0.clone();
        for (yi, fi) in y.iter().zip(&self.fs) {
            if *yi != 0.0 {
                f += fi * *yi;
            }
        }
        f
    }

    fn dim(&self) -> usize {
        self.f0.nrows()
    }
}

#[derive(Debug, Clone)]
pub struct BarrierProblem {
    pub c: Vector,
    pub lmis: Vec<Lmi>,
}

pub struct BarrierOptions<'a> {
    pub t0: f64,
    pub growth: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    /// Relative duality-gap target `ν / t <= gap_tol * max(|cᵀy|, gap_floor)`.
    pub gap_tol: f64,
    pub gap_floor: f64,
    /// Checked after every accepted step; returning true stops immediately.
    pub early_stop: Option<&'a dyn Fn(&Vector) -> bool>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BarrierOutcome {
    pub y: Vector,
    pub outer_iterations: usize,
    pub newton_iterations: usize,
    pub gap: f64,
    pub barrier_value: f64,
    pub stopped_early: bool,
}

fn log_det(f: &Matrix) -> Option<f64> {
    let ch = Cholesky::new(f.clone())?;
    let l = ch.l_dirty();
    let mut s = 0.0;
    for i in 0..f.nrows() {
        let d = l[(i, i)];
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        s += d.ln();
    }
    Some(2.0 * s)
}

impl BarrierProblem {
    fn barrier_param(&self) -> f64 {
        self.lmis.iter().map(|l| l.dim() as f64).sum()
    }

    fn log_dets(&self, y: &Vector) -> Option<f64> {
        let mut v = 0.0;
        for lmi in &self.lmis {
            v += log_det(&lmi.eval(y))?;
        }
        Some(v)
    }

    /// `t cᵀy - Σ log det F_k(y)`, or `None` outside the interior.
    fn value(&self, y: &Vector, t: f64) -> Option<f64> {
        let mut v = t * self.c.dot(y);
        for lmi in &self.lmis {
            v -= log_det(&lmi.eval(y))?;
        }
        Some(v)
    }

    pub fn strictly_feasible(&self, y: &Vector) -> bool {
        self.lmis.iter().all(|l| log_det(&l.eval(y)).is_some())
    }

    fn gradient_hessian(&self, y: &Vector, t: f64) -> Option<(Vector, Matrix)> {
        let m = y.len();
        let mut grad = &self.c * t;
        let mut hess = Matrix::zeros(m, m);
        for lmi in &self.lmis {
            let n = lmi.dim();
            let f = lmi.eval(y);
            let finv = Cholesky::new(f)?.inverse();
            // Rows hold vec(G_i) and vec(G_iᵀ) with G_i = F⁻¹ F_i, so that
            // tr(G_i G_j) is an inner product of rows.
            let mut g = Matrix::zeros(m, n * n);
            let mut gt = Matrix::zeros(m, n * n);
            for (i, fi) in lmi.fs.iter().enumerate() {
                let gi = &finv * fi;
                grad[i] -= gi.trace();
                for (k, v) in gi.iter().enumerate() {
                    g[(i, k)] = *v;
                }
                for (k, v) in gi.transpose().iter().enumerate() {
                    gt[(i, k)] = *v;
                }
            }
            hess += &gt * g.transpose();
        }
        let hess = (&hess + hess.transpose()) * 0.5;
        Some((grad, hess))
    }
}

fn newton_direction(grad: &Vector, hess: &Matrix) -> Option<Vector> {
    if let Some(ch) = Cholesky::new(hess.clone()) {
        let d = ch.solve(&(-grad));
        if d.iter().all(|v| v.is_finite()) {
            return Some(d);
        }
    }
    // Regularised retry for numerically semidefinite Hessians.
    let scale = hess.diagonal().amax().max(1e-300);
    let mut reg = hess.clone();
    for i in 0..reg.nrows() {
        reg[(i, i)] += 1e-12 * scale;
    }
    let d = Cholesky::new(reg)?.solve(&(-grad));
    d.iter().all(|v| v.is_finite()).then_some(d)
}

/// Minimises `cᵀy` over the interior of all LMIs from a strictly feasible `y0`.
pub fn solve(problem: &BarrierProblem, y0: &Vector, opts: &BarrierOptions<'_>) -> Result<BarrierOutcome, SdpError> {
    if !problem.strictly_feasible(y0) {
        return Err(SdpError::InfeasibleStart);
    }
    let nu = problem.barrier_param();
    let mut y = y0.clone();
    let mut t = opts.t0;
    let mut out = BarrierOutcome::default();
    for outer in 0..opts.max_outer {
        out.outer_iterations = outer + 1;
        let mut centred = false;
        let mut last_decrement = f64::INFINITY;
        for _ in 0..opts.max_inner {
            let (grad, hess) = problem
                .gradient_hessian(&y, t)
                .ok_or_else(|| SdpError::NoConvergence("left the feasible interior".into()))?;
            let dir = newton_direction(&grad, &hess)
                .ok_or_else(|| SdpError::NoConvergence("Newton system is singular".into()))?;
            let slope = grad.dot(&dir);
            if -slope / 2.0 <= 1e-10 {
                centred = true;
                break;
            }
            let base = problem.log_dets(&y).ok_or_else(|| SdpError::NoConvergence("left the feasible interior".into()))?;
            let mut step = 1.0;
            let mut accepted = false;
            while step > 1e-14 {
                let trial = &y + &dir * step;
                if let Some(ld) = problem.log_dets(&trial) {
                    // Barrier change evaluated as a difference to avoid the
                    // large offset t cᵀy.
                    let change = t * step * problem.c.dot(&dir) - (ld - base);
                    if change <= 0.25 * step * slope {
                        y = trial;
                        accepted = true;
                        break;
                    }
                }
                step *= 0.5;
            }
            last_decrement = -slope / 2.0;
            out.newton_iterations += 1;
            if let Some(stop) = opts.early_stop {
                if stop(&y) {
                    out.y = y;
                    out.gap = nu / t;
                    out.barrier_value = problem.value(&out.y, t).unwrap_or(f64::NAN);
                    out.stopped_early = true;
                    return Ok(out);
                }
            }
            if !accepted {
                // No descent possible at working precision; treat as centred.
                centred = true;
                break;
            }
        }
        // Rounding noise in the gradient can keep the decrement slightly above
        // the target at large t; a nearly centred point is still usable.
        if !centred && last_decrement <= 1e-4 {
            centred = true;
        }
        if !centred {
            return Err(SdpError::NoConvergence(format!("centring failed at t = {t:e}")));
        }
        let objective = problem.c.dot(&y);
        out.gap = nu / t;
        if out.gap <= opts.gap_tol * objective.abs().max(opts.gap_floor) {
            out.y = y;
            out.barrier_value = problem.value(&out.y, t).unwrap_or(f64::NAN);
            return Ok(out);
        }
        t *= opts.growth;
    }
    Err(SdpError::NoConvergence(format!(
        "duality gap {:e} after {} outer iterations",
        out.gap, opts.max_outer
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn opts() -> BarrierOptions<'static> {
        BarrierOptions {
            t0: 1.0,
            growth: 10.0,
            max_outer: 50,
            max_inner: 200,
            gap_tol: 1e-10,
            gap_floor: 1.0,
            early_stop: None,
        }
    }

    #[test]
    fn scalar_linear_programme() {
        // minimise y subject to y - 2 >= 0 and 5 - y >= 0
        let p = BarrierProblem {
            c: Vector::from_element(1, 1.0),
            lmis: vec![
                Lmi { f0: dmatrix![-2.0], fs: vec![dmatrix![1.0]] },
                Lmi { f0: dmatrix![5.0], fs: vec![dmatrix![-1.0]] },
            ],
        };
        let out = solve(&p, &Vector::from_element(1, 3.0), &opts()).unwrap();
        assert!((out.y[0] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn smallest_eigenvalue_programme() {
        // maximise s subject to S - s I >= 0: optimum is λ_min(S) = 1.
        let s = dmatrix![2.0, 1.0; 1.0, 2.0];
        let p = BarrierProblem {
            c: Vector::from_element(1, -1.0),
            lmis: vec![Lmi { f0: s, fs: vec![-Matrix::identity(2, 2)] }],
        };
        let out = solve(&p, &Vector::from_element(1, 0.0), &opts()).unwrap();
        assert!((out.y[0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn rejects_infeasible_start() {
        let p = BarrierProblem {
            c: Vector::from_element(1, 1.0),
            lmis: vec![Lmi { f0: dmatrix![-2.0], fs: vec![dmatrix![1.0]] }],
        };
        assert_eq!(solve(&p, &Vector::from_element(1, 1.0), &opts()), Err(SdpError::InfeasibleStart));
    }
}
