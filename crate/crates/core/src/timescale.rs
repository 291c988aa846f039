//! Time-scale separation of the linear noise approximation.
//!
//! With the state split into slow `x₁` and fast `x₂` components, the fast
//! variables are integrated out: `ż = g₁(z, ẑ(z))` where `ẑ(z)` solves
//! `g₂(z, ẑ) = 0`, and the fluctuations follow `ξ̇ = A_r ξ + B_r ẇ` with
//! `A_r = A₁₁ - A₁₂ A₂₂⁻¹ A₂₁` and `B_r = B₁ - A₁₂ A₂₂⁻¹ B₂`.

use log::warn;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::expr::EvalError;
use crate::linalg::{self, LinalgError, Matrix, Vector};
use crate::network::{newton, LnaField, NetworkError};
use crate::ode::{self, OdeError, OdeOptions};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TimescaleError {
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("fast subsystem root not found (residual {0:e})")]
    FastRootNotFound(f64),
    #[error("fast Jacobian block is singular")]
    SingularFastJacobian,
    #[error("evaluation failed: {0}")]
    Eval(#[from] EvalError),
    #[error("integration failed: {0}")]
    Ode(#[from] OdeError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

impl From<NetworkError> for TimescaleError {
    fn from(e: NetworkError) -> Self {
        match e {
            NetworkError::SingularJacobian => TimescaleError::SingularFastJacobian,
            NetworkError::NoConvergence { residual } => TimescaleError::FastRootNotFound(residual),
            NetworkError::Eval(e) => TimescaleError::Eval(e),
            NetworkError::Linalg(e) => TimescaleError::Linalg(e),
            _ => TimescaleError::FastRootNotFound(f64::NAN),
        }
    }
}

/// A field with its state split into slow and fast indices.
#[derive(Debug, Clone)]
pub struct PartitionedLna<'a, F: LnaField> {
    pub base: &'a F,
    pub slow: Vec<usize>,
    pub fast: Vec<usize>,
    pub epsilon: f64,
}

impl<'a, F: LnaField> PartitionedLna<'a, F> {
    pub fn new(base: &'a F, slow: Vec<usize>, fast: Vec<usize>, epsilon: f64) -> Result<Self, TimescaleError> {
        check_partition(base.dim(), &slow, &fast)?;
        if !(epsilon > 0.0) {
            return Err(TimescaleError::InvalidPartition("epsilon must be positive".into()));
        }
        Ok(PartitionedLna { base, slow, fast, epsilon })
    }
}

fn check_partition(n: usize, slow: &[usize], fast: &[usize]) -> Result<(), TimescaleError> {
    let mut seen = vec![false; n];
    for &i in slow.iter().chain(fast) {
        if i >= n || seen[i] {
            return Err(TimescaleError::InvalidPartition(format!("index {i} repeated or out of range")));
        }
        seen[i] = true;
    }
    if seen.iter().any(|s| !s) {
        return Err(TimescaleError::InvalidPartition("slow and fast sets do not cover the state".into()));
    }
    Ok(())
}

/// Reduced slow model obtained by averaging out the fast variables.
#[derive(Debug, Clone)]
pub struct AveragedModel<'a, F: LnaField> {
    pub field: &'a F,
    pub slow: Vec<usize>,
    pub fast: Vec<usize>,
}

pub fn average<'a, F: LnaField>(p: &PartitionedLna<'a, F>) -> AveragedModel<'a, F> {
    AveragedModel { field: p.base, slow: p.slow.clone(), fast: p.fast.clone() }
}

impl<'a, F: LnaField> AveragedModel<'a, F> {
    pub fn new(field: &'a F, slow: Vec<usize>, fast: Vec<usize>) -> Result<Self, TimescaleError> {
        check_partition(field.dim(), &slow, &fast)?;
        Ok(AveragedModel { field, slow, fast })
    }

    pub fn assemble(&self, z: &Vector, u: &Vector) -> Vector {
        let mut x = Vector::zeros(self.field.dim());
        for (k, &i) in self.slow.iter().enumerate() {
            x[i] = z[k];
        }
        for (k, &i) in self.fast.iter().enumerate() {
            x[i] = u[k];
        }
        x
    }

    pub fn split(&self, x: &Vector) -> (Vector, Vector) {
        (
            Vector::from_iterator(self.slow.len(), self.slow.iter().map(|&i| x[i])),
            Vector::from_iterator(self.fast.len(), self.fast.iter().map(|&i| x[i])),
        )
    }

    /// Root `ẑ` of `g₂(z, ·) = 0` by damped Newton from `guess`.
    pub fn fast_root(&self, z: &Vector, guess: &Vector) -> Result<Vector, TimescaleError> {
        if self.fast.is_empty() {
            return Ok(Vector::zeros(0));
        }
        let g = |u: &Vector| -> Result<Vector, EvalError> {
            let d = self.field.drift(&self.assemble(z, u))?;
            Ok(Vector::from_iterator(self.fast.len(), self.fast.iter().map(|&i| d[i])))
        };
        let j = |u: &Vector| -> Result<Matrix, EvalError> {
            let a = self.field.jacobian(&self.assemble(z, u))?;
            Ok(linalg::select(&a, &self.fast, &self.fast))
        };
        let root = newton(guess, 200, g, j)?;
        Ok(root)
    }

    /// `g₁(z, ẑ(z))` together with the root used.
    pub fn slow_field(&self, z: &Vector, guess: &Vector) -> Result<(Vector, Vector), TimescaleError> {
        let u = self.fast_root(z, guess)?;
        let d = self.field.drift(&self.assemble(z, &u))?;
        Ok((Vector::from_iterator(self.slow.len(), self.slow.iter().map(|&i| d[i])), u))
    }

    /// `(A_r, B_r)` evaluated at the full state `x`.
    pub fn reduced_matrices(&self, x: &Vector) -> Result<(Matrix, Matrix), TimescaleError> {
        let a = self.field.jacobian(x)?;
        let b = self.field.diffusion(x)?;
        reduce_blocks(&a, &b, &self.slow, &self.fast)
    }
}

/// Schur-complement elimination of the `fast` block.
pub fn reduce_blocks(a: &Matrix, b: &Matrix, slow: &[usize], fast: &[usize]) -> Result<(Matrix, Matrix), TimescaleError> {
    let all: Vec<usize> = (0..b.ncols()).collect();
    let a11 = linalg::select(a, slow, slow);
    let b1 = linalg::select(b, slow, &all);
    if fast.is_empty() {
        return Ok((a11, b1));
    }
    let a12 = linalg::select(a, slow, fast);
    let a21 = linalg::select(a, fast, slow);
    let a22 = linalg::select(a, fast, fast);
    let b2 = linalg::select(b, fast, &all);
    if crate::network::is_singular(&a22) {
        return Err(TimescaleError::SingularFastJacobian);
    }
    let x_a = linalg::solve(&a22, &a21).map_err(|_| TimescaleError::SingularFastJacobian)?;
    let x_b = linalg::solve(&a22, &b2).map_err(|_| TimescaleError::SingularFastJacobian)?;
    Ok((a11 - &a12 * x_a, b1 - &a12 * x_b))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub mean_err: f64,
    pub ms_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub mean_slope: f64,
    pub ms_slope: f64,
    /// Grid points at which `A₂₂` of the full model was not stable.
    pub a22_unstable_points: usize,
}

impl SweepResult {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epsilon,mean_err,ms_err\n");
        for r in &self.rows {
            s.push_str(&format!("{:e},{:e},{:e}\n", r.epsilon, r.mean_err, r.ms_err));
        }
        s
    }
}

/// Least-squares slope of `log y` against `log x`; points with `y <= 0` are skipped.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = x.iter().zip(y).filter(|(a, b)| **a > 0.0 && **b > 0.0).map(|(a, b)| (a.ln(), b.ln())).collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

struct SweepPoint {
    row: SweepRow,
    a22_unstable: usize,
}

/// Errors of the averaged model against the ε-scaled full model for one ε.
///
/// The state integrated jointly is `[x₁, x₂, z, vec Π]` where `Π` is the
/// covariance of the stacked fluctuation vector `[η₁, η₂, ξ]` driven by one
/// shared Wiener process; the mean-square error is read off `Π` exactly.
fn sweep_point<F: LnaField>(
    model: &AveragedModel<'_, F>,
    x0: &Vector,
    epsilon: f64,
    grid: &[f64],
    opts: &OdeOptions,
) -> Result<SweepPoint, TimescaleError> {
    let (n1, n2) = (model.slow.len(), model.fast.len());
    let n = n1 + n2;
    let ns = n + n1;
    let (z0, u0) = model.split(x0);
    let mut guess = model.fast_root(&z0, &u0)?;
    let packed = ns * (ns + 1) / 2;
    let mut y0 = Vector::zeros(n + n1 + packed);
    y0.rows_mut(0, n1).copy_from(&z0);
    y0.rows_mut(n1, n2).copy_from(&u0);
    y0.rows_mut(n, n1).copy_from(&z0);
    let inv_sqrt = epsilon.sqrt().recip();
    let rhs = |_t: f64, y: &Vector| -> Result<Vector, TimescaleError> {
        let x1 = y.rows(0, n1).clone_owned();
        let x2 = y.rows(n1, n2).clone_owned();
        let z = y.rows(n, n1).clone_owned();
        let x = model.assemble(&x1, &x2);
        let g = model.field.drift(&x)?;
        let a = model.field.jacobian(&x)?;
        let b = model.field.diffusion(&x)?;
        let (gz, root) = model.slow_field(&z, &guess)?;
        guess = root.clone();
        let (ar, br) = model.reduced_matrices(&model.assemble(&z, &root))?;
        let m = b.ncols();
        // Stacked drift and diffusion of [η₁; η₂; ξ].
        let mut big_a = Matrix::zeros(ns, ns);
        let mut big_b = Matrix::zeros(ns, m);
        for (r, &i) in model.slow.iter().enumerate() {
            for (c, &j) in model.slow.iter().enumerate() {
                big_a[(r, c)] = a[(i, j)];
            }
            for (c, &j) in model.fast.iter().enumerate() {
                big_a[(r, n1 + c)] = inv_sqrt * a[(i, j)];
            }
            for k in 0..m {
                big_b[(r, k)] = b[(i, k)];
            }
        }
        for (r, &i) in model.fast.iter().enumerate() {
            for (c, &j) in model.slow.iter().enumerate() {
                big_a[(n1 + r, c)] = inv_sqrt * a[(i, j)];
            }
            for (c, &j) in model.fast.iter().enumerate() {
                big_a[(n1 + r, n1 + c)] = a[(i, j)] / epsilon;
            }
            for k in 0..m {
                big_b[(n1 + r, k)] = inv_sqrt * b[(i, k)];
            }
        }
        big_a.view_mut((n, n), (n1, n1)).copy_from(&ar);
        big_b.view_mut((n, 0), (n1, m)).copy_from(&br);
        let pi = ode::unpack_sym(&y.as_slice()[n + n1..], ns);
        let dpi = &big_a * &pi + &pi * big_a.transpose() + &big_b * big_b.transpose();
        let mut dy = Vector::zeros(y.len());
        for (r, &i) in model.slow.iter().enumerate() {
            dy[r] = g[i];
        }
        for (r, &i) in model.fast.iter().enumerate() {
            dy[n1 + r] = g[i] / epsilon;
        }
        dy.rows_mut(n, n1).copy_from(&gz);
        dy.rows_mut(n + n1, packed).copy_from(&ode::pack_sym(&dpi));
        Ok(dy)
    };
    let ys = ode::integrate(rhs, grid, &y0, opts)?;
    let mut mean_err: f64 = 0.0;
    let mut ms_err: f64 = 0.0;
    let mut a22_unstable = 0;
    for y in &ys {
        let x1 = y.rows(0, n1);
        let z = y.rows(n, n1);
        mean_err = mean_err.max((x1 - z).norm());
        let pi = ode::unpack_sym(&y.as_slice()[n + n1..], ns);
        let mut e = 0.0;
        for i in 0..n1 {
            e += pi[(i, i)] + pi[(n + i, n + i)] - 2.0 * pi[(i, n + i)];
        }
        ms_err = ms_err.max(e);
        let x = model.assemble(&x1.clone_owned(), &y.rows(n1, n2).clone_owned());
        if n2 > 0 {
            let a22 = linalg::select(&model.field.jacobian(&x)?, &model.fast, &model.fast);
            if !linalg::is_stable(&a22) {
                a22_unstable += 1;
            }
        }
    }
    Ok(SweepPoint { row: SweepRow { epsilon, mean_err, ms_err }, a22_unstable })
}

/// Runs the ε-sweep on `grid`, computing each ε independently (in parallel)
/// and reporting rows in input order with fitted log-log slopes.
pub fn epsilon_sweep<F: LnaField>(
    model: &AveragedModel<'_, F>,
    x0: &Vector,
    epsilons: &[f64],
    grid: &[f64],
    opts: &OdeOptions,
) -> Result<SweepResult, TimescaleError> {
    if epsilons.iter().any(|e| !(*e > 0.0)) {
        return Err(TimescaleError::InvalidPartition("epsilon values must be positive".into()));
    }
    let points: Vec<SweepPoint> = epsilons
        .par_iter()
        .map(|&eps| sweep_point(model, x0, eps, grid, opts))
        .collect::<Result<_, _>>()?;
    let a22_unstable_points = points.iter().map(|p| p.a22_unstable).sum();
    if a22_unstable_points > 0 {
        warn!("fast Jacobian block lost stability at {a22_unstable_points} grid points");
    }
    let rows: Vec<SweepRow> = points.into_iter().map(|p| p.row).collect();
    let eps: Vec<f64> = rows.iter().map(|r| r.epsilon).collect();
    let mean: Vec<f64> = rows.iter().map(|r| r.mean_err).collect();
    let ms: Vec<f64> = rows.iter().map(|r| r.ms_err).collect();
    Ok(SweepResult { mean_slope: loglog_slope(&eps, &mean), ms_slope: loglog_slope(&eps, &ms), rows, a22_unstable_points })
}
