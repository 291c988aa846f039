//! Adaptive Dormand–Prince 5(4) integration with an implicit trapezoidal
//! fallback for stiff stretches.

use log::debug;
use thiserror::Error;

use crate::linalg::{Matrix, Vector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError {
    #[error("time grid must be strictly increasing with at least one point")]
    BadGrid,
    #[error("state became non-finite at t = {0}")]
    NonFinite(f64),
    #[error("step size underflow at t = {0}")]
    StepUnderflow(f64),
    #[error("Newton iteration of the implicit step failed at t = {0}")]
    ImplicitFailure(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Explicit steps allowed before switching to the implicit scheme.
    pub max_explicit_steps: usize,
    pub max_implicit_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions { rtol: 1e-9, atol: 1e-12, max_explicit_steps: 500_000, max_implicit_steps: 200_000 }
    }
}

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

fn err_norm(err: &Vector, y0: &Vector, y1: &Vector, o: &OdeOptions) -> f64 {
    let n = err.len().max(1) as f64;
    let s: f64 = err
        .iter()
        .zip(y0.iter().zip(y1.iter()))
        .map(|(e, (a, b))| {
            let sc = o.atol + o.rtol * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    (s / n).sqrt()
}

fn check_finite(y: &Vector, t: f64) -> Result<(), OdeError> {
    if y.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(OdeError::NonFinite(t))
    }
}

/// Integrates `y' = f(t, y)` and returns the state at every grid point
/// (the first entry is `y0` at `grid[0]`).
pub fn integrate<F, E>(mut rhs: F, grid: &[f64], y0: &Vector, opts: &OdeOptions) -> Result<Vec<Vector>, E>
where
    F: FnMut(f64, &Vector) -> Result<Vector, E>,
    E: From<OdeError>,
{
    if grid.is_empty() || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(OdeError::BadGrid.into());
    }
    let t_end = grid[grid.len() - 1];
    let span = (t_end - grid[0]).max(f64::MIN_POSITIVE);
    let h_min = 1e-12 * span;
    let mut out = Vec::with_capacity(grid.len());
    out.push(y0.clone());
    let mut t = grid[0];
    let mut y = y0.clone();
    let mut k1 = rhs(t, &y)?;
    check_finite(&k1, t)?;
    let mut h = initial_step(&y, &k1, span, opts);
    let mut stiff = false;
    let mut explicit_steps = 0usize;
    let mut implicit_steps = 0usize;
    let mut h_implicit = h;
    for &target in &grid[1..] {
        while t < target {
            let remaining = target - t;
            if stiff {
                let step = h_implicit.min(remaining);
                let (y_new, h_next, accepted) = trapezoid_step(&mut rhs, t, &y, &k1, step, opts)?;
                implicit_steps += 1;
                if implicit_steps > opts.max_implicit_steps {
                    return Err(OdeError::StepUnderflow(t).into());
                }
                if accepted {
                    t = if step >= remaining { target } else { t + step };
                    y = y_new;
                    k1 = rhs(t, &y)?;
                    check_finite(&k1, t)?;
                }
                h_implicit = h_next.max(h_min);
                if !accepted && step <= h_min {
                    return Err(OdeError::StepUnderflow(t).into());
                }
                continue;
            }
            let step = h.min(remaining);
            let mut k = [k1.clone(), k1.clone(), k1.clone(), k1.clone(), k1.clone(), k1.clone(), k1.clone()];
            for s in 1..7 {
                let mut ys = y.clone();
                for (j, kj) in k.iter().enumerate().take(s) {
                    if A[s][j] != 0.0 {
                        ys.axpy(step * A[s][j], kj, 1.0);
                    }
                }
                k[s] = rhs(t + C[s] * step, &ys)?;
            }
            let mut y_new = y.clone();
            for (j, kj) in k.iter().enumerate().take(6) {
                if A[6][j] != 0.0 {
                    y_new.axpy(step * A[6][j], kj, 1.0);
                }
            }
            let mut err = Vector::zeros(y.len());
            for (j, kj) in k.iter().enumerate() {
                if E[j] != 0.0 {
                    err.axpy(step * E[j], kj, 1.0);
                }
            }
            explicit_steps += 1;
            let en = err_norm(&err, &y, &y_new, opts);
            let finite = y_new.iter().all(|v| v.is_finite()) && en.is_finite();
            if finite && en <= 1.0 {
                t = if step >= remaining { target } else { t + step };
                y = y_new;
                k1 = k[6].clone();
                let fac = if en == 0.0 { 5.0 } else { (0.9 * en.powf(-0.2)).clamp(0.2, 5.0) };
                h = step * fac;
            } else {
                let fac = if finite { (0.9 * en.powf(-0.2)).clamp(0.1, 0.9) } else { 0.1 };
                h = step * fac;
            }
            if h < h_min || explicit_steps > opts.max_explicit_steps {
                debug!("switching to implicit trapezoid at t = {t:e} (h = {h:e}, steps = {explicit_steps})");
                stiff = true;
                h_implicit = h.max(1e-6 * span);
            }
        }
        check_finite(&y, t)?;
        out.push(y.clone());
    }
    Ok(out)
}

fn initial_step(y: &Vector, f: &Vector, span: f64, o: &OdeOptions) -> f64 {
    let d0 = y.iter().map(|v| (v / (o.atol + o.rtol * v.abs())).powi(2)).sum::<f64>().sqrt();
    let d1 = y
        .iter()
        .zip(f.iter())
        .map(|(v, fv)| (fv / (o.atol + o.rtol * v.abs())).powi(2))
        .sum::<f64>()
        .sqrt();
    let h = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h.min(0.1 * span).max(1e-12 * span)
}

fn fd_jacobian<F, E>(rhs: &mut F, t: f64, y: &Vector, f0: &Vector) -> Result<Matrix, E>
where
    F: FnMut(f64, &Vector) -> Result<Vector, E>,
{
    let n = y.len();
    let mut j = Matrix::zeros(n, n);
    for c in 0..n {
        let dh = 1e-7 * (1.0 + y[c].abs());
        let mut yp = y.clone();
        yp[c] += dh;
        let fp = rhs(t, &yp)?;
        j.set_column(c, &((fp - f0) / dh));
    }
    Ok(j)
}

/// One implicit trapezoid step solved by Newton with a finite-difference Jacobian.
fn trapezoid<F, E>(rhs: &mut F, t: f64, y: &Vector, f_start: &Vector, h: f64) -> Result<Option<Vector>, E>
where
    F: FnMut(f64, &Vector) -> Result<Vector, E>,
{
    let n = y.len();
    let mut x = y + f_start * h;
    let f_end = rhs(t + h, &x)?;
    let jac = fd_jacobian(rhs, t + h, &x, &f_end)?;
    let lhs = Matrix::identity(n, n) - jac * (0.5 * h);
    let lu = lhs.lu();
    for _ in 0..50 {
        let g = &x - y - (f_start + rhs(t + h, &x)?) * (0.5 * h);
        let dx = match lu.solve(&g) {
            Some(d) => d,
            None => return Ok(None),
        };
        x -= &dx;
        if !x.iter().all(|v| v.is_finite()) {
            return Ok(None);
        }
        if dx.norm() <= 1e-13 * (1.0 + x.norm()) {
            return Ok(Some(x));
        }
    }
    Ok(None)
}

/// Step-doubling error control: one step of size `h` against two of `h/2`.
fn trapezoid_step<F, E>(rhs: &mut F, t: f64, y: &Vector, f0: &Vector, h: f64, o: &OdeOptions) -> Result<(Vector, f64, bool), E>
where
    F: FnMut(f64, &Vector) -> Result<Vector, E>,
    E: From<OdeError>,
{
    let full = trapezoid(rhs, t, y, f0, h)?;
    let half = match trapezoid(rhs, t, y, f0, 0.5 * h)? {
        Some(m) => {
            let fm = rhs(t + 0.5 * h, &m)?;
            trapezoid(rhs, t + 0.5 * h, &m, &fm, 0.5 * h)?
        }
        None => None,
    };
    match (full, half) {
        (Some(a), Some(b)) => {
            let err = (&b - &a) / 3.0;
            let en = err_norm(&err, y, &b, o);
            let fac = if en == 0.0 { 4.0 } else { (0.9 * en.powf(-1.0 / 3.0)).clamp(0.2, 4.0) };
            Ok((&b + &err, h * fac, en <= 1.0))
        }
        _ => {
            if h <= f64::MIN_POSITIVE {
                return Err(OdeError::ImplicitFailure(t).into());
            }
            Ok((y.clone(), 0.25 * h, false))
        }
    }
}

/// Evenly spaced grid with `n` intervals on `[0, horizon]`.
pub fn uniform_grid(horizon: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|i| horizon * i as f64 / n as f64).collect()
}

/// Packs the upper triangle of a symmetric matrix row by row.
pub fn pack_sym(p: &Matrix) -> Vector {
    let n = p.nrows();
    let mut v = Vector::zeros(n * (n + 1) / 2);
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            v[k] = p[(i, j)];
            k += 1;
        }
    }
    v
}

pub fn unpack_sym(v: &[f64], n: usize) -> Matrix {
    let mut p = Matrix::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            p[(i, j)] = v[k];
            p[(j, i)] = v[k];
            k += 1;
        }
    }
    p
}
