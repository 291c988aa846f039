//! Dense linear-algebra kernels shared by the rest of the crate.
//!
//! Everything here works on `nalgebra` dynamic matrices. Decompositions are
//! post-processed so that repeated calls on the same input produce the same
//! output bit for bit (eigenvalue ordering, singular-vector signs).

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen, LU, SVD};
use num_complex::Complex64;
use thiserror::Error;

/// Real dense matrix used throughout the crate.
pub type Matrix = DMatrix<f64>;
/// Real dense column vector.
pub type Vector = DVector<f64>;

/// Absolute floor applied to every relative tolerance.
pub const ABS_FLOOR: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not stable (max real part of spectrum {max_real:e})")]
    NotStable { max_real: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("iteration did not converge: {0}")]
    NoConvergence(&'static str),
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("matrix is singular")]
    Singular,
    #[error("matrix has non-finite entries")]
    NonFinite,
}

pub type Result<T> = std::result::Result<T, LinalgError>;

/// Eigenvalues with matching (complex) eigenvectors stored column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    pub values: Vec<Complex64>,
    pub vectors: DMatrix<Complex64>,
}

/// Thin singular value decomposition `A = U diag(s) Vᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Svd {
    pub u: Matrix,
    pub singular_values: Vector,
    pub v: Matrix,
}

impl Svd {
    pub fn s_matrix(&self) -> Matrix {
        Matrix::from_diagonal(&self.singular_values)
    }
}

pub fn ensure_finite(a: &Matrix) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(LinalgError::NonFinite)
    }
}

fn ensure_square(a: &Matrix, what: &str) -> Result<()> {
    if a.is_square() {
        Ok(())
    } else {
        Err(LinalgError::DimensionMismatch(format!(
            "{what} must be square, got {}x{}",
            a.nrows(),
            a.ncols()
        )))
    }
}

/// Spectral norm (largest singular value).
pub fn norm2(a: &Matrix) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone().svd(false, false).singular_values.max()
}

pub fn symmetrize(a: &Matrix) -> Matrix {
    (a + a.transpose()) * 0.5
}

pub fn is_symmetric(a: &Matrix, rel_tol: f64) -> bool {
    if !a.is_square() {
        return false;
    }
    let scale = a.amax().max(ABS_FLOOR);
    (a - a.transpose()).amax() <= rel_tol * scale
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(a: &Matrix) -> Vector {
    let mut vals: Vec<f64> = SymmetricEigen::new(symmetrize(a)).eigenvalues.iter().copied().collect();
    vals.sort_by(f64::total_cmp);
    Vector::from_vec(vals)
}

pub fn lambda_max_sym(a: &Matrix) -> f64 {
    if a.is_empty() {
        return f64::NEG_INFINITY;
    }
    sym_eigenvalues(a).max()
}

pub fn lambda_min_sym(a: &Matrix) -> f64 {
    if a.is_empty() {
        return f64::INFINITY;
    }
    sym_eigenvalues(a).min()
}

/// Symmetric eigendecomposition with eigenvalues descending and each
/// eigenvector's largest-magnitude entry made positive.
pub fn sym_eig_desc(a: &Matrix) -> (Vector, Matrix) {
    let eig = SymmetricEigen::new(symmetrize(a));
    let n = a.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
    let values = Vector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut col = eig.eigenvectors.column(src).clone_owned();
        fix_sign(&mut col);
        vectors.set_column(dst, &col);
    }
    (values, vectors)
}

fn fix_sign(col: &mut Vector) {
    let mut best = 0usize;
    for i in 0..col.len() {
        if col[i].abs() > col[best].abs() {
            best = i;
        }
    }
    if col.len() > 0 && col[best] < 0.0 {
        col.neg_mut();
    }
}

/// Eigenvalues only, sorted by descending real part then descending imaginary part.
pub fn eigenvalues(a: &Matrix) -> Result<Vec<Complex64>> {
    ensure_square(a, "A")?;
    ensure_finite(a)?;
    if a.is_empty() {
        return Ok(Vec::new());
    }
    let schur = a
        .clone()
        .try_schur(f64::EPSILON, 10_000)
        .ok_or(LinalgError::NoConvergence("real Schur decomposition"))?;
    let mut vals: Vec<Complex64> = schur.complex_eigenvalues().iter().copied().collect();
    sort_spectrum(&mut vals);
    Ok(vals)
}

fn sort_spectrum(vals: &mut [Complex64]) {
    vals.sort_by(|x, y| y.re.total_cmp(&x.re).then(y.im.total_cmp(&x.im)));
}

/// Full eigendecomposition of a general real matrix.
///
/// Eigenvalues come from the real Schur form; each eigenvector is recovered by
/// inverse iteration on the shifted complex matrix.
pub fn eig(a: &Matrix) -> Result<SpectralDecomposition> {
    let values = eigenvalues(a)?;
    let n = a.nrows();
    let ac: DMatrix<Complex64> = a.map(|v| Complex64::new(v, 0.0));
    let scale = a.amax().max(1.0);
    let mut vectors = DMatrix::<Complex64>::zeros(n, n);
    for (k, &lambda) in values.iter().enumerate() {
        // A tiny perturbation of the shift keeps the LU factorization nonsingular.
        let shift = lambda + Complex64::new(1e-10 * scale, 1e-10 * scale);
        let mut shifted = ac.clone();
        for i in 0..n {
            shifted[(i, i)] -= shift;
        }
        let lu = LU::new(shifted);
        let mut x = DVector::<Complex64>::from_iterator(
            n,
            (0..n).map(|i| Complex64::new(1.0 + 0.1 * i as f64, 0.0)),
        );
        for _ in 0..3 {
            match lu.solve(&x) {
                Some(y) => {
                    let nrm = y.norm();
                    if !nrm.is_finite() || nrm == 0.0 {
                        return Err(LinalgError::NoConvergence("inverse iteration"));
                    }
                    x = y / Complex64::new(nrm, 0.0);
                }
                None => return Err(LinalgError::NoConvergence("inverse iteration")),
            }
        }
        // Normalise the phase so the largest entry is real and positive.
        let mut best = 0;
        for i in 0..n {
            if x[i].norm() > x[best].norm() {
                best = i;
            }
        }
        let phase = x[best] / Complex64::new(x[best].norm(), 0.0);
        x /= phase;
        vectors.set_column(k, &x);
    }
    Ok(SpectralDecomposition { values, vectors })
}

pub fn max_real_eigenvalue(a: &Matrix) -> Result<f64> {
    Ok(eigenvalues(a)?.first().map(|z| z.re).unwrap_or(f64::NEG_INFINITY))
}

/// Stability test used everywhere: max real part `< -1e-12 ‖A‖`.
pub fn check_stable(a: &Matrix) -> Result<()> {
    let max_real = max_real_eigenvalue(a)?;
    if max_real < -1e-12 * norm2(a).max(ABS_FLOOR) {
        Ok(())
    } else {
        Err(LinalgError::NotStable { max_real })
    }
}

pub fn is_stable(a: &Matrix) -> bool {
    check_stable(a).is_ok()
}

/// Singular value decomposition with descending singular values and a fixed
/// sign convention (largest-magnitude entry of every `U` column positive).
pub fn svd(a: &Matrix) -> Result<Svd> {
    ensure_finite(a)?;
    let (m, n) = a.shape();
    let k = m.min(n);
    if k == 0 {
        return Ok(Svd { u: Matrix::zeros(m, 0), singular_values: Vector::zeros(0), v: Matrix::zeros(n, 0) });
    }
    let dec = SVD::try_new(a.clone(), true, true, f64::EPSILON, 10_000)
        .ok_or(LinalgError::NoConvergence("singular value decomposition"))?;
    let u_raw = dec.u.ok_or(LinalgError::NoConvergence("singular vectors"))?;
    let vt_raw = dec.v_t.ok_or(LinalgError::NoConvergence("singular vectors"))?;
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| dec.singular_values[j].total_cmp(&dec.singular_values[i]).then(i.cmp(&j)));
    let mut u = Matrix::zeros(m, k);
    let mut v = Matrix::zeros(n, k);
    let mut s = Vector::zeros(k);
    for (dst, &src) in order.iter().enumerate() {
        let mut uc = u_raw.column(src).clone_owned();
        let mut vc = vt_raw.row(src).transpose();
        let mut best = 0;
        for i in 0..m {
            if uc[i].abs() > uc[best].abs() {
                best = i;
            }
        }
        if uc[best] < 0.0 {
            uc.neg_mut();
            vc.neg_mut();
        }
        u.set_column(dst, &uc);
        v.set_column(dst, &vc);
        s[dst] = dec.singular_values[src];
    }
    Ok(Svd { u, singular_values: s, v })
}

/// Lower-triangular `L` with `L Lᵀ = P`.
pub fn cholesky_factor(p: &Matrix) -> Result<Matrix> {
    ensure_square(p, "P")?;
    ensure_finite(p)?;
    if !is_symmetric(p, 1e-10) {
        return Err(LinalgError::NotPositiveDefinite);
    }
    Cholesky::new(symmetrize(p))
        .map(|c| c.l())
        .ok_or(LinalgError::NotPositiveDefinite)
}

pub fn is_positive_definite(p: &Matrix) -> bool {
    p.is_square() && Cholesky::new(symmetrize(p)).is_some()
}

pub fn inverse(a: &Matrix) -> Result<Matrix> {
    ensure_square(a, "A")?;
    if a.is_empty() {
        return Ok(a.clone());
    }
    let inv = a.clone().try_inverse().ok_or(LinalgError::Singular)?;
    if inv.iter().all(|v| v.is_finite()) {
        Ok(inv)
    } else {
        Err(LinalgError::Singular)
    }
}

pub fn solve(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    ensure_square(a, "A")?;
    if a.nrows() != b.nrows() {
        return Err(LinalgError::DimensionMismatch("solve: row counts differ".into()));
    }
    if a.is_empty() {
        return Ok(b.clone());
    }
    let x = LU::new(a.clone()).solve(b).ok_or(LinalgError::Singular)?;
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(LinalgError::Singular)
    }
}

pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = Matrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[(i, j)];
            if aij == 0.0 {
                continue;
            }
            for k in 0..br {
                for l in 0..bc {
                    out[(i * br + k, j * bc + l)] = aij * b[(k, l)];
                }
            }
        }
    }
    out
}

/// Solves `A P + P Aᵀ + M = 0` for stable `A`.
///
/// The equation is vectorised as `(I ⊗ A + A ⊗ I) vec(P) = -vec(M)` and solved
/// with a dense LU factorization. Intended for `n <= 64`.
pub fn solve_lyapunov(a: &Matrix, m: &Matrix) -> Result<Matrix> {
    ensure_square(a, "A")?;
    ensure_square(m, "M")?;
    ensure_finite(a)?;
    ensure_finite(m)?;
    let n = a.nrows();
    if m.nrows() != n {
        return Err(LinalgError::DimensionMismatch(format!(
            "A is {n}x{n} but M is {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if !is_symmetric(m, 1e-10) {
        return Err(LinalgError::DimensionMismatch("M must be symmetric".into()));
    }
    if n == 0 {
        return Ok(Matrix::zeros(0, 0));
    }
    check_stable(a)?;
    let eye = Matrix::identity(n, n);
    let k = kron(&eye, a) + kron(a, &eye);
    // Column-major storage makes `as_slice` exactly vec(M).
    let rhs = -Vector::from_column_slice(m.as_slice());
    let x = LU::new(k).solve(&rhs).ok_or(LinalgError::Singular)?;
    let p = Matrix::from_column_slice(n, n, x.as_slice());
    Ok(symmetrize(&p))
}

/// Relative residual `‖A P + P Aᵀ + M‖ / (2‖A‖‖P‖ + ‖M‖)`.
pub fn lyapunov_residual(a: &Matrix, p: &Matrix, m: &Matrix) -> f64 {
    let r = a * p + p * a.transpose() + m;
    let denom = (2.0 * norm2(a) * norm2(p) + norm2(m)).max(ABS_FLOOR);
    norm2(&r) / denom
}

/// Rows/columns selected from `a`.
pub fn select(a: &Matrix, rows: &[usize], cols: &[usize]) -> Matrix {
    Matrix::from_fn(rows.len(), cols.len(), |i, j| a[(rows[i], cols[j])])
}

pub fn select_rows(a: &Matrix, rows: &[usize]) -> Matrix {
    Matrix::from_fn(rows.len(), a.ncols(), |i, j| a[(rows[i], j)])
}

pub fn select_cols(a: &Matrix, cols: &[usize]) -> Matrix {
    Matrix::from_fn(a.nrows(), cols.len(), |i, j| a[(i, cols[j])])
}

/// Row-major nested vectors, the on-disk matrix layout.
pub fn to_rows(a: &Matrix) -> Vec<Vec<f64>> {
    (0..a.nrows()).map(|i| a.row(i).iter().copied().collect()).collect()
}

pub fn from_rows(rows: &[Vec<f64>]) -> Result<Matrix> {
    let r = rows.len();
    let c = rows.first().map(|row| row.len()).unwrap_or(0);
    if rows.iter().any(|row| row.len() != c) {
        return Err(LinalgError::DimensionMismatch("ragged rows".into()));
    }
    let m = Matrix::from_fn(r, c, |i, j| rows[i][j]);
    ensure_finite(&m)?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn scalar_lyapunov() {
        let p = solve_lyapunov(&dmatrix![-1.0], &dmatrix![2.0]).unwrap();
        assert!(close(p[(0, 0)], 1.0, 1e-14));
    }

    #[test]
    fn decoupled_lyapunov() {
        let a = dmatrix![-1.0, 0.0; 0.0, -2.0];
        let p = solve_lyapunov(&a, &Matrix::identity(2, 2)).unwrap();
        assert!((p - dmatrix![0.5, 0.0; 0.0, 0.25]).amax() < 1e-14);
    }

    #[test]
    fn lyapunov_rejects_unstable_and_mismatched() {
        let err = solve_lyapunov(&dmatrix![0.5], &dmatrix![1.0]).unwrap_err();
        assert!(matches!(err, LinalgError::NotStable { .. }));
        let err = solve_lyapunov(&dmatrix![0.0], &dmatrix![1.0]).unwrap_err();
        assert!(matches!(err, LinalgError::NotStable { .. }));
        let err = solve_lyapunov(&dmatrix![-1.0], &Matrix::identity(2, 2)).unwrap_err();
        assert!(matches!(err, LinalgError::DimensionMismatch(_)));
    }

    #[test]
    fn eig_examples() {
        let v = eigenvalues(&dmatrix![1.0, 0.0; 0.0, 3.0]).unwrap();
        assert!(close(v[0].re, 3.0, 1e-12) && close(v[1].re, 1.0, 1e-12));

        let v = eigenvalues(&dmatrix![0.0, 1.0; -1.0, 0.0]).unwrap();
        assert!(close(v[0].re, 0.0, 1e-12) && close(v[0].im, 1.0, 1e-12));
        assert!(close(v[1].im, -1.0, 1e-12));

        // companion matrix of x^2 - 3x + 2
        let v = eigenvalues(&dmatrix![0.0, -2.0; 1.0, 3.0]).unwrap();
        assert!(close(v[0].re, 2.0, 1e-12) && close(v[1].re, 1.0, 1e-12));
    }

    #[test]
    fn eigenpairs_satisfy_definition() {
        let a = dmatrix![1.0, 2.0, 0.0; -3.0, 0.5, 1.0; 0.2, 0.0, -1.0];
        let dec = eig(&a).unwrap();
        let ac = a.map(|v| Complex64::new(v, 0.0));
        let tol = 1e-9 * norm2(&a);
        for (k, lambda) in dec.values.iter().enumerate() {
            let v = dec.vectors.column(k);
            let r = &ac * v - v * *lambda;
            assert!(r.norm() <= tol, "residual {}", r.norm());
        }
        let again = eig(&a).unwrap();
        assert_eq!(dec, again);
    }

    #[test]
    fn svd_examples() {
        let d = svd(&Matrix::identity(3, 3)).unwrap();
        assert!((d.s_matrix() - Matrix::identity(3, 3)).amax() < 1e-15);

        let a = dmatrix![-2.0, 0.0; 0.0, 1.0];
        let d = svd(&a).unwrap();
        assert!(close(d.singular_values[0], 2.0, 1e-14));
        assert!(close(d.singular_values[1], 1.0, 1e-14));
        assert!((&d.u * d.s_matrix() * d.v.transpose() - &a).amax() < 1e-14);
        assert!(d.u[(0, 0)] > 0.0);
    }

    #[test]
    fn cholesky_examples() {
        let l = cholesky_factor(&Matrix::identity(3, 3)).unwrap();
        assert_eq!(l, Matrix::identity(3, 3));
        let l = cholesky_factor(&dmatrix![4.0, 2.0; 2.0, 5.0]).unwrap();
        assert!((l - dmatrix![2.0, 0.0; 1.0, 2.0]).amax() < 1e-15);
        assert_eq!(
            cholesky_factor(&dmatrix![1.0, 2.0; 2.0, 1.0]).unwrap_err(),
            LinalgError::NotPositiveDefinite
        );
    }

    #[test]
    fn kron_vectorization_identity() {
        let a = dmatrix![1.0, 2.0; 3.0, 4.0];
        let p = dmatrix![0.5, -1.0; 2.0, 3.0];
        let lhs = &a * &p + &p * a.transpose();
        let eye = Matrix::identity(2, 2);
        let k = kron(&eye, &a) + kron(&a, &eye);
        let v = k * Vector::from_column_slice(p.as_slice());
        assert!((Vector::from_column_slice(lhs.as_slice()) - v).amax() < 1e-14);
    }
}
