//! Matrix classes tied to diagonal stability: Metzler, H and H+ matrices,
//! scaled diagonal dominance, and explicit diagonal Lyapunov certificates.

use serde::Serialize;
use thiserror::Error;

use crate::linalg::{self, Matrix, Vector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatclassError {
    #[error("negated matrix is not an H+ matrix")]
    NotHPlus,
    #[error("companion matrix is singular")]
    SingularCompanion,
    #[error("no diagonal certificate available: {0}")]
    CertificateUnavailable(String),
    #[error("certificate check failed (max eigenvalue {0:e})")]
    CertificateCheckFailed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatrixClassReport {
    pub is_metzler: bool,
    /// A signature matrix `D = diag(±1)` makes `D A D` Metzler.
    pub signature_metzler: bool,
    pub is_h: bool,
    pub is_h_plus: bool,
    pub is_dd_row: bool,
    /// `M(A)^{-1} 1` is entrywise positive.
    pub is_scaled_dd: bool,
    /// `M(A)^{-T} 1` is entrywise positive.
    pub is_scaled_dd_col: bool,
    /// Eigenvalues of `M(A)` as `[re, im]` pairs.
    pub companion_spectrum: Vec<[f64; 2]>,
    /// Diagonal of `X` with `A X + X Aᵀ ≺ 0`, when one could be built.
    pub certificate: Option<Vec<f64>>,
    pub notes: Vec<String>,
}

/// Diagonal certificate `X = P_v P_w^{-1}` with its scaling vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalCertificate {
    pub x: Matrix,
    pub v: Vector,
    pub w: Vector,
}

/// `M(A)`: absolute values on the diagonal, negated absolute values elsewhere.
pub fn companion(a: &Matrix) -> Matrix {
    Matrix::from_fn(a.nrows(), a.ncols(), |i, j| if i == j { a[(i, j)].abs() } else { -a[(i, j)].abs() })
}

pub fn is_metzler(a: &Matrix) -> bool {
    (0..a.nrows()).all(|i| (0..a.ncols()).all(|j| i == j || a[(i, j)] >= 0.0))
}

/// Strict row diagonal dominance.
pub fn is_dd_row(a: &Matrix) -> bool {
    (0..a.nrows()).all(|i| {
        let off: f64 = (0..a.ncols()).filter(|&j| j != i).map(|j| a[(i, j)].abs()).sum();
        a[(i, i)].abs() > off
    })
}

/// Whether some `D = diag(±1)` makes `D A D` Metzler.
///
/// Entry `a_ij` of `DAD` is `d_i d_j a_ij`, so positive entries force equal signs
/// and negative entries opposite signs; this is a two-colouring problem.
pub fn signature_metzler(a: &Matrix) -> bool {
    let n = a.nrows();
    let mut colour: Vec<Option<bool>> = vec![None; n];
    for start in 0..n {
        if colour[start].is_some() {
            continue;
        }
        colour[start] = Some(true);
        let mut stack = vec![start];
        while let Some(i) = stack.pop() {
            let ci = colour[i].unwrap_or(true);
            for j in 0..n {
                if i == j {
                    continue;
                }
                for v in [a[(i, j)], a[(j, i)]] {
                    if v == 0.0 {
                        continue;
                    }
                    let want = if v > 0.0 { ci } else { !ci };
                    match colour[j] {
                        None => {
                            colour[j] = Some(want);
                            stack.push(j);
                        }
                        Some(cj) if cj != want => return false,
                        _ => {}
                    }
                }
            }
        }
    }
    true
}

fn strictly_positive(v: &Vector) -> bool {
    let scale = v.amax();
    scale.is_finite() && v.iter().all(|&x| x > 1e-12 * scale)
}

fn scaling_vectors(m: &Matrix) -> Option<(Vector, Vector)> {
    let n = m.nrows();
    let ones = Matrix::from_element(n, 1, 1.0);
    let v = linalg::solve(m, &ones).ok()?.column(0).clone_owned();
    let w = linalg::solve(&m.transpose(), &ones).ok()?.column(0).clone_owned();
    Some((v, w))
}

pub fn classify(a: &Matrix) -> MatrixClassReport {
    let mut notes = Vec::new();
    let m = companion(a);
    let norm = linalg::norm2(a);
    let (companion_spectrum, is_h) = match linalg::eigenvalues(&m) {
        Ok(vals) => {
            let min_re = vals.iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
            let spectrum = vals.iter().map(|z| [z.re, z.im]).collect();
            (spectrum, min_re >= -1e-10 * norm)
        }
        Err(e) => {
            notes.push(format!("companion spectrum unavailable: {e}"));
            (Vec::new(), false)
        }
    };
    let is_h_plus = is_h && (0..a.nrows()).all(|i| a[(i, i)] > 0.0);
    let (is_scaled_dd, is_scaled_dd_col) = match scaling_vectors(&m) {
        Some((v, w)) => (strictly_positive(&v), strictly_positive(&w)),
        None => {
            notes.push("companion matrix is singular; scaled dominance not tested".into());
            (false, false)
        }
    };
    let certificate = match diagonal_certificate(a) {
        Ok(c) => Some(c.x.diagonal().iter().copied().collect()),
        Err(e) => {
            notes.push(format!("no diagonal certificate: {e}"));
            None
        }
    };
    MatrixClassReport {
        is_metzler: is_metzler(a),
        signature_metzler: signature_metzler(a),
        is_h,
        is_h_plus,
        is_dd_row: is_dd_row(a),
        is_scaled_dd,
        is_scaled_dd_col,
        companion_spectrum,
        certificate,
        notes,
    }
}

/// Diagonal `X ≻ 0` with `A X + X Aᵀ ≺ 0` for `A` whose negation is H+.
///
/// Uses `v = M(A)^{-1} 1`, `w = M(A)^{-T} 1` and `X = diag(v_i / w_i)`.
pub fn diagonal_certificate(a: &Matrix) -> Result<DiagonalCertificate, MatclassError> {
    let n = a.nrows();
    if !a.is_square() || n == 0 {
        return Err(MatclassError::NotHPlus);
    }
    if (0..n).any(|i| a[(i, i)] >= 0.0) {
        return Err(MatclassError::NotHPlus);
    }
    let m = companion(a);
    let norm = linalg::norm2(a);
    let min_re = linalg::eigenvalues(&m)
        .map_err(|_| MatclassError::NotHPlus)?
        .iter()
        .map(|z| z.re)
        .fold(f64::INFINITY, f64::min);
    if min_re < -1e-10 * norm {
        return Err(MatclassError::NotHPlus);
    }
    let (v, w) = scaling_vectors(&m).ok_or(MatclassError::SingularCompanion)?;
    if !strictly_positive(&v) || !strictly_positive(&w) {
        // An H+ matrix with nonsingular companion always has positive v, w;
        // failure here means M(A) is numerically singular.
        return Err(MatclassError::SingularCompanion);
    }
    let x = Matrix::from_diagonal(&v.component_div(&w));
    let lmax = linalg::lambda_max_sym(&(a * &x + &x * a.transpose()));
    if !(lmax < 0.0) {
        return Err(MatclassError::CertificateCheckFailed(lmax));
    }
    Ok(DiagonalCertificate { x, v, w })
}

/// `P_base = X σ_max(B Bᵀ) / σ_min(-(A X + X Aᵀ))`, which satisfies
/// `A P_base + P_base Aᵀ + B Bᵀ ⪯ 0`. Pass `(Aᵀ, Cᵀ)` for the observability seed.
pub fn base_gramian_seed(a: &Matrix, b: &Matrix) -> Result<Matrix, MatclassError> {
    base_gramian_seed_for(a, &(b * b.transpose()))
}

/// Same as [`base_gramian_seed`] with `M = B Bᵀ` given directly.
pub fn base_gramian_seed_for(a: &Matrix, m: &Matrix) -> Result<Matrix, MatclassError> {
    let cert = diagonal_certificate(a).map_err(|e| MatclassError::CertificateUnavailable(e.to_string()))?;
    let neg = -(a * &cert.x + &cert.x * a.transpose());
    let s_min = linalg::sym_eigenvalues(&neg).min();
    if !(s_min > 0.0) {
        return Err(MatclassError::CertificateUnavailable("certificate is not strict".into()));
    }
    let p = &cert.x * (linalg::norm2(m) / s_min);
    let residual = a * &p + &p * a.transpose() + m;
    let lmax = linalg::lambda_max_sym(&residual);
    let scale = (2.0 * linalg::norm2(a) * linalg::norm2(&p) + linalg::norm2(m)).max(linalg::ABS_FLOOR);
    if lmax > 1e-12 * scale {
        return Err(MatclassError::CertificateCheckFailed(lmax));
    }
    Ok(p)
}
