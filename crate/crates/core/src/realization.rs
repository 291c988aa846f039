//! State-space quadruples `(A, B, C, D)`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::linalg::{self, LinalgError, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct Realization {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub d: Matrix,
    /// Sizes of the diagonal blocks the state is partitioned into.
    pub blocks: Vec<usize>,
}

impl Realization {
    pub fn new(a: Matrix, b: Matrix, c: Matrix, d: Matrix) -> Result<Self, LinalgError> {
        let n = a.nrows();
        let blocks = if n == 0 { Vec::new() } else { vec![n] };
        Self::with_blocks(a, b, c, d, blocks)
    }

    pub fn with_blocks(a: Matrix, b: Matrix, c: Matrix, d: Matrix, blocks: Vec<usize>) -> Result<Self, LinalgError> {
        let n = a.nrows();
        let bad = |what: String| Err(LinalgError::DimensionMismatch(what));
        if a.ncols() != n {
            return bad(format!("A is {}x{}", n, a.ncols()));
        }
        if b.nrows() != n {
            return bad(format!("B has {} rows, expected {n}", b.nrows()));
        }
        if c.ncols() != n {
            return bad(format!("C has {} columns, expected {n}", c.ncols()));
        }
        if d.nrows() != c.nrows() || d.ncols() != b.ncols() {
            return bad(format!("D is {}x{}, expected {}x{}", d.nrows(), d.ncols(), c.nrows(), b.ncols()));
        }
        if blocks.iter().sum::<usize>() != n {
            return bad("block sizes do not sum to the state dimension".into());
        }
        for m in [&a, &b, &c, &d] {
            linalg::ensure_finite(m)?;
        }
        Ok(Realization { a, b, c, d, blocks })
    }

    /// Realization with zero feedthrough.
    pub fn strictly_proper(a: Matrix, b: Matrix, c: Matrix) -> Result<Self, LinalgError> {
        let d = Matrix::zeros(c.nrows(), b.ncols());
        Self::new(a, b, c, d)
    }

    pub fn states(&self) -> usize {
        self.a.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.c.nrows()
    }

    pub fn is_stable(&self) -> bool {
        linalg::is_stable(&self.a)
    }

    /// `G(s) = C (sI - A)^{-1} B + D`.
    pub fn transfer_at(&self, s: Complex64) -> Result<DMatrix<Complex64>, LinalgError> {
        let n = self.states();
        let to_c = |m: &Matrix| m.map(|v| Complex64::new(v, 0.0));
        let d = to_c(&self.d);
        if n == 0 {
            return Ok(d);
        }
        let mut resolvent = -to_c(&self.a);
        for i in 0..n {
            resolvent[(i, i)] += s;
        }
        let x = resolvent.lu().solve(&to_c(&self.b)).ok_or(LinalgError::Singular)?;
        Ok(to_c(&self.c) * x + d)
    }

    /// `G(0) = D - C A^{-1} B`.
    pub fn dc_gain(&self) -> Result<Matrix, LinalgError> {
        if self.states() == 0 {
            return Ok(self.d.clone());
        }
        let x = linalg::solve(&self.a, &self.b)?;
        Ok(&self.d - &self.c * x)
    }

    /// Parallel difference system with transfer function `G - other`.
    pub fn difference(&self, other: &Realization) -> Result<Realization, LinalgError> {
        if self.inputs() != other.inputs() || self.outputs() != other.outputs() {
            return Err(LinalgError::DimensionMismatch("input/output dimensions differ".into()));
        }
        let (n1, n2) = (self.states(), other.states());
        let mut a = Matrix::zeros(n1 + n2, n1 + n2);
        a.view_mut((0, 0), (n1, n1)).copy_from(&self.a);
        a.view_mut((n1, n1), (n2, n2)).copy_from(&other.a);
        let mut b = Matrix::zeros(n1 + n2, self.inputs());
        b.view_mut((0, 0), (n1, self.inputs())).copy_from(&self.b);
        b.view_mut((n1, 0), (n2, self.inputs())).copy_from(&other.b);
        let mut c = Matrix::zeros(self.outputs(), n1 + n2);
        c.view_mut((0, 0), (self.outputs(), n1)).copy_from(&self.c);
        c.view_mut((0, n1), (self.outputs(), n2)).copy_from(&(-&other.c));
        Realization::new(a, b, c, &self.d - &other.d)
    }

    pub fn to_doc(&self) -> RealizationDoc {
        RealizationDoc {
            a: linalg::to_rows(&self.a),
            b: linalg::to_rows(&self.b),
            c: linalg::to_rows(&self.c),
            d: linalg::to_rows(&self.d),
            blocks: self.blocks.clone(),
        }
    }
}

/// Row-major JSON form of a [`Realization`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizationDoc {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    pub d: Vec<Vec<f64>>,
    pub blocks: Vec<usize>,
}

impl RealizationDoc {
    pub fn to_realization(&self) -> Result<Realization, LinalgError> {
        let n = self.a.len();
        let a = linalg::from_rows(&self.a)?;
        let b = if self.b.is_empty() { Matrix::zeros(n, 0) } else { linalg::from_rows(&self.b)? };
        let c = if self.c.is_empty() { Matrix::zeros(0, n) } else { linalg::from_rows(&self.c)? };
        let d = if self.d.is_empty() { Matrix::zeros(c.nrows(), b.ncols()) } else { linalg::from_rows(&self.d)? };
        Realization::with_blocks(a, b, c, d, self.blocks.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn first_order_lag() {
        let r = Realization::strictly_proper(dmatrix![-1.0], dmatrix![1.0], dmatrix![1.0]).unwrap();
        assert_eq!(r.dc_gain().unwrap()[(0, 0)], 1.0);
        let g = r.transfer_at(Complex64::new(0.0, 1.0)).unwrap();
        assert!((g[(0, 0)].norm() - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_shapes() {
        let err = Realization::strictly_proper(dmatrix![-1.0], dmatrix![1.0; 1.0], dmatrix![1.0]);
        assert!(err.is_err());
    }

    #[test]
    fn doc_round_trip() {
        let r = Realization::new(
            dmatrix![-1.0, 0.5; 0.0, -2.0],
            dmatrix![1.0; 2.0],
            dmatrix![1.0, 1.0],
            dmatrix![0.25],
        )
        .unwrap();
        let back = r.to_doc().to_realization().unwrap();
        assert_eq!(r, back);
    }
}
