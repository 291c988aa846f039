//! Balancing transformations and projection-based reduction.
//!
//! Reductions are expressed through the projection quadruple `(V, W, V_r, W_r)`:
//! `V` holds the kept rows of the balancing transformation `T`, `W` the kept
//! columns of `T⁻¹`, and `V_r`, `W_r` the discarded ones. Truncation keeps
//! `(V A W, V B, C W, D)`; singular perturbation additionally folds in the
//! Schur complement of the discarded block.

use serde::Serialize;
use thiserror::Error;

use crate::gramian::{BlockKind, GramianPair, Provenance, SparsityPattern};
use crate::linalg::{self, LinalgError, Matrix, Vector};
use crate::realization::{Realization, RealizationDoc};

/// Minimum ratio `σ_keep / σ_{keep+1}` at a truncation point.
pub const HANKEL_GAP: f64 = 1.0 + 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BalanceError {
    #[error("Gramian is not positive definite")]
    NotPositiveDefinite,
    #[error("pattern mismatch: {0}")]
    PatternMismatch(String),
    #[error("Hankel values tie at the truncation point {index} (ratio {ratio})")]
    HankelTie { index: usize, ratio: f64 },
    #[error("reduced model is not stable")]
    NotStable,
    #[error("discarded block of the drift is singular")]
    SingularFastBlock,
    #[error("diagonal certificate check failed for the reduced drift (max eigenvalue {0:e})")]
    DiagonalStabilityLost(f64),
    #[error("zero-frequency gain not matched (error {0:e})")]
    InterpolationLost(f64),
    #[error("invalid keep counts: {0}")]
    InvalidKeep(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Bt,
    Bsp,
    StructuredBt,
    StructuredBsp,
    H2,
    Timescale,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Bt => "bt",
            Method::Bsp => "bsp",
            Method::StructuredBt => "structured_bt",
            Method::StructuredBsp => "structured_bsp",
            Method::H2 => "h2",
            Method::Timescale => "timescale",
        }
    }

    fn perturbs(&self) -> bool {
        matches!(self, Method::Bsp | Method::StructuredBsp | Method::H2 | Method::Timescale)
    }
}

/// Balancing transformation with its Hankel values.
#[derive(Debug, Clone, PartialEq)]
pub struct BalancedForm {
    pub t: Matrix,
    pub t_inv: Matrix,
    /// Generalized Hankel values, block by block.
    pub sigma: Vector,
    /// Number of leading preserved states.
    pub preserved: usize,
    /// Sizes of the balancing scopes following the preserved block.
    pub groups: Vec<usize>,
}

impl BalancedForm {
    /// Trivial form for a realization that is already balanced.
    pub fn identity(sigma: Vector) -> Self {
        let n = sigma.len();
        BalancedForm {
            t: Matrix::identity(n, n),
            t_inv: Matrix::identity(n, n),
            sigma,
            preserved: 0,
            groups: vec![n],
        }
    }

    /// `T` with the preserved block reset to the identity, so preserved states
    /// keep physical units. The discarded-block similarity is unchanged.
    pub fn physical(&self) -> (Matrix, Matrix) {
        let mut t = self.t.clone();
        let mut t_inv = self.t_inv.clone();
        for i in 0..self.preserved {
            t[(i, i)] = 1.0;
            t_inv[(i, i)] = 1.0;
        }
        (t, t_inv)
    }

    fn group_offsets(&self) -> Vec<usize> {
        let mut off = self.preserved;
        self.groups
            .iter()
            .map(|g| {
                let o = off;
                off += g;
                o
            })
            .collect()
    }
}

/// Classical balancing of a positive definite pair.
///
/// With `P = L Lᵀ` and `Lᵀ Q L = U Σ² Uᵀ`, `T = Σ^{1/2} Uᵀ L⁻¹` gives
/// `T P Tᵀ = T⁻ᵀ Q T⁻¹ = Σ`.
pub fn balance(p: &Matrix, q: &Matrix) -> Result<BalancedForm, BalanceError> {
    let n = p.nrows();
    if q.nrows() != n || !p.is_square() || !q.is_square() {
        return Err(BalanceError::PatternMismatch("P and Q differ in size".into()));
    }
    let (t, t_inv, sigma) = balance_block(p, q)?;
    Ok(BalancedForm { t, t_inv, sigma, preserved: 0, groups: vec![n] })
}

fn balance_block(p: &Matrix, q: &Matrix) -> Result<(Matrix, Matrix, Vector), BalanceError> {
    let l = linalg::cholesky_factor(p).map_err(|_| BalanceError::NotPositiveDefinite)?;
    if !linalg::is_positive_definite(q) {
        return Err(BalanceError::NotPositiveDefinite);
    }
    let m = linalg::symmetrize(&(l.transpose() * q * &l));
    let dec = linalg::svd(&m)?;
    let sigma = dec.singular_values.map(f64::sqrt);
    if sigma.iter().any(|s| !(*s > 0.0)) {
        return Err(BalanceError::NotPositiveDefinite);
    }
    let l_inv = linalg::inverse(&l)?;
    let root = sigma.map(f64::sqrt);
    let t = Matrix::from_diagonal(&root) * dec.u.transpose() * l_inv;
    let t_inv = &l * &dec.u * Matrix::from_diagonal(&root.map(|v| 1.0 / v));
    Ok((t, t_inv, sigma))
}

/// Block-structured balancing `T = diag(D₁, T_1, ..., T_m)` following the
/// Gramian pattern: the leading `k` states form a diagonal block rescaled by
/// `D₁ = (Σ_Q / Σ_P)^{1/4}`, every later block is balanced on its own.
pub fn balance_structured(g: &GramianPair, k: usize) -> Result<BalancedForm, BalanceError> {
    let n = g.p.nrows();
    let blocks = &g.pattern.blocks;
    let mut rest = blocks.as_slice();
    if k > 0 {
        match blocks.first() {
            Some(b) if b.size == k && b.kind == BlockKind::Diagonal => rest = &blocks[1..],
            _ => {
                return Err(BalanceError::PatternMismatch(format!(
                    "expected a leading diagonal block of size {k}"
                )))
            }
        }
    }
    if g.pattern.dim() != n || g.q.nrows() != n {
        return Err(BalanceError::PatternMismatch("pattern does not cover the state".into()));
    }
    if !g.pattern.conforms(&g.p) || !g.pattern.conforms(&g.q) {
        return Err(BalanceError::PatternMismatch("Gramians violate their pattern".into()));
    }
    let mut t = Matrix::zeros(n, n);
    let mut t_inv = Matrix::zeros(n, n);
    let mut sigma = Vector::zeros(n);
    for i in 0..k {
        let (sp, sq) = (g.p[(i, i)], g.q[(i, i)]);
        if !(sp > 0.0 && sq > 0.0) {
            return Err(BalanceError::NotPositiveDefinite);
        }
        let d = (sq / sp).powf(0.25);
        t[(i, i)] = d;
        t_inv[(i, i)] = 1.0 / d;
        sigma[i] = (sp * sq).sqrt();
    }
    let mut off = k;
    let mut groups = Vec::new();
    for b in rest {
        let s = b.size;
        let pb = g.p.view((off, off), (s, s)).clone_owned();
        let qb = g.q.view((off, off), (s, s)).clone_owned();
        let (tb, tib, sb) = balance_block(&pb, &qb)?;
        t.view_mut((off, off), (s, s)).copy_from(&tb);
        t_inv.view_mut((off, off), (s, s)).copy_from(&tib);
        sigma.rows_mut(off, s).copy_from(&sb);
        groups.push(s);
        off += s;
    }
    Ok(BalancedForm { t, t_inv, sigma, preserved: k, groups })
}

/// Projection-based reduction outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct ReductionResult {
    pub reduced: Realization,
    pub v: Matrix,
    pub w: Matrix,
    pub v_r: Matrix,
    pub w_r: Matrix,
    /// Full transformation (rows of `V` and `V_r` interleaved in state order).
    pub t: Matrix,
    pub t_inv: Matrix,
    pub sigma: Vector,
    pub kept: Vec<usize>,
    pub discarded: Vec<usize>,
    pub preserved: usize,
    /// Twice the sum of discarded Hankel values; `None` when no bound applies.
    pub hankel_tail: Option<f64>,
    pub method: Method,
    pub provenance: Option<Provenance>,
    /// Diagonal of the certificate used for the diagonal-stability check.
    pub certificate: Option<Vector>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReductionDoc {
    pub method: Method,
    pub gramian_provenance: Option<&'static str>,
    pub preserved_states: usize,
    pub kept: Vec<usize>,
    pub discarded: Vec<usize>,
    pub sigma: Vec<f64>,
    pub bound: Option<f64>,
    pub reduced: RealizationDoc,
    pub v: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
    pub v_r: Vec<Vec<f64>>,
    pub w_r: Vec<Vec<f64>>,
    pub diagonal_certificate: Option<Vec<f64>>,
}

impl ReductionResult {
    pub fn to_doc(&self) -> ReductionDoc {
        ReductionDoc {
            method: self.method,
            gramian_provenance: self.provenance.map(|p| p.as_str()),
            preserved_states: self.preserved,
            kept: self.kept.clone(),
            discarded: self.discarded.clone(),
            sigma: self.sigma.iter().copied().collect(),
            bound: self.hankel_tail,
            reduced: self.reduced.to_doc(),
            v: linalg::to_rows(&self.v),
            w: linalg::to_rows(&self.w),
            v_r: linalg::to_rows(&self.v_r),
            w_r: linalg::to_rows(&self.w_r),
            diagonal_certificate: self.certificate.as_ref().map(|c| c.iter().copied().collect()),
        }
    }
}

fn check_gap(sigma: &[f64], keep: usize, offset: usize) -> Result<(), BalanceError> {
    if keep == 0 || keep >= sigma.len() {
        return Ok(());
    }
    let ratio = sigma[keep - 1] / sigma[keep];
    if ratio >= HANKEL_GAP {
        Ok(())
    } else {
        Err(BalanceError::HankelTie { index: offset + keep, ratio })
    }
}

struct Projection<'a> {
    t: &'a Matrix,
    t_inv: &'a Matrix,
    kept: Vec<usize>,
    discarded: Vec<usize>,
}

/// Applies the projection formulas; `perturb` selects the Schur-complement variant.
fn project(r: &Realization, pr: &Projection<'_>, perturb: bool) -> Result<(Realization, [Matrix; 4]), BalanceError> {
    let all: Vec<usize> = (0..r.states()).collect();
    let v = linalg::select(pr.t, &pr.kept, &all);
    let w = linalg::select(pr.t_inv, &all, &pr.kept);
    let v_r = linalg::select(pr.t, &pr.discarded, &all);
    let w_r = linalg::select(pr.t_inv, &all, &pr.discarded);
    let vaw = &v * &r.a * &w;
    let vb = &v * &r.b;
    let cw = &r.c * &w;
    let mut blocks = vec![pr.kept.len()];
    if pr.kept.is_empty() {
        blocks.clear();
    }
    let reduced = if perturb && !pr.discarded.is_empty() {
        let a22 = &v_r * &r.a * &w_r;
        let a_hat = pr.t * &r.a * pr.t_inv;
        let smin = linalg::svd(&a22)?.singular_values.min();
        if !(smin > 1e-12 * linalg::norm2(&a_hat).max(linalg::ABS_FLOOR)) {
            return Err(BalanceError::SingularFastBlock);
        }
        let vaw_r = &v * &r.a * &w_r;
        let v_raw = &v_r * &r.a * &w;
        let v_rb = &v_r * &r.b;
        let cw_r = &r.c * &w_r;
        let x_a = linalg::solve(&a22, &v_raw)?;
        let x_b = linalg::solve(&a22, &v_rb)?;
        Realization::with_blocks(
            &vaw - &vaw_r * &x_a,
            &vb - &vaw_r * &x_b,
            &cw - &cw_r * &x_a,
            &r.d - &cw_r * &x_b,
            blocks,
        )?
    } else {
        Realization::with_blocks(vaw, vb, cw, r.d.clone(), blocks)?
    };
    Ok((reduced, [v, w, v_r, w_r]))
}

fn finish(
    r: &Realization,
    pr: Projection<'_>,
    sigma: Vector,
    preserved: usize,
    method: Method,
    hankel_tail: Option<f64>,
) -> Result<ReductionResult, BalanceError> {
    let (reduced, [v, w, v_r, w_r]) = project(r, &pr, method.perturbs())?;
    if reduced.states() > 0 && !reduced.is_stable() {
        return Err(BalanceError::NotStable);
    }
    if method.perturbs() {
        let g = r.dc_gain()?;
        let gr = reduced.dc_gain()?;
        let err = linalg::norm2(&(&g - &gr));
        if err > 1e-8 * (1.0 + linalg::norm2(&g)) {
            return Err(BalanceError::InterpolationLost(err));
        }
    }
    Ok(ReductionResult {
        reduced,
        v,
        w,
        v_r,
        w_r,
        t: pr.t.clone(),
        t_inv: pr.t_inv.clone(),
        sigma,
        kept: pr.kept,
        discarded: pr.discarded,
        preserved,
        hankel_tail,
        method,
        provenance: None,
        certificate: None,
    })
}

fn unstructured(r: &Realization, bf: &BalancedForm, keep: usize, method: Method) -> Result<ReductionResult, BalanceError> {
    let n = r.states();
    if bf.t.nrows() != n {
        return Err(BalanceError::PatternMismatch("balanced form does not match the realization".into()));
    }
    if keep > n {
        return Err(BalanceError::InvalidKeep(format!("keep {keep} exceeds state dimension {n}")));
    }
    let s: Vec<f64> = bf.sigma.iter().copied().collect();
    check_gap(&s, keep, 0)?;
    let tail = 2.0 * s[keep..].iter().sum::<f64>();
    let pr = Projection { t: &bf.t, t_inv: &bf.t_inv, kept: (0..keep).collect(), discarded: (keep..n).collect() };
    finish(r, pr, bf.sigma.clone(), 0, method, Some(tail))
}

/// Balanced truncation keeping the leading `keep` states.
pub fn truncate(r: &Realization, bf: &BalancedForm, keep: usize) -> Result<ReductionResult, BalanceError> {
    unstructured(r, bf, keep, Method::Bt)
}

/// Balanced singular perturbation keeping the leading `keep` states.
pub fn singular_perturb(r: &Realization, bf: &BalancedForm, keep: usize) -> Result<ReductionResult, BalanceError> {
    unstructured(r, bf, keep, Method::Bsp)
}

fn kept_and_discarded(preserved: usize, groups: &[usize], keep: &[usize]) -> Result<(Vec<usize>, Vec<usize>), BalanceError> {
    if groups.len() != keep.len() {
        return Err(BalanceError::InvalidKeep(format!(
            "{} keep counts for {} groups",
            keep.len(),
            groups.len()
        )));
    }
    let mut kept: Vec<usize> = (0..preserved).collect();
    let mut discarded = Vec::new();
    let mut off = preserved;
    for (&g, &kp) in groups.iter().zip(keep) {
        if kp > g {
            return Err(BalanceError::InvalidKeep(format!("keep {kp} exceeds group size {g}")));
        }
        kept.extend(off..off + kp);
        discarded.extend(off + kp..off + g);
        off += g;
    }
    Ok((kept, discarded))
}

/// Diagonal stability check of the reduced drift using the explicit
/// certificate `diag(Σ₁, Σ_{2,1})` built from the transformed `P`.
fn diagonal_check(res: &mut ReductionResult, p: &Matrix) -> Result<(), BalanceError> {
    let tp = &res.t * p * res.t.transpose();
    let cert = Vector::from_iterator(res.kept.len(), res.kept.iter().map(|&i| tp[(i, i)]));
    let x = Matrix::from_diagonal(&cert);
    let a = &res.reduced.a;
    let lmax = linalg::lambda_max_sym(&(a * &x + &x * a.transpose()));
    if !(lmax < 0.0) || cert.iter().any(|c| !(*c > 0.0)) {
        return Err(BalanceError::DiagonalStabilityLost(lmax));
    }
    res.certificate = Some(cert);
    Ok(())
}

/// Structured reduction: the leading `k` states are preserved in physical
/// coordinates and each later pattern block keeps `keep[i]` balanced states.
pub fn reduce_structured(
    r: &Realization,
    g: &GramianPair,
    k: usize,
    keep: &[usize],
    method: Method,
) -> Result<ReductionResult, BalanceError> {
    let method = match method {
        Method::Bt | Method::StructuredBt => Method::StructuredBt,
        Method::Bsp | Method::StructuredBsp => Method::StructuredBsp,
        Method::H2 => return h2_reduce_structured(r, &g.p, &g.pattern, k, keep),
        Method::Timescale => {
            return Err(BalanceError::InvalidKeep("time-scale reduction takes a slow/fast partition".into()))
        }
    };
    if g.p.nrows() != r.states() {
        return Err(BalanceError::PatternMismatch("Gramians do not match the realization".into()));
    }
    let bf = balance_structured(g, k)?;
    let (kept, discarded) = kept_and_discarded(k, &bf.groups, keep)?;
    let mut tail = 0.0;
    for ((&off, &size), &kp) in bf.group_offsets().iter().zip(&bf.groups).zip(keep) {
        let s: Vec<f64> = bf.sigma.rows(off, size).iter().copied().collect();
        check_gap(&s, kp, off)?;
        tail += 2.0 * s[kp..].iter().sum::<f64>();
    }
    let (t, t_inv) = bf.physical();
    let pr = Projection { t: &t, t_inv: &t_inv, kept, discarded };
    let mut res = finish(r, pr, bf.sigma.clone(), k, method, Some(tail))?;
    res.provenance = Some(g.provenance);
    if k > 0 {
        diagonal_check(&mut res, &g.p)?;
    }
    Ok(res)
}

/// Reduction balancing only the controllability Gramian: each later block
/// of `P` is diagonalised by its eigenvectors. No error bound is attached.
pub fn h2_reduce_structured(
    r: &Realization,
    p: &Matrix,
    pattern: &SparsityPattern,
    k: usize,
    keep: &[usize],
) -> Result<ReductionResult, BalanceError> {
    let n = r.states();
    if p.nrows() != n || pattern.dim() != n {
        return Err(BalanceError::PatternMismatch("Gramian does not match the realization".into()));
    }
    let mut rest = pattern.blocks.as_slice();
    if k > 0 {
        match pattern.blocks.first() {
            Some(b) if b.size == k && b.kind == BlockKind::Diagonal => rest = &pattern.blocks[1..],
            _ => {
                return Err(BalanceError::PatternMismatch(format!(
                    "expected a leading diagonal block of size {k}"
                )))
            }
        }
    }
    if !pattern.conforms(p) || !linalg::is_positive_definite(p) {
        return Err(BalanceError::NotPositiveDefinite);
    }
    let mut t = Matrix::identity(n, n);
    let mut sigma = Vector::zeros(n);
    for i in 0..k {
        sigma[i] = p[(i, i)];
    }
    let mut groups = Vec::new();
    let mut off = k;
    for b in rest {
        let s = b.size;
        let (vals, vecs) = linalg::sym_eig_desc(&p.view((off, off), (s, s)).clone_owned());
        t.view_mut((off, off), (s, s)).copy_from(&vecs.transpose());
        sigma.rows_mut(off, s).copy_from(&vals);
        groups.push(s);
        off += s;
    }
    let t_inv = t.transpose();
    let (kept, discarded) = kept_and_discarded(k, &groups, keep)?;
    let mut off = k;
    for (&size, &kp) in groups.iter().zip(keep) {
        let s: Vec<f64> = sigma.rows(off, size).iter().copied().collect();
        check_gap(&s, kp, off)?;
        off += size;
    }
    let pr = Projection { t: &t, t_inv: &t_inv, kept, discarded };
    let mut res = finish(r, pr, sigma, k, Method::H2, None)?;
    if k > 0 {
        diagonal_check(&mut res, p)?;
    }
    Ok(res)
}

/// Time-scale reduction of the linearization: the `fast` states are
/// eliminated through `A₂₂⁻¹` without any change of coordinates.
pub fn timescale_reduce(r: &Realization, slow: &[usize], fast: &[usize]) -> Result<ReductionResult, BalanceError> {
    let n = r.states();
    let mut seen = vec![false; n];
    for &i in slow.iter().chain(fast) {
        if i >= n || seen[i] {
            return Err(BalanceError::InvalidKeep(format!("state {i} repeated or out of range")));
        }
        seen[i] = true;
    }
    if seen.iter().any(|s| !s) {
        return Err(BalanceError::InvalidKeep("slow and fast states do not cover the state".into()));
    }
    let id = Matrix::identity(n, n);
    let pr = Projection { t: &id, t_inv: &id, kept: slow.to_vec(), discarded: fast.to_vec() };
    finish(r, pr, Vector::zeros(0), 0, Method::Timescale, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gramian::Block;
    use nalgebra::{dmatrix, dvector};

    fn pair(p: Matrix, q: Matrix, pattern: SparsityPattern) -> GramianPair {
        GramianPair {
            p,
            q,
            pattern,
            provenance: Provenance::Equation,
            slack_p: 0.0,
            slack_q: 0.0,
            diagnostics: Vec::new(),
        }
    }

    fn check_balanced(bf: &BalancedForm, p: &Matrix, q: &Matrix) {
        let s = Matrix::from_diagonal(&bf.sigma);
        let tol = 1e-8 * linalg::norm2(&s);
        assert!((&bf.t * p * bf.t.transpose() - &s).amax() <= tol);
        assert!((bf.t_inv.transpose() * q * &bf.t_inv - &s).amax() <= tol);
    }

    #[test]
    fn balance_examples() {
        let p = dmatrix![2.0, 0.0; 0.0, 1.0];
        let bf = balance(&p, &p).unwrap();
        assert!((bf.sigma.clone() - dvector![2.0, 1.0]).amax() < 1e-14);
        assert!((bf.t.clone() - Matrix::identity(2, 2)).amax() < 1e-14);

        let p = dmatrix![4.0, 0.0; 0.0, 1.0];
        let q = dmatrix![1.0, 0.0; 0.0, 4.0];
        let bf = balance(&p, &q).unwrap();
        assert!((bf.sigma.clone() - dvector![2.0, 2.0]).amax() < 1e-14);
        check_balanced(&bf, &p, &q);

        let bf = balance(&dmatrix![0.5], &dmatrix![0.5]).unwrap();
        assert!((bf.sigma[0] - 0.5).abs() < 1e-15 && (bf.t[(0, 0)].abs() - 1.0).abs() < 1e-15);

        assert_eq!(
            balance(&dmatrix![1.0, 2.0; 2.0, 1.0], &Matrix::identity(2, 2)),
            Err(BalanceError::NotPositiveDefinite)
        );
    }

    #[test]
    fn structured_balance_examples() {
        let p = Matrix::from_diagonal(&dvector![2.0, 3.0, 1.0]);
        let pattern = SparsityPattern::preserved_and_groups(1, &[2]);
        let bf = balance_structured(&pair(p.clone(), p.clone(), pattern), 1).unwrap();
        assert!((bf.t.clone() - Matrix::identity(3, 3)).amax() < 1e-14);
        assert!((bf.sigma.clone() - dvector![2.0, 3.0, 1.0]).amax() < 1e-14);

        let p = Matrix::from_diagonal(&dvector![4.0, 1.0]);
        let q = Matrix::from_diagonal(&dvector![1.0, 9.0]);
        let bf = balance_structured(&pair(p.clone(), q.clone(), SparsityPattern::diagonal(2)), 2).unwrap();
        check_balanced(&bf, &p, &q);
        assert_eq!(bf.t[(0, 1)], 0.0);
        let (tp, _) = bf.physical();
        assert_eq!(tp, Matrix::identity(2, 2));

        let wrong = pair(p.clone(), q, SparsityPattern::full(2));
        assert!(matches!(balance_structured(&wrong, 1), Err(BalanceError::PatternMismatch(_))));
    }

    #[test]
    fn singular_perturbation_by_hand() {
        let r = Realization::strictly_proper(
            dmatrix![-1.0, 1.0; 1.0, -4.0],
            dmatrix![1.0; 1.0],
            dmatrix![1.0, 1.0],
        )
        .unwrap();
        let bf = BalancedForm::identity(dvector![1.0, 0.5]);
        let red = singular_perturb(&r, &bf, 1).unwrap();
        assert!((red.reduced.a[(0, 0)] + 0.75).abs() < 1e-14);
        assert!((red.reduced.b[(0, 0)] - 1.25).abs() < 1e-14);
        assert!((red.reduced.c[(0, 0)] - 1.25).abs() < 1e-14);
        assert!((red.reduced.d[(0, 0)] - 0.25).abs() < 1e-14);
        let g = r.dc_gain().unwrap()[(0, 0)];
        assert!((1.25 * 1.25 / 0.75 + 0.25 - g).abs() < 1e-12);

        let bt = truncate(&r, &bf, 1).unwrap();
        assert_eq!(bt.reduced.d, r.d);
        assert_eq!(bt.hankel_tail, Some(1.0));

        let full = singular_perturb(&r, &bf, 2).unwrap();
        assert_eq!(full.reduced.a, r.a);
        assert_eq!(full.hankel_tail, Some(0.0));
    }

    #[test]
    fn error_paths() {
        let r = Realization::strictly_proper(
            dmatrix![-1.0, 1.0; 0.0, 0.0],
            dmatrix![1.0; 1.0],
            dmatrix![1.0, 1.0],
        )
        .unwrap();
        let bf = BalancedForm::identity(dvector![1.0, 0.5]);
        assert_eq!(singular_perturb(&r, &bf, 1).unwrap_err(), BalanceError::SingularFastBlock);
        let tie = BalancedForm::identity(dvector![1.0, 1.0]);
        assert!(matches!(truncate(&r, &tie, 1), Err(BalanceError::HankelTie { index: 1, .. })));
    }

    #[test]
    fn multi_group_keep_validation() {
        let p = Matrix::identity(4, 4);
        let pattern = SparsityPattern::new(vec![
            Block { size: 1, kind: BlockKind::Diagonal },
            Block { size: 2, kind: BlockKind::Full },
            Block { size: 1, kind: BlockKind::Full },
        ]);
        let r = Realization::strictly_proper(-Matrix::identity(4, 4), Matrix::identity(4, 4), Matrix::identity(4, 4)).unwrap();
        let g = pair(p.clone(), p, pattern);
        assert!(matches!(
            reduce_structured(&r, &g, 1, &[3, 1], Method::StructuredBt),
            Err(BalanceError::InvalidKeep(_))
        ));
        assert!(matches!(
            reduce_structured(&r, &g, 1, &[1], Method::StructuredBt),
            Err(BalanceError::InvalidKeep(_))
        ));
    }
}
