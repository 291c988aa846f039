//! Classical and generalized (structured) Gramians.
//!
//! Generalized Gramians satisfy the Lyapunov inequalities
//! `A P + P Aᵀ + B Bᵀ ⪯ -δ I` and `Aᵀ Q + Q A + Cᵀ C ⪯ -δ I` with `P`, `Q`
//! restricted to a block-diagonal sparsity pattern; they are obtained by
//! minimising the trace with the barrier solver in [`sdp`].

pub mod sdp;

use log::{debug, info};
use serde::Serialize;
use thiserror::Error;

use crate::linalg::{self, LinalgError, Matrix, Vector};
use crate::matclass::{self, MatclassError};
use crate::realization::Realization;
use sdp::{BarrierOptions, BarrierProblem, Lmi, SdpError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GramianError {
    #[error("drift matrix is not stable")]
    NotStable,
    #[error("no strictly feasible structured Gramian (phase-one optimum s = {s:e}, margin δ = {delta:e})")]
    Infeasible { s: f64, delta: f64 },
    #[error("solver did not converge: {0}")]
    NoConvergence(String),
    #[error("H-matrix seed unavailable: {0}")]
    CertificateUnavailable(String),
    #[error("pattern mismatch: {0}")]
    PatternMismatch(String),
    #[error("post-solve verification failed: {0}")]
    VerificationFailed(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

impl From<MatclassError> for GramianError {
    fn from(e: MatclassError) -> Self {
        GramianError::CertificateUnavailable(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockKind {
    Diagonal,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Block {
    pub size: usize,
    pub kind: BlockKind,
}

/// Ordered diagonal blocks covering the state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SparsityPattern {
    pub blocks: Vec<Block>,
}

impl SparsityPattern {
    /// Empty blocks are dropped.
    pub fn new(blocks: Vec<Block>) -> Self {
        SparsityPattern { blocks: blocks.into_iter().filter(|b| b.size > 0).collect() }
    }

    pub fn full(n: usize) -> Self {
        Self::new(vec![Block { size: n, kind: BlockKind::Full }])
    }

    pub fn diagonal(n: usize) -> Self {
        Self::new(vec![Block { size: n, kind: BlockKind::Diagonal }])
    }

    /// A diagonal block of size `k` followed by one full block per group.
    pub fn preserved_and_groups(k: usize, groups: &[usize]) -> Self {
        let mut blocks = vec![Block { size: k, kind: BlockKind::Diagonal }];
        blocks.extend(groups.iter().map(|&g| Block { size: g, kind: BlockKind::Full }));
        Self::new(blocks)
    }

    pub fn dim(&self) -> usize {
        self.blocks.iter().map(|b| b.size).sum()
    }

    /// Starting offset of every block.
    pub fn offsets(&self) -> Vec<usize> {
        let mut off = 0;
        self.blocks
            .iter()
            .map(|b| {
                let o = off;
                off += b.size;
                o
            })
            .collect()
    }

    /// Free entries `(i, j)` with `i <= j`, in parameter order.
    pub fn entries(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (b, off) in self.blocks.iter().zip(self.offsets()) {
            match b.kind {
                BlockKind::Diagonal => out.extend((off..off + b.size).map(|i| (i, i))),
                BlockKind::Full => {
                    for i in off..off + b.size {
                        for j in i..off + b.size {
                            out.push((i, j));
                        }
                    }
                }
            }
        }
        out
    }

    pub fn allows(&self, i: usize, j: usize) -> bool {
        if i == j {
            return true;
        }
        let (i, j) = (i.min(j), i.max(j));
        self.blocks
            .iter()
            .zip(self.offsets())
            .any(|(b, off)| b.kind == BlockKind::Full && i >= off && j < off + b.size)
    }

    /// Off-pattern entries are exactly zero.
    pub fn conforms(&self, p: &Matrix) -> bool {
        let n = self.dim();
        p.nrows() == n
            && p.ncols() == n
            && (0..n).all(|i| (0..n).all(|j| self.allows(i, j) || p[(i, j)] == 0.0))
    }

    pub fn assemble(&self, y: &[f64]) -> Matrix {
        let n = self.dim();
        let mut p = Matrix::zeros(n, n);
        for (&(i, j), &v) in self.entries().iter().zip(y) {
            p[(i, j)] = v;
            p[(j, i)] = v;
        }
        p
    }

    pub fn params_of(&self, p: &Matrix) -> Vector {
        let e = self.entries();
        Vector::from_iterator(e.len(), e.iter().map(|&(i, j)| 0.5 * (p[(i, j)] + p[(j, i)])))
    }

    fn basis(&self) -> Vec<Matrix> {
        let n = self.dim();
        self.entries()
            .into_iter()
            .map(|(i, j)| {
                let mut e = Matrix::zeros(n, n);
                e[(i, j)] = 1.0;
                e[(j, i)] = 1.0;
                e
            })
            .collect()
    }

    fn trace_weights(&self) -> Vector {
        let e = self.entries();
        Vector::from_iterator(e.len(), e.iter().map(|&(i, j)| if i == j { 1.0 } else { 0.0 }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Equation,
    Sdp,
    HmatrixSeededSdp,
}

impl Provenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::Equation => "equation",
            Provenance::Sdp => "sdp",
            Provenance::HmatrixSeededSdp => "hmatrix_seeded_sdp",
        }
    }
}

/// Per-programme solver record.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct SolveDiagnostics {
    pub which: String,
    pub phase1_newton: usize,
    pub phase1_s: f64,
    pub outer_iterations: usize,
    pub newton_iterations: usize,
    pub relative_gap: f64,
    pub barrier_value: f64,
    /// `-λ_max(A P + P Aᵀ + B Bᵀ)` of the returned matrix.
    pub lyapunov_margin: f64,
    pub min_eigenvalue: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GramianPair {
    pub p: Matrix,
    pub q: Matrix,
    pub pattern: SparsityPattern,
    pub provenance: Provenance,
    /// Margins δ used for the P- and Q-inequalities (zero for equations).
    pub slack_p: f64,
    pub slack_q: f64,
    pub diagnostics: Vec<SolveDiagnostics>,
}

impl GramianPair {
    /// Re-checks symmetry, definiteness, pattern conformance and both
    /// Lyapunov inequalities against `r`.
    pub fn verify(&self, r: &Realization) -> Result<(), GramianError> {
        check_gramian(&r.a, &(&r.b * r.b.transpose()), &self.p, &self.pattern, self.slack_p, "P")?;
        check_gramian(
            &r.a.transpose(),
            &(r.c.transpose() * &r.c),
            &self.q,
            &self.pattern,
            self.slack_q,
            "Q",
        )?;
        Ok(())
    }
}

fn check_gramian(a: &Matrix, m: &Matrix, p: &Matrix, pattern: &SparsityPattern, delta: f64, name: &str) -> Result<f64, GramianError> {
    let fail = |msg: String| Err(GramianError::VerificationFailed(format!("{name}: {msg}")));
    if !linalg::is_symmetric(p, 1e-12) {
        return fail("not symmetric".into());
    }
    if !pattern.conforms(p) {
        return fail("violates the sparsity pattern".into());
    }
    if !linalg::is_positive_definite(p) || linalg::lambda_min_sym(p) <= 0.0 {
        return fail("not positive definite".into());
    }
    let residual = a * p + p * a.transpose() + m;
    let lmax = linalg::lambda_max_sym(&residual);
    let tol = 1e-10 * (2.0 * linalg::norm2(a) * linalg::norm2(p) + linalg::norm2(m)).max(linalg::ABS_FLOOR);
    if lmax > -delta + tol {
        return fail(format!("Lyapunov inequality violated: λ_max = {lmax:e}, required <= {:e}", -delta));
    }
    Ok(-lmax)
}

/// Exact Gramians from the two Lyapunov equations.
pub fn classical_gramians(r: &Realization) -> Result<GramianPair, GramianError> {
    linalg::check_stable(&r.a).map_err(|_| GramianError::NotStable)?;
    let p = linalg::solve_lyapunov(&r.a, &(&r.b * r.b.transpose()))?;
    let q = linalg::solve_lyapunov(&r.a.transpose(), &(r.c.transpose() * &r.c))?;
    Ok(GramianPair {
        p,
        q,
        pattern: SparsityPattern::full(r.states()),
        provenance: Provenance::Equation,
        slack_p: 0.0,
        slack_q: 0.0,
        diagnostics: Vec::new(),
    })
}

/// Data of `A P + P Aᵀ + M ⪯ -δ I` rescaled so that `‖A‖ = ‖M‖ = 1`.
struct Scaled {
    a: Matrix,
    m: Matrix,
    /// `P = p_scale * P̃`.
    p_scale: f64,
    /// `M = m_scale * M̃`.
    m_scale: f64,
    m_norm: f64,
}

fn scaled(a: &Matrix, m: &Matrix) -> Scaled {
    let a_norm = linalg::norm2(a).max(linalg::ABS_FLOOR);
    let m_norm = linalg::norm2(m);
    let m_s = if m_norm > linalg::ABS_FLOOR { m_norm } else { 1.0 };
    Scaled { a: a / a_norm, m: m / m_s, p_scale: m_s / a_norm, m_scale: m_s, m_norm }
}

fn lyap_images(a: &Matrix, basis: &[Matrix]) -> Vec<Matrix> {
    basis.iter().map(|e| -(a * e + e * a.transpose())).collect()
}

fn barrier_opts<'a>(t0: f64, gap_tol: f64, gap_floor: f64, early_stop: Option<&'a dyn Fn(&Vector) -> bool>) -> BarrierOptions<'a> {
    BarrierOptions { t0, growth: 10.0, max_outer: 50, max_inner: 200, gap_tol, gap_floor, early_stop }
}

fn map_sdp(e: SdpError) -> GramianError {
    GramianError::NoConvergence(e.to_string())
}

/// Minimum-trace structured solution of `A P + P Aᵀ + M ⪯ -δ I`, `P ⪰ μ I`.
fn structured_solve(a: &Matrix, m: &Matrix, pattern: &SparsityPattern, which: &str) -> Result<(Matrix, f64, SolveDiagnostics), GramianError> {
    let n = a.nrows();
    if pattern.dim() != n {
        return Err(GramianError::PatternMismatch(format!("pattern covers {} states, system has {n}", pattern.dim())));
    }
    linalg::check_stable(a).map_err(|_| GramianError::NotStable)?;
    let sc = scaled(a, m);
    let delta = (1e-8 * sc.m_norm).max(linalg::ABS_FLOOR);
    let delta_s = delta / sc.m_scale;
    let basis = pattern.basis();
    let images = lyap_images(&sc.a, &basis);
    let np = basis.len();
    let eye = Matrix::identity(n, n);

    // Phase one: minimise s subject to s I - (A P + P Aᵀ + M) ⪰ 0, P ⪰ μ I.
    let sym_max = linalg::lambda_max_sym(&(&sc.a + sc.a.transpose()));
    let alpha = if sym_max < -1e-12 { 1.0 / (2.0 * sym_max.abs()) } else { 0.5 };
    let mu = 1e-10 * alpha;
    let p0 = &eye * alpha;
    let s0 = linalg::lambda_max_sym(&(&sc.a * &p0 + &p0 * sc.a.transpose() + &sc.m)) + 1.0;
    let trace_cap = 1e8 * alpha * n as f64;
    let weights = pattern.trace_weights();
    let mut fs1 = images.clone();
    fs1.push(eye.clone());
    let mut fs2 = basis.clone();
    fs2.push(Matrix::zeros(n, n));
    let mut fs3: Vec<Matrix> = weights.iter().map(|w| Matrix::from_element(1, 1, -w)).collect();
    fs3.push(Matrix::zeros(1, 1));
    let phase1 = BarrierProblem {
        c: Vector::from_fn(np + 1, |i, _| if i == np { 1.0 } else { 0.0 }),
        lmis: vec![
            Lmi { f0: -&sc.m, fs: fs1 },
            Lmi { f0: -&eye * mu, fs: fs2 },
            Lmi { f0: Matrix::from_element(1, 1, trace_cap), fs: fs3 },
        ],
    };
    let y0 = pattern.params_of(&p0).push(s0);
    let target = -2.0 * delta_s;
    let stop = move |y: &Vector| y[np] <= target;
    let out1 = sdp::solve(&phase1, &y0, &barrier_opts(1.0, 1e-3, delta_s, Some(&stop))).map_err(map_sdp)?;
    let s_star = out1.y[np];
    debug!("{which}: phase one s = {s_star:e} after {} Newton steps", out1.newton_iterations);
    if s_star >= -delta_s {
        return Err(GramianError::Infeasible { s: s_star * sc.m_scale, delta });
    }
    let start = out1.y.rows(0, np).clone_owned();

    // Phase two: minimise trace(P) subject to -(A P + P Aᵀ + M) - δ I ⪰ 0, P ⪰ μ I.
    let phase2 = BarrierProblem {
        c: weights,
        lmis: vec![
            Lmi { f0: -&sc.m - &eye * delta_s, fs: images },
            Lmi { f0: -&eye * mu, fs: basis },
        ],
    };
    let nu = 2.0 * n as f64;
    let t0 = nu / phase2.c.dot(&start).max(mu);
    let out2 = sdp::solve(&phase2, &start, &barrier_opts(t0, 1e-9, mu, None)).map_err(map_sdp)?;
    let p = pattern.assemble(out2.y.as_slice()) * sc.p_scale;
    let objective = phase2.c.dot(&out2.y);
    let margin = check_gramian(a, m, &p, pattern, delta, which)?;
    let diag = SolveDiagnostics {
        which: which.to_string(),
        phase1_newton: out1.newton_iterations,
        phase1_s: s_star,
        outer_iterations: out2.outer_iterations,
        newton_iterations: out2.newton_iterations,
        relative_gap: out2.gap / objective.abs().max(mu),
        barrier_value: out2.barrier_value,
        lyapunov_margin: margin,
        min_eigenvalue: linalg::lambda_min_sym(&p),
    };
    info!(
        "gramian solve {which}: outer={} newton={} phase1_newton={} rel_gap={:e} barrier={:e} margin={:e}",
        diag.outer_iterations, diag.newton_iterations, diag.phase1_newton, diag.relative_gap, diag.barrier_value, margin
    );
    Ok((p, delta, diag))
}

/// Seeded programme: minimise trace(P) subject to
/// `A (P + P_base) + (P + P_base) Aᵀ + M ⪯ 0`, returning `P + P_base`.
fn seeded_solve(a: &Matrix, m: &Matrix, pattern: &SparsityPattern, which: &str) -> Result<(Matrix, SolveDiagnostics), GramianError> {
    let n = a.nrows();
    if pattern.dim() != n {
        return Err(GramianError::PatternMismatch(format!("pattern covers {} states, system has {n}", pattern.dim())));
    }
    let sc = scaled(a, m);
    let base = matclass::base_gramian_seed_for(&sc.a, &sc.m)?;
    let eye = Matrix::identity(n, n);
    let mu = 1e-10 * base.trace() / n as f64;
    let basis = pattern.basis();
    let images = lyap_images(&sc.a, &basis);
    let problem = BarrierProblem {
        c: pattern.trace_weights(),
        lmis: vec![
            Lmi { f0: -(&sc.a * &base + &base * sc.a.transpose() + &sc.m), fs: images },
            Lmi { f0: &base - &eye * mu, fs: basis },
        ],
    };
    // The base point itself sits on the boundary when M has full rank in the
    // worst direction, so start slightly inside.
    let start = pattern.params_of(&base) * 1e-3;
    let nu = 2.0 * n as f64;
    let t0 = nu / base.trace().max(mu);
    let out = sdp::solve(&problem, &start, &barrier_opts(t0, 1e-9, base.trace(), None)).map_err(map_sdp)?;
    let p = (pattern.assemble(out.y.as_slice()) + &base) * sc.p_scale;
    let margin = check_gramian(a, m, &p, pattern, 0.0, which)?;
    let diag = SolveDiagnostics {
        which: which.to_string(),
        phase1_newton: 0,
        phase1_s: f64::NAN,
        outer_iterations: out.outer_iterations,
        newton_iterations: out.newton_iterations,
        relative_gap: out.gap / base.trace(),
        barrier_value: out.barrier_value,
        lyapunov_margin: margin,
        min_eigenvalue: linalg::lambda_min_sym(&p),
    };
    info!(
        "seeded gramian solve {which}: outer={} newton={} rel_gap={:e} barrier={:e} margin={:e}",
        diag.outer_iterations, diag.newton_iterations, diag.relative_gap, diag.barrier_value, margin
    );
    Ok((p, diag))
}

/// Minimum-trace generalized Gramians conforming to `pattern`.
pub fn structured_gramians(r: &Realization, pattern: &SparsityPattern) -> Result<GramianPair, GramianError> {
    let (p, slack_p, dp) = structured_solve(&r.a, &(&r.b * r.b.transpose()), pattern, "P")?;
    let (q, slack_q, dq) = structured_solve(&r.a.transpose(), &(r.c.transpose() * &r.c), pattern, "Q")?;
    let pair = GramianPair {
        p,
        q,
        pattern: pattern.clone(),
        provenance: Provenance::Sdp,
        slack_p,
        slack_q,
        diagnostics: vec![dp, dq],
    };
    pair.verify(r)?;
    Ok(pair)
}

/// Generalized Gramians from the programme seeded with the H-matrix base point.
pub fn seeded_structured_gramians(r: &Realization, pattern: &SparsityPattern) -> Result<GramianPair, GramianError> {
    let (p, dp) = seeded_solve(&r.a, &(&r.b * r.b.transpose()), pattern, "P")?;
    let (q, dq) = seeded_solve(&r.a.transpose(), &(r.c.transpose() * &r.c), pattern, "Q")?;
    let pair = GramianPair {
        p,
        q,
        pattern: pattern.clone(),
        provenance: Provenance::HmatrixSeededSdp,
        slack_p: 0.0,
        slack_q: 0.0,
        diagnostics: vec![dp, dq],
    };
    pair.verify(r)?;
    Ok(pair)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn real(a: Matrix, b: Matrix, c: Matrix) -> Realization {
        Realization::strictly_proper(a, b, c).unwrap()
    }

    #[test]
    fn pattern_layout() {
        let p = SparsityPattern::preserved_and_groups(2, &[3, 0, 2]);
        assert_eq!(p.blocks.len(), 3);
        assert_eq!(p.dim(), 7);
        assert_eq!(p.entries().len(), 2 + 6 + 3);
        assert!(p.allows(2, 4) && !p.allows(1, 2) && !p.allows(4, 5) && p.allows(6, 5));
        let m = p.assemble(&(1..=11).map(f64::from).collect::<Vec<_>>());
        assert!(p.conforms(&m));
        assert_eq!(p.params_of(&m).as_slice(), (1..=11).map(f64::from).collect::<Vec<_>>().as_slice());
    }

    #[test]
    fn classical_examples() {
        let g = classical_gramians(&real(dmatrix![-1.0], dmatrix![1.0], dmatrix![1.0])).unwrap();
        assert!((g.p[(0, 0)] - 0.5).abs() < 1e-15 && (g.q[(0, 0)] - 0.5).abs() < 1e-15);
        let g = classical_gramians(&real(dmatrix![-1.0, 0.0; 0.0, -2.0], dmatrix![1.0; 1.0], dmatrix![1.0, 1.0])).unwrap();
        let expected = dmatrix![0.5, 1.0 / 3.0; 1.0 / 3.0, 0.25];
        assert!((g.p - expected).amax() < 1e-14);
    }

    #[test]
    fn scalar_structured() {
        let r = real(dmatrix![-1.0], dmatrix![1.0], dmatrix![1.0]);
        let g = structured_gramians(&r, &SparsityPattern::full(1)).unwrap();
        let delta = 1e-8;
        let exact = (1.0 + delta) / 2.0;
        assert!((g.p[(0, 0)] - exact).abs() < 1e-7 * exact, "{}", g.p[(0, 0)]);
        assert!((g.q[(0, 0)] - exact).abs() < 1e-7 * exact);
    }

    #[test]
    fn decoupled_structured_matches_classical_diagonal() {
        let r = real(dmatrix![-1.0, 0.0; 0.0, -2.0], Matrix::identity(2, 2), Matrix::identity(2, 2));
        let pattern = SparsityPattern::new(vec![
            Block { size: 1, kind: BlockKind::Diagonal },
            Block { size: 1, kind: BlockKind::Diagonal },
        ]);
        let g = structured_gramians(&r, &pattern).unwrap();
        assert!((g.p.clone() - dmatrix![0.5, 0.0; 0.0, 0.25]).amax() < 1e-6);
        assert_eq!(g.p[(0, 1)], 0.0);
    }

    #[test]
    fn seeded_examples() {
        let r = real(dmatrix![-1.0], dmatrix![2f64.sqrt()], dmatrix![1.0]);
        let g = seeded_structured_gramians(&r, &SparsityPattern::diagonal(1)).unwrap();
        assert!(g.p[(0, 0)] > 0.0 && g.p[(0, 0)] <= 1.0 + 1e-9);
        assert_eq!(g.provenance, Provenance::HmatrixSeededSdp);

        let r = real(dmatrix![-2.0, 1.0; 1.0, -2.0], Matrix::identity(2, 2), Matrix::identity(2, 2));
        let g = seeded_structured_gramians(&r, &SparsityPattern::diagonal(2)).unwrap();
        let res = &r.a * &g.p + &g.p * r.a.transpose() + Matrix::identity(2, 2);
        assert!(linalg::lambda_max_sym(&res) <= 1e-12);

        let not_h = real(dmatrix![-1.0, 4.0; -1.0, -1.0], Matrix::identity(2, 2), Matrix::identity(2, 2));
        assert!(matches!(
            seeded_structured_gramians(&not_h, &SparsityPattern::diagonal(2)),
            Err(GramianError::CertificateUnavailable(_))
        ));
    }

    #[test]
    fn infeasible_diagonal_pattern() {
        // Stable but not diagonally stable in the required sense: a strongly
        // non-normal drift whose symmetric part cannot be made negative by
        // diagonal scaling.
        let a = dmatrix![0.0, 1.0; -1.0, -0.001];
        let r = real(a, Matrix::identity(2, 2), Matrix::identity(2, 2));
        let res = structured_gramians(&r, &SparsityPattern::diagonal(2));
        assert!(matches!(res, Err(GramianError::Infeasible { .. })), "{res:?}");
    }
}
