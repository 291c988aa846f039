use lnared_core::balance::{self, BalanceError, Method};
use lnared_core::gramian::{self, SparsityPattern};
use lnared_core::linalg::{self, Matrix};
use lnared_core::matclass;
use lnared_core::realization::Realization;
use lnared_core::simulate;
use proptest::prelude::*;

/// Strictly row diagonally dominant with negative diagonal, so `-A` is H+.
fn h_drift(n: usize) -> impl Strategy<Value = Matrix> {
    (prop::collection::vec(-1.0f64..1.0, n * n), prop::collection::vec(0.1f64..1.0, n)).prop_map(move |(v, margin)| {
        let mut a = Matrix::from_vec(n, n, v);
        for i in 0..n {
            let off: f64 = (0..n).filter(|&j| j != i).map(|j| a[(i, j)].abs()).sum();
            a[(i, i)] = -(off + margin[i]);
        }
        a
    })
}

fn realization(max_n: usize) -> impl Strategy<Value = Realization> {
    (2..=max_n).prop_flat_map(|n| {
        (
            h_drift(n),
            prop::collection::vec(-1.0f64..1.0, n * 2),
            prop::collection::vec(-1.0f64..1.0, n * 2),
        )
            .prop_map(move |(a, b, c)| {
                Realization::strictly_proper(a, Matrix::from_vec(n, 2, b), Matrix::from_vec(2, n, c)).unwrap()
            })
    })
}

fn ok_or_tie<T>(r: Result<T, BalanceError>) -> Result<Option<T>, TestCaseError> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(BalanceError::HankelTie { .. }) => Ok(None),
        Err(e) => Err(TestCaseError::fail(e.to_string())),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn certificate_is_positive_and_stabilising(a in (1..=8usize).prop_flat_map(h_drift)) {
        let rep = matclass::classify(&a);
        prop_assert!(rep.is_h_plus || rep.is_h);
        let cert = matclass::diagonal_certificate(&a).unwrap();
        prop_assert!(cert.v.iter().all(|x| *x > 0.0));
        prop_assert!(cert.w.iter().all(|x| *x > 0.0));
        prop_assert!(linalg::lambda_max_sym(&(&a * &cert.x + &cert.x * a.transpose())) < 0.0);
    }

    #[test]
    fn h_flag_is_invariant_under_diagonal_scaling(
        a in (2..=6usize).prop_flat_map(h_drift),
        d in prop::collection::vec(0.1f64..10.0, 6),
    ) {
        let n = a.nrows();
        let dm = Matrix::from_diagonal(&linalg::Vector::from_iterator(n, d.iter().take(n).copied()));
        let dinv = linalg::inverse(&dm).unwrap();
        let scaled = &dm * &a * dinv;
        prop_assert_eq!(matclass::classify(&a).is_h, matclass::classify(&scaled).is_h);
    }

    #[test]
    fn diagonal_pattern_is_always_feasible(r in realization(6)) {
        let pattern = SparsityPattern::diagonal(r.states());
        let g = gramian::structured_gramians(&r, &pattern)
            .or_else(|_| gramian::seeded_structured_gramians(&r, &pattern))
            .unwrap();
        g.verify(&r).unwrap();
    }

    #[test]
    fn classical_gramians_verify_and_lower_bound_structured(r in realization(5)) {
        let c = gramian::classical_gramians(&r).unwrap();
        c.verify(&r).unwrap();
        let s = gramian::structured_gramians(&r, &SparsityPattern::full(r.states())).unwrap();
        s.verify(&r).unwrap();
        prop_assert!(s.p.trace() >= c.p.trace() - 1e-6 * (1.0 + c.p.trace()));
        prop_assert!(s.q.trace() >= c.q.trace() - 1e-6 * (1.0 + c.q.trace()));
    }

    #[test]
    fn classical_truncation_obeys_hankel_bound(r in realization(6), keep_frac in 0.2f64..0.8) {
        let n = r.states();
        let keep = ((n as f64 * keep_frac) as usize).clamp(1, n - 1);
        let g = gramian::classical_gramians(&r).unwrap();
        let bf = balance::balance(&g.p, &g.q).unwrap();
        let tail = 2.0 * bf.sigma.rows(keep, n - keep).sum();
        if let Some(red) = ok_or_tie(balance::truncate(&r, &bf, keep))? {
            prop_assert_eq!(&red.reduced.d, &r.d);
        }
        for red in [ok_or_tie(balance::truncate(&r, &bf, keep))?, ok_or_tie(balance::singular_perturb(&r, &bf, keep))?]
            .into_iter()
            .flatten()
        {
            prop_assert!((&red.v * &red.w - Matrix::identity(keep, keep)).norm() <= 1e-10 * (1.0 + red.t.norm() * red.t_inv.norm()));
            let err = simulate::hinf_norm(&r.difference(&red.reduced).unwrap()).unwrap();
            prop_assert!(err <= tail * (1.0 + 1e-6) + 1e-9, "error {} tail {}", err, tail);
        }
    }

    #[test]
    fn structured_reduction_keeps_feedthrough_and_bound(r in realization(6)) {
        let n = r.states();
        let k = 1;
        let groups = [n - k];
        let pattern = SparsityPattern::preserved_and_groups(k, &groups);
        let g = match gramian::structured_gramians(&r, &pattern) {
            Ok(g) => g,
            Err(_) => gramian::seeded_structured_gramians(&r, &pattern).unwrap(),
        };
        for method in [Method::StructuredBt, Method::StructuredBsp] {
            let Some(red) = ok_or_tie(balance::reduce_structured(&r, &g, k, &[1], method))? else { continue };
            if method == Method::StructuredBt {
                prop_assert_eq!(&red.reduced.d, &r.d);
            }
            let err = simulate::hinf_norm(&r.difference(&red.reduced).unwrap()).unwrap();
            let tail = red.hankel_tail.unwrap();
            prop_assert!(err <= tail * (1.0 + 1e-6) + 1e-9, "error {} tail {}", err, tail);
        }
    }
}

#[test]
fn balanced_two_state_bound() {
    // Balanced with P = Q = diag(1/2, 1/200): a_ij = -b_i b_j / (σ_i + σ_j).
    let b2 = 0.1f64.sqrt();
    let a12 = -b2 / 0.505;
    let r = Realization::strictly_proper(
        Matrix::from_row_slice(2, 2, &[-1.0, a12, a12, -10.0]),
        Matrix::from_column_slice(2, 1, &[1.0, b2]),
        Matrix::from_row_slice(1, 2, &[1.0, b2]),
    )
    .unwrap();
    let g = gramian::classical_gramians(&r).unwrap();
    let bf = balance::balance(&g.p, &g.q).unwrap();
    assert!((bf.sigma[0] - 0.5).abs() < 1e-12 && (bf.sigma[1] - 0.005).abs() < 1e-12, "{:?}", bf.sigma);
    let red = balance::truncate(&r, &bf, 1).unwrap();
    let err = simulate::hinf_norm(&r.difference(&red.reduced).unwrap()).unwrap();
    assert!(err <= 0.01 * (1.0 + 1e-6), "error {err}");
}

#[test]
fn unbalanced_two_state_bound() {
    let r = Realization::strictly_proper(
        Matrix::from_diagonal(&linalg::Vector::from_vec(vec![-1.0, -10.0])),
        Matrix::from_column_slice(2, 1, &[1.0, 1.0]),
        Matrix::from_row_slice(1, 2, &[1.0, 0.1]),
    )
    .unwrap();
    let g = gramian::classical_gramians(&r).unwrap();
    let bf = balance::balance(&g.p, &g.q).unwrap();
    for red in [balance::truncate(&r, &bf, 1).unwrap(), balance::singular_perturb(&r, &bf, 1).unwrap()] {
        let err = simulate::hinf_norm(&r.difference(&red.reduced).unwrap()).unwrap();
        assert!(err <= 2.0 * bf.sigma[1] * (1.0 + 1e-6), "error {err} sigma {}", bf.sigma[1]);
    }
}
