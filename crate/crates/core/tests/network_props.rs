use std::path::Path;

use lnared_core::linalg::{self, Matrix, Vector};
use lnared_core::network::{parse_network, LnaField, LnaModel, NetworkError};
use proptest::prelude::*;

fn model(name: &str) -> LnaModel {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../models").join(name);
    LnaModel::new(parse_network(&std::fs::read_to_string(path).unwrap()).unwrap())
}

fn fd_jacobian(m: &LnaModel, x: &Vector) -> Matrix {
    let n = x.len();
    let mut j = Matrix::zeros(n, n);
    for i in 0..n {
        let h = 1e-6 * (1.0 + x[i].abs());
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        let d = (m.drift(&xp).unwrap() - m.drift(&xm).unwrap()) / (2.0 * h);
        j.set_column(i, &d);
    }
    j
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn toy_jacobian_matches_finite_differences(v in prop::collection::vec(0.01f64..10.0, 4)) {
        let m = model("toy.json");
        let x = Vector::from_vec(v);
        let a = m.jacobian(&x).unwrap();
        let fd = fd_jacobian(&m, &x);
        prop_assert!((&a - &fd).norm() <= 1e-6 * (1.0 + a.norm()));
    }

    #[test]
    fn glycolysis_jacobian_matches_finite_differences(v in prop::collection::vec(0.05f64..5.0, 12)) {
        let m = model("glycolysis_layout.json");
        let x = Vector::from_vec(v);
        let a = m.jacobian(&x).unwrap();
        let fd = fd_jacobian(&m, &x);
        prop_assert!((&a - &fd).norm() <= 1e-6 * (1.0 + a.norm()));
    }

    #[test]
    fn diffusion_matches_flux_weighted_stoichiometry(v in prop::collection::vec(0.01f64..10.0, 4)) {
        let m = model("toy.json");
        let x = Vector::from_vec(v);
        let b = m.diffusion(&x).unwrap();
        let f = m.network.fluxes(x.as_slice()).unwrap();
        let s = &m.network.stoichiometry;
        let expected = s * Matrix::from_diagonal(&Vector::from_vec(f)) * s.transpose() / m.network.volume;
        prop_assert!((&b * b.transpose() - expected).norm() <= 1e-12 * (1.0 + b.norm_squared()));
    }
}

#[test]
fn toy_steady_state_from_initial_state() {
    let m = model("toy.json");
    let x0 = Vector::from_vec(vec![1.0, 10.0, 1.0, 1.0]);
    let x = m.steady_state(&x0).unwrap();
    let expected = [0.2889, 3.4611, 0.0578, 0.6922];
    for (a, b) in x.iter().zip(expected) {
        assert!((a - b).abs() < 1e-3);
    }
    assert!(m.drift(&x).unwrap().norm() <= 1e-12 * (1.0 + x.norm()));
    assert_eq!(x, m.steady_state(&x0).unwrap());
    assert!(linalg::is_stable(&m.jacobian(&x).unwrap()));
}

#[test]
fn birth_death_stationary_variance() {
    let m = model("birth_death.json");
    let x = m.steady_state(&Vector::from_element(1, 5.0)).unwrap();
    assert!((x[0] - 1.0).abs() < 1e-12);
    let r = m.linearize(&x).unwrap();
    let p = linalg::solve_lyapunov(&r.a, &(&r.b * r.b.transpose())).unwrap();
    assert!((p[(0, 0)] - x[0] / m.network.volume).abs() < 1e-12);
}

#[test]
fn glycolysis_layout_has_stable_steady_state() {
    let m = model("glycolysis_layout.json");
    let x = m.steady_state(&Vector::from_element(12, 1.0)).unwrap();
    assert!(x.iter().all(|v| *v > 0.0));
    assert!(linalg::is_stable(&m.jacobian(&x).unwrap()));
}

#[test]
fn unknown_fields_and_identifiers_are_rejected() {
    let extra = r#"{"species": ["X"], "reactions": [{"stoich": [1], "rate": "1"}], "colour": 3}"#;
    assert!(matches!(parse_network(extra), Err(NetworkError::Parse { .. })));
    let unbound = r#"{"species": ["X"], "reactions": [{"stoich": [1], "rate": "k * X"}]}"#;
    assert!(matches!(parse_network(unbound), Err(NetworkError::UnboundParameter { reaction: 0, .. })));
}
