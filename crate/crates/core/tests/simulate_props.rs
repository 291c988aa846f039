use std::path::Path;

use lnared_core::balance;
use lnared_core::gramian;
use lnared_core::linalg::{self, Matrix, Vector};
use lnared_core::expr::EvalError;
use lnared_core::network::{parse_network, LnaField, LnaModel};
use lnared_core::ode::OdeOptions;
use lnared_core::realization::Realization;
use lnared_core::simulate;
use proptest::prelude::*;

/// `ẋ = A (x - x_ss)` with constant noise.
struct Linear {
    a: Matrix,
    b: Matrix,
    x_ss: Vector,
}

impl LnaField for Linear {
    fn dim(&self) -> usize {
        self.a.nrows()
    }
    fn drift(&self, x: &Vector) -> Result<Vector, EvalError> {
        Ok(&self.a * (x - &self.x_ss))
    }
    fn jacobian(&self, _: &Vector) -> Result<Matrix, EvalError> {
        Ok(self.a.clone())
    }
    fn diffusion(&self, _: &Vector) -> Result<Matrix, EvalError> {
        Ok(self.b.clone())
    }
}

fn stable_system(n: usize) -> impl Strategy<Value = (Matrix, Matrix, Matrix)> {
    (
        prop::collection::vec(-1.0f64..1.0, n * n),
        0.3f64..2.0,
        prop::collection::vec(-1.0f64..1.0, n * 2),
        prop::collection::vec(-1.0f64..1.0, n),
    )
        .prop_map(move |(v, margin, b, c)| {
            let r = Matrix::from_vec(n, n, v);
            let shift = linalg::max_real_eigenvalue(&r).unwrap() + margin;
            (r - Matrix::identity(n, n) * shift, Matrix::from_vec(n, 2, b), Matrix::from_vec(1, n, c))
        })
}

fn grid(horizon: f64, steps: usize) -> Vec<f64> {
    (0..=steps).map(|i| horizon * i as f64 / steps as f64).collect()
}

fn toy() -> LnaModel {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../models/toy.json");
    LnaModel::new(parse_network(&std::fs::read_to_string(path).unwrap()).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn stationary_covariance_is_a_fixed_point((a, b, _) in (1..=5usize).prop_flat_map(stable_system)) {
        let n = a.nrows();
        let p0 = linalg::solve_lyapunov(&a, &(&b * b.transpose())).unwrap();
        let traj = simulate::propagate_moments(|_| a.clone(), |_| b.clone(), &Vector::zeros(n), &p0, &grid(5.0, 50), &OdeOptions::default()).unwrap();
        for p in &traj.covariance {
            prop_assert!((p - &p0).norm() <= 1e-6 * p0.norm());
        }
    }

    #[test]
    fn hinf_dominates_grid_and_h2_dual_formula((a, b, c) in (1..=5usize).prop_flat_map(stable_system)) {
        let r = Realization::strictly_proper(a.clone(), b.clone(), c.clone()).unwrap();
        prop_assert!(simulate::hinf_norm(&r).unwrap() >= simulate::hinf_grid_lower_bound(&r).unwrap());
        let q = linalg::solve_lyapunov(&a.transpose(), &(c.transpose() * &c)).unwrap();
        let dual = (b.transpose() * q * &b).trace();
        let h2 = simulate::h2_norm(&r).unwrap();
        prop_assert!((h2 * h2 - dual).abs() <= 1e-9 * dual.max(1e-300));
    }

    #[test]
    fn mean_error_is_bounded_by_h2_distance(
        (a, b, c) in (3..=5usize).prop_flat_map(stable_system),
        v in prop::collection::vec(-1.0f64..1.0, 2),
    ) {
        let n = a.nrows();
        let mut v = Vector::from_vec(v);
        if v.norm() < 1e-3 {
            v[0] = 1.0;
        }
        v /= v.norm();
        let r = Realization::strictly_proper(a.clone(), b.clone(), c.clone()).unwrap();
        let g = gramian::classical_gramians(&r).unwrap();
        let bf = balance::balance(&g.p, &g.q).unwrap();
        let red = match balance::truncate(&r, &bf, n - 1) {
            Ok(red) => red,
            Err(balance::BalanceError::HankelTie { .. }) => return Ok(()),
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        };
        let x_ss = Vector::from_element(n, 1.0);
        let field = Linear { a, b: b.clone(), x_ss: x_ss.clone() };
        let x0 = &x_ss + &b * &v;
        let cmp = simulate::compare_models(&field, &c, &x0, &x_ss, &red, &grid(40.0, 4000), &OdeOptions::default()).unwrap();
        let h2 = simulate::h2_norm(&r.difference(&red.reduced).unwrap()).unwrap();
        prop_assert!(cmp.report.l2 <= h2 + 1e-6, "L2 {} H2 {}", cmp.report.l2, h2);
    }
}

#[test]
fn scalar_covariance_closed_form() {
    let ts = grid(3.0, 30);
    let traj = simulate::propagate_moments(
        |_| Matrix::from_element(1, 1, -1.0),
        |_| Matrix::from_element(1, 1, 2f64.sqrt()),
        &Vector::zeros(1),
        &Matrix::zeros(1, 1),
        &ts,
        &OdeOptions::default(),
    )
    .unwrap();
    for (t, p) in ts.iter().zip(&traj.covariance) {
        assert!((p[(0, 0)] - (1.0 - (-2.0 * t).exp())).abs() < 1e-8);
    }
}

#[test]
fn h2_quadrature_agrees_on_toy_linearization() {
    let m = toy();
    let x = m.steady_state(&Vector::from_vec(vec![1.0, 10.0, 1.0, 1.0])).unwrap();
    let lin = m.linearize(&x).unwrap();
    let r = Realization::strictly_proper(lin.a, lin.b, m.c.clone()).unwrap();
    let exact = simulate::h2_norm(&r).unwrap();
    let quad = simulate::h2_quadrature(&r).unwrap();
    assert!((exact - quad).abs() <= 1e-3 * exact);
}

fn rk4_covariance(a: &Matrix, bbt: &Matrix, p0: &Matrix, horizon: f64, steps: usize) -> Matrix {
    let f = |p: &Matrix| a * p + p * a.transpose() + bbt;
    let h = horizon / steps as f64;
    let mut p = p0.clone();
    for _ in 0..steps {
        let k1 = f(&p);
        let k2 = f(&(&p + &k1 * (h / 2.0)));
        let k3 = f(&(&p + &k2 * (h / 2.0)));
        let k4 = f(&(&p + &k3 * h));
        p += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    p
}

#[test]
fn toy_covariance_matches_richardson_oracle() {
    let m = toy();
    let x0 = Vector::from_vec(vec![1.0, 10.0, 1.0, 1.0]);
    let x_ss = m.steady_state(&x0).unwrap();
    let at0 = m.linearize(&x0).unwrap();
    let p0 = linalg::solve_lyapunov(&at0.a, &(&at0.b * at0.b.transpose())).unwrap();
    let lin = m.linearize(&x_ss).unwrap();
    let horizon = 5.0;
    let traj = simulate::propagate_moments(
        |_| lin.a.clone(),
        |_| lin.b.clone(),
        &Vector::zeros(4),
        &p0,
        &[0.0, horizon],
        &OdeOptions::default(),
    )
    .unwrap();
    let p = traj.covariance.last().unwrap();
    assert!(p.iter().all(|v| v.is_finite()));
    assert!(linalg::lambda_min_sym(p) >= -1e-12);
    let bbt = &lin.b * lin.b.transpose();
    let coarse = rk4_covariance(&lin.a, &bbt, &p0, horizon, 4000);
    let fine = rk4_covariance(&lin.a, &bbt, &p0, horizon, 8000);
    let oracle = &fine + (&fine - &coarse) / 15.0;
    assert!((p - oracle).norm() <= 1e-6);
}

#[test]
fn euler_maruyama_matches_stationary_variance() {
    let a = |_: f64| Matrix::from_element(1, 1, -1.0);
    let b = |_: f64| Matrix::from_element(1, 1, 2f64.sqrt());
    let ts = grid(1.0, 10);
    let paths = 10_000;
    let em = simulate::euler_maruyama(a, b, &Vector::zeros(1), 1e-3, &ts, paths, 7).unwrap();
    let exact = simulate::propagate_moments(a, b, &Vector::zeros(1), &Matrix::zeros(1, 1), &ts, &OdeOptions::default()).unwrap();
    let var = em.covariance.last().unwrap()[(0, 0)];
    let target = exact.covariance.last().unwrap()[(0, 0)];
    let se = target * (2.0 / (paths as f64 - 1.0)).sqrt();
    assert!((var - target).abs() <= 5.0 * se, "variance {var} target {target} se {se}");

    let again = simulate::euler_maruyama(a, b, &Vector::zeros(1), 1e-3, &ts, paths, 7).unwrap();
    assert_eq!(em.mean, again.mean);
    assert_eq!(em.covariance, again.covariance);
}

#[test]
fn deterministic_em_tracks_matrix_exponential() {
    let a = Matrix::from_row_slice(2, 2, &[-1.0, 0.5, 0.0, -2.0]);
    let eta0 = Vector::from_vec(vec![1.0, -1.0]);
    let ts = grid(2.0, 4);
    let em = simulate::euler_maruyama(|_| a.clone(), |_| Matrix::zeros(2, 1), &eta0, 1e-4, &ts, 1, 0).unwrap();
    for (t, m) in ts.iter().zip(&em.mean) {
        let exact = (&a * *t).exp() * &eta0;
        assert!((m - exact).norm() <= 1e-3);
    }
}

#[test]
fn identical_reduction_reports_zero_error() {
    let a = Matrix::from_row_slice(2, 2, &[-1.0, 0.3, 0.2, -2.0]);
    let b = Matrix::identity(2, 2);
    let c = Matrix::from_row_slice(1, 2, &[1.0, 1.0]);
    let r = Realization::strictly_proper(a.clone(), b.clone(), c.clone()).unwrap();
    let red = balance::timescale_reduce(&r, &[0, 1], &[]).unwrap();
    let x_ss = Vector::from_vec(vec![1.0, 2.0]);
    let field = Linear { a, b, x_ss: x_ss.clone() };
    let x0 = Vector::from_vec(vec![2.0, 1.0]);
    let ts = grid(10.0, 200);
    let cmp = simulate::compare_models(&field, &c, &x0, &x_ss, &red, &ts, &OdeOptions::default()).unwrap();
    assert_eq!((cmp.report.l1, cmp.report.l2, cmp.report.linf), (0.0, 0.0, 0.0));
    let again = simulate::compare_models(&field, &c, &x0, &x_ss, &red, &ts, &OdeOptions::default()).unwrap();
    assert_eq!(cmp.report, again.report);
}
