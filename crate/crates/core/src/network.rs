//! Reaction networks and their linear noise approximation.
//!
//! A network with stoichiometry `S`, macroscopic rates `f(x)` and volume `Ω`
//! yields the drift `g(x) = S f(x)`, its Jacobian `A(x)` and the diffusion
//! `B(x) = Ω^{-1/2} S diag(√f(x))`.

use std::collections::BTreeMap;

use serde::Deserialize;
use thiserror::Error;

use crate::expr::{parse_expression, EvalError, ExprError, Expression};
use crate::linalg::{self, LinalgError, Matrix, Vector};
use crate::realization::Realization;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("invalid field `{field}`: {message}")]
    Field { field: String, message: String },
    #[error("reaction {reaction}: unbound identifier `{name}`")]
    UnboundParameter { reaction: usize, name: String },
    #[error("reaction {reaction}: bad stoichiometry: {message}")]
    BadStoichiometry { reaction: usize, message: String },
    #[error("evaluation failed: {0}")]
    Eval(#[from] EvalError),
    #[error("Newton iteration did not converge (residual {residual:e})")]
    NoConvergence { residual: f64 },
    #[error("Jacobian is singular at the current iterate")]
    SingularJacobian,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    species: Vec<String>,
    #[serde(default)]
    parameters: BTreeMap<String, f64>,
    volume: Option<f64>,
    reactions: Vec<ReactionEntry>,
    #[serde(default)]
    output_species: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReactionEntry {
    stoich: Vec<f64>,
    rate: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReactionNetwork {
    pub species: Vec<String>,
    pub parameter_names: Vec<String>,
    pub parameter_values: Vec<f64>,
    pub volume: f64,
    /// `N x R` stoichiometry matrix.
    pub stoichiometry: Matrix,
    pub rates: Vec<Expression>,
    pub rate_sources: Vec<String>,
    /// Indices of observed species, in file order.
    pub outputs: Vec<usize>,
}

fn field_err(field: &str, message: impl Into<String>) -> NetworkError {
    NetworkError::Field { field: field.to_string(), message: message.into() }
}

/// Parses and validates the JSON model format.
pub fn parse_network(document: &str) -> Result<ReactionNetwork, NetworkError> {
    let file: ModelFile = serde_json::from_str(document).map_err(|e| NetworkError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let n = file.species.len();
    if n == 0 {
        return Err(field_err("species", "at least one species is required"));
    }
    for (i, s) in file.species.iter().enumerate() {
        if file.species[..i].contains(s) {
            return Err(field_err("species", format!("duplicate species `{s}`")));
        }
        if s.is_empty() || !s.chars().all(|c| c.is_alphanumeric() || c == '_') {
            return Err(field_err("species", format!("invalid species name `{s}`")));
        }
    }
    let volume = file.volume.unwrap_or(1.0);
    if !(volume > 0.0 && volume.is_finite()) {
        return Err(field_err("volume", "volume must be positive and finite"));
    }
    let (parameter_names, parameter_values): (Vec<String>, Vec<f64>) = file.parameters.into_iter().unzip();
    if let Some(i) = parameter_values.iter().position(|v| !v.is_finite()) {
        return Err(field_err("parameters", format!("parameter `{}` is not finite", parameter_names[i])));
    }
    if file.reactions.is_empty() {
        return Err(field_err("reactions", "at least one reaction is required"));
    }
    let r = file.reactions.len();
    let mut stoichiometry = Matrix::zeros(n, r);
    let mut rates = Vec::with_capacity(r);
    let mut rate_sources = Vec::with_capacity(r);
    for (j, reaction) in file.reactions.iter().enumerate() {
        if reaction.stoich.len() != n {
            return Err(NetworkError::BadStoichiometry {
                reaction: j,
                message: format!("expected {n} entries, found {}", reaction.stoich.len()),
            });
        }
        for (i, &v) in reaction.stoich.iter().enumerate() {
            if v.fract() != 0.0 || !v.is_finite() {
                return Err(NetworkError::BadStoichiometry {
                    reaction: j,
                    message: format!("entry {i} is not an integer ({v})"),
                });
            }
            stoichiometry[(i, j)] = v;
        }
        let e = parse_expression(&reaction.rate, &file.species, &parameter_names).map_err(|e| match e {
            ExprError::UnknownIdentifier(name) => NetworkError::UnboundParameter { reaction: j, name },
            other => field_err(&format!("reactions[{j}].rate"), other.to_string()),
        })?;
        rates.push(e);
        rate_sources.push(reaction.rate.clone());
    }
    let outputs = file
        .output_species
        .iter()
        .map(|name| {
            file.species
                .iter()
                .position(|s| s == name)
                .ok_or_else(|| field_err("output_species", format!("unknown species `{name}`")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ReactionNetwork {
        species: file.species,
        parameter_names,
        parameter_values,
        volume,
        stoichiometry,
        rates,
        rate_sources,
        outputs,
    })
}

impl ReactionNetwork {
    pub fn species_count(&self) -> usize {
        self.species.len()
    }

    pub fn reaction_count(&self) -> usize {
        self.rates.len()
    }

    pub fn species_index(&self, name: &str) -> Option<usize> {
        self.species.iter().position(|s| s == name)
    }

    pub fn fluxes(&self, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        self.rates.iter().map(|e| e.eval(x, &self.parameter_values)).collect()
    }

    /// `R x N` matrix of flux derivatives.
    pub fn flux_jacobian(&self, x: &[f64]) -> Result<Matrix, EvalError> {
        let mut out = Matrix::zeros(self.reaction_count(), x.len());
        for (j, e) in self.rates.iter().enumerate() {
            let d = e.eval_dual(x, &self.parameter_values)?;
            for (i, g) in d.grad.iter().enumerate() {
                out[(j, i)] = *g;
            }
        }
        Ok(out)
    }
}

/// Exact Jacobian of a list of expressions at `at`.
pub fn jacobian(exprs: &[Expression], params: &[f64], at: &[f64]) -> Result<Matrix, EvalError> {
    let mut out = Matrix::zeros(exprs.len(), at.len());
    for (j, e) in exprs.iter().enumerate() {
        let d = e.eval_dual(at, params)?;
        for (i, g) in d.grad.iter().enumerate() {
            out[(j, i)] = *g;
        }
    }
    Ok(out)
}

/// Drift, Jacobian and diffusion of a linear-noise model.
pub trait LnaField: Sync {
    fn dim(&self) -> usize;
    fn drift(&self, x: &Vector) -> Result<Vector, EvalError>;
    fn jacobian(&self, x: &Vector) -> Result<Matrix, EvalError>;
    fn diffusion(&self, x: &Vector) -> Result<Matrix, EvalError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct LnaModel {
    pub network: ReactionNetwork,
    /// Output selector; one row per observed species.
    pub c: Matrix,
}

impl LnaModel {
    /// Builds the model with outputs taken from the network's `output_species`
    /// (all species when none are listed).
    pub fn new(network: ReactionNetwork) -> Self {
        let n = network.species_count();
        let outputs: Vec<usize> = if network.outputs.is_empty() { (0..n).collect() } else { network.outputs.clone() };
        let c = selector(&outputs, n);
        LnaModel { network, c }
    }

    pub fn with_outputs(network: ReactionNetwork, outputs: &[usize]) -> Self {
        let c = selector(outputs, network.species_count());
        LnaModel { network, c }
    }

    /// Damped Newton iteration on `g(x) = 0`.
    ///
    /// Converges when `‖g(x)‖ <= 1e-12 (1 + ‖x‖)`; at most 200 iterations, each
    /// step halved up to 40 times until the residual decreases.
    pub fn steady_state(&self, x0: &Vector) -> Result<Vector, NetworkError> {
        newton(x0, 200, |x| self.drift(x), |x| self.jacobian(x))
    }

    /// Realization `(A(x_ss), B(x_ss), C, 0)`.
    pub fn linearize(&self, x_ss: &Vector) -> Result<Realization, NetworkError> {
        let a = self.jacobian(x_ss)?;
        let b = self.diffusion(x_ss)?;
        Ok(Realization::strictly_proper(a, b, self.c.clone())?)
    }
}

pub fn selector(rows: &[usize], n: usize) -> Matrix {
    let mut c = Matrix::zeros(rows.len(), n);
    for (r, &i) in rows.iter().enumerate() {
        c[(r, i)] = 1.0;
    }
    c
}

impl LnaField for LnaModel {
    fn dim(&self) -> usize {
        self.network.species_count()
    }

    fn drift(&self, x: &Vector) -> Result<Vector, EvalError> {
        let f = Vector::from_vec(self.network.fluxes(x.as_slice())?);
        Ok(&self.network.stoichiometry * f)
    }

    fn jacobian(&self, x: &Vector) -> Result<Matrix, EvalError> {
        Ok(&self.network.stoichiometry * self.network.flux_jacobian(x.as_slice())?)
    }

    fn diffusion(&self, x: &Vector) -> Result<Matrix, EvalError> {
        let f = self.network.fluxes(x.as_slice())?;
        let mut b = self.network.stoichiometry.clone();
        let scale = self.network.volume.sqrt().recip();
        for (j, fj) in f.iter().enumerate() {
            if *fj < 0.0 {
                return Err(EvalError::NegativeSqrt(*fj));
            }
            let s = fj.sqrt() * scale;
            b.column_mut(j).scale_mut(s);
        }
        Ok(b)
    }
}

/// Constant-coefficient field `g(x) = A x + c0` with constant diffusion.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearLna {
    pub a: Matrix,
    pub b: Matrix,
    pub offset: Vector,
}

impl LnaField for LinearLna {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn drift(&self, x: &Vector) -> Result<Vector, EvalError> {
        Ok(&self.a * x + &self.offset)
    }

    fn jacobian(&self, _x: &Vector) -> Result<Matrix, EvalError> {
        Ok(self.a.clone())
    }

    fn diffusion(&self, _x: &Vector) -> Result<Matrix, EvalError> {
        Ok(self.b.clone())
    }
}

/// A field expressed in coordinates `z = T x`.
#[derive(Debug, Clone)]
pub struct TransformedLna<'a, F: LnaField> {
    pub base: &'a F,
    pub t: Matrix,
    pub t_inv: Matrix,
}

impl<'a, F: LnaField> TransformedLna<'a, F> {
    pub fn new(base: &'a F, t: Matrix) -> Result<Self, LinalgError> {
        let t_inv = linalg::inverse(&t)?;
        Ok(TransformedLna { base, t, t_inv })
    }
}

impl<F: LnaField> LnaField for TransformedLna<'_, F> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn drift(&self, z: &Vector) -> Result<Vector, EvalError> {
        Ok(&self.t * self.base.drift(&(&self.t_inv * z))?)
    }

    fn jacobian(&self, z: &Vector) -> Result<Matrix, EvalError> {
        Ok(&self.t * self.base.jacobian(&(&self.t_inv * z))? * &self.t_inv)
    }

    fn diffusion(&self, z: &Vector) -> Result<Matrix, EvalError> {
        Ok(&self.t * self.base.diffusion(&(&self.t_inv * z))?)
    }
}

pub(crate) fn is_singular(j: &Matrix) -> bool {
    if j.is_empty() {
        return false;
    }
    let s = j.clone().svd(false, false).singular_values;
    let max = s.max();
    max <= linalg::ABS_FLOOR || s.min() <= 1e-13 * max
}

/// Damped Newton iteration shared by steady-state and fast-root solves.
pub(crate) fn newton<G, J>(x0: &Vector, max_iter: usize, mut g: G, mut jac: J) -> Result<Vector, NetworkError>
where
    G: FnMut(&Vector) -> Result<Vector, EvalError>,
    J: FnMut(&Vector) -> Result<Matrix, EvalError>,
{
    let converged = |r: &Vector, x: &Vector| r.norm() <= 1e-12 * (1.0 + x.norm());
    let mut x = x0.clone();
    let mut r = g(&x)?;
    for _ in 0..max_iter {
        if converged(&r, &x) {
            return Ok(x);
        }
        let jm = jac(&x)?;
        if is_singular(&jm) {
            return Err(NetworkError::SingularJacobian);
        }
        let step = jm.lu().solve(&r).ok_or(NetworkError::SingularJacobian)?;
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..=40 {
            let trial = &x - &step * lambda;
            if let Ok(rt) = g(&trial) {
                if rt.norm() < r.norm() || converged(&rt, &trial) {
                    x = trial;
                    r = rt;
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if converged(&r, &x) {
        Ok(x)
    } else {
        Err(NetworkError::NoConvergence { residual: r.norm() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BIRTH_DEATH: &str = r#"{
        "species": ["X"],
        "parameters": {"k": 1.0, "gamma": 1.0},
        "volume": 100,
        "reactions": [
            {"stoich": [1], "rate": "k"},
            {"stoich": [-1], "rate": "gamma * X"}
        ]
    }"#;

    #[test]
    fn birth_death() {
        let net = parse_network(BIRTH_DEATH).unwrap();
        assert_eq!((net.species_count(), net.reaction_count()), (1, 2));
        let m = LnaModel::new(net);
        let xss = m.steady_state(&Vector::from_element(1, 5.0)).unwrap();
        assert!((xss[0] - 1.0).abs() < 1e-12);
        let r = m.linearize(&xss).unwrap();
        assert_eq!(r.a[(0, 0)], -1.0);
        assert!((r.b[(0, 0)] - 0.1).abs() < 1e-15 && (r.b[(0, 1)] + 0.1).abs() < 1e-15);
        let p = linalg::solve_lyapunov(&r.a, &(&r.b * r.b.transpose())).unwrap();
        assert!((p[(0, 0)] - xss[0] / 100.0).abs() < 1e-15);
    }

    #[test]
    fn volume_defaults_to_one() {
        let doc = r#"{"species": ["X"], "reactions": [{"stoich": [1], "rate": "2"}]}"#;
        assert_eq!(parse_network(doc).unwrap().volume, 1.0);
    }

    #[test]
    fn error_paths() {
        let bad = r#"{"species": ["X"], "reactions": [{"stoich": [1, 0], "rate": "1"}]}"#;
        assert!(matches!(parse_network(bad), Err(NetworkError::BadStoichiometry { reaction: 0, .. })));
        let bad = r#"{"species": ["X"], "reactions": [{"stoich": [0.5], "rate": "1"}]}"#;
        assert!(matches!(parse_network(bad), Err(NetworkError::BadStoichiometry { .. })));
        let bad = r#"{"species": ["X"], "reactions": [{"stoich": [1], "rate": "k*X"}]}"#;
        assert_eq!(
            parse_network(bad),
            Err(NetworkError::UnboundParameter { reaction: 0, name: "k".into() })
        );
        let bad = "{\n \"species\": [\"X\"],\n \"reactions\": [}";
        assert!(matches!(parse_network(bad), Err(NetworkError::Parse { line: 3, .. })));
        let bad = r#"{"species": ["X"], "volume": 0, "reactions": [{"stoich": [1], "rate": "1"}]}"#;
        assert!(matches!(parse_network(bad), Err(NetworkError::Field { .. })));
    }

    #[test]
    fn singular_jacobian_detected() {
        let doc = r#"{"species": ["X"], "reactions": [{"stoich": [1], "rate": "1"}]}"#;
        let m = LnaModel::new(parse_network(doc).unwrap());
        assert_eq!(
            m.steady_state(&Vector::from_element(1, 1.0)),
            Err(NetworkError::SingularJacobian)
        );
    }

    #[test]
    fn diffusion_outer_product_matches_flux_form() {
        let m = LnaModel::new(parse_network(BIRTH_DEATH).unwrap());
        let x = Vector::from_element(1, 3.0);
        let b = m.diffusion(&x).unwrap();
        let bbt = &b * b.transpose();
        assert!((bbt[(0, 0)] - (1.0 + 3.0) / 100.0).abs() < 1e-16);
    }
}
