//! Rate-law expressions: parsing, evaluation and forward-mode derivatives.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq)]
pub enum Expression {
    Const(f64),
    Param(usize),
    Species(usize),
    Add(Box<Expression>, Box<Expression>),
    Sub(Box<Expression>, Box<Expression>),
    Mul(Box<Expression>, Box<Expression>),
    Div(Box<Expression>, Box<Expression>),
    Pow(Box<Expression>, Box<Expression>),
    Neg(Box<Expression>),
    Sqrt(Box<Expression>),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("column {column}: {message}")]
    Syntax { column: usize, message: String },
    #[error("unknown identifier `{0}`")]
    UnknownIdentifier(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("square root of negative value {0}")]
    NegativeSqrt(f64),
    #[error("non-finite result")]
    NonFinite,
}

/// Value together with its gradient with respect to the species vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Dual {
    pub value: f64,
    pub grad: Vec<f64>,
}

impl Dual {
    fn constant(value: f64, n: usize) -> Self {
        Dual { value, grad: vec![0.0; n] }
    }

    fn combine(value: f64, a: &Dual, da: f64, b: &Dual, db: f64) -> Self {
        let grad = a.grad.iter().zip(&b.grad).map(|(x, y)| da * x + db * y).collect();
        Dual { value, grad }
    }

    fn chain(value: f64, a: &Dual, da: f64) -> Self {
        Dual { value, grad: a.grad.iter().map(|x| da * x).collect() }
    }
}

fn finite(v: f64) -> Result<f64, EvalError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(EvalError::NonFinite)
    }
}

impl Expression {
    pub fn eval(&self, x: &[f64], params: &[f64]) -> Result<f64, EvalError> {
        use Expression::*;
        let v = match self {
            Const(c) => *c,
            Param(i) => params[*i],
            Species(i) => x[*i],
            Add(a, b) => a.eval(x, params)? + b.eval(x, params)?,
            Sub(a, b) => a.eval(x, params)? - b.eval(x, params)?,
            Mul(a, b) => a.eval(x, params)? * b.eval(x, params)?,
            Div(a, b) => {
                let d = b.eval(x, params)?;
                if d == 0.0 {
                    return Err(EvalError::DivisionByZero);
                }
                a.eval(x, params)? / d
            }
            Pow(a, b) => a.eval(x, params)?.powf(b.eval(x, params)?),
            Neg(a) => -a.eval(x, params)?,
            Sqrt(a) => {
                let v = a.eval(x, params)?;
                if v < 0.0 {
                    return Err(EvalError::NegativeSqrt(v));
                }
                v.sqrt()
            }
        };
        finite(v)
    }

    /// Value and exact gradient with respect to the species vector `x`.
    pub fn eval_dual(&self, x: &[f64], params: &[f64]) -> Result<Dual, EvalError> {
        use Expression::*;
        let n = x.len();
        let out = match self {
            Const(c) => Dual::constant(*c, n),
            Param(i) => Dual::constant(params[*i], n),
            Species(i) => {
                let mut d = Dual::constant(x[*i], n);
                d.grad[*i] = 1.0;
                d
            }
            Add(a, b) => {
                let (a, b) = (a.eval_dual(x, params)?, b.eval_dual(x, params)?);
                Dual::combine(a.value + b.value, &a, 1.0, &b, 1.0)
            }
            Sub(a, b) => {
                let (a, b) = (a.eval_dual(x, params)?, b.eval_dual(x, params)?);
                Dual::combine(a.value - b.value, &a, 1.0, &b, -1.0)
            }
            Mul(a, b) => {
                let (a, b) = (a.eval_dual(x, params)?, b.eval_dual(x, params)?);
                Dual::combine(a.value * b.value, &a, b.value, &b, a.value)
            }
            Div(a, b) => {
                let (a, b) = (a.eval_dual(x, params)?, b.eval_dual(x, params)?);
                if b.value == 0.0 {
                    return Err(EvalError::DivisionByZero);
                }
                let q = a.value / b.value;
                Dual::combine(q, &a, 1.0 / b.value, &b, -q / b.value)
            }
            Pow(a, b) => {
                let (a, b) = (a.eval_dual(x, params)?, b.eval_dual(x, params)?);
                let value = a.value.powf(b.value);
                let da = if b.value == 0.0 { 0.0 } else { b.value * a.value.powf(b.value - 1.0) };
                // The logarithmic term only contributes when the exponent depends on x.
                let db = if b.grad.iter().all(|g| *g == 0.0) { 0.0 } else { value * a.value.ln() };
                Dual::combine(value, &a, da, &b, db)
            }
            Neg(a) => {
                let a = a.eval_dual(x, params)?;
                Dual::chain(-a.value, &a, -1.0)
            }
            Sqrt(a) => {
                let a = a.eval_dual(x, params)?;
                if a.value < 0.0 {
                    return Err(EvalError::NegativeSqrt(a.value));
                }
                let s = a.value.sqrt();
                let ds = if a.grad.iter().all(|g| *g == 0.0) { 0.0 } else { 0.5 / s };
                Dual::chain(s, &a, ds)
            }
        };
        finite(out.value)?;
        for g in &out.grad {
            finite(*g)?;
        }
        Ok(out)
    }

    pub fn references_param(&self, idx: usize) -> bool {
        use Expression::*;
        match self {
            Param(i) => *i == idx,
            Const(_) | Species(_) => false,
            Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | Pow(a, b) => {
                a.references_param(idx) || b.references_param(idx)
            }
            Neg(a) | Sqrt(a) => a.references_param(idx),
        }
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use Expression::*;
        match self {
            Const(c) => write!(f, "{c}"),
            Param(i) => write!(f, "p[{i}]"),
            Species(i) => write!(f, "x[{i}]"),
            Add(a, b) => write!(f, "({a} + {b})"),
            Sub(a, b) => write!(f, "({a} - {b})"),
            Mul(a, b) => write!(f, "({a} * {b})"),
            Div(a, b) => write!(f, "({a} / {b})"),
            Pow(a, b) => write!(f, "({a} ^ {b})"),
            Neg(a) => write!(f, "(-{a})"),
            Sqrt(a) => write!(f, "sqrt({a})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Op(char),
}

fn tokenize(src: &str) -> Result<Vec<(usize, Token)>, ExprError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let column = i + 1;
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let v = text.parse::<f64>().map_err(|_| ExprError::Syntax {
                column,
                message: format!("bad number `{text}`"),
            })?;
            out.push((column, Token::Num(v)));
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push((column, Token::Ident(chars[start..i].iter().collect())));
        } else if "+-*/^()".contains(c) {
            out.push((column, Token::Op(c)));
            i += 1;
        } else {
            return Err(ExprError::Syntax { column, message: format!("unexpected character `{c}`") });
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<(usize, Token)>,
    pos: usize,
    end_column: usize,
    species: &'a [String],
    params: &'a [String],
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(_, t)| t)
    }

    fn column(&self) -> usize {
        self.tokens.get(self.pos).map(|(c, _)| *c).unwrap_or(self.end_column)
    }

    fn error<T>(&self, message: impl Into<String>) -> Result<T, ExprError> {
        Err(ExprError::Syntax { column: self.column(), message: message.into() })
    }

    fn eat(&mut self, op: char) -> bool {
        if self.peek() == Some(&Token::Op(op)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expression, ExprError> {
        let mut lhs = self.term()?;
        loop {
            if self.eat('+') {
                lhs = Expression::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat('-') {
                lhs = Expression::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expression, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat('*') {
                lhs = Expression::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat('/') {
                lhs = Expression::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expression, ExprError> {
        if self.eat('-') {
            Ok(Expression::Neg(Box::new(self.unary()?)))
        } else if self.eat('+') {
            self.unary()
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> Result<Expression, ExprError> {
        let base = self.primary()?;
        if self.eat('^') {
            // right associative; `-` binds looser than `^` on the left only
            let exp = self.unary()?;
            Ok(Expression::Pow(Box::new(base), Box::new(exp)))
        } else {
            Ok(base)
        }
    }

    fn primary(&mut self) -> Result<Expression, ExprError> {
        match self.peek().cloned() {
            Some(Token::Num(v)) => {
                self.pos += 1;
                Ok(Expression::Const(v))
            }
            Some(Token::Op('(')) => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(')') {
                    return self.error("expected `)`");
                }
                Ok(e)
            }
            Some(Token::Ident(name)) => {
                self.pos += 1;
                if self.peek() == Some(&Token::Op('(')) {
                    if name != "sqrt" {
                        return self.error(format!("unknown function `{name}`"));
                    }
                    self.pos += 1;
                    let e = self.expr()?;
                    if !self.eat(')') {
                        return self.error("expected `)`");
                    }
                    return Ok(Expression::Sqrt(Box::new(e)));
                }
                if let Some(i) = self.species.iter().position(|s| *s == name) {
                    Ok(Expression::Species(i))
                } else if let Some(i) = self.params.iter().position(|p| *p == name) {
                    Ok(Expression::Param(i))
                } else {
                    Err(ExprError::UnknownIdentifier(name))
                }
            }
            Some(Token::Op(c)) => self.error(format!("unexpected `{c}`")),
            None => self.error("unexpected end of expression"),
        }
    }
}

/// Parses an infix rate expression. Identifiers resolve to species first,
/// then to parameters.
pub fn parse_expression(src: &str, species: &[String], params: &[String]) -> Result<Expression, ExprError> {
    let tokens = tokenize(src)?;
    let mut p = Parser { tokens, pos: 0, end_column: src.chars().count() + 1, species, params };
    let e = p.expr()?;
    if p.pos != p.tokens.len() {
        return p.error("trailing input");
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn precedence_and_associativity() {
        let sp = names(&["x"]);
        let e = parse_expression("2^3^2", &sp, &[]).unwrap();
        assert_eq!(e.eval(&[0.0], &[]).unwrap(), 512.0);
        let e = parse_expression("-x^2 + 1", &sp, &[]).unwrap();
        assert_eq!(e.eval(&[3.0], &[]).unwrap(), -8.0);
        let e = parse_expression("8 / 2 / 2 - 1 - 1", &sp, &[]).unwrap();
        assert_eq!(e.eval(&[0.0], &[]).unwrap(), 0.0);
        let e = parse_expression("1.5e-1 * (x + 1)", &sp, &[]).unwrap();
        assert!((e.eval(&[1.0], &[]).unwrap() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn hill_derivative() {
        let sp = names(&["p"]);
        let e = parse_expression("3/(1+p^2)", &sp, &[]).unwrap();
        let d = e.eval_dual(&[1.0], &[]).unwrap();
        assert_eq!(d.value, 1.5);
        assert!((d.grad[0] + 1.5).abs() < 1e-15);
    }

    #[test]
    fn species_shadow_parameters() {
        let sp = names(&["k"]);
        let pa = names(&["k", "g"]);
        let e = parse_expression("k*g", &sp, &pa).unwrap();
        assert_eq!(e, Expression::Mul(Box::new(Expression::Species(0)), Box::new(Expression::Param(1))));
    }

    #[test]
    fn sqrt_and_errors() {
        let sp = names(&["x"]);
        let e = parse_expression("sqrt(x)", &sp, &[]).unwrap();
        let d = e.eval_dual(&[4.0], &[]).unwrap();
        assert_eq!((d.value, d.grad[0]), (2.0, 0.25));
        assert_eq!(e.eval(&[-1.0], &[]), Err(EvalError::NegativeSqrt(-1.0)));
        let e = parse_expression("1/x", &sp, &[]).unwrap();
        assert_eq!(e.eval(&[0.0], &[]), Err(EvalError::DivisionByZero));
        assert!(matches!(parse_expression("x +", &sp, &[]), Err(ExprError::Syntax { column: 4, .. })));
        assert!(matches!(parse_expression("(x", &sp, &[]), Err(ExprError::Syntax { .. })));
        assert!(matches!(parse_expression("x $ 2", &sp, &[]), Err(ExprError::Syntax { column: 3, .. })));
        assert_eq!(parse_expression("y", &sp, &[]), Err(ExprError::UnknownIdentifier("y".into())));
        assert!(matches!(parse_expression("exp(x)", &sp, &[]), Err(ExprError::Syntax { .. })));
    }

    #[test]
    fn variable_exponent_derivative() {
        let sp = names(&["x", "y"]);
        let e = parse_expression("x^y", &sp, &[]).unwrap();
        let d = e.eval_dual(&[2.0, 3.0], &[]).unwrap();
        assert!((d.grad[0] - 12.0).abs() < 1e-12);
        assert!((d.grad[1] - 8.0 * 2f64.ln()).abs() < 1e-12);
    }
}
