//! Small math-expression language used to describe plants, gains, metrics
//! and equilibrium families.
//!
//! Expressions are trees over a [`VarSpace`]; variables are stored as slot
//! indices so evaluation takes a plain `&[f64]` in declaration order.

mod diff;
mod parse;
mod space;

use std::fmt;

pub use parse::parse;
pub use space::{ExprMatrix, ExprVector, VarRole, VarSpace, Variable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
    Exp,
    Ln,
    Sin,
    Cos,
    Sqrt,
}

impl UnaryOp {
    pub fn name(self) -> &'static str {
        match self {
            UnaryOp::Neg => "-",
            UnaryOp::Exp => "exp",
            UnaryOp::Ln => "ln",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Sqrt => "sqrt",
        }
    }

    pub(crate) fn from_function_name(name: &str) -> Option<Self> {
        Some(match name {
            "exp" => UnaryOp::Exp,
            "ln" => UnaryOp::Ln,
            "sin" => UnaryOp::Sin,
            "cos" => UnaryOp::Cos,
            "sqrt" => UnaryOp::Sqrt,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinaryOp {
    pub fn symbol(self) -> char {
        match self {
            BinaryOp::Add => '+',
            BinaryOp::Sub => '-',
            BinaryOp::Mul => '*',
            BinaryOp::Div => '/',
            BinaryOp::Pow => '^',
        }
    }
}

/// Expression tree. Immutable once built; cloning is a deep copy.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
}

/// Errors raised while parsing expression text.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParseError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("undeclared variable `{name}` at offset {offset}")]
    UndeclaredVariable { name: String, offset: usize },
    #[error("unknown function `{name}` at offset {offset}")]
    UnknownFunction { name: String, offset: usize },
    #[error("function `{name}` takes {expected} argument(s), found {found} (offset {offset})")]
    Arity {
        name: String,
        expected: usize,
        found: usize,
        offset: usize,
    },
}

impl ParseError {
    pub fn offset(&self) -> usize {
        match self {
            ParseError::Syntax { offset, .. }
            | ParseError::UndeclaredVariable { offset, .. }
            | ParseError::UnknownFunction { offset, .. }
            | ParseError::Arity { offset, .. } => *offset,
        }
    }
}

/// Domain failure during evaluation. `subexpr` is the offending node.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("domain error in `{subexpr}`: {reason}")]
pub struct EvalError {
    pub reason: String,
    pub subexpr: Expr,
}

impl EvalError {
    /// Renders the offending subexpression with real variable names.
    pub fn describe(&self, space: &VarSpace) -> String {
        format!(
            "domain error in `{}`: {}",
            self.subexpr.display(space),
            self.reason
        )
    }
}

impl Expr {
    pub fn constant(v: f64) -> Expr {
        Expr::Const(v)
    }

    pub fn var(index: usize) -> Expr {
        Expr::Var(index)
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(c) => Some(*c),
            _ => None,
        }
    }

    fn is_const(&self, v: f64) -> bool {
        matches!(self, Expr::Const(c) if *c == v)
    }

    pub fn neg(a: Expr) -> Expr {
        match a {
            Expr::Const(c) => Expr::Const(-c),
            Expr::Unary(UnaryOp::Neg, inner) => *inner,
            other => Expr::Unary(UnaryOp::Neg, Box::new(other)),
        }
    }

    pub fn unary(op: UnaryOp, a: Expr) -> Expr {
        if op == UnaryOp::Neg {
            return Expr::neg(a);
        }
        if let Expr::Const(c) = a {
            let folded = apply_unary(op, c);
            if let Some(v) = folded.filter(|v| v.is_finite()) {
                return Expr::Const(v);
            }
        }
        Expr::Unary(op, Box::new(a))
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        match (&a, &b) {
            _ if a.is_const(0.0) => b,
            _ if b.is_const(0.0) => a,
            (Expr::Const(x), Expr::Const(y)) => Expr::Const(x + y),
            _ => Expr::Binary(BinaryOp::Add, Box::new(a), Box::new(b)),
        }
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        match (&a, &b) {
            _ if b.is_const(0.0) => a,
            _ if a.is_const(0.0) => Expr::neg(b),
            (Expr::Const(x), Expr::Const(y)) => Expr::Const(x - y),
            _ => Expr::Binary(BinaryOp::Sub, Box::new(a), Box::new(b)),
        }
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        match (&a, &b) {
            _ if a.is_const(0.0) || b.is_const(0.0) => Expr::Const(0.0),
            _ if a.is_const(1.0) => b,
            _ if b.is_const(1.0) => a,
            _ if a.is_const(-1.0) => Expr::neg(b),
            _ if b.is_const(-1.0) => Expr::neg(a),
            (Expr::Const(x), Expr::Const(y)) => Expr::Const(x * y),
            _ => Expr::Binary(BinaryOp::Mul, Box::new(a), Box::new(b)),
        }
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        match (&a, &b) {
            _ if b.is_const(1.0) => a,
            _ if a.is_const(0.0) && !b.is_const(0.0) => Expr::Const(0.0),
            (Expr::Const(x), Expr::Const(y)) if *y != 0.0 => Expr::Const(x / y),
            _ => Expr::Binary(BinaryOp::Div, Box::new(a), Box::new(b)),
        }
    }

    pub fn pow(a: Expr, b: Expr) -> Expr {
        match (&a, &b) {
            _ if b.is_const(0.0) => Expr::Const(1.0),
            _ if b.is_const(1.0) => a,
            (Expr::Const(x), Expr::Const(y)) => match apply_pow(*x, *y) {
                Some(v) if v.is_finite() => Expr::Const(v),
                _ => Expr::Binary(BinaryOp::Pow, Box::new(a), Box::new(b)),
            },
            _ => Expr::Binary(BinaryOp::Pow, Box::new(a), Box::new(b)),
        }
    }

    pub fn binary(op: BinaryOp, a: Expr, b: Expr) -> Expr {
        match op {
            BinaryOp::Add => Expr::add(a, b),
            BinaryOp::Sub => Expr::sub(a, b),
            BinaryOp::Mul => Expr::mul(a, b),
            BinaryOp::Div => Expr::div(a, b),
            BinaryOp::Pow => Expr::pow(a, b),
        }
    }

    /// Evaluates with `values[i]` bound to variable slot `i`.
    pub fn eval(&self, values: &[f64]) -> Result<f64, EvalError> {
        match self {
            Expr::Const(c) => Ok(*c),
            Expr::Var(i) => Ok(values[*i]),
            Expr::Unary(op, a) => {
                let x = a.eval(values)?;
                apply_unary(*op, x).ok_or_else(|| EvalError {
                    reason: format!("{} undefined at {x}", op.name()),
                    subexpr: self.clone(),
                })
            }
            Expr::Binary(op, a, b) => {
                let x = a.eval(values)?;
                let y = b.eval(values)?;
                match op {
                    BinaryOp::Add => Ok(x + y),
                    BinaryOp::Sub => Ok(x - y),
                    BinaryOp::Mul => Ok(x * y),
                    BinaryOp::Div => {
                        if y == 0.0 {
                            Err(EvalError {
                                reason: "division by zero".into(),
                                subexpr: self.clone(),
                            })
                        } else {
                            Ok(x / y)
                        }
                    }
                    BinaryOp::Pow => apply_pow(x, y).ok_or_else(|| EvalError {
                        reason: format!("power undefined for base {x}, exponent {y}"),
                        subexpr: self.clone(),
                    }),
                }
            }
        }
    }

    /// True if variable slot `index` occurs anywhere in the tree.
    pub fn depends_on(&self, index: usize) -> bool {
        match self {
            Expr::Const(_) => false,
            Expr::Var(i) => *i == index,
            Expr::Unary(_, a) => a.depends_on(index),
            Expr::Binary(_, a, b) => a.depends_on(index) || b.depends_on(index),
        }
    }

    /// Largest variable slot referenced, if any.
    pub fn max_var(&self) -> Option<usize> {
        match self {
            Expr::Const(_) => None,
            Expr::Var(i) => Some(*i),
            Expr::Unary(_, a) => a.max_var(),
            Expr::Binary(_, a, b) => match (a.max_var(), b.max_var()) {
                (Some(x), Some(y)) => Some(x.max(y)),
                (x, y) => x.or(y),
            },
        }
    }

    /// Replaces every `Var(i)` by `with[i]`. The result lives in whatever
    /// space the replacement expressions belong to.
    pub fn substitute(&self, with: &[Expr]) -> Expr {
        match self {
            Expr::Const(c) => Expr::Const(*c),
            Expr::Var(i) => with[*i].clone(),
            Expr::Unary(op, a) => Expr::unary(*op, a.substitute(with)),
            Expr::Binary(op, a, b) => Expr::binary(*op, a.substitute(with), b.substitute(with)),
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Var(_) => 1,
            Expr::Unary(_, a) => 1 + a.node_count(),
            Expr::Binary(_, a, b) => 1 + a.node_count() + b.node_count(),
        }
    }

    /// Fully parenthesized rendering that [`parse`] reads back.
    pub fn display<'a>(&'a self, space: &'a VarSpace) -> impl fmt::Display + 'a {
        Printer {
            expr: self,
            space: Some(space),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        Printer {
            expr: self,
            space: None,
        }
        .fmt(f)
    }
}

struct Printer<'a> {
    expr: &'a Expr,
    space: Option<&'a VarSpace>,
}

impl Printer<'_> {
    fn child<'b>(&'b self, e: &'b Expr) -> Printer<'b> {
        Printer {
            expr: e,
            space: self.space,
        }
    }
}

impl fmt::Display for Printer<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.expr {
            Expr::Const(c) => {
                if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) {
                    write!(f, "(-{:?})", -c)
                } else {
                    write!(f, "{c:?}")
                }
            }
            Expr::Var(i) => match self.space.and_then(|s| s.get(*i)) {
                Some(v) => write!(f, "{}", v.name),
                None => write!(f, "v{i}"),
            },
            Expr::Unary(UnaryOp::Neg, a) => write!(f, "(-{})", self.child(a)),
            Expr::Unary(op, a) => write!(f, "{}({})", op.name(), self.child(a)),
            Expr::Binary(op, a, b) => {
                write!(f, "({} {} {})", self.child(a), op.symbol(), self.child(b))
            }
        }
    }
}

pub(crate) fn apply_unary(op: UnaryOp, x: f64) -> Option<f64> {
    match op {
        UnaryOp::Neg => Some(-x),
        UnaryOp::Exp => Some(x.exp()),
        UnaryOp::Ln => (x > 0.0).then(|| x.ln()),
        UnaryOp::Sin => Some(x.sin()),
        UnaryOp::Cos => Some(x.cos()),
        UnaryOp::Sqrt => (x >= 0.0).then(|| x.sqrt()),
    }
}

pub(crate) fn apply_pow(x: f64, y: f64) -> Option<f64> {
    if x == 0.0 && y < 0.0 {
        return None;
    }
    if x < 0.0 && y.fract() != 0.0 {
        return None;
    }
    if y.fract() == 0.0 && y.abs() <= i32::MAX as f64 {
        Some(x.powi(y as i32))
    } else {
        Some(x.powf(y))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space(names: &[&str]) -> VarSpace {
        VarSpace::from_names(names, VarRole::Free)
    }

    #[test]
    fn evaluates_linear_combination() {
        let s = space(&["x1", "x2", "w"]);
        let e = parse("-x1 - x2 + w", &s).unwrap();
        assert_eq!(e.eval(&[1.0, 2.0, 3.0]).unwrap(), 0.0);
    }

    #[test]
    fn plant_second_row_vanishes_at_origin() {
        let s = space(&["x2", "u"]);
        let e = parse("1 - exp(-x2) + u", &s).unwrap();
        assert_eq!(e.eval(&[0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn reports_domain_errors() {
        let s = space(&["x"]);
        let e = parse("ln(x)", &s).unwrap();
        let err = e.eval(&[-1.0]).unwrap_err();
        assert!(err.describe(&s).contains("ln(x)"));
        let e = parse("1 / (x - 1)", &s).unwrap();
        assert!(e.eval(&[1.0]).is_err());
        let e = parse("exp(-w) - 1", &space(&["w"])).unwrap();
        assert_eq!(e.eval(&[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn folds_identity_patterns() {
        let x = Expr::var(0);
        assert_eq!(Expr::mul(Expr::constant(0.0), x.clone()), Expr::Const(0.0));
        assert_eq!(Expr::add(x.clone(), Expr::constant(0.0)), x);
        assert_eq!(Expr::pow(x.clone(), Expr::constant(1.0)), x);
        assert_eq!(Expr::neg(Expr::neg(x.clone())), x);
    }

    #[test]
    fn negative_constants_print_parseable() {
        let s = space(&["x"]);
        let e = Expr::mul(Expr::constant(-2.5), Expr::var(0));
        let text = e.display(&s).to_string();
        let back = parse(&text, &s).unwrap();
        assert_eq!(back.eval(&[3.0]).unwrap(), -7.5);
    }

    #[test]
    fn substitution_composes() {
        let s = space(&["a", "b"]);
        let e = parse("a * b + 1", &s).unwrap();
        let t = space(&["t"]);
        let a = parse("sin(t)", &t).unwrap();
        let b = parse("2", &t).unwrap();
        let c = e.substitute(&[a, b]);
        let v = c.eval(&[0.5]).unwrap();
        assert!((v - (2.0 * 0.5f64.sin() + 1.0)).abs() < 1e-15);
    }
}
