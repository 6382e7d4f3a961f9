//! Symbolic expressions over state coordinates, parameters and unary function symbols.
//!
//! Trees are immutable and reference counted, so cloning is cheap and values can be
//! shared across threads. The text grammar is handled by [`parse`] and the
//! [`std::fmt::Display`] impl; the two round-trip.

mod compile;
mod diff;
mod eval;
mod parse;
mod print;
mod simplify;
mod zero;

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use num_rational::Rational64;

pub use compile::Program;
pub use eval::{evaluate, evaluate_with, Bindings, FuncDef};
pub use parse::{parse, parse_with_params};
pub use simplify::simplify;
pub use zero::{is_identically_zero, DomainBox, Witness, ZeroTest, ZeroTestOutcome};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("`{name}` takes exactly one argument, got {got}")]
    Arity { name: String, got: usize },
    #[error("unbound coordinate `{0}`")]
    UnboundCoord(String),
    #[error("unbound parameter `{0}`")]
    UnboundParam(String),
    #[error("unbound function symbol `{0}`")]
    UnboundFunc(String),
    #[error("domain error in `{term}`: {reason}")]
    Domain { term: String, reason: String },
    #[error("definition of `{name}` must depend on at most one variable, found {found:?}")]
    Definition { name: String, found: Vec<String> },
    #[error("invalid domain box: {0}")]
    Box(String),
    #[error("zero test needs at least one trial")]
    NoTrials,
}

pub type Result<T> = std::result::Result<T, ExprError>;

/// Exponent of a power node. Small rationals are kept exact so that, e.g.,
/// `nu^(1/2)` differentiates to `(1/2)*nu^(-1/2)` with no rounding.
#[derive(Clone, Debug, PartialEq)]
pub enum Exponent {
    Rational(Rational64),
    Expr(Expr),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Node {
    Const(f64),
    Coord(String),
    Param(String),
    /// `name` differentiated `order` times, applied to `arg`.
    Func {
        name: String,
        order: u32,
        arg: Expr,
    },
    Neg(Expr),
    Add(Vec<Expr>),
    Sub(Expr, Expr),
    Mul(Vec<Expr>),
    Div(Expr, Expr),
    Pow(Expr, Exponent),
    Exp(Expr),
    Log(Expr),
    Sqrt(Expr),
    Sin(Expr),
    Cos(Expr),
}

#[derive(Clone, PartialEq)]
pub struct Expr(Arc<Node>);

impl Expr {
    pub fn new(node: Node) -> Self {
        Expr(Arc::new(node))
    }

    pub fn node(&self) -> &Node {
        &self.0
    }

    pub fn constant(v: f64) -> Self {
        Self::new(Node::Const(v))
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn one() -> Self {
        Self::constant(1.0)
    }

    pub fn coord(name: impl Into<String>) -> Self {
        Self::new(Node::Coord(name.into()))
    }

    pub fn param(name: impl Into<String>) -> Self {
        Self::new(Node::Param(name.into()))
    }

    pub fn func(name: impl Into<String>, order: u32, arg: Expr) -> Self {
        Self::new(Node::Func {
            name: name.into(),
            order,
            arg,
        })
    }

    pub fn add(terms: Vec<Expr>) -> Self {
        Self::new(Node::Add(terms))
    }

    pub fn mul(factors: Vec<Expr>) -> Self {
        Self::new(Node::Mul(factors))
    }

    pub fn pow(self, exponent: Expr) -> Self {
        Self::new(Node::Pow(self, Exponent::Expr(exponent)))
    }

    pub fn powr(self, num: i64, den: i64) -> Self {
        Self::new(Node::Pow(
            self,
            Exponent::Rational(Rational64::new(num, den)),
        ))
    }

    pub fn exp(self) -> Self {
        Self::new(Node::Exp(self))
    }

    pub fn log(self) -> Self {
        Self::new(Node::Log(self))
    }

    pub fn sqrt(self) -> Self {
        Self::new(Node::Sqrt(self))
    }

    pub fn sin(self) -> Self {
        Self::new(Node::Sin(self))
    }

    pub fn cos(self) -> Self {
        Self::new(Node::Cos(self))
    }

    pub fn as_const(&self) -> Option<f64> {
        match self.node() {
            Node::Const(c) => Some(*c),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_const() == Some(0.0)
    }

    pub fn is_one(&self) -> bool {
        self.as_const() == Some(1.0)
    }

    /// Immediate children in a fixed order.
    pub fn children(&self) -> Vec<&Expr> {
        match self.node() {
            Node::Const(_) | Node::Coord(_) | Node::Param(_) => vec![],
            Node::Func { arg, .. } => vec![arg],
            Node::Neg(a)
            | Node::Exp(a)
            | Node::Log(a)
            | Node::Sqrt(a)
            | Node::Sin(a)
            | Node::Cos(a) => vec![a],
            Node::Add(v) | Node::Mul(v) => v.iter().collect(),
            Node::Sub(a, b) | Node::Div(a, b) => vec![a, b],
            Node::Pow(b, Exponent::Rational(_)) => vec![b],
            Node::Pow(b, Exponent::Expr(e)) => vec![b, e],
        }
    }

    /// Rebuild this node with every child passed through `f`.
    pub fn map_children(&self, f: &mut impl FnMut(&Expr) -> Expr) -> Expr {
        let node = match self.node() {
            Node::Const(_) | Node::Coord(_) | Node::Param(_) => return self.clone(),
            Node::Func { name, order, arg } => Node::Func {
                name: name.clone(),
                order: *order,
                arg: f(arg),
            },
            Node::Neg(a) => Node::Neg(f(a)),
            Node::Exp(a) => Node::Exp(f(a)),
            Node::Log(a) => Node::Log(f(a)),
            Node::Sqrt(a) => Node::Sqrt(f(a)),
            Node::Sin(a) => Node::Sin(f(a)),
            Node::Cos(a) => Node::Cos(f(a)),
            Node::Add(v) => Node::Add(v.iter().map(&mut *f).collect()),
            Node::Mul(v) => Node::Mul(v.iter().map(&mut *f).collect()),
            Node::Sub(a, b) => Node::Sub(f(a), f(b)),
            Node::Div(a, b) => Node::Div(f(a), f(b)),
            Node::Pow(b, Exponent::Rational(r)) => Node::Pow(f(b), Exponent::Rational(*r)),
            Node::Pow(b, Exponent::Expr(e)) => Node::Pow(f(b), Exponent::Expr(f(e))),
        };
        Expr::new(node)
    }

    fn collect(&self, out: &mut Symbols) {
        match self.node() {
            Node::Coord(n) => {
                out.coords.insert(n.clone());
            }
            Node::Param(n) => {
                out.params.insert(n.clone());
            }
            Node::Func { name, arg, .. } => {
                out.funcs.insert(name.clone());
                arg.collect(out);
            }
            _ => {
                for c in self.children() {
                    c.collect(out);
                }
            }
        }
    }

    /// Every coordinate, parameter and function name occurring in the tree.
    pub fn symbols(&self) -> Symbols {
        let mut s = Symbols::default();
        self.collect(&mut s);
        s
    }

    pub fn depends_on(&self, coord: &str) -> bool {
        match self.node() {
            Node::Coord(n) => n == coord,
            _ => self.children().iter().any(|c| c.depends_on(coord)),
        }
    }

    /// Replace coordinates by expressions. Coordinates without an entry are kept.
    pub fn substitute(&self, map: &dyn Fn(&str) -> Option<Expr>) -> Expr {
        match self.node() {
            Node::Coord(n) => map(n).unwrap_or_else(|| self.clone()),
            _ => self.map_children(&mut |c| c.substitute(map)),
        }
    }

    /// Replace a parameter by an expression.
    pub fn replace_param(&self, name: &str, with: &Expr) -> Expr {
        match self.node() {
            Node::Param(n) if n == name => with.clone(),
            _ => self.map_children(&mut |c| c.replace_param(name, with)),
        }
    }

    pub fn rename_coords(&self, map: &dyn Fn(&str) -> String) -> Expr {
        self.substitute(&|n| Some(Expr::coord(map(n))))
    }

    /// Number of nodes.
    pub fn size(&self) -> usize {
        1 + self.children().iter().map(|c| c.size()).sum::<usize>()
    }

    pub fn differentiate(&self, coord: &str) -> Expr {
        simplify(&diff::derivative(self, coord))
    }
}

#[derive(Debug, Default, Clone, PartialEq)]
pub struct Symbols {
    pub coords: BTreeSet<String>,
    pub params: BTreeSet<String>,
    pub funcs: BTreeSet<String>,
}

/// Exact symbolic partial derivative, simplified.
pub fn differentiate(e: &Expr, coord: &str) -> Expr {
    e.differentiate(coord)
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({self})")
    }
}

impl From<f64> for Expr {
    fn from(v: f64) -> Self {
        Expr::constant(v)
    }
}

macro_rules! binop {
    ($tr:ident, $m:ident, $build:expr) => {
        impl std::ops::$tr<Expr> for Expr {
            type Output = Expr;
            fn $m(self, rhs: Expr) -> Expr {
                $build(self, rhs)
            }
        }
        impl std::ops::$tr<&Expr> for &Expr {
            type Output = Expr;
            fn $m(self, rhs: &Expr) -> Expr {
                $build(self.clone(), rhs.clone())
            }
        }
        impl std::ops::$tr<f64> for Expr {
            type Output = Expr;
            fn $m(self, rhs: f64) -> Expr {
                $build(self, Expr::constant(rhs))
            }
        }
    };
}

binop!(Add, add, |a, b| Expr::add(vec![a, b]));
binop!(Sub, sub, |a, b| Expr::new(Node::Sub(a, b)));
binop!(Mul, mul, |a, b| Expr::mul(vec![a, b]));
binop!(Div, div, |a, b| Expr::new(Node::Div(a, b)));

impl std::ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::new(Node::Neg(self))
    }
}

impl std::ops::Neg for &Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::new(Node::Neg(self.clone()))
    }
}

/// Sum of expressions; empty sums are 0. Not simplified.
pub fn sum(terms: impl IntoIterator<Item = Expr>) -> Expr {
    let v: Vec<Expr> = terms.into_iter().collect();
    match v.len() {
        0 => Expr::zero(),
        1 => v.into_iter().next().unwrap(),
        _ => Expr::add(v),
    }
}
