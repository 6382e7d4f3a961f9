use num_rational::Rational64;

use super::eval::{domain, general_power, rational_power, TINY};
use super::{simplify, Bindings, Exponent, Expr, ExprError, Node, Result};

#[derive(Debug, Clone, Copy)]
enum Op {
    Const(f64),
    Load(u32),
    Neg,
    Add,
    Sub,
    Mul,
    Div(u32),
    PowR(Rational64, u32),
    Pow(u32),
    Exp(u32),
    Log(u32),
    Sqrt(u32),
    Sin,
    Cos,
}

/// An expression with parameters and function definitions bound, flattened to
/// postfix form over a fixed coordinate order. Used in every hot loop.
#[derive(Debug, Clone)]
pub struct Program {
    ops: Vec<Op>,
    // subterms for ops that can fail, indexed by the op payload
    sites: Vec<Expr>,
    depth: usize,
    source: Expr,
}

const INLINE_STACK: usize = 48;

impl Program {
    pub fn compile<S: AsRef<str>>(e: &Expr, slots: &[S], b: &Bindings) -> Result<Self> {
        let bound = simplify(&b.bind(e)?);
        let mut p = Program {
            ops: vec![],
            sites: vec![],
            depth: 0,
            source: bound.clone(),
        };
        let mut depth = 0;
        p.emit(&bound, slots, &mut depth)?;
        Ok(p)
    }

    fn site(&mut self, e: &Expr) -> u32 {
        self.sites.push(e.clone());
        (self.sites.len() - 1) as u32
    }

    fn push(&mut self, op: Op, depth: &mut usize, delta: isize) {
        self.ops.push(op);
        *depth = (*depth as isize + delta) as usize;
        self.depth = self.depth.max(*depth);
    }

    fn emit<S: AsRef<str>>(&mut self, e: &Expr, slots: &[S], depth: &mut usize) -> Result<()> {
        match e.node() {
            Node::Const(c) => self.push(Op::Const(*c), depth, 1),
            Node::Coord(n) => {
                let i = slots
                    .iter()
                    .position(|s| s.as_ref() == n)
                    .ok_or_else(|| ExprError::UnboundCoord(n.clone()))?;
                self.push(Op::Load(i as u32), depth, 1);
            }
            Node::Param(n) => return Err(ExprError::UnboundParam(n.clone())),
            Node::Func { name, .. } => return Err(ExprError::UnboundFunc(name.clone())),
            Node::Neg(a) => {
                self.emit(a, slots, depth)?;
                self.push(Op::Neg, depth, 0);
            }
            Node::Add(v) | Node::Mul(v) => {
                let op = if matches!(e.node(), Node::Add(_)) {
                    Op::Add
                } else {
                    Op::Mul
                };
                for (i, t) in v.iter().enumerate() {
                    self.emit(t, slots, depth)?;
                    if i > 0 {
                        self.push(op, depth, -1);
                    }
                }
            }
            Node::Sub(a, c) => {
                self.emit(a, slots, depth)?;
                self.emit(c, slots, depth)?;
                self.push(Op::Sub, depth, -1);
            }
            Node::Div(a, c) => {
                self.emit(a, slots, depth)?;
                self.emit(c, slots, depth)?;
                let s = self.site(e);
                self.push(Op::Div(s), depth, -1);
            }
            Node::Pow(a, Exponent::Rational(r)) => {
                self.emit(a, slots, depth)?;
                let s = self.site(e);
                self.push(Op::PowR(*r, s), depth, 0);
            }
            Node::Pow(a, Exponent::Expr(x)) => {
                self.emit(a, slots, depth)?;
                self.emit(x, slots, depth)?;
                let s = self.site(e);
                self.push(Op::Pow(s), depth, -1);
            }
            Node::Exp(a) | Node::Log(a) | Node::Sqrt(a) => {
                self.emit(a, slots, depth)?;
                let s = self.site(e);
                let op = match e.node() {
                    Node::Exp(_) => Op::Exp(s),
                    Node::Log(_) => Op::Log(s),
                    _ => Op::Sqrt(s),
                };
                self.push(op, depth, 0);
            }
            Node::Sin(a) | Node::Cos(a) => {
                self.emit(a, slots, depth)?;
                let op = if matches!(e.node(), Node::Sin(_)) {
                    Op::Sin
                } else {
                    Op::Cos
                };
                self.push(op, depth, 0);
            }
        }
        Ok(())
    }

    /// The bound, simplified expression this program was built from.
    pub fn source(&self) -> &Expr {
        &self.source
    }

    pub fn as_const(&self) -> Option<f64> {
        match self.ops.as_slice() {
            [Op::Const(c)] => Some(*c),
            _ => None,
        }
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        if self.depth <= INLINE_STACK {
            let mut stack = [0.0; INLINE_STACK];
            self.run(x, &mut stack)
        } else {
            let mut stack = vec![0.0; self.depth];
            self.run(x, &mut stack)
        }
    }

    fn run(&self, x: &[f64], st: &mut [f64]) -> Result<f64> {
        let mut sp = 0usize;
        for op in &self.ops {
            match *op {
                Op::Const(c) => {
                    st[sp] = c;
                    sp += 1;
                }
                Op::Load(i) => {
                    st[sp] = x[i as usize];
                    sp += 1;
                }
                Op::Neg => st[sp - 1] = -st[sp - 1],
                Op::Add => {
                    sp -= 1;
                    st[sp - 1] += st[sp];
                }
                Op::Sub => {
                    sp -= 1;
                    st[sp - 1] -= st[sp];
                }
                Op::Mul => {
                    sp -= 1;
                    st[sp - 1] *= st[sp];
                }
                Op::Div(s) => {
                    sp -= 1;
                    let d = st[sp];
                    if d.abs() < TINY {
                        return Err(self.fail(s, format!("division by {d:e}")));
                    }
                    st[sp - 1] /= d;
                }
                Op::PowR(r, s) => {
                    let b = st[sp - 1];
                    st[sp - 1] = match *r.denom() {
                        1 if *r.numer() == 2 => b * b,
                        _ => rational_power(b, r)
                            .ok_or_else(|| self.fail(s, format!("power of {b:e}")))?,
                    };
                }
                Op::Pow(s) => {
                    sp -= 1;
                    let (b, y) = (st[sp - 1], st[sp]);
                    st[sp - 1] = general_power(b, y)
                        .ok_or_else(|| self.fail(s, format!("{b:e} raised to {y:e}")))?;
                }
                Op::Exp(s) => {
                    let v = st[sp - 1].exp();
                    if !v.is_finite() {
                        return Err(self.fail(s, "overflow"));
                    }
                    st[sp - 1] = v;
                }
                Op::Log(s) => {
                    let a = st[sp - 1];
                    if a <= 0.0 {
                        return Err(self.fail(s, format!("log of {a:e}")));
                    }
                    st[sp - 1] = a.ln();
                }
                Op::Sqrt(s) => {
                    let a = st[sp - 1];
                    if a < 0.0 {
                        return Err(self.fail(s, format!("sqrt of {a:e}")));
                    }
                    st[sp - 1] = a.sqrt();
                }
                Op::Sin => st[sp - 1] = st[sp - 1].sin(),
                Op::Cos => st[sp - 1] = st[sp - 1].cos(),
            }
        }
        let v = st[0];
        if !v.is_finite() {
            return Err(domain(&self.source, "non-finite value"));
        }
        Ok(v)
    }

    fn fail(&self, site: u32, reason: impl Into<String>) -> ExprError {
        domain(&self.sites[site as usize], reason)
    }
}

#[cfg(test)]
mod tests {
    use super::super::{evaluate_with, parse, parse_with_params};
    use super::*;

    #[test]
    fn matches_tree_evaluation() {
        let mut b = Bindings::new();
        b.set_param("a", 1.5);
        b.define("beta", parse("z^3 - z").unwrap()).unwrap();
        let e = parse_with_params(
            "a*x^(3/2)*beta''(z) - exp(-x)/z + log(x*z)^2 + sqrt(z)",
            &["a"],
        )
        .unwrap();
        let p = Program::compile(&e, &["x", "z"], &b).unwrap();
        for (x, z) in [(0.3, 1.2), (2.0, 0.7), (5.5, 3.3)] {
            let tree =
                evaluate_with(&e, &|n| if n == "x" { Some(x) } else { Some(z) }, &b).unwrap();
            let vm = p.eval(&[x, z]).unwrap();
            assert!(
                (tree - vm).abs() <= 1e-12 * (1.0 + tree.abs()),
                "{tree} {vm}"
            );
        }
    }

    #[test]
    fn constant_programs_are_detected() {
        let mut b = Bindings::new();
        b.define("beta", parse("z^2").unwrap()).unwrap();
        let p = Program::compile(&parse("beta''(z)/2").unwrap(), &["x", "z"], &b).unwrap();
        assert_eq!(p.as_const(), Some(1.0));
    }

    #[test]
    fn errors() {
        let b = Bindings::new();
        assert!(matches!(
            Program::compile(&parse("y").unwrap(), &["x"], &b),
            Err(ExprError::UnboundCoord(_))
        ));
        let p = Program::compile(&parse("1/(x - 1)").unwrap(), &["x"], &b).unwrap();
        assert!(matches!(p.eval(&[1.0]), Err(ExprError::Domain { .. })));
    }
}
