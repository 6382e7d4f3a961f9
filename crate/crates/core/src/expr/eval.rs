use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, OnceLock};

use num_rational::Rational64;

use super::{Exponent, Expr, ExprError, Node, Result};

const CACHED_ORDERS: usize = 6;

/// Concrete definition of a unary function symbol, e.g. `beta(z) := z^2`.
#[derive(Debug)]
pub struct FuncDef {
    var: String,
    body: Expr,
    derivs: Vec<OnceLock<Expr>>,
}

impl FuncDef {
    /// The variable is inferred: the single coordinate occurring in `body`,
    /// or a placeholder when the body is constant.
    pub fn new(name: &str, body: Expr) -> Result<Self> {
        let syms = body.symbols();
        if !syms.funcs.is_empty() {
            return Err(ExprError::Definition {
                name: name.to_string(),
                found: syms.funcs.into_iter().collect(),
            });
        }
        let var = match syms.coords.len() {
            0 => "_".to_string(),
            1 => syms.coords.into_iter().next().unwrap(),
            _ => {
                return Err(ExprError::Definition {
                    name: name.to_string(),
                    found: syms.coords.into_iter().collect(),
                })
            }
        };
        Ok(Self::with_var(var, body))
    }

    pub fn with_var(var: impl Into<String>, body: Expr) -> Self {
        FuncDef {
            var: var.into(),
            body,
            derivs: (0..CACHED_ORDERS).map(|_| OnceLock::new()).collect(),
        }
    }

    pub fn var(&self) -> &str {
        &self.var
    }

    pub fn body(&self) -> &Expr {
        &self.body
    }

    /// The `n`-th derivative of the body in its own variable.
    pub fn derivative(&self, n: u32) -> Expr {
        let n = n as usize;
        if n == 0 {
            return self.body.clone();
        }
        if n < CACHED_ORDERS {
            return self.derivs[n]
                .get_or_init(|| self.derivative(n as u32 - 1).differentiate(&self.var))
                .clone();
        }
        let mut d = self.derivative(CACHED_ORDERS as u32 - 1);
        for _ in CACHED_ORDERS - 1..n {
            d = d.differentiate(&self.var);
        }
        d
    }

    /// `n`-th derivative with its variable replaced by `arg`.
    pub fn apply(&self, n: u32, arg: &Expr) -> Expr {
        self.derivative(n)
            .substitute(&|c| (c == self.var).then(|| arg.clone()))
    }
}

/// Parameter values and function-symbol definitions.
#[derive(Debug, Clone, Default)]
pub struct Bindings {
    params: BTreeMap<String, f64>,
    funcs: BTreeMap<String, Arc<FuncDef>>,
}

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_param(&mut self, name: impl Into<String>, value: f64) -> &mut Self {
        self.params.insert(name.into(), value);
        self
    }

    pub fn define(&mut self, name: &str, body: Expr) -> Result<&mut Self> {
        let def = FuncDef::new(name, body)?;
        self.funcs.insert(name.to_string(), Arc::new(def));
        Ok(self)
    }

    pub fn define_with(&mut self, name: impl Into<String>, def: FuncDef) -> &mut Self {
        self.funcs.insert(name.into(), Arc::new(def));
        self
    }

    pub fn param(&self, name: &str) -> Option<f64> {
        self.params.get(name).copied()
    }

    pub fn func(&self, name: &str) -> Option<&FuncDef> {
        self.funcs.get(name).map(|d| d.as_ref())
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.params
    }

    pub fn func_names(&self) -> impl Iterator<Item = &str> {
        self.funcs.keys().map(String::as_str)
    }

    /// Replace parameters by their values and bound function symbols by
    /// their definitions. Unbound symbols are errors.
    pub fn bind(&self, e: &Expr) -> Result<Expr> {
        Ok(match e.node() {
            Node::Param(n) => Expr::constant(
                self.param(n)
                    .ok_or_else(|| ExprError::UnboundParam(n.clone()))?,
            ),
            Node::Func { name, order, arg } => {
                let def = self
                    .func(name)
                    .ok_or_else(|| ExprError::UnboundFunc(name.clone()))?;
                let arg = self.bind(arg)?;
                self.bind(&def.apply(*order, &arg))?
            }
            _ => {
                let mut err = None;
                let out = e.map_children(&mut |c| match self.bind(c) {
                    Ok(v) => v,
                    Err(x) => {
                        err.get_or_insert(x);
                        c.clone()
                    }
                });
                if let Some(x) = err {
                    return Err(x);
                }
                out
            }
        })
    }
}

pub(super) fn domain(e: &Expr, reason: impl Into<String>) -> ExprError {
    ExprError::Domain {
        term: e.to_string(),
        reason: reason.into(),
    }
}

pub(super) const TINY: f64 = 1e-300;

pub(super) fn rational_power(base: f64, r: Rational64) -> Option<f64> {
    let (p, q) = (*r.numer(), *r.denom());
    if p < 0 && base.abs() < TINY {
        return None;
    }
    let v = if q == 1 {
        base.powi(p as i32)
    } else if q == 2 {
        if base < 0.0 {
            return None;
        }
        base.sqrt().powi(p as i32)
    } else if base >= 0.0 {
        base.powf(p as f64 / q as f64)
    } else if q % 2 == 1 {
        let mag = (-base).powf(p as f64 / q as f64);
        if p % 2 == 0 {
            mag
        } else {
            -mag
        }
    } else {
        return None;
    };
    v.is_finite().then_some(v)
}

/// Evaluate at a point given as a map from coordinate names to values.
pub fn evaluate(e: &Expr, point: &HashMap<String, f64>, b: &Bindings) -> Result<f64> {
    evaluate_with(e, &|n| point.get(n).copied(), b)
}

/// Evaluate with coordinates supplied by a lookup function.
pub fn evaluate_with(e: &Expr, point: &dyn Fn(&str) -> Option<f64>, b: &Bindings) -> Result<f64> {
    let v = match e.node() {
        Node::Const(c) => *c,
        Node::Coord(n) => point(n).ok_or_else(|| ExprError::UnboundCoord(n.clone()))?,
        Node::Param(n) => b
            .param(n)
            .ok_or_else(|| ExprError::UnboundParam(n.clone()))?,
        Node::Func { name, order, arg } => {
            let def = b
                .func(name)
                .ok_or_else(|| ExprError::UnboundFunc(name.clone()))?;
            let a = evaluate_with(arg, point, b)?;
            let d = def.derivative(*order);
            let var = def.var();
            evaluate_with(&d, &|n| if n == var { Some(a) } else { None }, b)?
        }
        Node::Neg(a) => -evaluate_with(a, point, b)?,
        Node::Add(v) => {
            let mut s = 0.0;
            for t in v {
                s += evaluate_with(t, point, b)?;
            }
            s
        }
        Node::Sub(x, y) => evaluate_with(x, point, b)? - evaluate_with(y, point, b)?,
        Node::Mul(v) => {
            let mut p = 1.0;
            for t in v {
                p *= evaluate_with(t, point, b)?;
            }
            p
        }
        Node::Div(x, y) => {
            let num = evaluate_with(x, point, b)?;
            let den = evaluate_with(y, point, b)?;
            if den.abs() < TINY {
                return Err(domain(e, format!("division by {den:e}")));
            }
            num / den
        }
        Node::Pow(base, Exponent::Rational(r)) => {
            let x = evaluate_with(base, point, b)?;
            rational_power(x, *r).ok_or_else(|| domain(e, format!("power of {x:e}")))?
        }
        Node::Pow(base, Exponent::Expr(p)) => {
            let x = evaluate_with(base, point, b)?;
            let y = evaluate_with(p, point, b)?;
            general_power(x, y).ok_or_else(|| domain(e, format!("{x:e} raised to {y:e}")))?
        }
        Node::Exp(a) => evaluate_with(a, point, b)?.exp(),
        Node::Sin(a) => evaluate_with(a, point, b)?.sin(),
        Node::Cos(a) => evaluate_with(a, point, b)?.cos(),
        Node::Log(a) => {
            let x = evaluate_with(a, point, b)?;
            if x <= 0.0 {
                return Err(domain(e, format!("log of {x:e}")));
            }
            x.ln()
        }
        Node::Sqrt(a) => {
            let x = evaluate_with(a, point, b)?;
            if x < 0.0 {
                return Err(domain(e, format!("sqrt of {x:e}")));
            }
            x.sqrt()
        }
    };
    if !v.is_finite() {
        return Err(domain(e, "non-finite value"));
    }
    Ok(v)
}

pub(super) fn general_power(x: f64, y: f64) -> Option<f64> {
    if x.abs() < TINY && y < 0.0 {
        return None;
    }
    if x < 0.0 && y.fract() != 0.0 {
        return None;
    }
    let v = if y.fract() == 0.0 && y.abs() < 1e9 {
        x.powi(y as i32)
    } else {
        x.powf(y)
    };
    v.is_finite().then_some(v)
}

#[cfg(test)]
mod tests {
    use super::super::parse;
    use super::*;

    fn at(pairs: &[(&str, f64)]) -> HashMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn examples() {
        let b = Bindings::new();
        assert_eq!(
            evaluate(&parse("x^2").unwrap(), &at(&[("x", 3.0)]), &b).unwrap(),
            9.0
        );

        let mut b = Bindings::new();
        b.define("beta", parse("z^2").unwrap()).unwrap();
        let e = parse("beta'(z)").unwrap();
        assert_eq!(evaluate(&e, &at(&[("z", 2.0)]), &b).unwrap(), 4.0);
        // the definition's variable name is independent of the call site
        let e = parse("beta''(x) + beta(x + 1)").unwrap();
        assert_eq!(evaluate(&e, &at(&[("x", 2.0)]), &b).unwrap(), 11.0);
    }

    #[test]
    fn derivative_against_central_difference() {
        let e = parse("x^3").unwrap();
        let d = e.differentiate("x");
        let b = Bindings::new();
        let exact = evaluate(&d, &at(&[("x", 2.0)]), &b).unwrap();
        assert_eq!(exact, 12.0);
        let h = 1e-5;
        let fd = (evaluate(&e, &at(&[("x", 2.0 + h)]), &b).unwrap()
            - evaluate(&e, &at(&[("x", 2.0 - h)]), &b).unwrap())
            / (2.0 * h);
        assert!((fd - exact).abs() / exact < 1e-6);
    }

    #[test]
    fn unbound_symbols_are_errors() {
        let b = Bindings::new();
        let p = at(&[("x", 1.0)]);
        assert_eq!(
            evaluate(&parse("y").unwrap(), &p, &b),
            Err(ExprError::UnboundCoord("y".into()))
        );
        assert_eq!(
            evaluate(&parse("f(x)").unwrap(), &p, &b),
            Err(ExprError::UnboundFunc("f".into()))
        );
        let e = super::super::parse_with_params("a*x", &["a"]).unwrap();
        assert_eq!(
            evaluate(&e, &p, &b),
            Err(ExprError::UnboundParam("a".into()))
        );
    }

    #[test]
    fn domain_errors_name_the_subterm() {
        let b = Bindings::new();
        let p = at(&[("x", 0.0)]);
        match evaluate(&parse("1 + 3/x").unwrap(), &p, &b) {
            Err(ExprError::Domain { term, .. }) => assert_eq!(term, "3.0/x"),
            other => panic!("{other:?}"),
        }
        let p = at(&[("x", -1.0)]);
        assert!(matches!(
            evaluate(&parse("log(x)").unwrap(), &p, &b),
            Err(ExprError::Domain { .. })
        ));
        assert!(matches!(
            evaluate(&parse("x^(1/2)").unwrap(), &p, &b),
            Err(ExprError::Domain { .. })
        ));
        assert_eq!(evaluate(&parse("x^(1/3)").unwrap(), &p, &b).unwrap(), -1.0);
        let p = at(&[("x", 1e-301)]);
        assert!(matches!(
            evaluate(&parse("x^(-2)").unwrap(), &p, &b),
            Err(ExprError::Domain { .. })
        ));
    }
}
