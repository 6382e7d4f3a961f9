use num_rational::Ratio;
use num_rational::Rational64;

use super::{Exponent, Expr, Node};

/// Light normalisation: constant folding, 0/1 identities, like-term and
/// like-factor collection, flattening of sums and products.
///
/// Sums come out as `P`, `-N` or `P - N` where `P` and `N` are flat sums of
/// positively scaled terms; products as `c*f1*...` with a leading numeric
/// coefficient only when it differs from 1. Monomial denominators are turned
/// into negative powers so that they can cancel.
pub fn simplify(e: &Expr) -> Expr {
    let e = e.map_children(&mut |c| simplify(c));
    match e.node() {
        Node::Const(_) | Node::Coord(_) | Node::Param(_) | Node::Func { .. } => e,
        Node::Neg(_) | Node::Add(_) | Node::Sub(..) => {
            let mut lin = Linear::default();
            lin.collect(&e, 1.0);
            lin.rebuild()
        }
        Node::Mul(_) => {
            let mut p = Product::default();
            p.collect(&e);
            p.rebuild()
        }
        Node::Div(a, b) => simplify_div(a, b),
        Node::Pow(b, x) => simplify_pow(b, x),
        Node::Sqrt(a) => match a.as_const() {
            Some(c) if c >= 0.0 => Expr::constant(c.sqrt()),
            _ => simplify_pow(a, &Exponent::Rational(Rational64::new(1, 2))),
        },
        Node::Exp(a) => match a.as_const() {
            Some(c) if c.exp().is_finite() => Expr::constant(c.exp()),
            _ => e,
        },
        Node::Log(a) => match (a.as_const(), a.node()) {
            (Some(c), _) if c > 0.0 => Expr::constant(c.ln()),
            (_, Node::Exp(u)) => u.clone(),
            _ => e,
        },
        Node::Sin(a) => a.as_const().map_or(e.clone(), |c| Expr::constant(c.sin())),
        Node::Cos(a) => a.as_const().map_or(e.clone(), |c| Expr::constant(c.cos())),
    }
}

/// Split a simplified term into numeric coefficient and remainder.
fn split_coef(t: &Expr) -> (f64, Option<Expr>) {
    match t.node() {
        Node::Const(c) => (*c, None),
        Node::Neg(a) => {
            let (c, r) = split_coef(a);
            (-c, r)
        }
        Node::Mul(v) if v.len() >= 2 => match v[0].as_const() {
            Some(c) => (c, Some(product_of(v[1..].to_vec()))),
            None => (1.0, Some(t.clone())),
        },
        _ => (1.0, Some(t.clone())),
    }
}

fn product_of(mut v: Vec<Expr>) -> Expr {
    if v.len() == 1 {
        v.pop().unwrap()
    } else {
        Expr::mul(v)
    }
}

fn sum_of(mut v: Vec<Expr>) -> Expr {
    if v.len() == 1 {
        v.pop().unwrap()
    } else {
        Expr::add(v)
    }
}

fn scaled(c: f64, t: Expr) -> Expr {
    if c == 1.0 {
        return t;
    }
    if c == -1.0 {
        return -t;
    }
    match t.node() {
        Node::Mul(v) => {
            let mut f = vec![Expr::constant(c)];
            f.extend(v.iter().cloned());
            Expr::mul(f)
        }
        _ => Expr::mul(vec![Expr::constant(c), t]),
    }
}

#[derive(Default)]
struct Linear {
    constant: f64,
    terms: Vec<(f64, Expr)>,
}

impl Linear {
    fn collect(&mut self, e: &Expr, sign: f64) {
        match e.node() {
            Node::Add(v) => v.iter().for_each(|t| self.collect(t, sign)),
            Node::Sub(a, b) => {
                self.collect(a, sign);
                self.collect(b, -sign);
            }
            Node::Neg(a) => self.collect(a, -sign),
            _ => match split_coef(e) {
                (c, None) => self.constant += sign * c,
                (c, Some(t)) => self.push(sign * c, t),
            },
        }
    }

    fn push(&mut self, c: f64, t: Expr) {
        match self.terms.iter_mut().find(|(_, u)| *u == t) {
            Some(slot) => slot.0 += c,
            None => self.terms.push((c, t)),
        }
    }

    fn rebuild(self) -> Expr {
        let mut pos = vec![];
        let mut neg: Vec<(f64, Expr)> = vec![];
        for (c, t) in self.terms {
            if c > 0.0 {
                pos.push(scaled(c, t));
            } else if c < 0.0 {
                neg.push((-c, t));
            } else if c.is_nan() {
                pos.push(scaled(c, t));
            }
        }
        if self.constant > 0.0 || self.constant.is_nan() {
            pos.push(Expr::constant(self.constant));
        } else if self.constant < 0.0 {
            neg.push((-self.constant, Expr::one()));
        }
        let neg_terms = |neg: Vec<(f64, Expr)>| -> Vec<Expr> {
            neg.into_iter()
                .map(|(c, t)| {
                    if t.is_one() {
                        Expr::constant(c)
                    } else {
                        scaled(c, t)
                    }
                })
                .collect()
        };
        match (pos.is_empty(), neg.is_empty()) {
            (true, true) => Expr::zero(),
            (false, true) => sum_of(pos),
            (true, false) if neg.len() == 1 => {
                let (c, t) = neg.pop().unwrap();
                if t.is_one() {
                    Expr::constant(-c)
                } else {
                    scaled(-c, t)
                }
            }
            (true, false) => -sum_of(neg_terms(neg)),
            (false, false) => Expr::new(Node::Sub(sum_of(pos), sum_of(neg_terms(neg)))),
        }
    }
}

struct Product {
    coef: f64,
    // (base, exponent); non-power factors carry exponent 1
    factors: Vec<(Expr, Rational64)>,
}

impl Default for Product {
    fn default() -> Self {
        Product {
            coef: 1.0,
            factors: vec![],
        }
    }
}

impl Product {
    fn collect(&mut self, e: &Expr) {
        match e.node() {
            Node::Mul(v) => v.iter().for_each(|f| self.collect(f)),
            Node::Const(c) => self.coef *= c,
            Node::Neg(a) => {
                self.coef = -self.coef;
                self.collect(a);
            }
            Node::Pow(b, Exponent::Rational(r)) => self.push(b.clone(), *r),
            _ => self.push(e.clone(), Rational64::from_integer(1)),
        }
    }

    fn push(&mut self, base: Expr, r: Rational64) {
        match self.factors.iter_mut().find(|(b, _)| *b == base) {
            Some(slot) => slot.1 += r,
            None => self.factors.push((base, r)),
        }
    }

    fn rebuild(self) -> Expr {
        if self.coef == 0.0 {
            return Expr::zero();
        }
        let mut coef = self.coef;
        let mut out = vec![];
        for (b, r) in self.factors {
            if *r.numer() == 0 {
                continue;
            }
            let f = if r == Rational64::from_integer(1) {
                b
            } else {
                simplify_pow(&b, &Exponent::Rational(r))
            };
            // re-simplified powers can fold to constants or pick up a sign
            match split_coef(&f) {
                (c, None) => coef *= c,
                (c, Some(t)) => {
                    coef *= c;
                    match t.node() {
                        Node::Mul(v) => out.extend(v.iter().cloned()),
                        _ => out.push(t),
                    }
                }
            }
        }
        if out.is_empty() {
            return Expr::constant(coef);
        }
        if coef == 0.0 {
            return Expr::zero();
        }
        scaled(coef, product_of(out))
    }
}

/// Denominators that are products of powers become negative exponents.
fn is_monomial(e: &Expr) -> bool {
    match e.node() {
        Node::Coord(_) | Node::Param(_) | Node::Func { .. } => true,
        Node::Pow(b, Exponent::Rational(_)) => is_monomial(b),
        Node::Mul(v) => v
            .iter()
            .all(|f| is_monomial(f) || f.as_const().is_some_and(|c| c != 0.0)),
        _ => false,
    }
}

fn simplify_div(a: &Expr, b: &Expr) -> Expr {
    if a.is_zero() {
        return Expr::zero();
    }
    if b.is_one() {
        return a.clone();
    }
    if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
        if y != 0.0 {
            return Expr::constant(x / y);
        }
    }
    if a == b {
        return Expr::one();
    }
    if let Some(c) = b.as_const() {
        let inv = 1.0 / c;
        // only exact reciprocals are folded into the coefficient
        if c != 0.0 && inv.is_finite() && inv * c == 1.0 && c.abs().log2().fract() == 0.0 {
            let mut p = Product::default();
            p.collect(a);
            p.coef *= inv;
            return p.rebuild();
        }
    }
    if is_monomial(b) {
        let mut p = Product::default();
        p.collect(a);
        let mut q = Product::default();
        q.collect(b);
        if q.coef != 0.0 && (1.0 / q.coef) * q.coef == 1.0 && q.coef.abs().log2().fract() == 0.0 {
            p.coef /= q.coef;
            for (base, r) in q.factors {
                p.push(base, -r);
            }
            return p.rebuild();
        }
    }
    let (c, rest) = split_coef(a);
    match rest {
        Some(r) if c != 1.0 => scaled(c, Expr::new(Node::Div(r, b.clone()))),
        _ => Expr::new(Node::Div(a.clone(), b.clone())),
    }
}

fn rational_pow(c: f64, r: Rational64) -> Option<f64> {
    let (p, q) = (*r.numer(), *r.denom());
    let v = if q == 1 {
        c.powi(i32::try_from(p).ok()?)
    } else if c >= 0.0 {
        c.powf(p as f64 / q as f64)
    } else {
        return None;
    };
    v.is_finite().then_some(v)
}

fn simplify_pow(b: &Expr, x: &Exponent) -> Expr {
    let r = match x {
        Exponent::Rational(r) => *r,
        Exponent::Expr(e) => match e.as_const() {
            Some(c) if c.fract() == 0.0 && c.abs() <= 1e9 => Rational64::from_integer(c as i64),
            // half-integers are exact in binary and common (square-root exponents)
            Some(c) if (2.0 * c).fract() == 0.0 && c.abs() <= 1e9 => {
                Rational64::new((2.0 * c) as i64, 2)
            }
            _ => {
                if b.is_one() {
                    return Expr::one();
                }
                return Expr::new(Node::Pow(b.clone(), x.clone()));
            }
        },
    };
    if *r.numer() == 0 {
        return Expr::one();
    }
    if r == Ratio::from_integer(1) {
        return b.clone();
    }
    if let Some(c) = b.as_const() {
        if let Some(v) = rational_pow(c, r) {
            return Expr::constant(v);
        }
    }
    let integer = *r.denom() == 1;
    match b.node() {
        Node::Pow(inner, Exponent::Rational(s)) if integer => {
            simplify_pow(inner, &Exponent::Rational(s * r))
        }
        Node::Neg(inner) if integer => {
            let p = simplify_pow(inner, &Exponent::Rational(r));
            if r.numer() % 2 == 0 {
                p
            } else {
                simplify(&-p)
            }
        }
        Node::Mul(v) if integer => {
            let factors = v
                .iter()
                .map(|f| simplify_pow(f, &Exponent::Rational(r)))
                .collect();
            simplify(&Expr::mul(factors))
        }
        _ => Expr::new(Node::Pow(b.clone(), Exponent::Rational(r))),
    }
}

#[cfg(test)]
mod tests {
    use super::super::parse;
    use super::*;

    fn s(src: &str) -> Expr {
        simplify(&parse(src).unwrap())
    }

    #[test]
    fn identities() {
        assert_eq!(s("x + 0"), parse("x").unwrap());
        assert!(s("1*x - x").is_zero());
        assert!(s("beta(z) - beta(z)").is_zero());
        assert_eq!(s("2*3 + x*0"), Expr::constant(6.0));
        assert_eq!(s("x*x"), parse("x^2").unwrap());
        assert_eq!(s("(a + (b + c)) + d"), parse("a + b + c + d").unwrap());
        assert_eq!(s("-x + y"), parse("y - x").unwrap());
        assert_eq!(s("-(x)*x"), parse("-x^2").unwrap());
        assert!(s("15*x^(-7) - 5*(3/x)*x^(-6)").is_zero());
        assert_eq!(s("sqrt(nu)*sqrt(nu)"), parse("nu").unwrap());
        assert_eq!(s("x^2.0"), parse("x^2").unwrap());
        assert_eq!(s("(2*x)^2"), parse("4*x^2").unwrap());
    }

    #[test]
    fn idempotent_on_samples() {
        for src in [
            "a - b + c - 2*d",
            "-(a + b)",
            "x*y/z - 3",
            "(x - 1)^2*(x + 1)/(x^2 + 1)",
            "-3*x*exp(-x^2)",
        ] {
            let once = s(src);
            assert_eq!(simplify(&once), once, "{src}");
            assert_eq!(parse(&once.to_string()).unwrap(), once, "{src}");
        }
    }
}
