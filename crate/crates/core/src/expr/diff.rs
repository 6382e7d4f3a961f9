use num_rational::Rational64;

use super::{Exponent, Expr, Node};

/// Unsimplified partial derivative with respect to the coordinate `c`.
pub(super) fn derivative(e: &Expr, c: &str) -> Expr {
    if !e.depends_on(c) {
        return Expr::zero();
    }
    match e.node() {
        Node::Const(_) | Node::Param(_) => Expr::zero(),
        Node::Coord(n) => Expr::constant(if n == c { 1.0 } else { 0.0 }),
        Node::Func { name, order, arg } => {
            Expr::func(name.clone(), order + 1, arg.clone()) * derivative(arg, c)
        }
        Node::Neg(a) => -derivative(a, c),
        Node::Add(v) => Expr::add(v.iter().map(|t| derivative(t, c)).collect()),
        Node::Sub(a, b) => derivative(a, c) - derivative(b, c),
        Node::Mul(v) => {
            let mut terms = Vec::with_capacity(v.len());
            for i in 0..v.len() {
                if !v[i].depends_on(c) {
                    continue;
                }
                let mut factors = v.clone();
                factors[i] = derivative(&v[i], c);
                terms.push(Expr::mul(factors));
            }
            Expr::add(terms)
        }
        Node::Div(a, b) => {
            let da = derivative(a, c);
            if !b.depends_on(c) {
                return da / b.clone();
            }
            let db = derivative(b, c);
            da / b.clone() - Expr::mul(vec![a.clone(), db]) / b.clone().powr(2, 1)
        }
        Node::Pow(b, Exponent::Rational(r)) => {
            let lowered = Expr::new(Node::Pow(
                b.clone(),
                Exponent::Rational(r - Rational64::from_integer(1)),
            ));
            let coef = *r.numer() as f64 / *r.denom() as f64;
            Expr::mul(vec![Expr::constant(coef), lowered, derivative(b, c)])
        }
        Node::Pow(b, Exponent::Expr(x)) => {
            if x.depends_on(c) {
                let log_term = derivative(x, c) * b.clone().log();
                let base_term = Expr::mul(vec![x.clone(), derivative(b, c)]) / b.clone();
                e.clone() * (log_term + base_term)
            } else {
                let lowered = b.clone().pow(x.clone() - 1.0);
                Expr::mul(vec![x.clone(), lowered, derivative(b, c)])
            }
        }
        Node::Exp(a) => e.clone() * derivative(a, c),
        Node::Log(a) => derivative(a, c) / a.clone(),
        Node::Sqrt(a) => derivative(a, c) / (e.clone() * 2.0),
        Node::Sin(a) => a.clone().cos() * derivative(a, c),
        Node::Cos(a) => -(a.clone().sin() * derivative(a, c)),
    }
}

#[cfg(test)]
mod tests {
    use super::super::{parse, parse_with_params};

    #[test]
    fn textbook_examples() {
        assert_eq!(
            parse("x^2").unwrap().differentiate("x"),
            parse("2*x").unwrap()
        );
        let b = parse("beta(z)").unwrap();
        assert_eq!(b.differentiate("z"), parse("beta'(z)").unwrap());
        assert!(b.differentiate("x").is_zero());
        assert_eq!(
            parse("beta'(z^2)").unwrap().differentiate("z"),
            parse("2*beta''(z^2)*z").unwrap()
        );
        let e = parse_with_params("nu^alpha", &["alpha"]).unwrap();
        assert_eq!(
            e.differentiate("nu"),
            parse_with_params("alpha*nu^(alpha - 1)", &["alpha"]).unwrap()
        );
    }

    #[test]
    fn trig_chain_rule() {
        assert_eq!(
            parse("sin(x^2)").unwrap().differentiate("x"),
            parse("2*cos(x^2)*x").unwrap()
        );
        assert_eq!(
            parse("cos(x)").unwrap().differentiate("x"),
            parse("-sin(x)").unwrap()
        );
    }
}
