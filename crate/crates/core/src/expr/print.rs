use std::fmt::{self, Write};

use super::{Exponent, Expr, Node};

// Output re-parses to the same tree (given the same parameter names), so every
// structural distinction the parser can make is preserved with parentheses.

fn is_atom(e: &Expr) -> bool {
    match e.node() {
        Node::Const(c) => *c >= 0.0 || c.is_nan(),
        Node::Coord(_)
        | Node::Param(_)
        | Node::Func { .. }
        | Node::Exp(_)
        | Node::Log(_)
        | Node::Sqrt(_)
        | Node::Sin(_)
        | Node::Cos(_) => true,
        _ => false,
    }
}

fn write_const(f: &mut impl Write, c: f64) -> fmt::Result {
    if c < 0.0 {
        write!(f, "(-{:?})", -c)
    } else {
        write!(f, "{c:?}")
    }
}

fn paren(f: &mut impl Write, e: &Expr, wrap: bool) -> fmt::Result {
    if wrap {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

fn is_sum(e: &Expr) -> bool {
    matches!(e.node(), Node::Add(_) | Node::Sub(..))
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.node() {
            Node::Const(c) => write_const(f, *c),
            Node::Coord(n) | Node::Param(n) => f.write_str(n),
            Node::Func { name, order, arg } => {
                write!(f, "{name}{}({arg})", "'".repeat(*order as usize))
            }
            Node::Exp(a) => write!(f, "exp({a})"),
            Node::Log(a) => write!(f, "log({a})"),
            Node::Sqrt(a) => write!(f, "sqrt({a})"),
            Node::Sin(a) => write!(f, "sin({a})"),
            Node::Cos(a) => write!(f, "cos({a})"),
            Node::Neg(a) => {
                f.write_char('-')?;
                // a bare literal would fold into a negative constant on re-parse
                let wrap =
                    !(is_atom(a) && a.as_const().is_none()) && !matches!(a.node(), Node::Pow(..));
                paren(f, a, wrap)
            }
            Node::Add(v) => {
                for (i, t) in v.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" + ")?;
                    }
                    let wrap = match t.node() {
                        Node::Add(_) => true,
                        Node::Sub(..) => i > 0,
                        _ => false,
                    };
                    paren(f, t, wrap)?;
                }
                Ok(())
            }
            Node::Sub(a, b) => {
                paren(f, a, false)?;
                f.write_str(" - ")?;
                paren(f, b, is_sum(b))
            }
            Node::Mul(v) => {
                for (i, t) in v.iter().enumerate() {
                    if i > 0 {
                        f.write_char('*')?;
                    }
                    let wrap = match t.node() {
                        Node::Add(_) | Node::Sub(..) | Node::Mul(_) | Node::Neg(_) => true,
                        Node::Div(..) => i > 0,
                        _ => false,
                    };
                    paren(f, t, wrap)?;
                }
                Ok(())
            }
            Node::Div(a, b) => {
                let wrap_a = is_sum(a) || matches!(a.node(), Node::Neg(_));
                paren(f, a, wrap_a)?;
                f.write_char('/')?;
                paren(f, b, !is_atom(b) && !matches!(b.node(), Node::Pow(..)))
            }
            Node::Pow(b, e) => {
                paren(f, b, !is_atom(b))?;
                f.write_char('^')?;
                match e {
                    Exponent::Rational(r) => {
                        if *r.denom() == 1 && *r.numer() >= 0 {
                            write!(f, "{}", r.numer())
                        } else if *r.denom() == 1 {
                            write!(f, "({})", r.numer())
                        } else {
                            write!(f, "({}/{})", r.numer(), r.denom())
                        }
                    }
                    Exponent::Expr(x) => paren(f, x, !is_atom(x)),
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::parse;

    #[test]
    fn round_trips() {
        for src in [
            "x^2 + beta'(z)",
            "-(x)*x",
            "a - (b + c)",
            "(a + b) + c",
            "a + b + c",
            "a*(b*c)",
            "a/(b*c)",
            "a/b*c",
            "-(2)",
            "-2*x",
            "(-2)^2",
            "-2^2",
            "x^(1/2) - x^(-1) + x^y^z",
            "exp(-x^2/2)/sqrt(2*3.14159)",
            "-(a - b)",
            "x - -y",
            "1e-300*x + 2.5e10",
            "beta'''(z^2 - 1)",
            "(x^2)^(3/2)",
            "x^(a + b)",
            "a - b + c",
        ] {
            let e = parse(src).unwrap();
            let printed = e.to_string();
            assert_eq!(parse(&printed).unwrap(), e, "{src} -> {printed}");
        }
    }
}
