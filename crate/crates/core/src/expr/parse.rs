use num_rational::Rational64;

use super::{Exponent, Expr, ExprError, Node, Result};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    End,
}

struct Lexer<'a> {
    src: &'a str,
    toks: Vec<(Tok, usize)>,
}

impl<'a> Lexer<'a> {
    fn run(src: &'a str) -> Result<Vec<(Tok, usize)>> {
        let mut lx = Lexer { src, toks: vec![] };
        let bytes = src.as_bytes();
        let mut i = 0;
        while i < bytes.len() {
            let c = bytes[i];
            if c.is_ascii_whitespace() {
                i += 1;
            } else if c.is_ascii_digit()
                || (c == b'.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit))
            {
                i = lx.number(i)?;
            } else if c.is_ascii_alphabetic() || c == b'_' {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                lx.toks.push((Tok::Ident(src[start..i].to_string()), start));
            } else if b"+-*/^(),'".contains(&c) {
                lx.toks.push((Tok::Op(c as char), i));
                i += 1;
            } else {
                let ch = src[i..].chars().next().unwrap_or('?');
                return Err(syntax(i, format!("unexpected character `{ch}`")));
            }
        }
        lx.toks.push((Tok::End, src.len()));
        Ok(lx.toks)
    }

    fn number(&mut self, start: usize) -> Result<usize> {
        let b = self.src.as_bytes();
        let mut i = start;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
        if i < b.len() && b[i] == b'.' {
            i += 1;
            while i < b.len() && b[i].is_ascii_digit() {
                i += 1;
            }
        }
        if i < b.len() && (b[i] == b'e' || b[i] == b'E') {
            let mut j = i + 1;
            if j < b.len() && (b[j] == b'+' || b[j] == b'-') {
                j += 1;
            }
            if j < b.len() && b[j].is_ascii_digit() {
                while j < b.len() && b[j].is_ascii_digit() {
                    j += 1;
                }
                i = j;
            }
        }
        let text = &self.src[start..i];
        let v: f64 = text
            .parse()
            .map_err(|_| syntax(start, format!("malformed number `{text}`")))?;
        self.toks.push((Tok::Num(v), start));
        Ok(i)
    }
}

fn syntax(offset: usize, message: impl Into<String>) -> ExprError {
    ExprError::Syntax {
        offset,
        message: message.into(),
    }
}

struct Parser<'p> {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    params: &'p dyn Fn(&str) -> bool,
}

impl Parser<'_> {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn peek_at(&self, k: usize) -> &Tok {
        let i = (self.pos + k).min(self.toks.len() - 1);
        &self.toks[i].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, op: char) -> bool {
        if *self.peek() == Tok::Op(op) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, op: char) -> Result<()> {
        if self.eat(op) {
            Ok(())
        } else {
            Err(syntax(self.offset(), format!("expected `{op}`")))
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut acc = self.term()?;
        // Only sums built by this chain are extended; a parenthesised sum stays a unit.
        let mut chain: Option<Vec<Expr>> = None;
        loop {
            if self.eat('+') {
                let rhs = self.term()?;
                match chain.as_mut() {
                    Some(v) => v.push(rhs),
                    None => chain = Some(vec![acc.clone(), rhs]),
                }
            } else if self.eat('-') {
                let rhs = self.term()?;
                if let Some(v) = chain.take() {
                    acc = Expr::add(v);
                }
                acc = Expr::new(Node::Sub(acc, rhs));
            } else {
                break;
            }
        }
        Ok(match chain {
            Some(v) => Expr::add(v),
            None => acc,
        })
    }

    fn term(&mut self) -> Result<Expr> {
        let mut acc = self.unary()?;
        let mut chain: Option<Vec<Expr>> = None;
        loop {
            if self.eat('*') {
                let rhs = self.unary()?;
                match chain.as_mut() {
                    Some(v) => v.push(rhs),
                    None => chain = Some(vec![acc.clone(), rhs]),
                }
            } else if self.eat('/') {
                let rhs = self.unary()?;
                if let Some(v) = chain.take() {
                    acc = Expr::mul(v);
                }
                acc = Expr::new(Node::Div(acc, rhs));
            } else {
                break;
            }
        }
        Ok(match chain {
            Some(v) => Expr::mul(v),
            None => acc,
        })
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat('-') {
            // `-2` is a negative literal unless the literal is the base of a power.
            if let Tok::Num(v) = *self.peek() {
                if *self.peek_at(1) != Tok::Op('^') {
                    self.bump();
                    return Ok(Expr::constant(-v));
                }
            }
            let inner = self.unary()?;
            return Ok(-inner);
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if !self.eat('^') {
            return Ok(base);
        }
        let e = self.exponent()?;
        let exponent = match as_rational(&e) {
            Some(r) => Exponent::Rational(r),
            None => Exponent::Expr(e),
        };
        Ok(Expr::new(Node::Pow(base, exponent)))
    }

    fn exponent(&mut self) -> Result<Expr> {
        if self.eat('-') {
            if let Tok::Num(v) = *self.peek() {
                if *self.peek_at(1) != Tok::Op('^') {
                    self.bump();
                    return Ok(Expr::constant(-v));
                }
            }
            let inner = self.exponent()?;
            return Ok(-inner);
        }
        self.power()
    }

    fn atom(&mut self) -> Result<Expr> {
        let at = self.offset();
        match self.bump() {
            Tok::Num(v) => Ok(Expr::constant(v)),
            Tok::Op('(') => {
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Tok::Ident(name) => {
                let mut order = 0u32;
                while self.eat('\'') {
                    order += 1;
                }
                if *self.peek() == Tok::Op('(') {
                    self.bump();
                    let mut args = vec![self.expr()?];
                    while self.eat(',') {
                        args.push(self.expr()?);
                    }
                    self.expect(')')?;
                    self.application(name, order, args, at)
                } else if order > 0 {
                    Err(syntax(
                        self.offset(),
                        "primes must be followed by an argument list",
                    ))
                } else if (self.params)(&name) {
                    Ok(Expr::param(name))
                } else {
                    Ok(Expr::coord(name))
                }
            }
            Tok::End => Err(syntax(at, "unexpected end of input")),
            Tok::Op(c) => Err(syntax(at, format!("unexpected `{c}`"))),
        }
    }

    fn application(
        &mut self,
        name: String,
        order: u32,
        args: Vec<Expr>,
        at: usize,
    ) -> Result<Expr> {
        if args.len() != 1 {
            return Err(ExprError::Arity {
                name,
                got: args.len(),
            });
        }
        let arg = args.into_iter().next().unwrap();
        let builtin = match name.as_str() {
            "exp" => Some(Node::Exp(arg.clone())),
            "log" => Some(Node::Log(arg.clone())),
            "sqrt" => Some(Node::Sqrt(arg.clone())),
            "sin" => Some(Node::Sin(arg.clone())),
            "cos" => Some(Node::Cos(arg.clone())),
            _ => None,
        };
        match builtin {
            Some(_) if order > 0 => {
                Err(syntax(at, format!("builtin `{name}` cannot carry primes")))
            }
            Some(node) => Ok(Expr::new(node)),
            None => Ok(Expr::func(name, order, arg)),
        }
    }
}

/// Integer and integer-ratio literals become exact rational exponents.
fn as_rational(e: &Expr) -> Option<Rational64> {
    match e.node() {
        Node::Const(c) if c.fract() == 0.0 && c.abs() <= 1e9 => {
            Some(Rational64::from_integer(*c as i64))
        }
        Node::Neg(a) => as_rational(a).map(|r| -r),
        Node::Div(a, b) => {
            let (a, b) = (as_rational(a)?, as_rational(b)?);
            if *b.numer() == 0 {
                None
            } else {
                Some(a / b)
            }
        }
        _ => None,
    }
}

/// Parse with every bare identifier read as a coordinate.
pub fn parse(text: &str) -> Result<Expr> {
    parse_with_params(text, &[] as &[&str])
}

/// Parse with the listed names read as parameters; other bare identifiers are coordinates.
pub fn parse_with_params<S: AsRef<str>>(text: &str, params: &[S]) -> Result<Expr> {
    let is_param = |n: &str| params.iter().any(|p| p.as_ref() == n);
    let toks = Lexer::run(text)?;
    let mut p = Parser {
        toks,
        pos: 0,
        params: &is_param,
    };
    let e = p.expr()?;
    if *p.peek() != Tok::End {
        return Err(syntax(p.offset(), "unexpected trailing input"));
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x() -> Expr {
        Expr::coord("x")
    }

    #[test]
    fn grammar_examples() {
        let e = parse("x^2 + beta'(z)").unwrap();
        let want = Expr::add(vec![
            x().powr(2, 1),
            Expr::func("beta", 1, Expr::coord("z")),
        ]);
        assert_eq!(e, want);

        assert_eq!(parse("-(x)*x").unwrap(), Expr::mul(vec![-x(), x()]));

        let e = parse_with_params("exp(k*v)", &["k"]).unwrap();
        assert_eq!(e, Expr::mul(vec![Expr::param("k"), Expr::coord("v")]).exp());
    }

    #[test]
    fn precedence_and_associativity() {
        // ^ binds tighter than unary minus and is right-associative
        assert_eq!(parse("-x^2").unwrap(), -(x().powr(2, 1)));
        let e = parse("x^y^z").unwrap();
        let inner = Expr::coord("y").pow(Expr::coord("z"));
        assert_eq!(e, x().pow(inner));
        assert_eq!(parse("-2^2").unwrap(), -(Expr::constant(2.0).powr(2, 1)));
        assert_eq!(
            parse("-2*x").unwrap(),
            Expr::mul(vec![Expr::constant(-2.0), x()])
        );
        assert_eq!(parse("a - b - c").unwrap(), parse("(a - b) - c").unwrap());
        assert_eq!(parse("a / b / c").unwrap(), parse("(a / b) / c").unwrap());
    }

    #[test]
    fn exponents_and_primes() {
        assert_eq!(parse("nu^(1/2)").unwrap(), Expr::coord("nu").powr(1, 2));
        assert_eq!(parse("x^-1").unwrap(), x().powr(-1, 1));
        assert_eq!(parse("x^(-3/2)").unwrap(), x().powr(-3, 2));
        let e = parse("beta''(z)").unwrap();
        assert_eq!(e, Expr::func("beta", 2, Expr::coord("z")));
        assert!(matches!(
            parse("x^0.5").unwrap().node(),
            Node::Pow(_, Exponent::Expr(_))
        ));
    }

    #[test]
    fn errors_carry_offsets() {
        assert_eq!(parse("x + * y").unwrap_err(), syntax(4, "unexpected `*`"));
        assert!(matches!(
            parse("x $ y"),
            Err(ExprError::Syntax { offset: 2, .. })
        ));
        assert!(matches!(
            parse("(x + 1"),
            Err(ExprError::Syntax { offset: 6, .. })
        ));
        assert!(matches!(
            parse("x y"),
            Err(ExprError::Syntax { offset: 2, .. })
        ));
        assert!(matches!(
            parse("exp'(x)"),
            Err(ExprError::Syntax { offset: 0, .. })
        ));
        assert_eq!(
            parse("exp(x, y)").unwrap_err(),
            ExprError::Arity {
                name: "exp".into(),
                got: 2
            }
        );
        assert!(matches!(parse("beta(x, y)"), Err(ExprError::Arity { .. })));
    }
}
