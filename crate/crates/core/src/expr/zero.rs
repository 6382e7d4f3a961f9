use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{Bindings, Expr, ExprError, FuncDef, Program, Result};

/// Axis-aligned box of closed intervals, one per coordinate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DomainBox {
    bounds: Vec<(String, f64, f64)>,
}

impl DomainBox {
    pub fn new<S: Into<String>>(bounds: impl IntoIterator<Item = (S, f64, f64)>) -> Result<Self> {
        let bounds: Vec<(String, f64, f64)> = bounds
            .into_iter()
            .map(|(n, lo, hi)| (n.into(), lo, hi))
            .collect();
        for (n, lo, hi) in &bounds {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(ExprError::Box(format!("{n}: [{lo}, {hi}]")));
            }
        }
        Ok(DomainBox { bounds })
    }

    pub fn bounds(&self) -> &[(String, f64, f64)] {
        &self.bounds
    }

    pub fn names(&self) -> Vec<&str> {
        self.bounds.iter().map(|b| b.0.as_str()).collect()
    }

    pub fn get(&self, coord: &str) -> Option<(f64, f64)> {
        self.bounds
            .iter()
            .find(|b| b.0 == coord)
            .map(|b| (b.1, b.2))
    }

    pub fn contains(&self, coord: &str, v: f64) -> bool {
        self.get(coord).is_none_or(|(lo, hi)| v >= lo && v <= hi)
    }

    /// Same box with one interval replaced (or added).
    pub fn with(&self, coord: &str, lo: f64, hi: f64) -> Result<Self> {
        let mut b = self.bounds.clone();
        match b.iter_mut().find(|x| x.0 == coord) {
            Some(x) => {
                x.1 = lo;
                x.2 = hi;
            }
            None => b.push((coord.to_string(), lo, hi)),
        }
        DomainBox::new(b)
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        self.bounds
            .iter()
            .map(|(_, lo, hi)| rng.random_range(*lo..=*hi))
            .collect()
    }
}

/// Settings for the randomized zero test.
#[derive(Debug, Clone, Copy)]
pub struct ZeroTest {
    pub trials: usize,
    /// Independent random definitions drawn for free function symbols.
    pub binding_draws: usize,
    pub tol: f64,
    pub seed: u64,
}

impl ZeroTest {
    pub fn new(trials: usize, tol: f64, seed: u64) -> Self {
        ZeroTest {
            trials,
            binding_draws: 5,
            tol,
            seed,
        }
    }
}

impl Default for ZeroTest {
    fn default() -> Self {
        ZeroTest::new(100, 1e-8, 0x5eed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub point: Vec<(String, f64)>,
    pub value: f64,
    /// Random definitions in force for free function symbols.
    pub definitions: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZeroTestOutcome {
    pub pass: bool,
    pub max_abs: f64,
    pub witness: Option<Witness>,
}

fn random_cubic(rng: &mut impl Rng) -> Expr {
    let s = Expr::coord("s");
    let terms = (0..4)
        .map(|k| {
            let c = Expr::constant(rng.random_range(-2.0..=2.0));
            match k {
                0 => c,
                1 => c * s.clone(),
                _ => c * s.clone().powr(k, 1),
            }
        })
        .collect();
    Expr::add(terms)
}

/// Check `|e| < tol` at `trials` uniform points of `bx`, for each of
/// `binding_draws` random cubic definitions of the function symbols that
/// `base` leaves unbound. The first violation found is returned as witness.
pub fn is_identically_zero(
    e: &Expr,
    bx: &DomainBox,
    test: &ZeroTest,
    base: &Bindings,
) -> Result<ZeroTestOutcome> {
    if test.trials == 0 {
        return Err(ExprError::NoTrials);
    }
    let free: Vec<String> = e
        .symbols()
        .funcs
        .into_iter()
        .filter(|f| base.func(f).is_none())
        .collect();
    let draws = if free.is_empty() {
        1
    } else {
        test.binding_draws.max(1)
    };
    let names = bx.names();
    let mut rng = ChaCha8Rng::seed_from_u64(test.seed);
    let mut max_abs: f64 = 0.0;
    for _ in 0..draws {
        let mut b = base.clone();
        let mut defs = vec![];
        for f in &free {
            let body = random_cubic(&mut rng);
            defs.push((f.clone(), body.to_string()));
            b.define_with(f.clone(), FuncDef::with_var("s", body));
        }
        let prog = Program::compile(e, &names, &b)?;
        for _ in 0..test.trials {
            let x = bx.sample(&mut rng);
            let v = prog.eval(&x)?;
            max_abs = max_abs.max(v.abs());
            if v.abs() >= test.tol {
                let point = names.iter().map(|n| n.to_string()).zip(x).collect();
                return Ok(ZeroTestOutcome {
                    pass: false,
                    max_abs,
                    witness: Some(Witness {
                        point,
                        value: v,
                        definitions: defs,
                    }),
                });
            }
        }
    }
    Ok(ZeroTestOutcome {
        pass: true,
        max_abs,
        witness: None,
    })
}

#[cfg(test)]
mod tests {
    use super::super::{parse, simplify};
    use super::*;

    fn unit_x() -> DomainBox {
        DomainBox::new([("x", 0.0, 1.0)]).unwrap()
    }

    #[test]
    fn trivial_zero() {
        let out = is_identically_zero(
            &Expr::zero(),
            &unit_x(),
            &ZeroTest::default(),
            &Bindings::new(),
        )
        .unwrap();
        assert!(out.pass);
    }

    #[test]
    fn ou_drift_identity_holds_for_arbitrary_functions() {
        let e =
            simplify(&parse("beta(z)*v''(x) + beta'(z) + (-beta(z)*v''(x) - beta'(z))").unwrap());
        let bx = DomainBox::new([("x", -2.0, 2.0), ("z", 0.0, 1.0)]).unwrap();
        assert!(
            is_identically_zero(&e, &bx, &ZeroTest::default(), &Bindings::new())
                .unwrap()
                .pass
        );
        // without simplification the numeric test must agree
        let raw = parse("beta(z)*v''(x) + beta'(z) - beta(z)*v''(x) - beta'(z)").unwrap();
        assert!(
            is_identically_zero(&raw, &bx, &ZeroTest::default(), &Bindings::new())
                .unwrap()
                .pass
        );
    }

    #[test]
    fn small_nonzero_is_caught() {
        let e = parse("x*1e-3").unwrap();
        let out = is_identically_zero(
            &e,
            &unit_x(),
            &ZeroTest::new(100, 1e-8, 7),
            &Bindings::new(),
        )
        .unwrap();
        assert!(!out.pass);
        let w = out.witness.unwrap();
        assert!(w.point[0].1 > 1e-5);
        assert!((w.value - w.point[0].1 * 1e-3).abs() < 1e-18);
    }

    #[test]
    fn evaluation_errors_propagate() {
        let e = parse("1/(x - x)").unwrap();
        assert!(
            is_identically_zero(&e, &unit_x(), &ZeroTest::default(), &Bindings::new()).is_err()
        );
        assert_eq!(
            is_identically_zero(
                &Expr::zero(),
                &unit_x(),
                &ZeroTest::new(0, 1e-8, 1),
                &Bindings::new()
            ),
            Err(ExprError::NoTrials)
        );
        assert!(DomainBox::new([("x", 1.0, 1.0)]).is_err());
    }
}
