//! The four worked models: Brownian motion, a generalised Ornstein–Uhlenbeck
//! process, the Bessel process and a CEV-type stochastic-volatility family,
//! each with its symmetry generator.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::expr::{parse, parse_with_params, Bindings, DomainBox, Expr, ExprError};
use crate::mc::{McConfig, Scheme};
use crate::sde::{SdeError, SdeModel};
use crate::symmetry::{FiniteTransformation, InfinitesimalSymmetry, SymmetryError, LAMBDA};
use crate::verify::Setup;

#[derive(Debug, thiserror::Error)]
pub enum PresetError {
    #[error("{0}")]
    Constraint(String),
    #[error("unknown preset `{0}` (expected brownian, ou, bessel or stochvol)")]
    Unknown(String),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Sde(#[from] SdeError),
    #[error(transparent)]
    Symmetry(#[from] SymmetryError),
}

pub type Result<T> = std::result::Result<T, PresetError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PresetId {
    Brownian,
    Ou,
    Bessel,
    Stochvol,
}

impl PresetId {
    pub const ALL: [PresetId; 4] = [
        PresetId::Brownian,
        PresetId::Ou,
        PresetId::Bessel,
        PresetId::Stochvol,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PresetId::Brownian => "brownian",
            PresetId::Ou => "ou",
            PresetId::Bessel => "bessel",
            PresetId::Stochvol => "stochvol",
        }
    }

    pub fn default_beta(self) -> &'static str {
        match self {
            PresetId::Ou => "z",
            _ => "z^2",
        }
    }
}

impl fmt::Display for PresetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PresetId {
    type Err = PresetError;
    fn from_str(s: &str) -> Result<Self> {
        PresetId::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| PresetError::Unknown(s.to_string()))
    }
}

/// Parameter overrides; `None` keeps the preset default.
#[derive(Debug, Clone, Default)]
pub struct PresetOptions {
    pub beta: Option<String>,
    pub v: Option<String>,
    pub a: Option<f64>,
    pub alpha1: Option<f64>,
    pub alpha2: Option<f64>,
    pub b: Option<f64>,
    pub mu0: Option<f64>,
    pub sigma0: Option<f64>,
    /// Skip the parameter-range checks.
    pub unsafe_params: bool,
}

/// A ready-to-use model with its symmetry and simulation defaults.
#[derive(Debug, Clone)]
pub struct Preset {
    pub id: PresetId,
    pub model: SdeModel,
    pub symmetry: InfinitesimalSymmetry,
    /// Closed-form one-parameter family in `lambda`, where one is known.
    pub finite: Option<FiniteTransformation>,
    /// Moderate box for randomized identity tests.
    pub sample_box: DomainBox,
    pub x0: Vec<f64>,
    pub floors: Vec<Option<f64>>,
    pub scheme: Scheme,
}

impl Preset {
    pub fn setup(&self) -> Setup<'_> {
        Setup {
            model: &self.model,
            symmetry: &self.symmetry,
            x0: &self.x0,
            check_box: &self.sample_box,
        }
    }

    /// Monte-Carlo configuration with this preset's floors and scheme.
    pub fn mc_config(&self, paths: usize, dt: f64, horizon: f64, seed: u64) -> McConfig {
        McConfig::new(paths, dt, horizon, seed).with_floors(self.floors.clone(), self.scheme)
    }
}

pub const DEFAULT_V: &str = "x^4/4 + x^2/2";
pub const BESSEL_FLOOR: f64 = 1e-4;
pub const VARIANCE_FLOOR: f64 = 1e-4;

fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn exprs(params: &[String], src: &[&str]) -> Result<Vec<Expr>> {
    Ok(src
        .iter()
        .map(|s| parse_with_params(s, params))
        .collect::<std::result::Result<Vec<_>, _>>()?)
}

pub fn load_preset(id: PresetId, opts: &PresetOptions) -> Result<Preset> {
    let beta = opts
        .beta
        .clone()
        .unwrap_or_else(|| id.default_beta().to_string());
    let mut b = Bindings::new();
    b.define("beta", parse(&beta)?)?;
    match id {
        PresetId::Brownian => brownian(b),
        PresetId::Ou => {
            b.define("v", parse(opts.v.as_deref().unwrap_or(DEFAULT_V))?)?;
            ou(b)
        }
        PresetId::Bessel => {
            let a = opts.a.unwrap_or(3.0);
            if a < 2.5 && !opts.unsafe_params {
                return Err(PresetError::Constraint(format!(
                    "a ≥ 5/2 required (got a = {a})"
                )));
            }
            b.set_param("a", a);
            bessel(b)
        }
        PresetId::Stochvol => {
            let p = [
                ("a", opts.a.unwrap_or(-1.0)),
                ("b", opts.b.unwrap_or(2.0)),
                ("mu0", opts.mu0.unwrap_or(0.05)),
                ("sigma0", opts.sigma0.unwrap_or(1.0)),
                ("alpha1", opts.alpha1.unwrap_or(0.5)),
                ("alpha2", opts.alpha2.unwrap_or(0.5)),
            ];
            for (k, v) in p {
                b.set_param(k, v);
            }
            let (alpha1, sigma0) = (p[4].1, p[3].1);
            if alpha1 == 1.0 {
                return Err(PresetError::Constraint("α₁ ≠ 1 required".into()));
            }
            if sigma0 == 0.0 {
                return Err(PresetError::Constraint("σ₀ ≠ 0 required".into()));
            }
            stochvol(b)
        }
    }
}

fn two_dim_model(
    name: &str,
    drift: &str,
    params: &[String],
    b: Bindings,
    lo: f64,
) -> Result<SdeModel> {
    let funcs: BTreeSet<String> = b.func_names().map(String::from).collect();
    Ok(SdeModel::new(
        name,
        names(&["x", "z"]),
        "z",
        vec![parse_with_params(drift, params)?, Expr::one()],
        vec![vec![Expr::one()], vec![Expr::zero()]],
        DomainBox::new([("x", lo, 50.0), ("z", 0.0, 50.0)])?,
        b,
        funcs,
    )?)
}

fn brownian(b: Bindings) -> Result<Preset> {
    let model = two_dim_model("brownian", "0", &[], b, -50.0)?;
    let p = model.param_names();
    let y = exprs(&p, &["beta'(z)*x/2", "beta(z)"])?;
    let s = InfinitesimalSymmetry::new(
        &model,
        y,
        parse("beta'(z)")?,
        exprs(&p, &["-beta''(z)*x/2"])?,
        Some(parse("-x^2*beta''(z)/4")?),
    )?;
    Ok(Preset {
        id: PresetId::Brownian,
        symmetry: s,
        finite: None,
        sample_box: DomainBox::new([("x", -3.0, 3.0), ("z", 0.0, 2.0)])?,
        x0: vec![0.0, 0.0],
        floors: vec![None, None],
        scheme: Scheme::Euler,
        model,
    })
}

fn ou(b: Bindings) -> Result<Preset> {
    let model = two_dim_model("ou", "-v'(x)", &[], b, -50.0)?;
    let s = InfinitesimalSymmetry::new(
        &model,
        vec![parse("beta(z)")?, Expr::zero()],
        Expr::zero(),
        vec![parse("-beta(z)*v''(x) - beta'(z)")?],
        Some(parse("-v'(x)*beta(z) + v'(0)*beta(z) - x*beta'(z)")?),
    )?;
    let l = [LAMBDA.to_string()];
    let finite = FiniteTransformation::new(
        model.coords().clone(),
        exprs(&l, &["x + lambda*beta(z)", "z"])?,
        Some(exprs(&l, &["x - lambda*beta(z)", "z"])?),
        Expr::one(),
        exprs(&l, &["-v'(x + lambda*beta(z)) + v'(x) - lambda*beta'(z)"])?,
    )?
    .with_potential(
        parse_with_params("-v(x + lambda*beta(z)) + v(lambda*beta(z)) + v(x) - v(0) - x*lambda*beta'(z)", &l)?,
        Some(parse_with_params(
            "-v''(x + lambda*beta(z))/2 + v''(x)/2 - v'(x)^2/2 + lambda*beta'(z)*v'(lambda*beta(z)) \
             - lambda*x*beta''(z) + v'(x + lambda*beta(z))^2/2 + lambda^2*beta'(z)^2/2",
            &l,
        )?),
    );
    Ok(Preset {
        id: PresetId::Ou,
        symmetry: s,
        finite: Some(finite),
        sample_box: DomainBox::new([("x", -2.0, 2.0), ("z", 0.0, 2.0)])?,
        x0: vec![0.0, 0.0],
        floors: vec![None, None],
        scheme: Scheme::Euler,
        model,
    })
}

fn bessel(b: Bindings) -> Result<Preset> {
    let p = names(&["a"]);
    let model = two_dim_model("bessel", "a/x", &p, b, 1e-8)?;
    let s = InfinitesimalSymmetry::new(
        &model,
        exprs(&p, &["beta'(z)*x/2", "beta(z)"])?,
        parse("beta'(z)")?,
        exprs(&p, &["-beta''(z)*x/2"])?,
        Some(parse("-x^2*beta''(z)/4")?),
    )?;
    Ok(Preset {
        id: PresetId::Bessel,
        symmetry: s,
        finite: None,
        sample_box: DomainBox::new([("x", 0.5, 3.0), ("z", 0.0, 2.0)])?,
        x0: vec![1.0, 0.0],
        floors: vec![Some(BESSEL_FLOOR), None],
        scheme: Scheme::Euler,
        model,
    })
}

fn stochvol(b: Bindings) -> Result<Preset> {
    let p = names(&["a", "b", "mu0", "sigma0", "alpha1", "alpha2"]);
    let funcs: BTreeSet<String> = b.func_names().map(String::from).collect();
    let model = SdeModel::new(
        "stochvol",
        names(&["nu", "x", "z"]),
        "z",
        exprs(&p, &["a*nu + b", "mu0 - nu^(2*alpha2)/2", "1"])?,
        vec![
            exprs(&p, &["sigma0*nu^alpha1", "0"])?,
            exprs(&p, &["0", "nu^alpha2"])?,
            exprs(&p, &["0", "0"])?,
        ],
        DomainBox::new([("nu", 1e-8, 100.0), ("x", -100.0, 100.0), ("z", 0.0, 50.0)])?,
        b,
        funcs,
    )?;
    let y = exprs(
        &p,
        &[
            "beta'(z)*nu/(2*(1 - alpha1))",
            "(alpha2 + 1 - alpha1)*beta'(z)*x/(2*(1 - alpha1))",
            "beta(z)",
        ],
    )?;
    let h = exprs(
        &p,
        &[
            "(nu^(-alpha1)*b*beta'(z)*(1 - 2*alpha1)/(2*(1 - alpha1)) \
              + nu^(1 - alpha1)*(a*beta'(z) - beta''(z)/(2*(1 - alpha1))))/sigma0",
            "nu^alpha2*beta'(z)*(alpha1 - alpha2 - 1)/(4*(1 - alpha1)) \
              + nu^(-alpha2)*(mu0*beta'(z)*(1 - alpha1 - alpha2) - x*beta''(z)*(alpha2 + 1 - alpha1))/(2*(1 - alpha1))",
        ],
    )?;
    // potential for the volatility component only
    let k = parse_with_params(
        "(b*beta'(z)*nu^(1 - 2*alpha1)/(2*(1 - alpha1)) \
          + nu^(2 - 2*alpha1)*(a*beta'(z) - beta''(z)/(2*(1 - alpha1)))/(2*(1 - alpha1)))/sigma0^2",
        &p,
    )?;
    let s = InfinitesimalSymmetry::new(&model, y, parse("beta'(z)")?, h, Some(k))?;
    Ok(Preset {
        id: PresetId::Stochvol,
        symmetry: s,
        finite: None,
        sample_box: DomainBox::new([("nu", 0.2, 3.0), ("x", -2.0, 2.0), ("z", 0.0, 2.0)])?,
        x0: vec![1.0, 0.0, 0.0],
        floors: vec![Some(VARIANCE_FLOOR), None, None],
        scheme: Scheme::EulerFullTruncation,
        model,
    })
}

/// Parameter regime in which the stochastic-volatility Lyapunov functions apply.
pub fn stochvol_lyapunov_regime(model: &SdeModel) -> std::result::Result<(), String> {
    let g = |k: &str| model.bindings().param(k).unwrap_or(f64::NAN);
    let (a, b, s0, a1, a2) = (g("a"), g("b"), g("sigma0"), g("alpha1"), g("alpha2"));
    let general = a1 > 0.5 && a2 <= 0.5 && a < 0.0 && b > 0.0;
    let square_root = a1 == 0.5 && a2 == 0.5 && b > s0 * s0;
    if general || square_root {
        Ok(())
    } else {
        Err("requires α₁ > ½, α₂ ≤ ½, a < 0, b > 0, or α₁ = α₂ = ½ and b > σ₀²".into())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{Node, ZeroTest};
    use crate::symmetry::{
        check_entries, compose, finite_quasi_doob_residuals, invert, quasi_doob_obstruction,
        quasi_doob_residual, transformation_difference, verify_quasi_doob, verify_symmetry,
        FunctionMode,
    };

    fn load(id: PresetId) -> Preset {
        load_preset(id, &PresetOptions::default()).unwrap()
    }

    #[test]
    fn every_symmetry_solves_its_determining_equations() {
        for id in PresetId::ALL {
            let p = load(id);
            for mode in [FunctionMode::Generic, FunctionMode::Bound] {
                let r = verify_symmetry(
                    &p.model,
                    &p.symmetry,
                    &p.sample_box,
                    &ZeroTest::default(),
                    mode,
                )
                .unwrap();
                let bad: Vec<_> = r.failures().map(|e| (&e.label, &e.residual)).collect();
                assert!(r.pass, "{id} {mode:?}: {bad:?}");
            }
        }
    }

    #[test]
    fn perturbed_tau_is_rejected_with_witness() {
        for id in PresetId::ALL {
            let p = load(id);
            if p.symmetry.tau.is_zero() {
                continue;
            }
            let bad = p.symmetry.with_tau(p.symmetry.tau.clone() * 1.01);
            let r = verify_symmetry(
                &p.model,
                &bad,
                &p.sample_box,
                &ZeroTest::default(),
                FunctionMode::Generic,
            )
            .unwrap();
            assert!(!r.pass, "{id}");
            assert!(r.failures().all(|e| e.outcome.witness.is_some()));
        }
    }

    #[test]
    fn brownian_without_girsanov_part_fails_on_drift() {
        let p = load(PresetId::Brownian);
        let bad = p.symmetry.with_h(vec![Expr::zero()]);
        let r = verify_symmetry(
            &p.model,
            &bad,
            &p.sample_box,
            &ZeroTest::default(),
            FunctionMode::Bound,
        )
        .unwrap();
        let labels: Vec<&str> = r.failures().map(|e| e.label.as_str()).collect();
        assert_eq!(labels, ["drift[x]"]);
    }

    #[test]
    fn quasi_doob_classification() {
        for id in [PresetId::Brownian, PresetId::Ou, PresetId::Bessel] {
            let p = load(id);
            let r = verify_quasi_doob(
                &p.model,
                &p.symmetry,
                &p.sample_box,
                &ZeroTest::default(),
                FunctionMode::Generic,
            )
            .unwrap();
            assert!(r.pass, "{id}");
        }
        let p = load(PresetId::Stochvol);
        let r = verify_quasi_doob(
            &p.model,
            &p.symmetry,
            &p.sample_box,
            &ZeroTest::default(),
            FunctionMode::Generic,
        )
        .unwrap();
        assert!(!r.pass);
        let labels: Vec<&str> = r.failures().map(|e| e.label.as_str()).collect();
        assert_eq!(labels, ["quasi_doob[2]"]);
        // first noise is still a gradient
        assert!(quasi_doob_residual(&p.model, &p.symmetry).is_ok());
    }

    #[test]
    fn preset_fields_match_closed_forms() {
        let p = load(PresetId::Brownian);
        let b = parse("beta'(z)*x/2").unwrap();
        let r = check_entries(
            vec![("Y".into(), p.symmetry.y.components()[0].clone() - b)],
            &p.sample_box,
            &ZeroTest::default(),
            &Bindings::new(),
        )
        .unwrap();
        assert!(r.pass);
        assert!(matches!(
            p.symmetry.time_component().node(),
            Node::Func { .. }
        ));
        let ou = load(PresetId::Ou);
        assert!(ou.symmetry.tau.is_zero());
    }

    #[test]
    fn bessel_parameter_bound() {
        let opts = PresetOptions {
            a: Some(2.0),
            ..Default::default()
        };
        let e = load_preset(PresetId::Bessel, &opts)
            .unwrap_err()
            .to_string();
        assert!(e.contains("a ≥ 5/2 required"), "{e}");
        let opts = PresetOptions {
            a: Some(2.0),
            unsafe_params: true,
            ..Default::default()
        };
        assert!(load_preset(PresetId::Bessel, &opts).is_ok());
        assert!("heat".parse::<PresetId>().is_err());
        assert_eq!("stochvol".parse::<PresetId>().unwrap(), PresetId::Stochvol);
    }

    #[test]
    fn stochvol_regime() {
        let p = load(PresetId::Stochvol);
        assert!(stochvol_lyapunov_regime(&p.model).is_ok());
        let opts = PresetOptions {
            b: Some(0.5),
            ..Default::default()
        };
        let q = load_preset(PresetId::Stochvol, &opts).unwrap();
        assert!(stochvol_lyapunov_regime(&q.model).is_err());
    }

    #[test]
    fn ou_family_is_a_group() {
        let p = load(PresetId::Ou);
        let f = p.finite.unwrap();
        let b = p.model.bindings();
        let t = ZeroTest::default();
        let bx = &p.sample_box;
        // T_a then T_b equals T_{a+b}
        let r = transformation_difference(
            &compose(&f.at(0.3), &f.at(0.45)).unwrap(),
            &f.at(0.75),
            bx,
            &t,
            b,
        )
        .unwrap();
        assert!(r.pass, "{:?}", r.failures().collect::<Vec<_>>());
        let r = transformation_difference(&invert(&f.at(0.6)).unwrap(), &f.at(-0.6), bx, &t, b)
            .unwrap();
        assert!(r.pass, "{:?}", r.failures().collect::<Vec<_>>());
        for lam in [0.25, 0.5, 1.0] {
            let res = finite_quasi_doob_residuals(&p.model, &f.at(lam)).unwrap();
            assert_eq!(res.len(), 2);
            let r = check_entries(res, bx, &t, b).unwrap();
            assert!(r.pass, "{lam}: {:?}", r.failures().collect::<Vec<_>>());
        }
    }

    #[test]
    fn stochvol_admits_no_potential_at_all() {
        let p = load(PresetId::Stochvol);
        let obs = quasi_doob_obstruction(&p.model, &p.symmetry).unwrap();
        assert_eq!(obs.len(), 1);
        let r =
            check_entries(obs, &p.sample_box, &ZeroTest::default(), p.model.bindings()).unwrap();
        assert!(!r.pass);
        // with β'' ≡ 0 the obstruction vanishes
        let opts = PresetOptions {
            beta: Some("z".into()),
            ..Default::default()
        };
        let q = load_preset(PresetId::Stochvol, &opts).unwrap();
        let obs = quasi_doob_obstruction(&q.model, &q.symmetry).unwrap();
        assert!(
            check_entries(obs, &q.sample_box, &ZeroTest::default(), q.model.bindings())
                .unwrap()
                .pass
        );
        for id in [PresetId::Brownian, PresetId::Ou, PresetId::Bessel] {
            assert!(quasi_doob_obstruction(&load(id).model, &load(id).symmetry)
                .unwrap()
                .is_empty());
        }
    }
}
