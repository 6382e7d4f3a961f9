//! Time-augmented Itô models `dX = μ(X)dt + σ(X)dW` with an explicit time
//! coordinate `z` (`μ_z = 1`, `σ_z = 0`), their generator and vector fields.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::expr::{parse_with_params, simplify, sum, Bindings, DomainBox, Expr, ExprError};

#[derive(Debug, thiserror::Error)]
pub enum SdeError {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("time row violated: {0}")]
    TimeRow(String),
    #[error("undeclared {kind} `{name}`")]
    Undeclared { kind: &'static str, name: String },
    #[error("diffusion field index {alpha} out of range 1..={m}")]
    FieldIndex { alpha: usize, m: usize },
    #[error("invalid model: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, SdeError>;

/// A first-order differential operator `V^i ∂_i` over named coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    coords: Arc<[String]>,
    components: Vec<Expr>,
}

impl VectorField {
    pub fn new(coords: Arc<[String]>, components: Vec<Expr>) -> Result<Self> {
        if coords.len() != components.len() {
            return Err(SdeError::Dimension(format!(
                "{} components for {} coordinates",
                components.len(),
                coords.len()
            )));
        }
        Ok(VectorField { coords, components })
    }

    pub fn coords(&self) -> &Arc<[String]> {
        &self.coords
    }

    pub fn components(&self) -> &[Expr] {
        &self.components
    }

    pub fn component(&self, coord: &str) -> Option<&Expr> {
        self.coords
            .iter()
            .position(|c| c == coord)
            .map(|i| &self.components[i])
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().all(Expr::is_zero)
    }
}

/// `Σ_i V^i ∂_i φ`, simplified.
pub fn apply_field(v: &VectorField, phi: &Expr) -> Expr {
    apply_field_with(v.components(), phi, &|e, i| e.differentiate(&v.coords[i]))
}

/// `Σ_i V^i D_i φ` for first-order operators `D_i`, simplified.
pub fn apply_field_with(components: &[Expr], phi: &Expr, d: &dyn Fn(&Expr, usize) -> Expr) -> Expr {
    let terms = components
        .iter()
        .enumerate()
        .filter(|(_, c)| !c.is_zero())
        .map(|(i, c)| c * &d(phi, i));
    simplify(&sum(terms))
}

/// `[A, B]^i = A(B^i) − B(A^i)`.
pub fn lie_bracket(a: &VectorField, b: &VectorField) -> Result<VectorField> {
    if a.coords != b.coords {
        return Err(SdeError::Dimension(
            "bracket of fields over different coordinates".into(),
        ));
    }
    let comps = a
        .components
        .iter()
        .zip(&b.components)
        .map(|(ai, bi)| simplify(&(apply_field(a, bi) - apply_field(b, ai))))
        .collect();
    VectorField::new(a.coords.clone(), comps)
}

/// `½ a^{ij} D_i D_j φ + μ^i D_i φ` for an arbitrary family of first-order
/// operators `D_i`; the ordinary generator uses `D_i = ∂_i`.
pub fn second_order(
    a: &[Vec<Expr>],
    mu: &[Expr],
    phi: &Expr,
    d: &dyn Fn(&Expr, usize) -> Expr,
) -> Expr {
    let n = mu.len();
    let first: Vec<Expr> = (0..n).map(|i| d(phi, i)).collect();
    let mut terms = vec![];
    for i in 0..n {
        if first[i].is_zero() {
            continue;
        }
        for j in 0..n {
            if a[i][j].is_zero() {
                continue;
            }
            let dij = d(&first[i], j);
            if !dij.is_zero() {
                terms.push(Expr::mul(vec![Expr::constant(0.5), a[i][j].clone(), dij]));
            }
        }
        if !mu[i].is_zero() {
            terms.push(&mu[i] * &first[i]);
        }
    }
    simplify(&sum(terms))
}

/// JSON form of a model. Expressions are strings in the expression grammar;
/// names listed under `params` parse as parameters. A function symbol mapped
/// to `null` is declared but left free.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    pub coords: Vec<String>,
    pub time_coord: String,
    pub drift: Vec<String>,
    pub diffusion: Vec<Vec<String>>,
    pub domain: BTreeMap<String, [f64; 2]>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default)]
    pub funcsyms: BTreeMap<String, Option<String>>,
}

#[derive(Debug, Clone)]
pub struct SdeModel {
    name: String,
    coords: Arc<[String]>,
    time: usize,
    drift: Vec<Expr>,
    // n rows, m columns
    diffusion: Vec<Vec<Expr>>,
    domain: DomainBox,
    bindings: Bindings,
    funcs: BTreeSet<String>,
    a: Vec<Vec<Expr>>,
}

impl SdeModel {
    /// Build and validate a model. `funcs` lists every function symbol the
    /// model may use, bound in `bindings` or not.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: impl Into<String>,
        coords: Vec<String>,
        time_coord: &str,
        drift: Vec<Expr>,
        diffusion: Vec<Vec<Expr>>,
        domain: DomainBox,
        bindings: Bindings,
        funcs: BTreeSet<String>,
    ) -> Result<Self> {
        let n = coords.len();
        let time = coords.iter().position(|c| c == time_coord).ok_or_else(|| {
            SdeError::Invalid(format!(
                "time coordinate `{time_coord}` not among coordinates"
            ))
        })?;
        let distinct: BTreeSet<&String> = coords.iter().collect();
        if distinct.len() != n {
            return Err(SdeError::Invalid("duplicate coordinate names".into()));
        }
        if drift.len() != n || diffusion.len() != n {
            return Err(SdeError::Dimension(format!(
                "drift/diffusion need {n} rows"
            )));
        }
        let m = diffusion[0].len();
        if m == 0 || diffusion.iter().any(|r| r.len() != m) {
            return Err(SdeError::Dimension(
                "diffusion rows must have equal, nonzero length".into(),
            ));
        }
        for c in coords.iter() {
            if domain.get(c).is_none() {
                return Err(SdeError::Invalid(format!(
                    "domain missing coordinate `{c}`"
                )));
            }
        }
        let drift: Vec<Expr> = drift.iter().map(simplify).collect();
        let diffusion: Vec<Vec<Expr>> = diffusion
            .iter()
            .map(|r| r.iter().map(simplify).collect())
            .collect();
        if drift[time].as_const() != Some(1.0) {
            return Err(SdeError::TimeRow(format!(
                "drift of `{time_coord}` is `{}`, expected 1",
                drift[time]
            )));
        }
        if let Some(bad) = diffusion[time].iter().find(|e| !e.is_zero()) {
            return Err(SdeError::TimeRow(format!(
                "diffusion of `{time_coord}` contains `{bad}`"
            )));
        }
        let a = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| simplify(&sum((0..m).map(|k| &diffusion[i][k] * &diffusion[j][k]))))
                    .collect()
            })
            .collect();
        let model = SdeModel {
            name: name.into(),
            coords: coords.into(),
            time,
            drift,
            diffusion,
            domain,
            bindings,
            funcs,
            a,
        };
        for e in model.drift.iter().chain(model.diffusion.iter().flatten()) {
            model.check_symbols(e)?;
        }
        Ok(model)
    }

    pub fn from_spec(spec: &ModelSpec) -> Result<Self> {
        let params: Vec<&str> = spec.params.keys().map(String::as_str).collect();
        let p = |s: &str| parse_with_params(s, &params);
        let drift = spec
            .drift
            .iter()
            .map(|s| p(s))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let diffusion = spec
            .diffusion
            .iter()
            .map(|r| {
                r.iter()
                    .map(|s| p(s))
                    .collect::<std::result::Result<Vec<_>, _>>()
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let mut bounds = vec![];
        for c in &spec.coords {
            let [lo, hi] = spec
                .domain
                .get(c)
                .ok_or_else(|| SdeError::Invalid(format!("domain missing coordinate `{c}`")))?;
            bounds.push((c.clone(), *lo, *hi));
        }
        if let Some(extra) = spec.domain.keys().find(|k| !spec.coords.contains(k)) {
            return Err(SdeError::Undeclared {
                kind: "coordinate",
                name: extra.clone(),
            });
        }
        let mut b = Bindings::new();
        for (k, v) in &spec.params {
            b.set_param(k.clone(), *v);
        }
        for (f, def) in &spec.funcsyms {
            if let Some(src) = def {
                b.define(f, p(src)?)?;
            }
        }
        SdeModel::new(
            spec.name.clone(),
            spec.coords.clone(),
            &spec.time_coord,
            drift,
            diffusion,
            DomainBox::new(bounds)?,
            b,
            spec.funcsyms.keys().cloned().collect(),
        )
    }

    /// Reject coordinates, parameters and function symbols the model does not declare.
    pub fn check_symbols(&self, e: &Expr) -> Result<()> {
        let s = e.symbols();
        if let Some(c) = s.coords.iter().find(|c| !self.coords.contains(c)) {
            return Err(SdeError::Undeclared {
                kind: "coordinate",
                name: c.clone(),
            });
        }
        if let Some(p) = s.params.iter().find(|p| self.bindings.param(p).is_none()) {
            return Err(SdeError::Undeclared {
                kind: "parameter",
                name: p.clone(),
            });
        }
        if let Some(f) = s.funcs.iter().find(|f| !self.funcs.contains(*f)) {
            return Err(SdeError::Undeclared {
                kind: "function symbol",
                name: f.clone(),
            });
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn coords(&self) -> &Arc<[String]> {
        &self.coords
    }

    /// State dimension, time coordinate included.
    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    /// Brownian dimension.
    pub fn noise_dim(&self) -> usize {
        self.diffusion[0].len()
    }

    pub fn time_index(&self) -> usize {
        self.time
    }

    pub fn time_coord(&self) -> &str {
        &self.coords[self.time]
    }

    pub fn drift(&self) -> &[Expr] {
        &self.drift
    }

    pub fn diffusion(&self) -> &[Vec<Expr>] {
        &self.diffusion
    }

    /// Cached, simplified `σσᵀ`.
    pub fn sigma_sigma_t(&self) -> &[Vec<Expr>] {
        &self.a
    }

    pub fn domain(&self) -> &DomainBox {
        &self.domain
    }

    pub fn bindings(&self) -> &Bindings {
        &self.bindings
    }

    pub fn param_names(&self) -> Vec<String> {
        self.bindings.params().keys().cloned().collect()
    }

    pub fn funcs(&self) -> &BTreeSet<String> {
        &self.funcs
    }

    /// Parse an expression with this model's parameter names.
    pub fn parse(&self, text: &str) -> Result<Expr> {
        let e = parse_with_params(text, &self.param_names())?;
        self.check_symbols(&e)?;
        Ok(e)
    }

    /// Bindings with every function symbol left free (parameters kept).
    pub fn generic_bindings(&self) -> Bindings {
        let mut b = Bindings::new();
        for (k, v) in self.bindings.params() {
            b.set_param(k.clone(), *v);
        }
        b
    }

    pub fn with_domain(&self, domain: DomainBox) -> Result<Self> {
        for c in self.coords.iter() {
            if domain.get(c).is_none() {
                return Err(SdeError::Invalid(format!(
                    "domain missing coordinate `{c}`"
                )));
            }
        }
        Ok(SdeModel {
            domain,
            ..self.clone()
        })
    }

    pub fn field(&self, components: Vec<Expr>) -> Result<VectorField> {
        VectorField::new(self.coords.clone(), components)
    }

    pub fn drift_field(&self) -> VectorField {
        VectorField {
            coords: self.coords.clone(),
            components: self.drift.clone(),
        }
    }

    /// `L φ = ½(σσᵀ)^{ij}∂_i∂_j φ + μ^i ∂_i φ`; the time coordinate contributes `∂_z φ`.
    pub fn generator_apply(&self, phi: &Expr) -> Expr {
        let coords = self.coords.clone();
        second_order(&self.a, &self.drift, phi, &|e, i| {
            e.differentiate(&coords[i])
        })
    }

    /// Column `alpha` (1-based) of `σ`.
    pub fn diffusion_field(&self, alpha: usize) -> Result<VectorField> {
        let m = self.noise_dim();
        if alpha == 0 || alpha > m {
            return Err(SdeError::FieldIndex { alpha, m });
        }
        Ok(VectorField {
            coords: self.coords.clone(),
            components: self
                .diffusion
                .iter()
                .map(|r| r[alpha - 1].clone())
                .collect(),
        })
    }

    pub fn diffusion_fields(&self) -> Vec<VectorField> {
        (1..=self.noise_dim())
            .map(|a| self.diffusion_field(a).unwrap())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    pub(crate) fn brownian() -> SdeModel {
        SdeModel::new(
            "brownian",
            vec!["x".into(), "z".into()],
            "z",
            vec![Expr::zero(), Expr::one()],
            vec![vec![Expr::one()], vec![Expr::zero()]],
            DomainBox::new([("x", -3.0, 3.0), ("z", 0.0, 2.0)]).unwrap(),
            Bindings::new(),
            ["beta".to_string()].into(),
        )
        .unwrap()
    }

    fn ou() -> SdeModel {
        SdeModel::new(
            "ou",
            vec!["x".into(), "z".into()],
            "z",
            vec![parse("-v'(x)").unwrap(), Expr::one()],
            vec![vec![Expr::one()], vec![Expr::zero()]],
            DomainBox::new([("x", -3.0, 3.0), ("z", 0.0, 2.0)]).unwrap(),
            Bindings::new(),
            ["beta".to_string(), "v".to_string()].into(),
        )
        .unwrap()
    }

    #[test]
    fn generator_examples() {
        let m = brownian();
        assert_eq!(m.generator_apply(&parse("x^2").unwrap()), Expr::one());
        assert_eq!(
            m.generator_apply(&parse("x^2*z").unwrap()),
            parse("z + x^2").unwrap()
        );
        assert_eq!(
            ou().generator_apply(&parse("beta(z)").unwrap()),
            parse("beta'(z)").unwrap()
        );
    }

    #[test]
    fn fields_and_brackets() {
        let m = brownian();
        let s1 = m.diffusion_field(1).unwrap();
        assert_eq!(s1.components(), &[Expr::one(), Expr::zero()]);
        assert!(matches!(
            m.diffusion_field(2),
            Err(SdeError::FieldIndex { alpha: 2, m: 1 })
        ));
        assert!(matches!(
            m.diffusion_field(0),
            Err(SdeError::FieldIndex { .. })
        ));

        let v = m.field(vec![parse("x").unwrap(), Expr::zero()]).unwrap();
        assert_eq!(
            apply_field(&v, &parse("x^2").unwrap()),
            parse("2*x^2").unwrap()
        );
        assert_eq!(
            apply_field(&s1, &parse("x^2").unwrap()),
            parse("2*x").unwrap()
        );
        assert!(lie_bracket(&v, &v).unwrap().is_zero());
        let b = lie_bracket(&v, &s1).unwrap();
        assert_eq!(b.components(), &[Expr::constant(-1.0), Expr::zero()]);

        let y = m
            .field(vec![
                parse("beta'(z)*x/2").unwrap(),
                parse("beta(z)").unwrap(),
            ])
            .unwrap();
        assert_eq!(
            apply_field(&y, &parse("x").unwrap()),
            parse("0.5*beta'(z)*x").unwrap()
        );
        let b = lie_bracket(&y, &s1).unwrap();
        assert_eq!(
            b.components(),
            &[parse("-0.5*beta'(z)").unwrap(), Expr::zero()]
        );
    }

    #[test]
    fn time_row_is_enforced() {
        let bad = SdeModel::new(
            "bad",
            vec!["x".into(), "z".into()],
            "z",
            vec![Expr::zero(), Expr::constant(2.0)],
            vec![vec![Expr::one()], vec![Expr::zero()]],
            DomainBox::new([("x", -1.0, 1.0), ("z", 0.0, 1.0)]).unwrap(),
            Bindings::new(),
            BTreeSet::new(),
        );
        assert!(matches!(bad, Err(SdeError::TimeRow(_))));
        let bad = SdeModel::new(
            "bad",
            vec!["x".into(), "z".into()],
            "z",
            vec![Expr::zero(), Expr::one()],
            vec![vec![Expr::one()], vec![parse("x").unwrap()]],
            DomainBox::new([("x", -1.0, 1.0), ("z", 0.0, 1.0)]).unwrap(),
            Bindings::new(),
            BTreeSet::new(),
        );
        assert!(matches!(bad, Err(SdeError::TimeRow(_))));
    }

    #[test]
    fn json_spec_round() {
        let src = r#"{
            "name": "ou", "coords": ["x", "z"], "time_coord": "z",
            "drift": ["-k*x", "1"], "diffusion": [["s"], ["0"]],
            "domain": {"x": [-5, 5], "z": [0, 1]},
            "params": {"k": 1.0, "s": 0.5}, "funcsyms": {"beta": "z^2"}
        }"#;
        let spec: ModelSpec = serde_json::from_str(src).unwrap();
        let m = SdeModel::from_spec(&spec).unwrap();
        assert_eq!(m.sigma_sigma_t()[0][0].to_string(), "s^2");
        assert!(m.parse("beta(z)*k").is_ok());
        assert!(matches!(m.parse("w"), Err(SdeError::Undeclared { .. })));

        let typo = src.replace("\"params\"", "\"parameters\"");
        assert!(serde_json::from_str::<ModelSpec>(&typo).is_err());
    }
}
