//! Infinitesimal symmetries `(Y, τ, H)`, their determining equations, the
//! quasi-Doob criterion, and the group law of finite stochastic transformations.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::expr::{
    is_identically_zero, parse_with_params, simplify, sum, Bindings, DomainBox, Expr, ExprError,
    ZeroTest, ZeroTestOutcome,
};
use crate::sde::{apply_field, lie_bracket, SdeError, SdeModel, VectorField};

#[derive(Debug, thiserror::Error)]
pub enum SymmetryError {
    #[error(transparent)]
    Sde(#[from] SdeError),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("while checking {entry}: {source}")]
    Entry { entry: String, source: ExprError },
    #[error("symmetry has no quasi-Doob potential k")]
    MissingK,
    #[error("transformation has no explicit inverse")]
    MissingInverse,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

pub type Result<T> = std::result::Result<T, SymmetryError>;

/// Generator of a one-parameter symmetry group: spatial field `Y` (its time
/// component is `m`), time rescaling rate `τ`, Girsanov drift `H`.
#[derive(Debug, Clone)]
pub struct InfinitesimalSymmetry {
    pub y: VectorField,
    pub tau: Expr,
    pub h: Vec<Expr>,
    pub k: Option<Expr>,
    time: usize,
}

impl InfinitesimalSymmetry {
    pub fn new(
        model: &SdeModel,
        y: Vec<Expr>,
        tau: Expr,
        h: Vec<Expr>,
        k: Option<Expr>,
    ) -> Result<Self> {
        if h.len() != model.noise_dim() {
            return Err(SymmetryError::Dimension(format!(
                "H has {} entries, model has {} noises",
                h.len(),
                model.noise_dim()
            )));
        }
        for e in y.iter().chain(&h).chain([&tau]).chain(k.as_ref()) {
            model.check_symbols(e)?;
        }
        Ok(InfinitesimalSymmetry {
            y: model.field(y.iter().map(simplify).collect())?,
            tau: simplify(&tau),
            h: h.iter().map(simplify).collect(),
            k: k.map(|k| simplify(&k)),
            time: model.time_index(),
        })
    }

    pub fn from_spec(model: &SdeModel, spec: &SymmetrySpec) -> Result<Self> {
        let p = |s: &str| model.parse(s);
        let y = spec
            .y
            .iter()
            .map(|s| p(s))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let h = spec
            .h
            .iter()
            .map(|s| p(s))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let k = spec.k.as_deref().map(p).transpose()?;
        Self::new(model, y, p(&spec.tau)?, h, k)
    }

    /// `m`, the time component of `Y`.
    pub fn time_component(&self) -> &Expr {
        &self.y.components()[self.time]
    }

    pub fn time_coord(&self) -> &str {
        &self.y.coords()[self.time]
    }

    pub fn with_tau(&self, tau: Expr) -> Self {
        InfinitesimalSymmetry {
            tau: simplify(&tau),
            ..self.clone()
        }
    }

    pub fn with_h(&self, h: Vec<Expr>) -> Self {
        InfinitesimalSymmetry {
            h: h.iter().map(simplify).collect(),
            ..self.clone()
        }
    }
}

pub fn time_component(s: &InfinitesimalSymmetry) -> Expr {
    s.time_component().clone()
}

#[derive(Debug, Clone)]
pub struct Residuals {
    /// `Y(μ) − L(Y) − σH + τμ`, one entry per coordinate.
    pub drift: Vec<Expr>,
    /// `[Y, Σ_α] + ½τΣ_α`, indexed `[coordinate][α]`.
    pub diffusion: Vec<Vec<Expr>>,
}

impl Residuals {
    /// Labelled entries, e.g. `drift[x]` and `diffusion[x,1]`.
    pub fn entries(&self, coords: &[String]) -> Vec<(String, Expr)> {
        let mut out: Vec<(String, Expr)> = coords
            .iter()
            .zip(&self.drift)
            .map(|(c, e)| (format!("drift[{c}]"), e.clone()))
            .collect();
        for (c, row) in coords.iter().zip(&self.diffusion) {
            for (a, e) in row.iter().enumerate() {
                out.push((format!("diffusion[{c},{}]", a + 1), e.clone()));
            }
        }
        out
    }
}

pub fn determining_residuals(model: &SdeModel, s: &InfinitesimalSymmetry) -> Result<Residuals> {
    let n = model.dim();
    let m = model.noise_dim();
    let mu = model.drift();
    let sigma = model.diffusion();
    let drift = (0..n)
        .map(|i| {
            let y_mu = apply_field(&s.y, &mu[i]);
            let l_y = model.generator_apply(&s.y.components()[i]);
            let sigma_h = sum((0..m).map(|a| &sigma[i][a] * &s.h[a]));
            simplify(&(y_mu - l_y - sigma_h + &s.tau * &mu[i]))
        })
        .collect();
    let mut diffusion = vec![Vec::with_capacity(m); n];
    for a in 1..=m {
        let field = model.diffusion_field(a)?;
        let br = lie_bracket(&s.y, &field)?;
        for (i, row) in diffusion.iter_mut().enumerate() {
            let half_tau = Expr::mul(vec![
                Expr::constant(0.5),
                s.tau.clone(),
                field.components()[i].clone(),
            ]);
            row.push(simplify(&(br.components()[i].clone() + half_tau)));
        }
    }
    Ok(Residuals { drift, diffusion })
}

/// How function symbols are treated by the randomized checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FunctionMode {
    /// Every function symbol is replaced by random cubics, so a pass certifies
    /// the identity for arbitrary choices.
    Generic,
    /// The model's own definitions are used.
    Bound,
}

impl FunctionMode {
    pub fn bindings(self, model: &SdeModel) -> Bindings {
        match self {
            FunctionMode::Generic => model.generic_bindings(),
            FunctionMode::Bound => model.bindings().clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckEntry {
    pub label: String,
    pub residual: String,
    pub outcome: ZeroTestOutcome,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub pass: bool,
    pub entries: Vec<CheckEntry>,
}

impl CheckReport {
    pub fn failures(&self) -> impl Iterator<Item = &CheckEntry> {
        self.entries.iter().filter(|e| !e.outcome.pass)
    }
}

fn zero_check(
    entries: Vec<(String, Expr)>,
    bx: &DomainBox,
    test: &ZeroTest,
    b: &Bindings,
) -> Result<CheckReport> {
    let mut out = vec![];
    for (i, (label, e)) in entries.into_iter().enumerate() {
        let t = ZeroTest {
            seed: test.seed.wrapping_add(i as u64),
            ..*test
        };
        let outcome =
            is_identically_zero(&e, bx, &t, b).map_err(|source| SymmetryError::Entry {
                entry: label.clone(),
                source,
            })?;
        out.push(CheckEntry {
            label,
            residual: e.to_string(),
            outcome,
        });
    }
    Ok(CheckReport {
        pass: out.iter().all(|e| e.outcome.pass),
        entries: out,
    })
}

/// Zero-test every determining-equation residual.
pub fn verify_symmetry(
    model: &SdeModel,
    s: &InfinitesimalSymmetry,
    bx: &DomainBox,
    test: &ZeroTest,
    mode: FunctionMode,
) -> Result<CheckReport> {
    let r = determining_residuals(model, s)?;
    zero_check(r.entries(model.coords()), bx, test, &mode.bindings(model))
}

/// `H_j − σ_j^i ∂_i k`; all zero iff the symmetry is of quasi-Doob type with potential `k`.
pub fn quasi_doob_residual(model: &SdeModel, s: &InfinitesimalSymmetry) -> Result<Vec<Expr>> {
    let k = s.k.as_ref().ok_or(SymmetryError::MissingK)?;
    (1..=model.noise_dim())
        .map(|a| {
            let grad = apply_field(&model.diffusion_field(a)?, k);
            Ok(simplify(&(s.h[a - 1].clone() - grad)))
        })
        .collect()
}

pub fn verify_quasi_doob(
    model: &SdeModel,
    s: &InfinitesimalSymmetry,
    bx: &DomainBox,
    test: &ZeroTest,
    mode: FunctionMode,
) -> Result<CheckReport> {
    let r = quasi_doob_residual(model, s)?;
    let entries = r
        .into_iter()
        .enumerate()
        .map(|(a, e)| (format!("quasi_doob[{}]", a + 1), e))
        .collect();
    zero_check(entries, bx, test, &mode.bindings(model))
}

/// Obstruction to the existence of any quasi-Doob potential. Each noise must
/// drive a single coordinate `i`, so `∂_i k = H_α/σ^i_α =: g_i`; the entries are
/// `∂_j g_i − ∂_i g_j` over pairs of driven coordinates. An empty list means
/// at most one coordinate is driven and no obstruction arises.
pub fn quasi_doob_obstruction(
    model: &SdeModel,
    s: &InfinitesimalSymmetry,
) -> Result<Vec<(String, Expr)>> {
    let coords = model.coords();
    let mut g: Vec<(usize, Expr)> = vec![];
    for (a, h) in s.h.iter().enumerate() {
        let col: Vec<usize> = (0..coords.len())
            .filter(|&i| !simplify(&model.diffusion()[i][a]).is_zero())
            .collect();
        match col.as_slice() {
            [i] if g.iter().all(|(j, _)| j != i) => g.push((
                *i,
                simplify(&(h.clone() / model.diffusion()[*i][a].clone())),
            )),
            _ => {
                return Err(SymmetryError::Dimension(
                    "obstruction test needs each noise to drive its own single coordinate".into(),
                ))
            }
        }
    }
    let mut out = vec![];
    for (p, (i, gi)) in g.iter().enumerate() {
        for (j, gj) in &g[p + 1..] {
            let e = simplify(&(gi.differentiate(&coords[*j]) - gj.differentiate(&coords[*i])));
            out.push((format!("curl[{},{}]", coords[*i], coords[*j]), e));
        }
    }
    Ok(out)
}

/// JSON form of a symmetry; expressions use the model's parameter names,
/// and finite transformations may also use `lambda`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SymmetrySpec {
    #[serde(rename = "Y")]
    pub y: Vec<String>,
    pub tau: String,
    #[serde(rename = "H")]
    pub h: Vec<String>,
    #[serde(default)]
    pub k: Option<String>,
    #[serde(default)]
    pub finite: Option<FiniteSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiniteSpec {
    #[serde(rename = "Phi")]
    pub phi: Vec<String>,
    #[serde(rename = "Phi_inv", default)]
    pub phi_inv: Option<Vec<String>>,
    pub eta: String,
    pub h: Vec<String>,
    #[serde(default)]
    pub frak_h: Option<String>,
    #[serde(rename = "G", default)]
    pub g: Option<String>,
}

pub const LAMBDA: &str = "lambda";

/// A finite stochastic transformation `(Φ, η, h)`: spatial map, time-rescaling
/// density and Girsanov kernel. Expressions may contain the parameter `lambda`
/// for one-parameter families; [`FiniteTransformation::at`] fixes it.
#[derive(Debug, Clone)]
pub struct FiniteTransformation {
    coords: Arc<[String]>,
    pub phi: Vec<Expr>,
    pub phi_inv: Option<Vec<Expr>>,
    pub eta: Expr,
    pub h: Vec<Expr>,
    pub frak_h: Option<Expr>,
    pub g: Option<Expr>,
}

impl FiniteTransformation {
    pub fn new(
        coords: Arc<[String]>,
        phi: Vec<Expr>,
        phi_inv: Option<Vec<Expr>>,
        eta: Expr,
        h: Vec<Expr>,
    ) -> Result<Self> {
        if phi.len() != coords.len() || phi_inv.as_ref().is_some_and(|p| p.len() != coords.len()) {
            return Err(SymmetryError::Dimension(
                "Φ must have one component per coordinate".into(),
            ));
        }
        Ok(FiniteTransformation {
            coords,
            phi,
            phi_inv,
            eta,
            h,
            frak_h: None,
            g: None,
        })
    }

    pub fn with_potential(mut self, frak_h: Expr, g: Option<Expr>) -> Self {
        self.frak_h = Some(frak_h);
        self.g = g;
        self
    }

    pub fn from_spec(model: &SdeModel, spec: &FiniteSpec) -> Result<Self> {
        let mut params = model.param_names();
        params.push(LAMBDA.to_string());
        let p = |s: &str| -> Result<Expr> {
            let e = parse_with_params(s, &params)?;
            model.check_symbols(&e.replace_param(LAMBDA, &Expr::zero()))?;
            Ok(e)
        };
        let vec = |v: &[String]| v.iter().map(|s| p(s)).collect::<Result<Vec<_>>>();
        let mut t = Self::new(
            model.coords().clone(),
            vec(&spec.phi)?,
            spec.phi_inv.as_deref().map(vec).transpose()?,
            p(&spec.eta)?,
            vec(&spec.h)?,
        )?;
        if t.h.len() != model.noise_dim() {
            return Err(SymmetryError::Dimension(
                "h must have one entry per noise".into(),
            ));
        }
        t.frak_h = spec.frak_h.as_deref().map(p).transpose()?;
        t.g = spec.g.as_deref().map(p).transpose()?;
        Ok(t)
    }

    pub fn identity(model: &SdeModel) -> Self {
        let coords = model.coords().clone();
        let phi: Vec<Expr> = coords.iter().map(Expr::coord).collect();
        FiniteTransformation {
            coords,
            phi_inv: Some(phi.clone()),
            phi,
            eta: Expr::one(),
            h: vec![Expr::zero(); model.noise_dim()],
            frak_h: None,
            g: None,
        }
    }

    pub fn coords(&self) -> &Arc<[String]> {
        &self.coords
    }

    /// Fix the family parameter `lambda`.
    pub fn at(&self, lambda: f64) -> Self {
        let l = Expr::constant(lambda);
        let f = |e: &Expr| simplify(&e.replace_param(LAMBDA, &l));
        FiniteTransformation {
            coords: self.coords.clone(),
            phi: self.phi.iter().map(f).collect(),
            phi_inv: self.phi_inv.as_ref().map(|v| v.iter().map(f).collect()),
            eta: f(&self.eta),
            h: self.h.iter().map(f).collect(),
            frak_h: self.frak_h.as_ref().map(f),
            g: self.g.as_ref().map(f),
        }
    }

    /// `e ∘ Φ`.
    pub fn pull_back(&self, e: &Expr) -> Expr {
        compose_with(&self.coords, &self.phi, e)
    }
}

fn compose_with(coords: &[String], map: &[Expr], e: &Expr) -> Expr {
    e.substitute(&|c| coords.iter().position(|x| x == c).map(|i| map[i].clone()))
}

/// `T₂ ∘ T₁`: apply `T₁` first. The kernel composes as `h₁ + √η₁ (h₂∘Φ₁)`,
/// the law under which inverse and composition agree.
pub fn compose(
    t1: &FiniteTransformation,
    t2: &FiniteTransformation,
) -> Result<FiniteTransformation> {
    if t1.coords != t2.coords || t1.h.len() != t2.h.len() {
        return Err(SymmetryError::Dimension(
            "transformations act on different spaces".into(),
        ));
    }
    let pb = |e: &Expr| t1.pull_back(e);
    let phi = t2.phi.iter().map(|e| simplify(&pb(e))).collect();
    let eta = simplify(&(pb(&t2.eta) * t1.eta.clone()));
    let root = t1.eta.clone().sqrt();
    let h =
        t1.h.iter()
            .zip(&t2.h)
            .map(|(h1, h2)| simplify(&(h1.clone() + &root * &pb(h2))))
            .collect();
    let phi_inv = match (&t1.phi_inv, &t2.phi_inv) {
        (Some(i1), Some(i2)) => Some(
            i1.iter()
                .map(|e| simplify(&compose_with(&t1.coords, i2, e)))
                .collect(),
        ),
        _ => None,
    };
    Ok(FiniteTransformation {
        coords: t1.coords.clone(),
        phi,
        phi_inv,
        eta,
        h,
        frak_h: None,
        g: None,
    })
}

/// `(Φ⁻¹, 1/(η∘Φ⁻¹), −(h/√η)∘Φ⁻¹)`.
pub fn invert(t: &FiniteTransformation) -> Result<FiniteTransformation> {
    let inv = t.phi_inv.as_ref().ok_or(SymmetryError::MissingInverse)?;
    let pb = |e: &Expr| compose_with(&t.coords, inv, e);
    let eta = simplify(&(Expr::one() / pb(&t.eta)));
    let h =
        t.h.iter()
            .map(|h| simplify(&-pb(&(h.clone() / t.eta.clone().sqrt()))))
            .collect();
    Ok(FiniteTransformation {
        coords: t.coords.clone(),
        phi: inv.clone(),
        phi_inv: Some(t.phi.clone()),
        eta,
        h,
        frak_h: None,
        g: None,
    })
}

/// Zero-test `T₁ − T₂` component by component (Φ, η, h).
pub fn transformation_difference(
    a: &FiniteTransformation,
    b: &FiniteTransformation,
    bx: &DomainBox,
    test: &ZeroTest,
    bindings: &Bindings,
) -> Result<CheckReport> {
    let mut entries = vec![];
    for (i, (x, y)) in a.phi.iter().zip(&b.phi).enumerate() {
        entries.push((format!("Phi[{}]", a.coords[i]), x.clone() - y.clone()));
    }
    entries.push(("eta".into(), a.eta.clone() - b.eta.clone()));
    for (i, (x, y)) in a.h.iter().zip(&b.h).enumerate() {
        entries.push((format!("h[{}]", i + 1), x.clone() - y.clone()));
    }
    zero_check(entries, bx, test, bindings)
}

/// Finite quasi-Doob consistency: `h_j − σ_j^i ∂_i 𝔥` and
/// `½Σ h_j² − (G − L𝔥)`, when `𝔥` (and `G`) are present.
pub fn finite_quasi_doob_residuals(
    model: &SdeModel,
    t: &FiniteTransformation,
) -> Result<Vec<(String, Expr)>> {
    let Some(fh) = &t.frak_h else {
        return Ok(vec![]);
    };
    let mut out = vec![];
    for a in 1..=model.noise_dim() {
        let grad = apply_field(&model.diffusion_field(a)?, fh);
        out.push((format!("h[{a}]"), simplify(&(t.h[a - 1].clone() - grad))));
    }
    if let Some(g) = &t.g {
        let half_sq = Expr::mul(vec![
            Expr::constant(0.5),
            sum(t.h.iter().map(|h| h.clone().powr(2, 1))),
        ]);
        let e = half_sq - (g.clone() - model.generator_apply(fh));
        out.push(("G".into(), simplify(&e)));
    }
    Ok(out)
}

/// Checks `η > 0` at random points of `bx`.
pub fn eta_positive(
    t: &FiniteTransformation,
    bx: &DomainBox,
    trials: usize,
    seed: u64,
    b: &Bindings,
) -> Result<bool> {
    use rand::SeedableRng;
    let prog = crate::expr::Program::compile(&t.eta, &bx.names(), b)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..trials {
        if prog.eval(&bx.sample(&mut rng))? <= 0.0 {
            return Ok(false);
        }
    }
    Ok(true)
}

pub fn check_entries(
    entries: Vec<(String, Expr)>,
    bx: &DomainBox,
    test: &ZeroTest,
    b: &Bindings,
) -> Result<CheckReport> {
    zero_check(entries, bx, test, b)
}
