//! One-parameter groups generated by an infinitesimal symmetry, integrated with
//! classical fixed-step RK4 in the group parameter λ.
//!
//! The state is `(Φ, η, h)` with
//! `∂_λΦ = Y(Φ)`, `∂_λη = τ(Φ)η`, `∂_λh = √η·H(Φ)` and `(Φ, η, h) = (x, 1, 0)` at λ = 0.
//! The `√η` factor on the kernel is the one compatible with the group law
//! `h₁ + √η₁·(h₂∘Φ₁)` used by [`crate::symmetry::compose`].

use std::io::Write;

use serde::Serialize;

use crate::expr::{Bindings, ExprError, Program};
use crate::sde::SdeModel;
use crate::symmetry::InfinitesimalSymmetry;

#[derive(Debug, thiserror::Error)]
pub enum FlowError {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("flow left the domain at lambda = {lambda}: `{coord}` = {value}")]
    DomainExit {
        lambda: f64,
        coord: String,
        value: f64,
    },
    #[error("non-finite value at lambda = {lambda}")]
    NonFinite { lambda: f64 },
    #[error("evaluation failed at lambda = {lambda}: {source}")]
    Eval { lambda: f64, source: ExprError },
    #[error("time flow is not increasing at t = {t}")]
    NonMonotone { t: f64 },
    #[error("the time component of Y depends on `{0}`; it must be a function of time only")]
    TimeDependence(String),
    #[error("invalid flow request: {0}")]
    Invalid(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, FlowError>;

pub const DEFAULT_STEP: f64 = 1e-3;

/// `(Φ_λ, η_λ, h_λ)` at one base point and one λ.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowPoint {
    pub phi: Vec<f64>,
    pub eta: f64,
    pub h: Vec<f64>,
}

/// `Y`, `τ` and `H` compiled over the model's coordinate order.
#[derive(Debug, Clone)]
pub struct FlowField {
    coords: Vec<String>,
    bounds: Vec<(f64, f64)>,
    y: Vec<Program>,
    tau: Program,
    h: Vec<Program>,
}

impl FlowField {
    pub fn new(model: &SdeModel, s: &InfinitesimalSymmetry, b: &Bindings) -> Result<Self> {
        let coords: Vec<String> = model.coords().to_vec();
        let c = |e| Program::compile(e, &coords, b);
        Ok(FlowField {
            bounds: coords
                .iter()
                .map(|c| model.domain().get(c).unwrap())
                .collect(),
            y: s.y
                .components()
                .iter()
                .map(c)
                .collect::<std::result::Result<_, _>>()?,
            tau: c(&s.tau)?,
            h: s.h.iter().map(c).collect::<std::result::Result<_, _>>()?,
            coords,
        })
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn noise_dim(&self) -> usize {
        self.h.len()
    }

    // d/dλ of the packed state [Φ, η, h]
    fn rhs(&self, lambda: f64, u: &[f64], out: &mut [f64]) -> Result<()> {
        let n = self.dim();
        let (phi, eta) = (&u[..n], u[n]);
        let ev = |p: &Program| {
            p.eval(phi)
                .map_err(|source| FlowError::Eval { lambda, source })
        };
        for (i, p) in self.y.iter().enumerate() {
            out[i] = ev(p)?;
        }
        out[n] = ev(&self.tau)? * eta;
        if eta <= 0.0 {
            return Err(FlowError::Invalid(format!(
                "eta = {eta} at lambda = {lambda}"
            )));
        }
        let root = eta.sqrt();
        for (a, p) in self.h.iter().enumerate() {
            out[n + 1 + a] = root * ev(p)?;
        }
        Ok(())
    }

    fn check(&self, lambda: f64, u: &[f64]) -> Result<()> {
        if u.iter().any(|v| !v.is_finite()) {
            return Err(FlowError::NonFinite { lambda });
        }
        for (i, (lo, hi)) in self.bounds.iter().enumerate() {
            if !(*lo..=*hi).contains(&u[i]) {
                return Err(FlowError::DomainExit {
                    lambda,
                    coord: self.coords[i].clone(),
                    value: u[i],
                });
            }
        }
        Ok(())
    }

    /// Integrate from `base` to `lambda` with `steps` uniform RK4 steps,
    /// calling `visit(λ, state)` at every grid point including λ = 0.
    fn run(
        &self,
        base: &[f64],
        lambda: f64,
        steps: usize,
        mut visit: impl FnMut(f64, &[f64]),
    ) -> Result<()> {
        let n = self.dim();
        if base.len() != n {
            return Err(FlowError::Invalid(format!(
                "base point has {} entries, expected {n}",
                base.len()
            )));
        }
        let len = n + 1 + self.noise_dim();
        let mut u = vec![0.0; len];
        u[..n].copy_from_slice(base);
        u[n] = 1.0;
        self.check(0.0, &u)?;
        visit(0.0, &u);
        if steps == 0 {
            return Ok(());
        }
        let d = lambda / steps as f64;
        let (mut k1, mut k2, mut k3, mut k4, mut tmp) = (
            vec![0.0; len],
            vec![0.0; len],
            vec![0.0; len],
            vec![0.0; len],
            vec![0.0; len],
        );
        for j in 0..steps {
            let l = j as f64 * d;
            self.rhs(l, &u, &mut k1)?;
            for i in 0..len {
                tmp[i] = u[i] + 0.5 * d * k1[i];
            }
            self.rhs(l + 0.5 * d, &tmp, &mut k2)?;
            for i in 0..len {
                tmp[i] = u[i] + 0.5 * d * k2[i];
            }
            self.rhs(l + 0.5 * d, &tmp, &mut k3)?;
            for i in 0..len {
                tmp[i] = u[i] + d * k3[i];
            }
            self.rhs(l + d, &tmp, &mut k4)?;
            for i in 0..len {
                u[i] += d / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            let at = (j + 1) as f64 * d;
            self.check(at, &u)?;
            if u[n] <= 0.0 {
                return Err(FlowError::Invalid(format!(
                    "eta = {} at lambda = {at}",
                    u[n]
                )));
            }
            visit(at, &u);
        }
        Ok(())
    }

    /// Endpoint of the flow at `lambda`, with step at most `dl`.
    pub fn point(&self, base: &[f64], lambda: f64, dl: f64) -> Result<FlowPoint> {
        let steps = steps_for(lambda, dl)?;
        let mut last = vec![];
        self.run(base, lambda, steps, |_, u| {
            last.clear();
            last.extend_from_slice(u);
        })?;
        Ok(self.unpack(&last))
    }

    fn unpack(&self, u: &[f64]) -> FlowPoint {
        let n = self.dim();
        FlowPoint {
            phi: u[..n].to_vec(),
            eta: u[n],
            h: u[n + 1..].to_vec(),
        }
    }
}

fn steps_for(lambda: f64, dl: f64) -> Result<usize> {
    if !(dl > 0.0 && dl.is_finite() && lambda.is_finite()) {
        return Err(FlowError::Invalid(format!(
            "need finite lambda and positive step, got {lambda}, {dl}"
        )));
    }
    Ok((lambda.abs() / dl - 1e-9).ceil().max(0.0) as usize)
}

#[derive(Debug, Clone, Serialize)]
pub struct FlowTrajectory {
    pub coords: Vec<String>,
    pub base: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub points: Vec<FlowPoint>,
}

impl FlowTrajectory {
    pub fn last(&self) -> &FlowPoint {
        self.points.last().unwrap()
    }

    /// CSV with columns `lambda, <coords>, eta, h1..hm`.
    pub fn write_csv(&self, out: &mut impl Write) -> Result<()> {
        write!(out, "lambda")?;
        for c in &self.coords {
            write!(out, ",{c}")?;
        }
        write!(out, ",eta")?;
        for a in 1..=self.points[0].h.len() {
            write!(out, ",h{a}")?;
        }
        writeln!(out)?;
        for (l, p) in self.lambdas.iter().zip(&self.points) {
            write!(out, "{l}")?;
            for v in p.phi.iter().chain([&p.eta]).chain(&p.h) {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// RK4 trajectory of `(Φ_λ, η_λ, h_λ)` from `base` to `lambda_max` on a uniform
/// grid of step at most `dl`. Function symbols use the model's bindings.
pub fn reconstruct_flow(
    model: &SdeModel,
    s: &InfinitesimalSymmetry,
    base: &[f64],
    lambda_max: f64,
    dl: f64,
) -> Result<FlowTrajectory> {
    let field = FlowField::new(model, s, model.bindings())?;
    let steps = steps_for(lambda_max, dl)?;
    let mut lambdas = vec![];
    let mut points = vec![];
    field.run(base, lambda_max, steps, |l, u| {
        lambdas.push(l);
        points.push(field.unpack(u));
    })?;
    Ok(FlowTrajectory {
        coords: field.coords.clone(),
        base: base.to_vec(),
        lambdas,
        points,
    })
}

/// `m(z)`, the time component of `Y`, compiled as a function of time alone.
#[derive(Debug, Clone)]
pub struct TimeField {
    m: Program,
}

impl TimeField {
    pub fn new(s: &InfinitesimalSymmetry, b: &Bindings) -> Result<Self> {
        let m = s.time_component();
        if let Some(c) = m.symbols().coords.iter().find(|c| *c != s.time_coord()) {
            return Err(FlowError::TimeDependence(c.clone()));
        }
        Ok(TimeField {
            m: Program::compile(m, &[s.time_coord()], b)?,
        })
    }

    pub fn m(&self, t: f64) -> Result<f64> {
        self.m.eval(&[t]).map_err(|source| FlowError::Eval {
            lambda: f64::NAN,
            source,
        })
    }

    /// `f_λ(t)` by RK4 on `∂_λ f = m(f)`, `f_0(t) = t`.
    pub fn apply(&self, t: f64, lambda: f64, dl: f64) -> Result<f64> {
        if self.m.as_const() == Some(0.0) {
            return Ok(t);
        }
        let steps = steps_for(lambda, dl)?;
        if steps == 0 {
            return Ok(t);
        }
        let d = lambda / steps as f64;
        let mut f = t;
        let ev = |l: f64, x: f64| -> Result<f64> {
            let v = self
                .m
                .eval(&[x])
                .map_err(|source| FlowError::Eval { lambda: l, source })?;
            Ok(v)
        };
        for j in 0..steps {
            let l = j as f64 * d;
            let k1 = ev(l, f)?;
            let k2 = ev(l, f + 0.5 * d * k1)?;
            let k3 = ev(l, f + 0.5 * d * k2)?;
            let k4 = ev(l, f + d * k3)?;
            f += d / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            if !f.is_finite() {
                return Err(FlowError::NonFinite { lambda: l + d });
            }
        }
        Ok(f)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TimeFlow {
    pub lambda: f64,
    pub t: Vec<f64>,
    /// `f_λ(t)`.
    pub forward: Vec<f64>,
    /// `f_{−λ}(t)`.
    pub inverse: Vec<f64>,
}

const MONOTONE_TOL: f64 = 1e-10;

/// Sample `f_λ` and `f_{−λ}` on `t_grid` (which must be increasing).
pub fn time_flow(
    s: &InfinitesimalSymmetry,
    b: &Bindings,
    lambda: f64,
    t_grid: &[f64],
    dl: f64,
) -> Result<TimeFlow> {
    let tf = TimeField::new(s, b)?;
    let forward = t_grid
        .iter()
        .map(|t| tf.apply(*t, lambda, dl))
        .collect::<Result<Vec<_>>>()?;
    let inverse = t_grid
        .iter()
        .map(|t| tf.apply(*t, -lambda, dl))
        .collect::<Result<Vec<_>>>()?;
    for w in [&forward, &inverse] {
        for i in 1..t_grid.len() {
            if t_grid[i] > t_grid[i - 1] && w[i] - w[i - 1] <= -MONOTONE_TOL {
                return Err(FlowError::NonMonotone { t: t_grid[i] });
            }
        }
    }
    Ok(TimeFlow {
        lambda,
        t: t_grid.to_vec(),
        forward,
        inverse,
    })
}

/// `m(t)`: the time component of `Y` at time `t`.
pub fn m_at(s: &InfinitesimalSymmetry, t: f64, b: &Bindings) -> Result<f64> {
    TimeField::new(s, b)?.m(t)
}

/// `(Σ_α φ)∘Φ_λ − η_λ^{-1/2} Σ_α(φ∘Φ_λ)` at `base`, one entry per noise.
/// Derivatives of the flow in the base point are central differences with step `fd`.
pub fn symmetry_identity_residual(
    model: &SdeModel,
    field: &FlowField,
    phi: &crate::expr::Expr,
    base: &[f64],
    lambda: f64,
    dl: f64,
    fd: f64,
) -> Result<Vec<f64>> {
    let b = model.bindings();
    let coords = model.coords();
    let n = model.dim();
    let phi_p = Program::compile(phi, coords, b)?;
    let fields = model.diffusion_fields();
    let sigma_phi = fields
        .iter()
        .map(|f| Program::compile(&crate::sde::apply_field(f, phi), coords, b))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let sigma = fields
        .iter()
        .map(|f| {
            f.components()
                .iter()
                .map(|e| Program::compile(e, coords, b))
                .collect::<std::result::Result<Vec<_>, _>>()
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let at = field.point(base, lambda, dl)?;
    // ∂_j (φ∘Φ_λ) at base, skipped where no noise acts
    let mut grad = vec![0.0; n];
    for j in 0..n {
        if sigma.iter().all(|col| col[j].as_const() == Some(0.0)) {
            continue;
        }
        let mut up = base.to_vec();
        let mut dn = base.to_vec();
        up[j] += fd;
        dn[j] -= fd;
        let fu = phi_p.eval(&field.point(&up, lambda, dl)?.phi)?;
        let fdn = phi_p.eval(&field.point(&dn, lambda, dl)?.phi)?;
        grad[j] = (fu - fdn) / (2.0 * fd);
    }
    let mut out = vec![];
    for (a, col) in sigma.iter().enumerate() {
        let lhs = sigma_phi[a].eval(&at.phi)?;
        let mut rhs = 0.0;
        for j in 0..n {
            if grad[j] != 0.0 {
                rhs += col[j].eval(base)? * grad[j];
            }
        }
        out.push(lhs - rhs / at.eta.sqrt());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use crate::presets::{load_preset, PresetId, PresetOptions};

    fn preset(id: PresetId, beta: Option<&str>, v: Option<&str>) -> crate::presets::Preset {
        let opts = PresetOptions {
            beta: beta.map(String::from),
            v: v.map(String::from),
            ..Default::default()
        };
        load_preset(id, &opts).unwrap()
    }

    #[test]
    fn ou_translation_flow() {
        let p = preset(PresetId::Ou, Some("z"), Some("x^2/2"));
        let tr = reconstruct_flow(&p.model, &p.symmetry, &[1.0, 2.0], 1.0, 1e-3).unwrap();
        let end = tr.last();
        assert!((end.phi[0] - 3.0).abs() < 1e-12 && (end.phi[1] - 2.0).abs() < 1e-12);
        assert!((end.eta - 1.0).abs() < 1e-12);
        assert!((end.h[0] + 3.0).abs() < 1e-9, "{}", end.h[0]);
        assert_eq!(tr.lambdas.len(), 1001);
    }

    #[test]
    fn zero_lambda_is_the_identity() {
        for id in PresetId::ALL {
            let p = preset(id, None, None);
            let tr = reconstruct_flow(&p.model, &p.symmetry, &p.x0, 0.0, 1e-3).unwrap();
            assert_eq!(tr.points.len(), 1);
            assert_eq!(tr.points[0].phi, p.x0);
            assert_eq!(tr.points[0].eta, 1.0);
            assert!(tr.points[0].h.iter().all(|h| *h == 0.0));
        }
    }

    #[test]
    fn brownian_closed_form() {
        let p = preset(PresetId::Brownian, Some("z^2"), None);
        let (x, z, l) = (0.7, 0.4, 1.0);
        let end = reconstruct_flow(&p.model, &p.symmetry, &[x, z], l, 1e-3)
            .unwrap()
            .last()
            .clone();
        let d = 1.0 - l * z;
        assert!((end.phi[0] - x / d).abs() < 1e-9);
        assert!((end.phi[1] - z / d).abs() < 1e-9);
        assert!((end.eta - 1.0 / (d * d)).abs() < 1e-9);
        assert!((end.h[0] + l * x / d).abs() < 1e-9);
    }

    #[test]
    fn domain_exit_reports_lambda() {
        let p = preset(PresetId::Brownian, Some("z^2"), None);
        // z/(1 − λz) blows up at λ = 1/z = 2
        let e = reconstruct_flow(&p.model, &p.symmetry, &[0.1, 0.5], 3.0, 1e-3).unwrap_err();
        match e {
            FlowError::DomainExit { lambda, .. } => assert!(lambda > 1.9 && lambda < 2.0),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn time_flow_examples() {
        let b = |p: &crate::presets::Preset| p.model.bindings().clone();
        let ou = preset(PresetId::Ou, None, None);
        let tf = time_flow(&ou.symmetry, &b(&ou), 0.8, &[0.0, 0.5, 1.0], 1e-3).unwrap();
        assert_eq!(tf.forward, vec![0.0, 0.5, 1.0]);
        let br = preset(PresetId::Brownian, Some("z"), None);
        let tf = time_flow(&br.symmetry, &b(&br), 0.5, &[0.25, 1.0], 1e-3).unwrap();
        for (t, f) in tf.t.iter().zip(&tf.forward) {
            assert!((f - t * 0.5f64.exp()).abs() < 1e-12);
        }
        for (t, f) in tf.t.iter().zip(&tf.inverse) {
            assert!((f - t * (-0.5f64).exp()).abs() < 1e-12);
        }
        let tf = time_flow(&br.symmetry, &b(&br), 0.0, &[0.3], 1e-3).unwrap();
        assert_eq!(tf.forward, vec![0.3]);
    }

    #[test]
    fn m_examples() {
        let br = preset(PresetId::Brownian, Some("z^2"), None);
        assert_eq!(m_at(&br.symmetry, 1.0, br.model.bindings()).unwrap(), 1.0);
        let ou = preset(PresetId::Ou, None, None);
        assert_eq!(m_at(&ou.symmetry, 0.7, ou.model.bindings()).unwrap(), 0.0);
        let be = preset(PresetId::Bessel, Some("z^2"), None);
        assert_eq!(m_at(&be.symmetry, 0.5, be.model.bindings()).unwrap(), 0.25);
    }

    #[test]
    fn kernel_derivative_at_zero_is_h() {
        let p = preset(PresetId::Bessel, None, None);
        let field = FlowField::new(&p.model, &p.symmetry, p.model.bindings()).unwrap();
        let base = [1.3, 0.6];
        let d = 1e-7;
        let h = field.point(&base, d, d).unwrap().h[0] / d;
        let want = p.model.bindings().clone();
        let hp = Program::compile(&p.symmetry.h[0], p.model.coords(), &want).unwrap();
        assert!((h - hp.eval(&base).unwrap()).abs() < 1e-6);
    }

    #[test]
    fn symmetry_identity_on_brownian() {
        let p = preset(PresetId::Brownian, None, None);
        let field = FlowField::new(&p.model, &p.symmetry, p.model.bindings()).unwrap();
        for phi in ["x^2", "exp(x/2)*z", "x^3 - z*x"] {
            let r = symmetry_identity_residual(
                &p.model,
                &field,
                &parse(phi).unwrap(),
                &[0.4, 0.3],
                1.0,
                1e-3,
                1e-5,
            )
            .unwrap();
            assert!(r[0].abs() < 1e-6, "{phi}: {r:?}");
        }
    }

    #[test]
    fn csv_layout() {
        let p = preset(PresetId::Ou, None, None);
        let tr = reconstruct_flow(&p.model, &p.symmetry, &[0.0, 1.0], 0.002, 1e-3).unwrap();
        let mut buf = vec![];
        tr.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().next().unwrap(), "lambda,x,z,eta,h1");
        assert_eq!(s.lines().count(), 4);
    }
}
