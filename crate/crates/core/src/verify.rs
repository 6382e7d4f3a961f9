//! Monte-Carlo and grid checks: integration by parts (single-time, quasi-Doob
//! and cylindrical forms), quasi-invariance under a finite symmetry,
//! square-integrability diagnostics and Lyapunov conditions.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::expr::{differentiate, sum, Bindings, DomainBox, Expr, ExprError, Program, ZeroTest};
use crate::flow::{FlowError, FlowField, TimeField};
use crate::mc::{estimate, MCEstimate, McConfig, McError, Path, Simulator};
use crate::sde::{apply_field, apply_field_with, second_order, SdeError, SdeModel};
use crate::symmetry::{
    verify_quasi_doob, verify_symmetry, FunctionMode, InfinitesimalSymmetry, SymmetryError,
};

#[derive(Debug, thiserror::Error)]
pub enum VerifyError {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Sde(#[from] SdeError),
    #[error(transparent)]
    Symmetry(#[from] SymmetryError),
    #[error(transparent)]
    Mc(#[from] McError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("invalid functional: {0}")]
    Functional(String),
    #[error("while evaluating {label}: {source}")]
    Quantity { label: String, source: McError },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, VerifyError>;

/// Everything a check needs about the model under test.
#[derive(Debug, Clone, Copy)]
pub struct Setup<'a> {
    pub model: &'a SdeModel,
    pub symmetry: &'a InfinitesimalSymmetry,
    pub x0: &'a [f64],
    /// Box used for the symbolic precondition checks.
    pub check_box: &'a DomainBox,
}

#[derive(Debug, Clone)]
pub struct VerifyConfig {
    pub mc: McConfig,
    /// Weight of the `Δt·scale` bias allowance.
    pub c_bias: f64,
    pub zero_test: ZeroTest,
}

impl VerifyConfig {
    pub fn new(mc: McConfig) -> Self {
        VerifyConfig {
            mc,
            c_bias: 5.0,
            zero_test: ZeroTest::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TermStat {
    pub mean: f64,
    pub se: f64,
}

impl From<MCEstimate> for TermStat {
    fn from(e: MCEstimate) -> Self {
        TermStat {
            mean: e.mean,
            se: e.std_error,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct IbpDiagnostics {
    /// `Ê[F(X_t)(∫₀^𝒯 H dW − ∫₀ᵗ H dW)]`.
    pub horizon_diff: Option<TermStat>,
    pub floor_activations: usize,
    /// Activations per simulated step.
    pub floor_fraction: f64,
    /// Mean of `|∫₀ᵗH dW − (k(X_t) − k(X_0) − ∫₀ᵗL(k)ds)|` (quasi-Doob form only).
    pub factor_mad: Option<f64>,
    pub factor_mad_bound: Option<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct IbpReport {
    pub form: &'static str,
    pub terms: BTreeMap<String, TermStat>,
    pub residual: f64,
    pub se: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub diagnostics: IbpDiagnostics,
}

impl IbpReport {
    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "quantity,mean,se")?;
        for (k, v) in &self.terms {
            writeln!(out, "{k},{},{}", v.mean, v.se)?;
        }
        writeln!(out, "residual,{},{}", self.residual, self.se)?;
        writeln!(out, "tolerance,{},", self.tolerance)?;
        writeln!(out, "pass,{},", self.pass)
    }
}

/// Per-path term values alongside the report they reduce to.
#[derive(Debug, Clone)]
pub struct IbpRun {
    pub report: IbpReport,
    pub names: Vec<&'static str>,
    /// `samples[term][path]`.
    pub samples: Vec<Vec<f64>>,
}

impl IbpRun {
    pub fn term(&self, name: &str) -> Option<&[f64]> {
        self.names
            .iter()
            .position(|n| *n == name)
            .map(|i| self.samples[i].as_slice())
    }

    /// Per-path residual (sum of terms).
    pub fn residuals(&self) -> Vec<f64> {
        (0..self.samples[0].len())
            .map(|p| self.samples.iter().map(|t| t[p]).sum())
            .collect()
    }
}

const TERMS: [&str; 4] = ["generator", "girsanov", "flow", "initial"];
const COROLLARY_TERMS: [&str; 4] = ["generator", "martingale", "flow", "initial"];

struct Row {
    terms: [f64; 4],
    horizon: f64,
    deviation: f64,
    hits: usize,
}

fn compile(exprs: &[Expr], slots: &[String], b: &Bindings) -> Result<Vec<Program>> {
    Ok(exprs
        .iter()
        .map(|e| Program::compile(e, slots, b))
        .collect::<std::result::Result<_, _>>()?)
}

fn compile1(e: &Expr, slots: &[String], b: &Bindings) -> Result<Program> {
    Ok(Program::compile(e, slots, b)?)
}

fn require_symmetry(setup: &Setup, cfg: &VerifyConfig) -> Result<()> {
    let r = verify_symmetry(
        setup.model,
        setup.symmetry,
        setup.check_box,
        &cfg.zero_test,
        FunctionMode::Bound,
    )?;
    if let Some(e) = r.failures().next() {
        return Err(VerifyError::Precondition(format!(
            "not a symmetry: {} = {} is nonzero",
            e.label, e.residual
        )));
    }
    Ok(())
}

fn initial_warning(setup: &Setup, yf: &Program) -> Result<Vec<String>> {
    let v = yf.eval(setup.x0)?;
    Ok(if v.abs() > 1e-12 {
        vec![format!(
            "Y(F) at the initial point is {v:e}; the initial term does not absorb this shift"
        )]
    } else {
        vec![]
    })
}

fn reduce(
    form: &'static str,
    names: [&'static str; 4],
    rows: Vec<Row>,
    cfg: &VerifyConfig,
    with_horizon: bool,
    with_deviation: bool,
    warnings: Vec<String>,
) -> Result<IbpRun> {
    let n = rows.len();
    let samples: Vec<Vec<f64>> = (0..4)
        .map(|i| rows.iter().map(|r| r.terms[i]).collect())
        .collect();
    let mut terms = BTreeMap::new();
    let mut means = vec![];
    for (name, s) in names.iter().zip(&samples) {
        let e = estimate(s)?;
        means.push(e.mean);
        terms.insert(name.to_string(), TermStat::from(e));
    }
    let per_path: Vec<f64> = rows.iter().map(|r| r.terms.iter().sum()).collect();
    let se = estimate(&per_path)?.std_error;
    let residual: f64 = means.iter().sum();
    let scale: f64 = means.iter().map(|m| m.abs()).sum();
    let tolerance = (3.0 * se).max(cfg.c_bias * cfg.mc.dt * scale);
    let hits: usize = rows.iter().map(|r| r.hits).sum();
    let steps = cfg.mc.steps()? * n;
    let horizon_diff = if with_horizon {
        Some(estimate(&rows.iter().map(|r| r.horizon).collect::<Vec<_>>())?.into())
    } else {
        None
    };
    let (factor_mad, factor_mad_bound) = if with_deviation {
        (
            Some(rows.iter().map(|r| r.deviation).sum::<f64>() / n as f64),
            Some(10.0 * cfg.mc.dt.sqrt() * scale),
        )
    } else {
        (None, None)
    };
    Ok(IbpRun {
        report: IbpReport {
            form,
            terms,
            residual,
            se,
            tolerance,
            pass: residual.abs() <= tolerance,
            diagnostics: IbpDiagnostics {
                horizon_diff,
                floor_activations: hits,
                floor_fraction: hits as f64 / steps as f64,
                factor_mad,
                factor_mad_bound,
                warnings,
            },
        },
        names: names.to_vec(),
        samples,
    })
}

/// Single-time integration by parts:
/// `−m(t)Ê[LF(X_t)] + Ê[F(X_t)∫₀ᵗH dW] + Ê[Y(F)(X_t)] − Ê[Y(F)(X_0)]`.
pub fn ibp_theorem(setup: &Setup, f: &Expr, t: f64, cfg: &VerifyConfig) -> Result<IbpRun> {
    require_symmetry(setup, cfg)?;
    let (model, s) = (setup.model, setup.symmetry);
    model.check_symbols(f)?;
    let b = model.bindings();
    let slots = model.coords().to_vec();
    let sim = Simulator::new(model, setup.x0, &cfg.mc)?;
    let k = cfg.mc.index_of(t)?;
    let big_k = sim.steps();
    let m = TimeField::new(s, b)?.m(t)?;
    let fp = compile1(f, &slots, b)?;
    let lf = compile1(&model.generator_apply(f), &slots, b)?;
    let yf = compile1(&apply_field(&s.y, f), &slots, b)?;
    let h = compile(&s.h, &slots, b)?;
    let warnings = initial_warning(setup, &yf)?;
    let rows = sim.map_paths(|p| {
        let ft = p.eval_at(&fp, k)?;
        let it = p.ito_integral(&h, k)?;
        let i_big = if k == big_k {
            it
        } else {
            p.ito_integral(&h, big_k)?
        };
        Ok(Row {
            terms: [
                -m * p.eval_at(&lf, k)?,
                ft * it,
                p.eval_at(&yf, k)?,
                -p.eval_at(&yf, 0)?,
            ],
            horizon: ft * (i_big - it),
            deviation: 0.0,
            hits: p.floor_hits,
        })
    })?;
    reduce("theorem", TERMS, rows, cfg, true, false, warnings)
}

/// Quasi-Doob form: the stochastic integral is replaced by
/// `k(X_t) − k(X_0) − ∫₀ᵗ L(k)(X_s) ds`.
pub fn ibp_corollary(setup: &Setup, f: &Expr, t: f64, cfg: &VerifyConfig) -> Result<IbpRun> {
    let (model, s) = (setup.model, setup.symmetry);
    let kpot =
        s.k.as_ref()
            .ok_or_else(|| VerifyError::Precondition("symmetry has no potential k".into()))?;
    let r = verify_quasi_doob(
        model,
        s,
        setup.check_box,
        &cfg.zero_test,
        FunctionMode::Bound,
    )?;
    if let Some(e) = r.failures().next() {
        return Err(VerifyError::Precondition(format!(
            "not of quasi-Doob type: {} = {} is nonzero",
            e.label, e.residual
        )));
    }
    require_symmetry(setup, cfg)?;
    model.check_symbols(f)?;
    let b = model.bindings();
    let slots = model.coords().to_vec();
    let sim = Simulator::new(model, setup.x0, &cfg.mc)?;
    let k = cfg.mc.index_of(t)?;
    let m = TimeField::new(s, b)?.m(t)?;
    let fp = compile1(f, &slots, b)?;
    let lf = compile1(&model.generator_apply(f), &slots, b)?;
    let yf = compile1(&apply_field(&s.y, f), &slots, b)?;
    let kp = compile1(kpot, &slots, b)?;
    let lk = compile1(&model.generator_apply(kpot), &slots, b)?;
    let h = compile(&s.h, &slots, b)?;
    let warnings = initial_warning(setup, &yf)?;
    let rows = sim.map_paths(|p| {
        let ft = p.eval_at(&fp, k)?;
        let factor = p.eval_at(&kp, k)? - p.eval_at(&kp, 0)? - p.time_integral(&lk, k)?;
        let it = p.ito_integral(&h, k)?;
        Ok(Row {
            terms: [
                -m * p.eval_at(&lf, k)?,
                ft * factor,
                p.eval_at(&yf, k)?,
                -p.eval_at(&yf, 0)?,
            ],
            horizon: 0.0,
            deviation: (it - factor).abs(),
            hits: p.floor_hits,
        })
    })?;
    reduce(
        "corollary",
        COROLLARY_TERMS,
        rows,
        cfg,
        false,
        true,
        warnings,
    )
}

pub const MAX_CYLINDER_TIMES: usize = 4;

/// `f(X_{t₁}, …, X_{t_k})` with `t₁ > … > t_k`. The `j`-th argument is
/// written with coordinates `<coord>_<j>`, e.g. `x_1*x_2`.
#[derive(Debug, Clone)]
pub struct Cylinder {
    pub f: Expr,
    pub times: Vec<f64>,
}

/// Name of coordinate `c` in argument block `j` (1-based).
pub fn block_coord(c: &str, j: usize) -> String {
    format!("{c}_{j}")
}

/// Coordinate slots for `k` blocks, block-major.
pub fn block_slots(coords: &[String], k: usize) -> Vec<String> {
    (1..=k)
        .flat_map(|j| coords.iter().map(move |c| block_coord(c, j)))
        .collect()
}

impl Cylinder {
    pub fn new(model: &SdeModel, f: Expr, times: Vec<f64>) -> Result<Self> {
        let k = times.len();
        if k == 0 || k > MAX_CYLINDER_TIMES {
            return Err(VerifyError::Functional(format!(
                "need 1 to {MAX_CYLINDER_TIMES} times, got {k}"
            )));
        }
        if times.windows(2).any(|w| w[0] <= w[1]) || times[k - 1] <= 0.0 {
            return Err(VerifyError::Functional(
                "times must be positive and strictly decreasing".into(),
            ));
        }
        let slots = block_slots(model.coords(), k);
        if let Some(c) = f.symbols().coords.iter().find(|c| !slots.contains(c)) {
            return Err(VerifyError::Functional(format!(
                "`{c}` is not a block coordinate (expected names like {})",
                slots[0]
            )));
        }
        Ok(Cylinder { f, times })
    }
}

/// Cylindrical integration by parts. With `N_s = #{i : t_i ≥ s}` copies of `X_s`,
/// `L^{s}` and `Y^{s}` act through `D_i = Σ_{j≤N_s} ∂_{y^i_j}`, and the residual is
/// `Σ_i Ê[−m(t_i)L^{t_i}F̃ + m(t_{i+1})L^{t_{i+1}}F̃] + Ê[F̃∫₀^{t₁}H dW] + Ê[Y^{t₁}F̃] − Ê[Y^{0}F̃]`
/// with `t_{k+1} = 0`. Each operator is evaluated with its copies set to `X_s`.
pub fn ibp_cylinder(setup: &Setup, cyl: &Cylinder, cfg: &VerifyConfig) -> Result<IbpRun> {
    require_symmetry(setup, cfg)?;
    let (model, s) = (setup.model, setup.symmetry);
    let b = model.bindings();
    let coords = model.coords().to_vec();
    let n = coords.len();
    let k = cyl.times.len();
    let slots = block_slots(&coords, k);
    let to_block1 = |e: &Expr| e.rename_coords(&|c| block_coord(c, 1));
    let a: Vec<Vec<Expr>> = model
        .sigma_sigma_t()
        .iter()
        .map(|r| r.iter().map(to_block1).collect())
        .collect();
    let mu: Vec<Expr> = model.drift().iter().map(to_block1).collect();
    let y: Vec<Expr> = s.y.components().iter().map(to_block1).collect();
    let d = |copies: usize| {
        let coords = coords.clone();
        move |e: &Expr, i: usize| -> Expr {
            if copies == 1 {
                differentiate(e, &block_coord(&coords[i], 1))
            } else {
                crate::expr::simplify(&sum(
                    (1..=copies).map(|j| differentiate(e, &block_coord(&coords[i], j)))
                ))
            }
        }
    };
    // operators indexed by copy count 1..=k
    let mut l_ops = vec![];
    let mut y_ops = vec![];
    for copies in 1..=k {
        let dn = d(copies);
        l_ops.push(compile1(&second_order(&a, &mu, &cyl.f, &dn), &slots, b)?);
        y_ops.push(compile1(&apply_field_with(&y, &cyl.f, &dn), &slots, b)?);
    }
    let fp = compile1(&cyl.f, &slots, b)?;
    let h = compile(&s.h, &coords, b)?;
    let tf = TimeField::new(s, b)?;
    let mut ms = cyl
        .times
        .iter()
        .map(|t| tf.m(*t))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    ms.push(tf.m(0.0)?);
    let idx = cyl
        .times
        .iter()
        .map(|t| cfg.mc.index_of(*t))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let sim = Simulator::new(model, setup.x0, &cfg.mc)?;
    let big_k = sim.steps();
    // arguments at s = t_i: blocks j ≤ i hold X_{t_i}; s = 0 (i = k+1): all X_0
    let point = |p: &Path, i: usize, out: &mut Vec<f64>| {
        out.clear();
        for j in 1..=k {
            let step = if i > k {
                0
            } else if j <= i {
                idx[i - 1]
            } else {
                idx[j - 1]
            };
            out.extend_from_slice(p.state(step));
        }
        debug_assert_eq!(out.len(), n * k);
    };
    let ev = |prog: &Program, x: &[f64], step: usize, p: &Path| {
        prog.eval(x).map_err(|source| McError::Eval {
            path: p.index,
            step,
            source,
        })
    };
    let rows = sim.map_paths(|p| {
        let mut pts: Vec<Vec<f64>> = vec![vec![]; k + 1];
        for (i, v) in pts.iter_mut().enumerate() {
            point(p, i + 1, v);
        }
        let mut gen = 0.0;
        for i in 1..=k {
            let here = -ms[i - 1] * ev(&l_ops[i - 1], &pts[i - 1], idx[i - 1], p)?;
            let copies_next = if i < k { i + 1 } else { k };
            let step_next = if i < k { idx[i] } else { 0 };
            let next = ms[i] * ev(&l_ops[copies_next - 1], &pts[i], step_next, p)?;
            gen += here + next;
        }
        let ft = ev(&fp, &pts[0], idx[0], p)?;
        let it = p.ito_integral(&h, idx[0])?;
        let i_big = if idx[0] == big_k {
            it
        } else {
            p.ito_integral(&h, big_k)?
        };
        Ok(Row {
            terms: [
                gen,
                ft * it,
                ev(&y_ops[0], &pts[0], idx[0], p)?,
                -ev(&y_ops[k - 1], &pts[k], 0, p)?,
            ],
            horizon: ft * (i_big - it),
            deviation: 0.0,
            hits: p.floor_hits,
        })
    })?;
    reduce("cylinder", TERMS, rows, cfg, true, false, vec![])
}

#[derive(Debug, Clone, Serialize)]
pub struct QuasiInvarianceReport {
    pub lambda: f64,
    pub t: f64,
    /// `f_{−λ}(t)`, the pre-image time.
    pub source_time: f64,
    pub lhs: TermStat,
    pub rhs: TermStat,
    pub residual: f64,
    /// Standard error of the per-path difference.
    pub se: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct QuasiInvarianceRun {
    pub report: QuasiInvarianceReport,
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
}

pub const DEFAULT_FLOW_STEP: f64 = 0.025;

/// `Ê[g(X_t)]` against `Ê[g(Φ_λ(X_{f_{−λ}(t)}))·Z]`, where `Z` is the
/// Doléans-Dade exponential of `h_λ(X_s)` over `[0, t]`. The flow is
/// integrated at every grid node with step at most `flow_step`.
pub fn quasi_invariance(
    setup: &Setup,
    lambda: f64,
    g: &Expr,
    t: f64,
    flow_step: f64,
    cfg: &VerifyConfig,
) -> Result<QuasiInvarianceRun> {
    require_symmetry(setup, cfg)?;
    let (model, s) = (setup.model, setup.symmetry);
    model.check_symbols(g)?;
    let b = model.bindings();
    let slots = model.coords().to_vec();
    let sim = Simulator::new(model, setup.x0, &cfg.mc)?;
    let k = cfg.mc.index_of(t)?;
    let source = TimeField::new(s, b)?.apply(t, -lambda, flow_step)?;
    if !(0.0..=cfg.mc.horizon + 1e-12).contains(&source) {
        return Err(VerifyError::Precondition(format!(
            "f_(-lambda)(t) = {source} is outside the simulated range [0, {}]",
            cfg.mc.horizon
        )));
    }
    let field = FlowField::new(model, s, b)?;
    let gp = compile1(g, &slots, b)?;
    let n = model.dim();
    let pairs = sim.map_paths(|p| {
        let lhs = p.eval_at(&gp, k)?;
        if lambda == 0.0 {
            return Ok((lhs, lhs));
        }
        let mut x = vec![0.0; n];
        p.interpolate(source, &mut x);
        let flow_err = |e: FlowError| McError::Functional {
            path: p.index,
            message: e.to_string(),
        };
        let moved = field.point(&x, lambda, flow_step).map_err(flow_err)?;
        let gv = gp.eval(&moved.phi).map_err(|e| McError::Eval {
            path: p.index,
            step: k,
            source: e,
        })?;
        let mut log_z = 0.0;
        for j in 0..k {
            let hv = field
                .point(p.state(j), lambda, flow_step)
                .map_err(flow_err)?
                .h;
            for (a, dw) in p.dw(j).iter().enumerate() {
                log_z += hv[a] * dw - 0.5 * hv[a] * hv[a] * p.dt();
            }
        }
        let z = log_z.exp();
        if !z.is_finite() {
            return Err(McError::Overflow {
                path: p.index,
                what: "Doléans-Dade exponential",
            });
        }
        Ok((lhs, gv * z))
    });
    let pairs: Vec<(f64, f64)> = pairs?;
    let lhs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let rhs: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let (el, er) = (estimate(&lhs)?, estimate(&rhs)?);
    let diff: Vec<f64> = pairs.iter().map(|p| p.0 - p.1).collect();
    let se = estimate(&diff)?.std_error;
    let residual = el.mean - er.mean;
    let tolerance = 3.0 * se + cfg.c_bias * cfg.mc.dt * (el.mean.abs() + er.mean.abs());
    Ok(QuasiInvarianceRun {
        report: QuasiInvarianceReport {
            lambda,
            t,
            source_time: source,
            lhs: el.into(),
            rhs: er.into(),
            residual,
            se,
            tolerance,
            pass: residual.abs() <= tolerance,
        },
        lhs,
        rhs,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticRow {
    pub quantity: String,
    pub expr: String,
    /// Estimate of `E[q(X_t)²]`; absent when a value was not finite.
    pub second_moment: Option<TermStat>,
    pub flagged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct HypothesisAReport {
    pub t: f64,
    pub rows: Vec<DiagnosticRow>,
    pub pass: bool,
}

pub const RUNAWAY: f64 = 1e12;

/// The symbolic quantities whose squares must be integrable.
pub fn hypothesis_a_quantities(model: &SdeModel, s: &InfinitesimalSymmetry) -> Vec<(String, Expr)> {
    let coords = model.coords();
    let fields = model.diffusion_fields();
    let mut out = vec![];
    for (a, h) in s.h.iter().enumerate() {
        out.push((format!("H[{}]", a + 1), h.clone()));
    }
    for (a, h) in s.h.iter().enumerate() {
        out.push((format!("Y(H[{}])", a + 1), apply_field(&s.y, h)));
    }
    for (c, yi) in coords.iter().zip(s.y.components()) {
        out.push((format!("L(Y[{c}])"), model.generator_apply(yi)));
    }
    for (c, yi) in coords.iter().zip(s.y.components()) {
        for (a, f) in fields.iter().enumerate() {
            out.push((format!("Sigma{}(Y[{c}])", a + 1), apply_field(f, yi)));
        }
    }
    let yy: Vec<Expr> =
        s.y.components()
            .iter()
            .map(|yi| apply_field(&s.y, yi))
            .collect();
    for (c, e) in coords.iter().zip(&yy) {
        out.push((format!("L(Y(Y[{c}]))"), model.generator_apply(e)));
    }
    for (c, e) in coords.iter().zip(&yy) {
        for (a, f) in fields.iter().enumerate() {
            out.push((format!("Sigma{}(Y(Y[{c}]))", a + 1), apply_field(f, e)));
        }
    }
    out
}

pub fn hypothesis_a(setup: &Setup, t: f64, cfg: &VerifyConfig) -> Result<HypothesisAReport> {
    let model = setup.model;
    let b = model.bindings();
    let slots = model.coords().to_vec();
    let qs = hypothesis_a_quantities(model, setup.symmetry);
    let progs = qs
        .iter()
        .map(|(label, e)| {
            Program::compile(e, &slots, b).map_err(|source| VerifyError::Quantity {
                label: label.clone(),
                source: source.into(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let sim = Simulator::new(model, setup.x0, &cfg.mc)?;
    let k = cfg.mc.index_of(t)?;
    let values = sim.map_paths(|p| {
        progs
            .iter()
            .enumerate()
            .map(|(i, prog)| {
                p.eval_at(prog, k).map_err(|e| McError::Functional {
                    path: p.index,
                    message: format!("{}: {e}", qs[i].0),
                })
            })
            .collect::<std::result::Result<Vec<f64>, McError>>()
    })?;
    let mut rows = vec![];
    for (i, (label, e)) in qs.iter().enumerate() {
        let sq: Vec<f64> = values.iter().map(|v| v[i] * v[i]).collect();
        let est = estimate(&sq).ok().map(TermStat::from);
        let flagged = est.is_none_or(|e| !(e.mean.abs() <= RUNAWAY));
        rows.push(DiagnosticRow {
            quantity: label.clone(),
            expr: e.to_string(),
            second_moment: est,
            flagged,
        });
    }
    Ok(HypothesisAReport {
        t,
        pass: rows.iter().all(|r| !r.flagged),
        rows,
    })
}

impl HypothesisAReport {
    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "quantity,mean,se,flagged")?;
        for r in &self.rows {
            match r.second_moment {
                Some(e) => writeln!(out, "{},{},{},{}", r.quantity, e.mean, e.se, r.flagged)?,
                None => writeln!(out, "{},,,{}", r.quantity, r.flagged)?,
            }
        }
        Ok(())
    }
}

/// Tensor grid: every model coordinate gets `resolution` evenly spaced points
/// of its interval (a single point means the lower end).
#[derive(Debug, Clone)]
pub struct LyapunovGrid {
    pub bx: DomainBox,
    pub resolution: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LyapunovReport {
    pub phi: String,
    pub generator: String,
    pub m: f64,
    pub tol: f64,
    pub points: usize,
    /// Largest `(∂_t + L)φ / φ` over points with `φ > 0`.
    pub worst_ratio: f64,
    pub worst_point: Vec<(String, f64)>,
    /// Largest `(∂_t + L)φ − Mφ`.
    pub worst_excess: f64,
    pub pass: bool,
}

impl LyapunovReport {
    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "phi,M,points,worst_ratio,worst_excess,pass")?;
        writeln!(
            out,
            "\"{}\",{},{},{},{},{}",
            self.phi, self.m, self.points, self.worst_ratio, self.worst_excess, self.pass
        )
    }
}

pub const DEFAULT_LYAPUNOV_TOL: f64 = 1e-9;

/// Check `(∂_t + L)φ ≤ Mφ` at every grid point, with tolerance
/// `tol·max(1, |(∂_t+L)φ| + |Mφ|)`. The time derivative is part of `L` through
/// the unit drift of the time coordinate.
pub fn lyapunov_check(
    model: &SdeModel,
    phi: &Expr,
    m: f64,
    grid: &LyapunovGrid,
    tol: f64,
) -> Result<LyapunovReport> {
    model.check_symbols(phi)?;
    let slots = model.coords().to_vec();
    if grid.resolution.len() != grid.bx.bounds().len() || grid.resolution.contains(&0) {
        return Err(VerifyError::Functional(
            "one positive resolution per grid axis required".into(),
        ));
    }
    let axes: Vec<Vec<f64>> = slots
        .iter()
        .map(|c| {
            let i = grid.bx.names().iter().position(|n| n == c).ok_or_else(|| {
                VerifyError::Functional(format!("grid has no interval for `{c}`"))
            })?;
            let (lo, hi) = grid.bx.get(c).unwrap();
            let r = grid.resolution[i];
            Ok(if r == 1 {
                vec![lo]
            } else {
                (0..r)
                    .map(|j| lo + (hi - lo) * j as f64 / (r - 1) as f64)
                    .collect()
            })
        })
        .collect::<Result<_>>()?;
    let b = model.bindings();
    let gen = model.generator_apply(phi);
    let pp = compile1(phi, &slots, b)?;
    let gp = compile1(&gen, &slots, b)?;
    let total: usize = axes.iter().map(Vec::len).product();
    let mut x = vec![0.0; slots.len()];
    let mut worst_ratio = f64::NEG_INFINITY;
    let mut worst_excess = f64::NEG_INFINITY;
    let mut worst_point = vec![];
    let mut pass = true;
    let at = |x: &[f64]| {
        slots
            .iter()
            .cloned()
            .zip(x.iter().copied())
            .collect::<Vec<_>>()
    };
    for flat in 0..total {
        let mut r = flat;
        for (i, ax) in axes.iter().enumerate().rev() {
            x[i] = ax[r % ax.len()];
            r /= ax.len();
        }
        let err = |e: ExprError| VerifyError::Precondition(format!("at {:?}: {e}", at(&x)));
        let pv = pp.eval(&x).map_err(err)?;
        if pv < 0.0 {
            return Err(VerifyError::Precondition(format!(
                "phi = {pv} < 0 at {:?}",
                at(&x)
            )));
        }
        let lv = gp.eval(&x).map_err(err)?;
        let excess = lv - m * pv;
        if excess > tol * (lv.abs() + (m * pv).abs()).max(1.0) {
            pass = false;
        }
        worst_excess = worst_excess.max(excess);
        if pv > 0.0 && lv / pv > worst_ratio {
            worst_ratio = lv / pv;
            worst_point = at(&x);
        }
    }
    Ok(LyapunovReport {
        phi: phi.to_string(),
        generator: gen.to_string(),
        m,
        tol,
        points: total,
        worst_ratio,
        worst_point,
        worst_excess,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use crate::presets::{load_preset, PresetId, PresetOptions};

    fn preset(id: PresetId) -> crate::presets::Preset {
        load_preset(id, &PresetOptions::default()).unwrap()
    }

    fn within(t: &TermStat, target: f64) -> bool {
        (t.mean - target).abs() <= 4.0 * t.se
    }

    #[test]
    fn brownian_theorem_terms_match_gaussian_moments() {
        let p = preset(PresetId::Brownian);
        let cfg = VerifyConfig::new(p.mc_config(4000, 1e-2, 1.0, 7));
        let r = ibp_theorem(&p.setup(), &parse("x^2").unwrap(), 1.0, &cfg)
            .unwrap()
            .report;
        assert!(within(&r.terms["generator"], -1.0));
        assert!(within(&r.terms["girsanov"], -1.0));
        assert!(within(&r.terms["flow"], 2.0));
        assert_eq!(r.terms["initial"].mean, 0.0);
        assert!(r.pass, "{r:?}");
        assert!(r.diagnostics.warnings.is_empty());
    }

    #[test]
    fn horizon_difference_is_centred() {
        let p = preset(PresetId::Brownian);
        let cfg = VerifyConfig::new(p.mc_config(4000, 1e-2, 1.0, 8));
        let r = ibp_theorem(&p.setup(), &parse("x^2").unwrap(), 0.5, &cfg)
            .unwrap()
            .report;
        let h = r.diagnostics.horizon_diff.unwrap();
        assert!(h.mean.abs() <= 4.0 * h.se, "{h:?}");
        assert!(h.se > 0.0);
    }

    #[test]
    fn corollary_factor_tracks_stochastic_integral() {
        let p = preset(PresetId::Brownian);
        let cfg = VerifyConfig::new(p.mc_config(4000, 1e-2, 1.0, 9));
        let run = ibp_corollary(&p.setup(), &parse("x^2").unwrap(), 1.0, &cfg).unwrap();
        let d = &run.report.diagnostics;
        assert!(d.factor_mad.unwrap() <= d.factor_mad_bound.unwrap());
        assert!(within(&run.report.terms["martingale"], -1.0));
    }

    #[test]
    fn theorem_corollary_gap_is_the_euler_bias() {
        // per path the gap is W²(ΣΔW² − 1)/2, with mean exactly Δt
        let p = preset(PresetId::Brownian);
        let dt = 0.1;
        let cfg = VerifyConfig::new(p.mc_config(20_000, dt, 1.0, 17));
        let f = parse("x^2").unwrap();
        let th = ibp_theorem(&p.setup(), &f, 1.0, &cfg).unwrap();
        let co = ibp_corollary(&p.setup(), &f, 1.0, &cfg).unwrap();
        let gap: Vec<f64> = th
            .residuals()
            .iter()
            .zip(co.residuals())
            .map(|(a, b)| a - b)
            .collect();
        let e = estimate(&gap).unwrap();
        assert!((e.mean - dt).abs() <= 4.0 * e.std_error, "{e:?}");
    }

    #[test]
    fn corollary_rejects_non_quasi_doob_symmetry() {
        let p = preset(PresetId::Stochvol);
        let cfg = VerifyConfig::new(p.mc_config(10, 1e-2, 1.0, 1));
        let e = ibp_corollary(&p.setup(), &parse("x^2 + nu").unwrap(), 1.0, &cfg).unwrap_err();
        assert!(
            matches!(e, VerifyError::Precondition(ref m) if m.contains("quasi_doob[2]")),
            "{e}"
        );
    }

    #[test]
    fn single_time_cylinder_reduces_to_theorem_per_path() {
        let p = preset(PresetId::Ou);
        let cfg = VerifyConfig::new(p.mc_config(300, 1e-2, 1.0, 3));
        let th = ibp_theorem(&p.setup(), &parse("x^2").unwrap(), 0.7, &cfg).unwrap();
        let cyl = Cylinder::new(&p.model, parse("x_1^2").unwrap(), vec![0.7]).unwrap();
        let cy = ibp_cylinder(&p.setup(), &cyl, &cfg).unwrap();
        for (a, b) in th.samples.iter().zip(&cy.samples) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()), "{x} vs {y}");
            }
        }
    }

    #[test]
    fn cylinder_arguments_are_validated() {
        let p = preset(PresetId::Brownian);
        assert!(Cylinder::new(&p.model, parse("x_1*x_2").unwrap(), vec![0.5, 1.0]).is_err());
        assert!(Cylinder::new(&p.model, parse("x*x_2").unwrap(), vec![1.0, 0.5]).is_err());
        assert!(Cylinder::new(
            &p.model,
            parse("x_1").unwrap(),
            vec![1.0, 0.8, 0.6, 0.4, 0.2]
        )
        .is_err());
        assert!(Cylinder::new(&p.model, parse("x_1*x_2").unwrap(), vec![1.0, 0.5]).is_ok());
    }

    #[test]
    fn two_time_brownian_cylinder_closes() {
        let p = preset(PresetId::Brownian);
        let cfg = VerifyConfig::new(p.mc_config(4000, 1e-2, 1.0, 11));
        let cyl = Cylinder::new(&p.model, parse("x_1*x_2").unwrap(), vec![1.0, 0.5]).unwrap();
        let r = ibp_cylinder(&p.setup(), &cyl, &cfg).unwrap().report;
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn quasi_invariance_at_zero_is_exact() {
        let p = preset(PresetId::Brownian);
        let cfg = VerifyConfig::new(p.mc_config(200, 1e-2, 1.0, 5));
        let q = quasi_invariance(
            &p.setup(),
            0.0,
            &parse("cos(x)").unwrap(),
            1.0,
            DEFAULT_FLOW_STEP,
            &cfg,
        )
        .unwrap();
        assert_eq!(q.lhs, q.rhs);
        assert_eq!(q.report.residual, 0.0);
    }

    #[test]
    fn quasi_invariance_rejects_unsimulated_source_time() {
        let p = preset(PresetId::Brownian);
        let cfg = VerifyConfig::new(p.mc_config(10, 1e-2, 1.0, 5));
        let e = quasi_invariance(
            &p.setup(),
            -0.5,
            &parse("x").unwrap(),
            1.0,
            DEFAULT_FLOW_STEP,
            &cfg,
        )
        .unwrap_err();
        assert!(matches!(e, VerifyError::Precondition(_)), "{e}");
    }

    #[test]
    fn brownian_girsanov_integrand_has_unit_second_moment() {
        let p = preset(PresetId::Brownian);
        let cfg = VerifyConfig::new(p.mc_config(4000, 1e-2, 1.0, 13));
        let r = hypothesis_a(&p.setup(), 1.0, &cfg).unwrap();
        assert!(r.pass);
        let h = r.rows.iter().find(|r| r.quantity == "H[1]").unwrap();
        assert!(within(h.second_moment.as_ref().unwrap(), 1.0), "{h:?}");
    }

    fn grid(p: &crate::presets::Preset, bounds: &[(&str, f64, f64, usize)]) -> LyapunovGrid {
        let mut bx = p.model.domain().clone();
        let mut res = vec![];
        for (c, lo, hi, r) in bounds {
            bx = bx.with(c, *lo, *hi).unwrap();
            res.push(*r);
        }
        LyapunovGrid {
            bx,
            resolution: res,
        }
    }

    #[test]
    fn bessel_lyapunov_boundary_sits_at_two_a_minus_one() {
        let p = preset(PresetId::Bessel);
        let g = grid(&p, &[("x", 0.01, 10.0, 400), ("z", 0.0, 1.0, 1)]);
        for (alpha, expect) in [(1.0, true), (5.0, true), (5.5, false)] {
            let phi = parse(&format!("x^(-{alpha})")).unwrap();
            let r = lyapunov_check(&p.model, &phi, 1.0, &g, DEFAULT_LYAPUNOV_TOL).unwrap();
            assert_eq!(r.pass, expect, "alpha = {alpha}: {r:?}");
        }
    }

    #[test]
    fn ou_exponential_lyapunov_constant_is_sharp() {
        // Lφ/φ = K v''/2 + (K²/2 − K) v'² with v' = x³ + x, v'' = 3x² + 1
        let k = 0.5;
        let sup = (0..=200_000)
            .map(|i| {
                let x = -2.0 + 4.0 * i as f64 / 200_000.0;
                let (v1, v2) = (x * x * x + x, 3.0 * x * x + 1.0);
                k * v2 / 2.0 + (k * k / 2.0 - k) * v1 * v1
            })
            .fold(f64::NEG_INFINITY, f64::max);
        let p = preset(PresetId::Ou);
        let g = grid(&p, &[("x", -7.0, 7.0, 2801), ("z", 0.0, 1.0, 1)]);
        let phi = parse("exp(0.5*(x^4/4 + x^2/2))").unwrap();
        let ok = lyapunov_check(&p.model, &phi, 0.3, &g, DEFAULT_LYAPUNOV_TOL).unwrap();
        let bad = lyapunov_check(&p.model, &phi, 0.29, &g, DEFAULT_LYAPUNOV_TOL).unwrap();
        assert!(ok.pass && !bad.pass);
        assert!(sup > 0.29 && sup < 0.3);
        assert!(
            (ok.worst_ratio - sup).abs() < 1e-4,
            "{} vs {sup}",
            ok.worst_ratio
        );
    }

    #[test]
    fn lyapunov_rejects_negative_phi() {
        let p = preset(PresetId::Brownian);
        let g = grid(&p, &[("x", -1.0, 1.0, 5), ("z", 0.0, 1.0, 1)]);
        assert!(lyapunov_check(
            &p.model,
            &parse("x").unwrap(),
            1.0,
            &g,
            DEFAULT_LYAPUNOV_TOL
        )
        .is_err());
    }
}
