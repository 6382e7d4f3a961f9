//! The fixed acceptance suite behind `reproduce-paper`: criteria 1 to 10 run
//! in-process; criterion 11 (byte-identical reruns) needs two processes and is
//! checked by whoever drives the binary.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::expr::{parse, DomainBox, ExprError, Program, ZeroTest};
use crate::flow::{symmetry_identity_residual, FlowError, FlowField, DEFAULT_STEP};
use crate::presets::{
    load_preset, stochvol_lyapunov_regime, Preset, PresetError, PresetId, PresetOptions,
};
use crate::sde::SdeModel;
use crate::symmetry::{
    check_entries, quasi_doob_obstruction, verify_quasi_doob, verify_symmetry, CheckReport,
    FunctionMode, InfinitesimalSymmetry, SymmetryError,
};
use crate::verify::{
    ibp_corollary, ibp_cylinder, ibp_theorem, lyapunov_check, quasi_invariance, Cylinder, IbpRun,
    LyapunovGrid, TermStat, VerifyConfig, VerifyError, DEFAULT_FLOW_STEP, DEFAULT_LYAPUNOV_TOL,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum SuiteError {
    #[error(transparent)]
    Preset(#[from] PresetError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error(transparent)]
    Symmetry(#[from] SymmetryError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("{0}")]
    Missing(&'static str),
}

type Result<T> = std::result::Result<T, SuiteError>;

#[derive(Debug, Clone, Serialize)]
pub struct SuiteConfig {
    pub seed: u64,
    pub paths: usize,
    pub dt: f64,
    /// Quasi-invariance integrates a flow at every grid node, so it runs coarser.
    pub qi_paths: usize,
    pub qi_dt: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            seed: 42,
            paths: 200_000,
            dt: 1e-3,
            qi_paths: 20_000,
            qi_dt: 1e-2,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Criterion {
    pub id: u32,
    pub name: &'static str,
    pub pass: bool,
    pub summary: String,
    pub details: Value,
}

/// Deterministic given the configuration; wall-clock times are kept apart.
#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub schema_version: u32,
    pub config: SuiteConfig,
    pub criteria: Vec<Criterion>,
    pub pass: bool,
}

impl SuiteReport {
    pub fn write_csv(&self, out: &mut impl std::io::Write) -> std::io::Result<()> {
        writeln!(out, "id,name,pass,summary")?;
        for c in &self.criteria {
            writeln!(
                out,
                "{},{},{},\"{}\"",
                c.id,
                c.name,
                c.pass,
                c.summary.replace('"', "'")
            )?;
        }
        Ok(())
    }
}

pub const NAMES: [&str; 11] = [
    "determining-equations",
    "quasi-doob-classification",
    "flow-closed-forms",
    "flow-symmetry-identity",
    "ibp-theorem-brownian",
    "ibp-corollary-brownian",
    "ibp-other-presets",
    "ibp-cylinder",
    "quasi-invariance",
    "lyapunov",
    "determinism",
];

/// Brownian, β = z², F = x², x₀ = 0, t = 1: expected term means.
pub const THEOREM_ORACLE: [(&str, f64); 4] = [
    ("generator", -1.0),
    ("girsanov", -1.0),
    ("flow", 2.0),
    ("initial", 0.0),
];
/// Same setup, quasi-Doob factor term.
pub const MARTINGALE_ORACLE: f64 = -1.0;
/// `E cos(W_1)`.
pub fn cos_oracle() -> f64 {
    (-0.5f64).exp()
}

/// Wall-clock budget in seconds, where one applies.
pub fn time_limit(id: u32) -> Option<f64> {
    match id {
        1 => Some(5.0),
        2 => Some(2.0),
        3 => Some(1.0),
        5 => Some(60.0),
        _ => None,
    }
}

fn preset(id: PresetId) -> Result<Preset> {
    Ok(load_preset(id, &PresetOptions::default())?)
}

fn within(t: &TermStat, target: f64, k: f64) -> bool {
    (t.mean - target).abs() <= k * t.se
}

fn max_abs(r: &CheckReport) -> f64 {
    r.entries
        .iter()
        .map(|e| e.outcome.max_abs)
        .fold(0.0, f64::max)
}

type Outcome = (bool, String, Value);

fn determining_equations() -> Result<Outcome> {
    let test = ZeroTest::default();
    let mut pass = true;
    let mut details = serde_json::Map::new();
    for id in PresetId::ALL {
        let p = preset(id)?;
        let mut row = serde_json::Map::new();
        for (label, mode) in [
            ("generic", FunctionMode::Generic),
            ("bound", FunctionMode::Bound),
        ] {
            let r = verify_symmetry(&p.model, &p.symmetry, &p.sample_box, &test, mode)?;
            pass &= r.pass;
            row.insert(
                label.into(),
                json!({ "pass": r.pass, "max_abs": max_abs(&r), "entries": r.entries.len() }),
            );
        }
        details.insert(id.name().into(), Value::Object(row));
    }
    let summary = format!(
        "all residuals zero for 4 presets ({} points, {} random cubic draws, tol {:e})",
        test.trials, test.binding_draws, test.tol
    );
    Ok((pass, summary, Value::Object(details)))
}

/// One of `not-a-symmetry`, `quasi-doob`, `quasi-doob-other-potential`
/// (the supplied `k` fails but no obstruction was found) or
/// `girsanov-not-quasi-doob`, with supporting data.
pub fn classify(
    model: &SdeModel,
    s: &InfinitesimalSymmetry,
    bx: &DomainBox,
    test: &ZeroTest,
) -> std::result::Result<(&'static str, Value), SymmetryError> {
    let sym = verify_symmetry(model, s, bx, test, FunctionMode::Bound)?;
    if !sym.pass {
        return Ok(("not-a-symmetry", json!({})));
    }
    if s.k.is_some() {
        let qd = verify_quasi_doob(model, s, bx, test, FunctionMode::Generic)?;
        if qd.pass {
            return Ok((
                "quasi-doob",
                json!({ "k": s.k.as_ref().map(|k| k.to_string()) }),
            ));
        }
    }
    let obs = quasi_doob_obstruction(model, s)?;
    let labels: Vec<String> = obs.iter().map(|(l, _)| l.clone()).collect();
    let r = check_entries(obs, bx, test, model.bindings())?;
    let class = if r.pass {
        "quasi-doob-other-potential"
    } else {
        "girsanov-not-quasi-doob"
    };
    Ok((
        class,
        json!({ "obstruction": labels, "obstruction_max_abs": max_abs(&r) }),
    ))
}

fn quasi_doob_classification() -> Result<Outcome> {
    let test = ZeroTest::default();
    let mut pass = true;
    let mut details = serde_json::Map::new();
    for id in PresetId::ALL {
        let p = preset(id)?;
        let (class, extra) = classify(&p.model, &p.symmetry, &p.sample_box, &test)?;
        let want = if id == PresetId::Stochvol {
            "girsanov-not-quasi-doob"
        } else {
            "quasi-doob"
        };
        pass &= class == want;
        details.insert(
            id.name().into(),
            json!({ "class": class, "expected": want, "data": extra }),
        );
    }
    let summary =
        "brownian, ou, bessel quasi-Doob; stochvol Girsanov but not quasi-Doob".to_string();
    Ok((pass, summary, Value::Object(details)))
}

fn flow_closed_forms() -> Result<Outcome> {
    let tol = 1e-6;
    let lambdas = [0.25, 0.5, 1.0];
    let ou = preset(PresetId::Ou)?;
    let finite = ou
        .finite
        .clone()
        .expect("ou preset carries its closed form");
    let b = ou.model.bindings();
    let field = FlowField::new(&ou.model, &ou.symmetry, b)?;
    let mut ou_err: f64 = 0.0;
    for l in lambdas {
        let t = finite.at(l);
        let compile = |e| Program::compile(e, ou.model.coords(), b);
        let phi = t
            .phi
            .iter()
            .map(compile)
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let eta = compile(&t.eta)?;
        let h = compile(&t.h[0])?;
        for base in [[-1.0, 0.2], [0.5, 1.0], [1.5, 1.7]] {
            let got = field.point(&base, l, DEFAULT_STEP)?;
            for (p, g) in phi.iter().zip(&got.phi) {
                ou_err = ou_err.max((p.eval(&base)? - g).abs());
            }
            ou_err = ou_err.max((eta.eval(&base)? - got.eta).abs());
            ou_err = ou_err.max((h.eval(&base)? - got.h[0]).abs());
        }
    }
    // β = z²: Φ_λ = (x, z)/(1 − λz), η_λ = (1 − λz)⁻²
    let br = preset(PresetId::Brownian)?;
    let field = FlowField::new(&br.model, &br.symmetry, br.model.bindings())?;
    let mut br_err: f64 = 0.0;
    for l in lambdas {
        for (x, z) in [(-1.0, 0.1), (0.7, 0.4), (1.5, 0.5)] {
            let got = field.point(&[x, z], l, DEFAULT_STEP)?;
            let d = 1.0 - l * z;
            br_err = br_err
                .max((got.phi[0] - x / d).abs())
                .max((got.phi[1] - z / d).abs())
                .max((got.eta - 1.0 / (d * d)).abs());
        }
    }
    let pass = ou_err <= tol && br_err <= tol;
    let summary = format!("max deviation ou {ou_err:.2e}, brownian {br_err:.2e} (tol {tol:e})");
    Ok((
        pass,
        summary,
        json!({ "ou_max_error": ou_err, "brownian_max_error": br_err, "tol": tol }),
    ))
}

fn flow_symmetry_identity(seed: u64) -> Result<Outcome> {
    let tol = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut details = serde_json::Map::new();
    let mut worst: f64 = 0.0;
    let cases = [
        (
            PresetId::Brownian,
            ["x^2", "exp(x/2)*z", "x^3 - z*x"],
            (-2.0, 2.0, 0.0, 0.5),
        ),
        (
            PresetId::Ou,
            ["x^2", "sin(x) + z", "x^3*z"],
            (-2.0, 2.0, 0.0, 2.0),
        ),
    ];
    for (id, funcs, (xl, xh, zl, zh)) in cases {
        let p = preset(id)?;
        let field = FlowField::new(&p.model, &p.symmetry, p.model.bindings())?;
        let bx = DomainBox::new([("x", xl, xh), ("z", zl, zh)])?;
        let phis = funcs
            .iter()
            .map(|f| p.model.parse(f))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(VerifyError::from)?;
        let mut local: f64 = 0.0;
        for _ in 0..20 {
            let base = bx.sample(&mut rng);
            let lambda = rng.random_range(0.05..=1.0);
            for phi in &phis {
                let r = symmetry_identity_residual(
                    &p.model,
                    &field,
                    phi,
                    &base,
                    lambda,
                    DEFAULT_STEP,
                    1e-5,
                )?;
                local = r.iter().fold(local, |m, v| m.max(v.abs()));
            }
        }
        worst = worst.max(local);
        details.insert(
            id.name().into(),
            json!({ "max_residual": local, "functions": funcs }),
        );
    }
    let summary =
        format!("max residual {worst:.2e} over 20 points x 3 functions per preset (tol {tol:e})");
    Ok((worst <= tol, summary, Value::Object(details)))
}

fn term_json(run: &IbpRun) -> Value {
    serde_json::to_value(&run.report).expect("reports serialize")
}

fn ibp_theorem_brownian(cfg: &SuiteConfig, p: &Preset) -> Result<(Outcome, IbpRun)> {
    let vc = VerifyConfig::new(p.mc_config(cfg.paths, cfg.dt, 1.0, cfg.seed));
    let run = ibp_theorem(&p.setup(), &parse("x^2")?, 1.0, &vc)?;
    let r = &run.report;
    let terms_ok = THEOREM_ORACLE
        .iter()
        .all(|(n, v)| within(&r.terms[*n], *v, 3.0));
    let summary = format!(
        "terms ({:.4}, {:.4}, {:.4}, {:.4}) vs (-1, -1, 2, 0); residual {:.2e}, tolerance {:.2e}",
        r.terms["generator"].mean,
        r.terms["girsanov"].mean,
        r.terms["flow"].mean,
        r.terms["initial"].mean,
        r.residual,
        r.tolerance
    );
    let details = json!({ "report": term_json(&run), "terms_within_3se": terms_ok });
    Ok(((terms_ok && r.pass, summary, details), run))
}

fn ibp_corollary_brownian(cfg: &SuiteConfig, p: &Preset, theorem: &IbpRun) -> Result<Outcome> {
    let vc = VerifyConfig::new(p.mc_config(cfg.paths, cfg.dt, 1.0, cfg.seed));
    let run = ibp_corollary(&p.setup(), &parse("x^2")?, 1.0, &vc)?;
    let r = &run.report;
    let mart = within(&r.terms["martingale"], MARTINGALE_ORACLE, 3.0);
    let d = &r.diagnostics;
    let (mad, bound) = (
        d.factor_mad.unwrap_or(f64::NAN),
        d.factor_mad_bound.unwrap_or(f64::NAN),
    );
    // Both pipelines share paths; their per-path gap is `F(X_t)` times the Euler
    // error of the Itô sum, whose mean is O(Δt), so the gap is held to the same
    // tolerance rule as the residuals. The bare 3·SE verdict is kept for reference.
    let diff: Vec<f64> = theorem
        .residuals()
        .iter()
        .zip(run.residuals())
        .map(|(a, b)| a - b)
        .collect();
    let agree = crate::mc::estimate(&diff).map_err(VerifyError::from)?;
    let scale: f64 = theorem.report.terms.values().map(|t| t.mean.abs()).sum();
    let agree_tol = (3.0 * agree.std_error).max(vc.c_bias * vc.mc.dt * scale);
    let agree_ok = agree.mean.abs() <= agree_tol;
    let summary = format!(
        "martingale term {:.4} vs -1; residual {:.2e} (tol {:.2e}); factor MAD {mad:.3e} <= {bound:.3e}; \
         theorem-corollary gap {:.2e} (tol {agree_tol:.2e})",
        r.terms["martingale"].mean, r.residual, r.tolerance, agree.mean
    );
    let pass = mart && r.pass && mad <= bound && agree_ok;
    let details = json!({
        "report": term_json(&run),
        "martingale_within_3se": mart,
        "theorem_minus_corollary": {
            "mean": agree.mean,
            "se": agree.std_error,
            "tolerance": agree_tol,
            "pass": agree_ok,
            "within_3se": agree.mean.abs() <= 3.0 * agree.std_error,
        },
    });
    Ok((pass, summary, details))
}

fn ibp_other_presets(cfg: &SuiteConfig) -> Result<Outcome> {
    let mut pass = true;
    let mut parts = vec![];
    let mut details = serde_json::Map::new();
    for (id, f) in [
        (PresetId::Ou, "x^2"),
        (PresetId::Bessel, "x^2"),
        (PresetId::Stochvol, "x^2 + nu"),
    ] {
        let p = preset(id)?;
        let vc = VerifyConfig::new(p.mc_config(cfg.paths, cfg.dt, 1.0, cfg.seed));
        let run = ibp_theorem(
            &p.setup(),
            &p.model.parse(f).map_err(VerifyError::from)?,
            1.0,
            &vc,
        )?;
        let r = &run.report;
        let floor_ok = id != PresetId::Bessel || r.diagnostics.floor_fraction < 1e-3;
        pass &= r.pass && floor_ok;
        parts.push(format!(
            "{} {:.2e}/{:.2e}",
            id.name(),
            r.residual,
            r.tolerance
        ));
        details.insert(
            id.name().into(),
            json!({ "F": f, "report": term_json(&run), "floor_ok": floor_ok }),
        );
    }
    Ok((
        pass,
        format!("residual/tolerance: {}", parts.join(", ")),
        Value::Object(details),
    ))
}

fn ibp_cylinder_check(cfg: &SuiteConfig, p: &Preset) -> Result<Outcome> {
    // exact per-path reduction on a short run
    let small = VerifyConfig::new(p.mc_config(5_000, cfg.dt, 1.0, cfg.seed));
    let th = ibp_theorem(&p.setup(), &parse("x^2")?, 1.0, &small)?;
    let cy = ibp_cylinder(
        &p.setup(),
        &Cylinder::new(&p.model, parse("x_1^2")?, vec![1.0])?,
        &small,
    )?;
    let mut gap: f64 = 0.0;
    for (a, b) in th.samples.iter().zip(&cy.samples) {
        for (x, y) in a.iter().zip(b) {
            gap = gap.max((x - y).abs());
        }
    }
    let exact = gap <= 1e-12;
    let vc = VerifyConfig::new(p.mc_config(cfg.paths, cfg.dt, 1.0, cfg.seed));
    let run = ibp_cylinder(
        &p.setup(),
        &Cylinder::new(&p.model, parse("x_1*x_2")?, vec![1.0, 0.5])?,
        &vc,
    )?;
    let r = &run.report;
    let summary = format!(
        "k=1 max per-path gap {gap:.1e}; S=(1, 0.5), f=y1*y2 residual {:.2e} (tol {:.2e})",
        r.residual, r.tolerance
    );
    Ok((
        exact && r.pass,
        summary,
        json!({ "k1_max_gap": gap, "report": term_json(&run) }),
    ))
}

fn quasi_invariance_check(cfg: &SuiteConfig, p: &Preset) -> Result<Outcome> {
    let g = parse("cos(x)")?;
    let small = VerifyConfig::new(p.mc_config(2_000, cfg.qi_dt, 1.0, cfg.seed));
    let zero = quasi_invariance(&p.setup(), 0.0, &g, 1.0, DEFAULT_FLOW_STEP, &small)?;
    let exact = zero.lhs == zero.rhs;
    let vc = VerifyConfig::new(p.mc_config(cfg.qi_paths, cfg.qi_dt, 1.0, cfg.seed));
    let run = quasi_invariance(&p.setup(), 0.5, &g, 1.0, DEFAULT_FLOW_STEP, &vc)?;
    let r = &run.report;
    let oracle = cos_oracle();
    let lhs_ok = within(&r.lhs, oracle, 3.0);
    let summary = format!(
        "lambda=0 exact: {exact}; lhs {:.4} vs e^-1/2 = {oracle:.4}; rhs {:.4}; |lhs-rhs| {:.2e} (tol {:.2e})",
        r.lhs.mean,
        r.rhs.mean,
        r.residual.abs(),
        r.tolerance
    );
    let details = json!({ "lambda_zero_exact": exact, "lhs_within_3se": lhs_ok, "report": r });
    Ok((exact && lhs_ok && r.pass, summary, details))
}

fn grid(p: &Preset, axes: &[(&str, f64, f64, usize)]) -> Result<LyapunovGrid> {
    let mut bx = p.model.domain().clone();
    let mut resolution = vec![];
    for name in bx.names().into_iter().map(String::from).collect::<Vec<_>>() {
        match axes.iter().find(|a| a.0 == name) {
            Some(&(_, lo, hi, r)) => {
                bx = bx.with(&name, lo, hi)?;
                resolution.push(r);
            }
            None => resolution.push(1),
        }
    }
    Ok(LyapunovGrid { bx, resolution })
}

fn lyapunov() -> Result<Outcome> {
    let mut pass = true;
    let mut rows = vec![];
    let mut record =
        |model: &str, phi: &str, m: f64, expect: bool, r: crate::verify::LyapunovReport| {
            pass &= r.pass == expect;
            rows.push(json!({
                "model": model, "phi": phi, "M": m, "expected": expect, "pass": r.pass,
                "worst_ratio": r.worst_ratio, "points": r.points,
            }));
        };
    let sv = preset(PresetId::Stochvol)?;
    let regime = stochvol_lyapunov_regime(&sv.model).is_ok();
    let g = grid(&sv, &[("nu", 0.01, 50.0, 500), ("x", -10.0, 10.0, 41)])?;
    for (phi, m) in [
        ("1/nu", 1.0),
        ("exp(nu/2)", 1.0),
        ("x^2*(1/nu + 1) + exp(nu/2) + 1/nu + 1", 2.0),
    ] {
        let r = lyapunov_check(&sv.model, &parse(phi)?, m, &g, DEFAULT_LYAPUNOV_TOL)?;
        record("stochvol", phi, m, true, r);
    }
    let ou = preset(PresetId::Ou)?;
    let g = grid(&ou, &[("x", -7.0, 7.0, 2801)])?;
    let phi = "exp(0.5*(x^4/4 + x^2/2))";
    record(
        "ou",
        phi,
        1.0,
        true,
        lyapunov_check(&ou.model, &parse(phi)?, 1.0, &g, DEFAULT_LYAPUNOV_TOL)?,
    );
    let be = preset(PresetId::Bessel)?;
    let a = be.model.bindings().param("a").unwrap_or(f64::NAN);
    let g = grid(&be, &[("x", 0.01, 10.0, 2000)])?;
    for alpha in [1.0, 2.0, 5.0, 5.5, 6.0] {
        let phi = format!("x^(-{alpha})");
        let r = lyapunov_check(&be.model, &parse(&phi)?, 1.0, &g, DEFAULT_LYAPUNOV_TOL)?;
        record("bessel", &phi, 1.0, alpha <= 2.0 * a - 1.0, r);
    }
    let pass = pass && regime;
    let summary = format!(
        "{} checks; stochvol regime holds: {regime}; bessel boundary 2a-1 = {}",
        rows.len(),
        2.0 * a - 1.0
    );
    Ok((pass, summary, json!({ "checks": rows })))
}

fn finish(id: u32, outcome: Result<Outcome>) -> Criterion {
    let (pass, summary, details) =
        outcome.unwrap_or_else(|e| (false, format!("error: {e}"), Value::Null));
    Criterion {
        id,
        name: NAMES[id as usize - 1],
        pass,
        summary,
        details,
    }
}

/// Run criteria 1 to 10. `progress` sees each result with its wall-clock seconds.
pub fn run_suite(cfg: &SuiteConfig, mut progress: impl FnMut(&Criterion, f64)) -> SuiteReport {
    let mut criteria = vec![];
    let mut push = |id: u32, start: Instant, outcome: Result<Outcome>| {
        let c = finish(id, outcome);
        progress(&c, start.elapsed().as_secs_f64());
        criteria.push(c);
    };
    let t = Instant::now();
    push(1, t, determining_equations());
    let t = Instant::now();
    push(2, t, quasi_doob_classification());
    let t = Instant::now();
    push(3, t, flow_closed_forms());
    let t = Instant::now();
    push(4, t, flow_symmetry_identity(cfg.seed));
    let t = Instant::now();
    let mut theorem = None;
    let c5 = preset(PresetId::Brownian).and_then(|p| {
        let (o, run) = ibp_theorem_brownian(cfg, &p)?;
        theorem = Some((p, run));
        Ok(o)
    });
    push(5, t, c5);
    let t = Instant::now();
    let c6 = match &theorem {
        Some((p, run)) => ibp_corollary_brownian(cfg, p, run),
        None => Err(SuiteError::Missing("the brownian theorem run failed")),
    };
    push(6, t, c6);
    drop(theorem);
    let t = Instant::now();
    push(7, t, ibp_other_presets(cfg));
    let t = Instant::now();
    push(
        8,
        t,
        preset(PresetId::Brownian).and_then(|p| ibp_cylinder_check(cfg, &p)),
    );
    let t = Instant::now();
    push(
        9,
        t,
        preset(PresetId::Brownian).and_then(|p| quasi_invariance_check(cfg, &p)),
    );
    let t = Instant::now();
    push(10, t, lyapunov());
    let pass = criteria.iter().all(|c| c.pass);
    SuiteReport {
        schema_version: SCHEMA_VERSION,
        config: cfg.clone(),
        criteria,
        pass,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symbolic_criteria_pass() {
        for (id, o) in [
            (1, determining_equations()),
            (2, quasi_doob_classification()),
            (3, flow_closed_forms()),
            (4, flow_symmetry_identity(42)),
            (10, lyapunov()),
        ] {
            let c = finish(id, o);
            assert!(c.pass, "{}: {} {}", c.name, c.summary, c.details);
        }
    }

    #[test]
    fn errors_become_failing_criteria() {
        let c = finish(7, Err(PresetError::Unknown("x".into()).into()));
        assert!(!c.pass);
        assert!(c.summary.starts_with("error:"));
        assert_eq!(c.name, "ibp-other-presets");
    }
}
