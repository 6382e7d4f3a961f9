use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use symsde::expr::{parse_with_params, DomainBox, ExprError, ZeroTest};
use symsde::flow::{reconstruct_flow, FlowError, DEFAULT_STEP};
use symsde::mc::{McConfig, McError, Simulator};
use symsde::presets::{
    load_preset, stochvol_lyapunov_regime, PresetError, PresetId, PresetOptions,
};
use symsde::sde::{ModelSpec, SdeError, SdeModel};
use symsde::suite::{self, SuiteConfig};
use symsde::symmetry::{
    verify_quasi_doob, verify_symmetry, FiniteTransformation, FunctionMode, InfinitesimalSymmetry,
    SymmetryError, SymmetrySpec,
};
use symsde::verify::{
    hypothesis_a, ibp_corollary, ibp_cylinder, ibp_theorem, lyapunov_check, quasi_invariance,
    Cylinder, LyapunovGrid, Setup, VerifyConfig, VerifyError, DEFAULT_FLOW_STEP,
    DEFAULT_LYAPUNOV_TOL,
};

#[derive(Parser)]
#[command(
    name = "symsde",
    version,
    about = "Lie symmetries of SDEs: symbolic checks and Monte-Carlo verification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Zero-test the determining equations.
    VerifySymmetry {
        #[command(flatten)]
        src: Source,
        #[command(flatten)]
        out: Out,
    },
    /// Check the quasi-Doob criterion and classify the symmetry.
    QuasiDoob {
        #[command(flatten)]
        src: Source,
        #[command(flatten)]
        out: Out,
    },
    /// Integrate the one-parameter group from a base point.
    Flow {
        #[command(flatten)]
        src: Source,
        #[arg(long)]
        lambda: f64,
        #[arg(long, default_value_t = DEFAULT_STEP)]
        dl: f64,
        /// Base point, comma separated; defaults to the start point.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        base: Option<Vec<f64>>,
        #[command(flatten)]
        out: Out,
    },
    /// Simulate paths and write them as CSV.
    Simulate {
        #[command(flatten)]
        src: Source,
        #[arg(long, default_value_t = 100)]
        paths: usize,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[arg(long, default_value_t = 1.0)]
        horizon: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[command(flatten)]
        out: Out,
    },
    /// Monte-Carlo integration-by-parts residual.
    Ibp {
        #[command(flatten)]
        src: Source,
        #[arg(long, value_enum, default_value_t = Form::Theorem)]
        form: Form,
        /// Test function; for the cylinder form use block coordinates like `x_1*x_2`.
        #[arg(long = "F")]
        f: String,
        #[arg(long, default_value_t = 1.0)]
        t: f64,
        /// Decreasing times for the cylinder form.
        #[arg(long, value_delimiter = ',')]
        times: Option<Vec<f64>>,
        #[command(flatten)]
        mc: McArgs,
        #[command(flatten)]
        out: Out,
    },
    /// Compare `E g(X_t)` with the transformed, reweighted expectation.
    QuasiInvariance {
        #[command(flatten)]
        src: Source,
        #[arg(long, allow_hyphen_values = true)]
        lambda: f64,
        #[arg(long)]
        g: String,
        #[arg(long, default_value_t = 1.0)]
        t: f64,
        #[arg(long, default_value_t = DEFAULT_FLOW_STEP)]
        flow_step: f64,
        #[command(flatten)]
        mc: McArgs,
        #[command(flatten)]
        out: Out,
    },
    /// Second moments of the symmetry-derived quantities.
    HypothesisA {
        #[command(flatten)]
        src: Source,
        #[arg(long, default_value_t = 1.0)]
        t: f64,
        #[command(flatten)]
        mc: McArgs,
        #[command(flatten)]
        out: Out,
    },
    /// Grid check of `(∂_t + L)φ ≤ Mφ`.
    Lyapunov {
        #[command(flatten)]
        src: Source,
        #[arg(long)]
        phi: String,
        #[arg(long = "M")]
        m: f64,
        /// Axes as `coord=lo:hi:n`, comma separated; unlisted coordinates sit at their lower bound.
        #[arg(long, allow_hyphen_values = true)]
        grid: Option<String>,
        #[arg(long, default_value_t = DEFAULT_LYAPUNOV_TOL)]
        tol: f64,
        #[command(flatten)]
        out: Out,
    },
    /// Run the acceptance suite.
    ReproducePaper {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 200_000)]
        paths: usize,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        #[command(flatten)]
        out: Out,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Form {
    Theorem,
    Corollary,
    Cylinder,
}

#[derive(Args)]
struct Out {
    /// Directory for the JSON and CSV reports.
    #[arg(long, default_value = "symsde-out")]
    out: PathBuf,
}

#[derive(Args)]
struct Source {
    #[arg(long, conflicts_with = "spec")]
    preset: Option<PresetId>,
    /// JSON file with `model`, `symmetry` and optional `x0`, `check_box`, `mc`.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    beta: Option<String>,
    #[arg(long)]
    v: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    a: Option<f64>,
    #[arg(long)]
    alpha1: Option<f64>,
    #[arg(long)]
    alpha2: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    b: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    mu0: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    sigma0: Option<f64>,
    /// Skip parameter-range checks.
    #[arg(long = "unsafe")]
    unsafe_params: bool,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x0: Option<Vec<f64>>,
}

#[derive(Args)]
struct McArgs {
    #[arg(long)]
    paths: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    /// Simulation horizon; defaults to the evaluation time.
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RunSpec {
    model: ModelSpec,
    symmetry: SymmetrySpec,
    #[serde(default)]
    x0: Option<Vec<f64>>,
    #[serde(default)]
    check_box: Option<BTreeMap<String, [f64; 2]>>,
    #[serde(default)]
    mc: Option<McConfig>,
}

/// Exit status 2 for bad input, 3 for numerical breakdown.
#[derive(Debug, thiserror::Error)]
enum Failure {
    #[error("{0}")]
    Spec(String),
    #[error("{0}")]
    Numerical(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Spec(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }
}

fn spec(e: impl ToString) -> Failure {
    Failure::Spec(e.to_string())
}

impl From<ExprError> for Failure {
    fn from(e: ExprError) -> Self {
        match e {
            ExprError::Domain { .. } => Failure::Numerical(e.to_string()),
            _ => spec(e),
        }
    }
}

impl From<SdeError> for Failure {
    fn from(e: SdeError) -> Self {
        match e {
            SdeError::Expr(e) => e.into(),
            _ => spec(e),
        }
    }
}

impl From<SymmetryError> for Failure {
    fn from(e: SymmetryError) -> Self {
        match e {
            SymmetryError::Sde(e) => e.into(),
            SymmetryError::Expr(e) | SymmetryError::Entry { source: e, .. } => e.into(),
            _ => spec(e),
        }
    }
}

impl From<PresetError> for Failure {
    fn from(e: PresetError) -> Self {
        match e {
            PresetError::Expr(e) => e.into(),
            PresetError::Sde(e) => e.into(),
            PresetError::Symmetry(e) => e.into(),
            _ => spec(e),
        }
    }
}

impl From<FlowError> for Failure {
    fn from(e: FlowError) -> Self {
        match e {
            FlowError::Expr(e) => e.into(),
            FlowError::TimeDependence(_) | FlowError::Invalid(_) => spec(e),
            _ => Failure::Numerical(e.to_string()),
        }
    }
}

impl From<McError> for Failure {
    fn from(e: McError) -> Self {
        match e {
            McError::Expr(e) => e.into(),
            McError::Config(_) | McError::OffGrid(_) => spec(e),
            _ => Failure::Numerical(e.to_string()),
        }
    }
}

impl From<VerifyError> for Failure {
    fn from(e: VerifyError) -> Self {
        match e {
            VerifyError::Expr(e) => e.into(),
            VerifyError::Sde(e) => e.into(),
            VerifyError::Symmetry(e) => e.into(),
            VerifyError::Mc(e) => e.into(),
            VerifyError::Flow(e) => e.into(),
            VerifyError::Precondition(_) | VerifyError::Functional(_) => spec(e),
            VerifyError::Quantity { .. } | VerifyError::Io(_) => Failure::Numerical(e.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, Failure>;

/// Model, symmetry and simulation defaults resolved from a preset or a spec file.
struct Loaded {
    preset: Option<PresetId>,
    model: SdeModel,
    symmetry: InfinitesimalSymmetry,
    x0: Vec<f64>,
    check_box: DomainBox,
    mc: McConfig,
    inputs: Value,
}

impl Loaded {
    fn setup(&self) -> Setup<'_> {
        Setup {
            model: &self.model,
            symmetry: &self.symmetry,
            x0: &self.x0,
            check_box: &self.check_box,
        }
    }

    fn mc(&self, args: &McArgs, t: f64) -> Result<VerifyConfig> {
        let mut mc = self.mc.clone();
        mc.paths = args.paths.unwrap_or(mc.paths);
        mc.dt = args.dt.unwrap_or(mc.dt);
        mc.horizon = args.horizon.unwrap_or(t);
        mc.seed = args.seed.unwrap_or(mc.seed);
        if mc.horizon < t {
            return Err(spec(format!("horizon {} is before t = {t}", mc.horizon)));
        }
        mc.steps()?;
        Ok(VerifyConfig::new(mc))
    }
}

fn load(src: &Source) -> Result<Loaded> {
    let overrides = src.beta.is_some()
        || src.v.is_some()
        || src.a.is_some()
        || src.alpha1.is_some()
        || src.alpha2.is_some()
        || src.b.is_some()
        || src.mu0.is_some()
        || src.sigma0.is_some();
    let mut loaded = match (&src.preset, &src.spec) {
        (Some(id), None) => {
            let opts = PresetOptions {
                beta: src.beta.clone(),
                v: src.v.clone(),
                a: src.a,
                alpha1: src.alpha1,
                alpha2: src.alpha2,
                b: src.b,
                mu0: src.mu0,
                sigma0: src.sigma0,
                unsafe_params: src.unsafe_params,
            };
            let p = load_preset(*id, &opts)?;
            let params = p.model.bindings().params().clone();
            let inputs = json!({
                "preset": id.name(),
                "beta": opts.beta.as_deref().unwrap_or(id.default_beta()),
                "params": params,
                "v": (*id == PresetId::Ou).then(|| opts.v.clone().unwrap_or(symsde::presets::DEFAULT_V.into())),
            });
            Loaded {
                preset: Some(*id),
                mc: p.mc_config(200_000, 1e-3, 1.0, 42),
                model: p.model,
                symmetry: p.symmetry,
                x0: p.x0,
                check_box: p.sample_box,
                inputs,
            }
        }
        (None, Some(path)) => {
            if overrides {
                return Err(spec(
                    "parameter overrides apply to presets only; edit the spec file instead",
                ));
            }
            let text =
                fs::read_to_string(path).map_err(|e| spec(format!("{}: {e}", path.display())))?;
            let rs: RunSpec = serde_json::from_str(&text)
                .map_err(|e| spec(format!("{}: {e}", path.display())))?;
            let model = SdeModel::from_spec(&rs.model)?;
            let symmetry = InfinitesimalSymmetry::from_spec(&model, &rs.symmetry)?;
            // parsed only to reject a malformed closed form early
            rs.symmetry
                .finite
                .as_ref()
                .map(|f| FiniteTransformation::from_spec(&model, f))
                .transpose()?;
            let check_box = match &rs.check_box {
                Some(m) => DomainBox::new(m.iter().map(|(k, [lo, hi])| (k.clone(), *lo, *hi)))?,
                None => model.domain().clone(),
            };
            let x0 = rs.x0.clone().unwrap_or_default();
            let mc = rs
                .mc
                .clone()
                .unwrap_or_else(|| McConfig::new(200_000, 1e-3, 1.0, 42));
            Loaded {
                preset: None,
                inputs: json!({ "spec": path.display().to_string(), "model": rs.model.name }),
                model,
                symmetry,
                x0,
                check_box,
                mc,
            }
        }
        (None, None) => return Err(spec("one of --preset or --spec is required")),
        (Some(_), Some(_)) => unreachable!("clap rejects --preset with --spec"),
    };
    if let Some(x0) = &src.x0 {
        loaded.x0 = x0.clone();
    }
    if !loaded.x0.is_empty() && loaded.x0.len() != loaded.model.dim() {
        return Err(spec(format!(
            "x0 has {} entries, the model has {} coordinates",
            loaded.x0.len(),
            loaded.model.dim()
        )));
    }
    Ok(loaded)
}

fn require_x0(l: &Loaded) -> Result<()> {
    if l.x0.is_empty() {
        return Err(spec(
            "a start point is required (--x0 or `x0` in the spec file)",
        ));
    }
    Ok(())
}

/// Write `<name>.json` (with `schema_version`) and `<name>.csv`.
fn emit(
    out: &Path,
    name: &str,
    inputs: Value,
    report: &impl Serialize,
    pass: bool,
    csv: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
) -> Result<()> {
    let io = |e: std::io::Error| {
        Failure::Numerical(format!("writing reports to {}: {e}", out.display()))
    };
    fs::create_dir_all(out).map_err(io)?;
    let doc = json!({
        "schema_version": suite::SCHEMA_VERSION,
        "command": name,
        "inputs": inputs,
        "pass": pass,
        "report": report,
    });
    let mut text =
        serde_json::to_string_pretty(&doc).map_err(|e| Failure::Numerical(e.to_string()))?;
    text.push('\n');
    fs::write(out.join(format!("{name}.json")), text).map_err(io)?;
    let mut buf = vec![];
    csv(&mut buf).map_err(io)?;
    fs::write(out.join(format!("{name}.csv")), buf).map_err(io)?;
    Ok(())
}

fn check_csv(
    r: &symsde::symmetry::CheckReport,
    mode: &str,
    buf: &mut Vec<u8>,
) -> std::io::Result<()> {
    for e in &r.entries {
        writeln!(
            buf,
            "{mode},{},{},{}",
            e.label, e.outcome.pass, e.outcome.max_abs
        )?;
    }
    Ok(())
}

fn verdict(pass: bool, what: &str) -> bool {
    println!("{what}: {}", if pass { "PASS" } else { "FAIL" });
    pass
}

fn run(cmd: Command) -> Result<bool> {
    let test = ZeroTest::default();
    match cmd {
        Command::VerifySymmetry { src, out } => {
            let l = load(&src)?;
            let generic = verify_symmetry(
                &l.model,
                &l.symmetry,
                &l.check_box,
                &test,
                FunctionMode::Generic,
            )?;
            let bound = verify_symmetry(
                &l.model,
                &l.symmetry,
                &l.check_box,
                &test,
                FunctionMode::Bound,
            )?;
            let pass = generic.pass && bound.pass;
            for e in generic.failures().chain(bound.failures()) {
                eprintln!(
                    "nonzero {}: {} (witness {:?})",
                    e.label, e.residual, e.outcome.witness
                );
            }
            emit(
                &out.out,
                "verify-symmetry",
                l.inputs,
                &json!({ "generic": generic, "bound": bound }),
                pass,
                |b| {
                    writeln!(b, "mode,entry,pass,max_abs")?;
                    check_csv(&generic, "generic", b)?;
                    check_csv(&bound, "bound", b)
                },
            )?;
            Ok(verdict(pass, "determining equations"))
        }
        Command::QuasiDoob { src, out } => {
            let l = load(&src)?;
            let (class, data) = suite::classify(&l.model, &l.symmetry, &l.check_box, &test)?;
            let criterion = match l.symmetry.k {
                Some(_) => Some(verify_quasi_doob(
                    &l.model,
                    &l.symmetry,
                    &l.check_box,
                    &test,
                    FunctionMode::Generic,
                )?),
                None => None,
            };
            let pass = class == "quasi-doob";
            println!("classification: {class}");
            let report = json!({ "class": class, "data": data, "criterion": criterion });
            emit(&out.out, "quasi-doob", l.inputs, &report, pass, |b| {
                writeln!(b, "mode,entry,pass,max_abs")?;
                match &criterion {
                    Some(r) => check_csv(r, "generic", b),
                    None => Ok(()),
                }
            })?;
            Ok(verdict(pass, "quasi-Doob"))
        }
        Command::Flow {
            src,
            lambda,
            dl,
            base,
            out,
        } => {
            let l = load(&src)?;
            let base = base.unwrap_or_else(|| l.x0.clone());
            if base.len() != l.model.dim() {
                return Err(spec(format!(
                    "base point needs {} coordinates",
                    l.model.dim()
                )));
            }
            let tr = reconstruct_flow(&l.model, &l.symmetry, &base, lambda, dl)?;
            let end = tr.last();
            println!("phi = {:?}, eta = {}, h = {:?}", end.phi, end.eta, end.h);
            let mut inputs = l.inputs;
            inputs["lambda"] = json!(lambda);
            inputs["dl"] = json!(dl);
            emit(&out.out, "flow", inputs, &tr, true, |b| {
                tr.write_csv(b).map_err(std::io::Error::other)
            })?;
            Ok(true)
        }
        Command::Simulate {
            src,
            paths,
            dt,
            horizon,
            seed,
            out,
        } => {
            let l = load(&src)?;
            require_x0(&l)?;
            let mut cfg = l.mc.clone();
            (cfg.paths, cfg.dt, cfg.horizon, cfg.seed) = (paths, dt, horizon, seed);
            let ens = Simulator::new(&l.model, &l.x0, &cfg)?.ensemble()?;
            let k = ens.steps();
            let terminal: Vec<Value> = l
                .model
                .coords()
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let v: Vec<f64> = ens.paths.iter().map(|p| p.state(k)[i]).collect();
                    let est = symsde::mc::estimate(&v).ok();
                    json!({ "coord": c, "mean": est.map(|e| e.mean), "se": est.map(|e| e.std_error) })
                })
                .collect();
            let report = json!({ "config": cfg, "steps": k, "floor_hits": ens.floor_hits(), "terminal": terminal });
            emit(&out.out, "simulate", l.inputs, &report, true, |b| {
                ens.write_csv(b).map_err(std::io::Error::other)
            })?;
            println!("{} paths x {k} steps written", ens.paths.len());
            Ok(true)
        }
        Command::Ibp {
            src,
            form,
            f,
            t,
            times,
            mc,
            out,
        } => {
            let l = load(&src)?;
            require_x0(&l)?;
            let params = l.model.param_names();
            let fe = parse_with_params(&f, &params)?;
            let cylinder = match form {
                Form::Cylinder => {
                    let times = times.clone().unwrap_or_else(|| vec![t]);
                    Some(Cylinder::new(&l.model, fe.clone(), times)?)
                }
                _ => None,
            };
            let last = cylinder.as_ref().map_or(t, |c| c.times[0]);
            let cfg = l.mc(&mc, last)?;
            let run = match form {
                Form::Theorem => ibp_theorem(&l.setup(), &fe, t, &cfg)?,
                Form::Corollary => ibp_corollary(&l.setup(), &fe, t, &cfg)?,
                Form::Cylinder => ibp_cylinder(&l.setup(), cylinder.as_ref().unwrap(), &cfg)?,
            };
            let r = &run.report;
            for w in &r.diagnostics.warnings {
                eprintln!("warning: {w}");
            }
            for (name, s) in &r.terms {
                println!("{name:>10}: {:+.6} ± {:.6}", s.mean, s.se);
            }
            println!(
                "  residual: {:+.3e} (tolerance {:.3e})",
                r.residual, r.tolerance
            );
            let mut inputs = l.inputs;
            inputs["F"] = json!(f);
            inputs["t"] = json!(t);
            inputs["times"] = json!(cylinder.as_ref().map(|c| c.times.clone()));
            inputs["mc"] = json!(cfg.mc);
            emit(&out.out, "ibp", inputs, r, r.pass, |b| r.write_csv(b))?;
            Ok(verdict(r.pass, "integration by parts"))
        }
        Command::QuasiInvariance {
            src,
            lambda,
            g,
            t,
            flow_step,
            mc,
            out,
        } => {
            let l = load(&src)?;
            require_x0(&l)?;
            let ge = l.model.parse(&g)?;
            let cfg = l.mc(&mc, t)?;
            let run = quasi_invariance(&l.setup(), lambda, &ge, t, flow_step, &cfg)?;
            let r = &run.report;
            println!(
                "lhs {:.6} ± {:.6}, rhs {:.6} ± {:.6}",
                r.lhs.mean, r.lhs.se, r.rhs.mean, r.rhs.se
            );
            println!(
                "residual {:+.3e} (tolerance {:.3e})",
                r.residual, r.tolerance
            );
            let mut inputs = l.inputs;
            inputs["g"] = json!(g);
            inputs["mc"] = json!(cfg.mc);
            emit(&out.out, "quasi-invariance", inputs, r, r.pass, |b| {
                writeln!(b, "side,mean,se")?;
                writeln!(b, "lhs,{},{}", r.lhs.mean, r.lhs.se)?;
                writeln!(b, "rhs,{},{}", r.rhs.mean, r.rhs.se)?;
                writeln!(b, "difference,{},{}", r.residual, r.se)
            })?;
            Ok(verdict(r.pass, "quasi-invariance"))
        }
        Command::HypothesisA { src, t, mc, out } => {
            let l = load(&src)?;
            require_x0(&l)?;
            let cfg = l.mc(&mc, t)?;
            let r = hypothesis_a(&l.setup(), t, &cfg)?;
            for row in r.rows.iter().filter(|r| r.flagged) {
                eprintln!("flagged: {} = {}", row.quantity, row.expr);
            }
            let mut inputs = l.inputs;
            inputs["mc"] = json!(cfg.mc);
            emit(&out.out, "hypothesis-a", inputs, &r, r.pass, |b| {
                r.write_csv(b)
            })?;
            Ok(verdict(r.pass, "square integrability"))
        }
        Command::Lyapunov {
            src,
            phi,
            m,
            grid,
            tol,
            out,
        } => {
            let l = load(&src)?;
            if l.preset == Some(PresetId::Stochvol) && !src.unsafe_params {
                stochvol_lyapunov_regime(&l.model).map_err(spec)?;
            }
            let grid = match grid {
                Some(text) => parse_grid(&l.model, &text)?,
                None => default_grid(&l)?,
            };
            let pe = l.model.parse(&phi)?;
            let r = lyapunov_check(&l.model, &pe, m, &grid, tol)?;
            println!(
                "worst ratio {:.6} at {:?} over {} points",
                r.worst_ratio, r.worst_point, r.points
            );
            let mut inputs = l.inputs;
            inputs["grid"] = json!(grid.bx.bounds());
            inputs["resolution"] = json!(grid.resolution);
            emit(&out.out, "lyapunov", inputs, &r, r.pass, |b| r.write_csv(b))?;
            Ok(verdict(r.pass, "Lyapunov condition"))
        }
        Command::ReproducePaper {
            seed,
            paths,
            dt,
            out,
        } => {
            let cfg = SuiteConfig {
                seed,
                paths,
                dt,
                ..SuiteConfig::default()
            };
            let start = Instant::now();
            let mut timings = vec![];
            let report = suite::run_suite(&cfg, |c, secs| {
                println!(
                    "[{}] {:>2} {}: {}",
                    if c.pass { "PASS" } else { "FAIL" },
                    c.id,
                    c.name,
                    c.summary
                );
                eprintln!("    {secs:.2} s");
                timings
                    .push(json!({ "id": c.id, "seconds": secs, "limit": suite::time_limit(c.id) }));
            });
            emit(
                &out.out,
                "reproduce-paper",
                json!({ "seed": seed }),
                &report,
                report.pass,
                |b| report.write_csv(b),
            )?;
            // wall-clock times vary between runs, so they live outside the report
            let t = json!({ "total_seconds": start.elapsed().as_secs_f64(), "criteria": timings });
            fs::write(out.out.join("timings.json"), format!("{t:#}\n"))
                .map_err(|e| Failure::Numerical(e.to_string()))?;
            Ok(verdict(report.pass, "acceptance suite"))
        }
    }
}

fn parse_grid(model: &SdeModel, text: &str) -> Result<LyapunovGrid> {
    let mut axes = BTreeMap::new();
    for part in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let bad = || spec(format!("grid axis `{part}` is not `coord=lo:hi:n`"));
        let (name, range) = part.split_once('=').ok_or_else(bad)?;
        let f: Vec<&str> = range.split(':').collect();
        let [lo, hi, n] = f.as_slice() else {
            return Err(bad());
        };
        let lo: f64 = lo.parse().map_err(|_| bad())?;
        let hi: f64 = hi.parse().map_err(|_| bad())?;
        let n: usize = n.parse().map_err(|_| bad())?;
        if model.domain().get(name).is_none() {
            return Err(spec(format!("`{name}` is not a coordinate")));
        }
        axes.insert(name.to_string(), (lo, hi, n));
    }
    let mut bx = model.domain().clone();
    let mut resolution = vec![];
    for name in model.domain().names() {
        match axes.get(name) {
            Some(&(lo, hi, n)) => {
                bx = bx.with(name, lo, hi)?;
                resolution.push(n);
            }
            None => resolution.push(1),
        }
    }
    Ok(LyapunovGrid { bx, resolution })
}

fn default_grid(l: &Loaded) -> Result<LyapunovGrid> {
    let text = match l.preset {
        Some(PresetId::Brownian) => "x=-10:10:2001",
        Some(PresetId::Ou) => "x=-7:7:2801",
        Some(PresetId::Bessel) => "x=0.01:10:2000",
        Some(PresetId::Stochvol) => "nu=0.01:50:500,x=-10:10:41",
        None => return Err(spec("--grid is required for models from a spec file")),
    };
    parse_grid(&l.model, text)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
