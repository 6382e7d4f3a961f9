use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use symsde::expr::{parse, simplify as simplify_expr, ZeroTest};
use symsde::flow::FlowField;
use symsde::presets::{load_preset, Preset, PresetId, PresetOptions};
use symsde::suite::classify;
use symsde::symmetry::{verify_symmetry as verify, FunctionMode};
use symsde::verify::{ibp_corollary, ibp_theorem, VerifyConfig};

fn value_err(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl ToString) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn json(v: &impl serde::Serialize) -> PyResult<String> {
    serde_json::to_string(v).map_err(runtime_err)
}

fn preset(name: &str, beta: Option<String>, v: Option<String>, a: Option<f64>) -> PyResult<Preset> {
    let id: PresetId = name.parse().map_err(value_err)?;
    let opts = PresetOptions {
        beta,
        v,
        a,
        ..Default::default()
    };
    load_preset(id, &opts).map_err(value_err)
}

/// Names of the built-in models.
#[pyfunction]
fn presets() -> Vec<&'static str> {
    PresetId::ALL.iter().map(|p| p.name()).collect()
}

/// Derivative of `expr` in `coord`, simplified and printed.
#[pyfunction]
fn differentiate(expr: &str, coord: &str) -> PyResult<String> {
    let e = parse(expr).map_err(value_err)?;
    Ok(simplify_expr(&e.differentiate(coord)).to_string())
}

#[pyfunction]
fn simplify(expr: &str) -> PyResult<String> {
    Ok(simplify_expr(&parse(expr).map_err(value_err)?).to_string())
}

/// Zero-test the determining equations; returns the JSON report.
#[pyfunction]
#[pyo3(signature = (preset_name, beta=None, v=None, a=None, generic=true))]
fn verify_symmetry(
    preset_name: &str,
    beta: Option<String>,
    v: Option<String>,
    a: Option<f64>,
    generic: bool,
) -> PyResult<String> {
    let p = preset(preset_name, beta, v, a)?;
    let mode = if generic {
        FunctionMode::Generic
    } else {
        FunctionMode::Bound
    };
    let r = verify(
        &p.model,
        &p.symmetry,
        &p.sample_box,
        &ZeroTest::default(),
        mode,
    )
    .map_err(runtime_err)?;
    json(&r)
}

/// `quasi-doob`, `girsanov-not-quasi-doob`, `quasi-doob-other-potential` or `not-a-symmetry`.
#[pyfunction]
#[pyo3(signature = (preset_name, beta=None, v=None, a=None))]
fn classify_symmetry(
    preset_name: &str,
    beta: Option<String>,
    v: Option<String>,
    a: Option<f64>,
) -> PyResult<String> {
    let p = preset(preset_name, beta, v, a)?;
    let (class, _) = classify(&p.model, &p.symmetry, &p.sample_box, &ZeroTest::default())
        .map_err(runtime_err)?;
    Ok(class.to_string())
}

/// `(Φ_λ, η_λ, h_λ)` at `base` by RK4.
#[pyfunction]
#[pyo3(signature = (preset_name, base, lam, dl=1e-3, beta=None, v=None, a=None))]
fn flow(
    preset_name: &str,
    base: Vec<f64>,
    lam: f64,
    dl: f64,
    beta: Option<String>,
    v: Option<String>,
    a: Option<f64>,
) -> PyResult<(Vec<f64>, f64, Vec<f64>)> {
    let p = preset(preset_name, beta, v, a)?;
    if base.len() != p.model.dim() {
        return Err(value_err(format!(
            "base needs {} coordinates",
            p.model.dim()
        )));
    }
    let field = FlowField::new(&p.model, &p.symmetry, p.model.bindings()).map_err(runtime_err)?;
    let pt = field.point(&base, lam, dl).map_err(runtime_err)?;
    Ok((pt.phi, pt.eta, pt.h))
}

/// Monte-Carlo integration-by-parts check; returns the JSON report.
#[pyfunction]
#[pyo3(signature = (preset_name, f, t=1.0, paths=20_000, dt=1e-2, seed=42, corollary=false, beta=None, v=None, a=None))]
#[allow(clippy::too_many_arguments)]
fn ibp(
    py: Python<'_>,
    preset_name: &str,
    f: &str,
    t: f64,
    paths: usize,
    dt: f64,
    seed: u64,
    corollary: bool,
    beta: Option<String>,
    v: Option<String>,
    a: Option<f64>,
) -> PyResult<String> {
    let p = preset(preset_name, beta, v, a)?;
    let fe = p.model.parse(f).map_err(value_err)?;
    let cfg = VerifyConfig::new(p.mc_config(paths, dt, t, seed));
    let run = py
        .detach(|| {
            if corollary {
                ibp_corollary(&p.setup(), &fe, t, &cfg)
            } else {
                ibp_theorem(&p.setup(), &fe, t, &cfg)
            }
        })
        .map_err(runtime_err)?;
    json(&run.report)
}

#[pymodule]
fn symsde_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(presets, m)?)?;
    m.add_function(wrap_pyfunction!(differentiate, m)?)?;
    m.add_function(wrap_pyfunction!(simplify, m)?)?;
    m.add_function(wrap_pyfunction!(verify_symmetry, m)?)?;
    m.add_function(wrap_pyfunction!(classify_symmetry, m)?)?;
    m.add_function(wrap_pyfunction!(flow, m)?)?;
    m.add_function(wrap_pyfunction!(ibp, m)?)?;
    Ok(())
}
