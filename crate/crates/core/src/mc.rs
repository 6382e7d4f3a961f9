//! Euler–Maruyama ensembles, left-point path integrals and Monte-Carlo estimates.
//!
//! Paths are generated independently: path `i` draws from the ChaCha8 stream
//! `i` keyed by the master seed, and per-path results are collected in index
//! order before any reduction. Output is therefore bit-identical for every
//! thread count. Large runs should use [`Simulator::map_paths`], which never
//! holds more than one path per worker in memory.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::expr::{Bindings, Expr, ExprError, Program};
use crate::sde::SdeModel;

#[derive(Debug, thiserror::Error)]
pub enum McError {
    #[error("invalid Monte-Carlo configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("path {path}, step {step}: {source}")]
    Eval {
        path: usize,
        step: usize,
        source: ExprError,
    },
    #[error("path {path}, step {step}: non-finite state")]
    NonFinite { path: usize, step: usize },
    #[error("path {path}, step {step}: `{coord}` = {value} left the domain")]
    DomainExit {
        path: usize,
        step: usize,
        coord: String,
        value: f64,
    },
    #[error("path {path}: {message}")]
    Functional { path: usize, message: String },
    #[error("path {path}: overflow in {what}")]
    Overflow { path: usize, what: &'static str },
    #[error("time {0} is not on the simulation grid")]
    OffGrid(f64),
    #[error("estimate needs finite values and N >= 2 (got N = {n}, {bad} non-finite)")]
    Estimate { n: usize, bad: usize },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, McError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    #[default]
    Euler,
    /// Floored coordinates enter the coefficients as `max(x, ε)`.
    EulerFullTruncation,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Euler => "euler",
            Scheme::EulerFullTruncation => "euler-full-truncation",
        })
    }
}

impl FromStr for Scheme {
    type Err = McError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Scheme::Euler),
            "euler-full-truncation" => Ok(Scheme::EulerFullTruncation),
            _ => Err(McError::Config(format!("unknown scheme `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub paths: usize,
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    /// Per-coordinate positivity floor; empty means none.
    #[serde(default)]
    pub floors: Vec<Option<f64>>,
    #[serde(default)]
    pub scheme: Scheme,
}

impl McConfig {
    pub fn new(paths: usize, dt: f64, horizon: f64, seed: u64) -> Self {
        McConfig {
            paths,
            dt,
            horizon,
            seed,
            floors: vec![],
            scheme: Scheme::Euler,
        }
    }

    pub fn with_floors(mut self, floors: Vec<Option<f64>>, scheme: Scheme) -> Self {
        self.floors = floors;
        self.scheme = scheme;
        self
    }

    /// Number of steps `K = 𝒯/Δt`.
    pub fn steps(&self) -> Result<usize> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(McError::Config(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(McError::Config(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        let k = (self.horizon / self.dt).round();
        if (k * self.dt - self.horizon).abs() > 1e-12 * self.horizon.max(1.0) {
            return Err(McError::Config(format!(
                "dt = {} does not divide the horizon {}",
                self.dt, self.horizon
            )));
        }
        Ok(k as usize)
    }

    /// Grid index of time `t`.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let k = (t / self.dt).round();
        if k < 0.0
            || (k * self.dt - t).abs() > 1e-9 * t.abs().max(1.0)
            || k as usize > self.steps()?
        {
            return Err(McError::OffGrid(t));
        }
        Ok(k as usize)
    }

    fn validate(&self, dim: usize) -> Result<usize> {
        if self.paths < 2 {
            return Err(McError::Config("need at least 2 paths".into()));
        }
        if !self.floors.is_empty() && self.floors.len() != dim {
            return Err(McError::Config(format!(
                "floors has {} entries, model has {dim}",
                self.floors.len()
            )));
        }
        if let Some(e) = self
            .floors
            .iter()
            .flatten()
            .find(|e| !(**e >= 0.0 && e.is_finite()))
        {
            return Err(McError::Config(format!(
                "floor must be a finite number >= 0, got {e}"
            )));
        }
        self.steps()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MCEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
}

impl MCEstimate {
    /// `|mean − target| ≤ k·SE`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.std_error
    }
}

/// Sample mean and `s/√N` with the unbiased sample variance.
pub fn estimate(values: &[f64]) -> Result<MCEstimate> {
    let n = values.len();
    let bad = values.iter().filter(|v| !v.is_finite()).count();
    if n < 2 || bad > 0 {
        return Err(McError::Estimate { n, bad });
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    Ok(MCEstimate {
        mean,
        std_error: (ss / (n - 1) as f64).sqrt() / (n as f64).sqrt(),
        n,
    })
}

/// One simulated path: `K+1` states and the `K` Gaussian increments that produced them.
#[derive(Debug, Clone)]
pub struct Path {
    /// Path index, which is also its RNG stream.
    pub index: usize,
    dim: usize,
    noise: usize,
    dt: f64,
    states: Vec<f64>,
    dw: Vec<f64>,
    pub floor_hits: usize,
}

impl Path {
    pub fn steps(&self) -> usize {
        self.dw.len() / self.noise
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }

    pub fn dw(&self, k: usize) -> &[f64] {
        &self.dw[k * self.noise..(k + 1) * self.noise]
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    /// State at time `s ∈ [0, K·Δt]`, linear between grid nodes.
    pub fn interpolate(&self, s: f64, out: &mut [f64]) {
        let u = (s / self.dt).clamp(0.0, self.steps() as f64);
        if (u - u.round()).abs() < 1e-9 {
            out.copy_from_slice(self.state(u.round() as usize));
            return;
        }
        let k = u.floor() as usize;
        let w = u - k as f64;
        let (a, b) = (self.state(k), self.state(k + 1));
        for i in 0..self.dim {
            out[i] = a[i] + w * (b[i] - a[i]);
        }
    }

    fn eval(&self, p: &Program, k: usize) -> Result<f64> {
        p.eval(self.state(k)).map_err(|source| McError::Eval {
            path: self.index,
            step: k,
            source,
        })
    }

    pub fn eval_at(&self, p: &Program, k: usize) -> Result<f64> {
        self.eval(p, k)
    }

    /// `Σ_{j<k} Σ_α integrand_α(X_j) ΔW^α_j`.
    pub fn ito_integral(&self, integrand: &[Program], k: usize) -> Result<f64> {
        let mut acc = 0.0;
        for (a, p) in integrand.iter().enumerate() {
            if let Some(c) = p.as_const() {
                if c != 0.0 {
                    acc += c * (0..k).map(|j| self.dw(j)[a]).sum::<f64>();
                }
                continue;
            }
            for j in 0..k {
                acc += self.eval(p, j)? * self.dw(j)[a];
            }
        }
        Ok(acc)
    }

    /// `Σ_{j<k} integrand(X_j) Δt`.
    pub fn time_integral(&self, integrand: &Program, k: usize) -> Result<f64> {
        if let Some(c) = integrand.as_const() {
            return Ok(c * k as f64 * self.dt);
        }
        let mut acc = 0.0;
        for j in 0..k {
            acc += self.eval(integrand, j)?;
        }
        Ok(acc * self.dt)
    }

    /// `exp(Σ_j h(X_j)·ΔW_j − ½ Σ_j |h(X_j)|² Δt)` over the first `k` steps.
    pub fn doleans_dade(&self, h: &[Program], k: usize) -> Result<f64> {
        let mut log = 0.0;
        for j in 0..k {
            for (a, p) in h.iter().enumerate() {
                let v = self.eval(p, j)?;
                log += v * self.dw(j)[a] - 0.5 * v * v * self.dt;
            }
        }
        let z = log.exp();
        if !z.is_finite() {
            return Err(McError::Overflow {
                path: self.index,
                what: "Doléans-Dade exponential",
            });
        }
        Ok(z)
    }
}

fn thread_pool() -> &'static rayon::ThreadPool {
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let n = std::env::var("SYMSDE_THREADS")
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .filter(|n| *n > 0)
            .unwrap_or(0);
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .expect("thread pool")
    })
}

/// Run `f(i)` for `i < n` in parallel and return results in index order.
pub fn par_map<T: Send>(n: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    thread_pool().install(|| (0..n).into_par_iter().with_min_len(16).map(f).collect())
}

/// Compiled Euler–Maruyama stepper for one model, start point and configuration.
#[derive(Debug, Clone)]
pub struct Simulator {
    coords: Vec<String>,
    time: usize,
    noise: usize,
    drift: Vec<Program>,
    // row-major n × m
    diffusion: Vec<Program>,
    x0: Vec<f64>,
    cfg: McConfig,
    steps: usize,
    floors: Vec<Option<f64>>,
    bounds: Vec<(f64, f64)>,
}

impl Simulator {
    pub fn new(model: &SdeModel, x0: &[f64], cfg: &McConfig) -> Result<Self> {
        let n = model.dim();
        let steps = cfg.validate(n)?;
        if x0.len() != n {
            return Err(McError::Config(format!(
                "x0 has {} entries, model has {n}",
                x0.len()
            )));
        }
        let coords: Vec<String> = model.coords().to_vec();
        let bounds: Vec<(f64, f64)> = coords
            .iter()
            .map(|c| model.domain().get(c).unwrap())
            .collect();
        for (i, c) in coords.iter().enumerate() {
            if !(bounds[i].0..=bounds[i].1).contains(&x0[i]) {
                return Err(McError::Config(format!(
                    "x0: `{c}` = {} outside the domain",
                    x0[i]
                )));
            }
        }
        let b = model.bindings();
        let drift = model
            .drift()
            .iter()
            .map(|e| Program::compile(e, &coords, b))
            .collect::<std::result::Result<_, _>>()?;
        let diffusion = model
            .diffusion()
            .iter()
            .flatten()
            .map(|e| Program::compile(e, &coords, b))
            .collect::<std::result::Result<_, _>>()?;
        let floors = if cfg.floors.is_empty() {
            vec![None; n]
        } else {
            cfg.floors.clone()
        };
        Ok(Simulator {
            time: model.time_index(),
            noise: model.noise_dim(),
            coords,
            drift,
            diffusion,
            x0: x0.to_vec(),
            cfg: cfg.clone(),
            steps,
            floors,
            bounds,
        })
    }

    pub fn config(&self) -> &McConfig {
        &self.cfg
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn coords(&self) -> &[String] {
        &self.coords
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    /// Simulate path `index`.
    pub fn path(&self, index: usize) -> Result<Path> {
        let (n, m, dt) = (self.coords.len(), self.noise, self.cfg.dt);
        let sq = dt.sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(index as u64);
        let mut states = Vec::with_capacity((self.steps + 1) * n);
        let mut dws = Vec::with_capacity(self.steps * m);
        states.extend_from_slice(&self.x0);
        let truncate = self.cfg.scheme == Scheme::EulerFullTruncation;
        let mut xc = vec![0.0; n];
        let mut dw = vec![0.0; m];
        let mut next = vec![0.0; n];
        let mut hits = 0;
        let err = |step, source| McError::Eval {
            path: index,
            step,
            source,
        };
        for k in 0..self.steps {
            let x = &states[k * n..(k + 1) * n];
            for i in 0..n {
                xc[i] = match self.floors[i] {
                    Some(e) if truncate => x[i].max(e),
                    _ => x[i],
                };
            }
            for d in dw.iter_mut() {
                let g: f64 = StandardNormal.sample(&mut rng);
                *d = g * sq;
            }
            for i in 0..n {
                if i == self.time {
                    // exact grid time, no accumulated rounding
                    next[i] = self.x0[i] + (k + 1) as f64 * dt;
                    continue;
                }
                let mu = match self.drift[i].as_const() {
                    Some(c) => c,
                    None => self.drift[i].eval(&xc).map_err(|e| err(k, e))?,
                };
                let mut v = x[i] + mu * dt;
                for a in 0..m {
                    let p = &self.diffusion[i * m + a];
                    let s = match p.as_const() {
                        Some(c) => c,
                        None => p.eval(&xc).map_err(|e| err(k, e))?,
                    };
                    v += s * dw[a];
                }
                if !v.is_finite() {
                    return Err(McError::NonFinite {
                        path: index,
                        step: k + 1,
                    });
                }
                match self.floors[i] {
                    Some(e) if v < e => {
                        v = e;
                        hits += 1;
                    }
                    Some(_) => {}
                    None if !(self.bounds[i].0..=self.bounds[i].1).contains(&v) => {
                        return Err(McError::DomainExit {
                            path: index,
                            step: k + 1,
                            coord: self.coords[i].clone(),
                            value: v,
                        });
                    }
                    None => {}
                }
                next[i] = v;
            }
            states.extend_from_slice(&next);
            dws.extend_from_slice(&dw);
        }
        Ok(Path {
            index,
            dim: n,
            noise: m,
            dt,
            states,
            dw: dws,
            floor_hits: hits,
        })
    }

    /// Simulate every path and apply `f`, returning results in path order.
    pub fn map_paths<T: Send>(
        &self,
        f: impl Fn(&Path) -> Result<T> + Sync + Send,
    ) -> Result<Vec<T>> {
        par_map(self.cfg.paths, |i| f(&self.path(i)?))
    }

    /// Keep every path in memory. Meant for small ensembles.
    pub fn ensemble(&self) -> Result<PathEnsemble> {
        Ok(PathEnsemble {
            coords: self.coords.clone(),
            dt: self.cfg.dt,
            paths: self.map_paths(|p| Ok(p.clone()))?,
        })
    }

    /// Compile expressions over this simulator's coordinate order.
    pub fn compile(&self, exprs: &[Expr], b: &Bindings) -> Result<Vec<Program>> {
        Ok(exprs
            .iter()
            .map(|e| Program::compile(e, &self.coords, b))
            .collect::<std::result::Result<_, _>>()?)
    }
}

/// `simulate(model, x0, cfg)`: the full in-memory ensemble.
pub fn simulate(model: &SdeModel, x0: &[f64], cfg: &McConfig) -> Result<PathEnsemble> {
    Simulator::new(model, x0, cfg)?.ensemble()
}

#[derive(Debug, Clone)]
pub struct PathEnsemble {
    coords: Vec<String>,
    dt: f64,
    pub paths: Vec<Path>,
}

impl PathEnsemble {
    pub fn coords(&self) -> &[String] {
        &self.coords
    }

    pub fn steps(&self) -> usize {
        self.paths.first().map_or(0, Path::steps)
    }

    pub fn time_grid(&self) -> Vec<f64> {
        (0..=self.steps()).map(|k| k as f64 * self.dt).collect()
    }

    pub fn floor_hits(&self) -> usize {
        self.paths.iter().map(|p| p.floor_hits).sum()
    }

    fn index_of(&self, t: f64) -> Result<usize> {
        let k = (t / self.dt).round();
        if k < 0.0 || (k * self.dt - t).abs() > 1e-9 * t.abs().max(1.0) || k as usize > self.steps()
        {
            return Err(McError::OffGrid(t));
        }
        Ok(k as usize)
    }

    fn compile(&self, exprs: &[Expr], b: &Bindings) -> Result<Vec<Program>> {
        Ok(exprs
            .iter()
            .map(|e| Program::compile(e, &self.coords, b))
            .collect::<std::result::Result<_, _>>()?)
    }

    pub fn values_at(&self, e: &Expr, t: f64, b: &Bindings) -> Result<Vec<f64>> {
        let k = self.index_of(t)?;
        let p = self.compile(std::slice::from_ref(e), b)?.remove(0);
        self.paths.iter().map(|path| path.eval_at(&p, k)).collect()
    }

    pub fn ito_integral(&self, integrand: &[Expr], t: f64, b: &Bindings) -> Result<Vec<f64>> {
        let k = self.index_of(t)?;
        let p = self.compile(integrand, b)?;
        self.paths
            .iter()
            .map(|path| path.ito_integral(&p, k))
            .collect()
    }

    pub fn time_integral(&self, integrand: &Expr, t: f64, b: &Bindings) -> Result<Vec<f64>> {
        let k = self.index_of(t)?;
        let p = self.compile(std::slice::from_ref(integrand), b)?.remove(0);
        self.paths
            .iter()
            .map(|path| path.time_integral(&p, k))
            .collect()
    }

    pub fn doleans_dade(&self, h: &[Expr], t: f64, b: &Bindings) -> Result<Vec<f64>> {
        let k = self.index_of(t)?;
        let p = self.compile(h, b)?;
        self.paths
            .iter()
            .map(|path| path.doleans_dade(&p, k))
            .collect()
    }

    /// CSV with header `path,k,t,<coords>,dW1..dWm`; the last row of each
    /// path has empty increments.
    pub fn write_csv(&self, out: &mut impl Write) -> Result<()> {
        let m = self.paths.first().map_or(0, |p| p.noise);
        write!(out, "path,k,t")?;
        for c in &self.coords {
            write!(out, ",{c}")?;
        }
        for a in 1..=m {
            write!(out, ",dW{a}")?;
        }
        writeln!(out)?;
        for p in &self.paths {
            for k in 0..=p.steps() {
                write!(out, "{},{k},{}", p.index, p.time(k))?;
                for v in p.state(k) {
                    write!(out, ",{v}")?;
                }
                for a in 0..m {
                    if k < p.steps() {
                        write!(out, ",{}", p.dw(k)[a])?;
                    } else {
                        write!(out, ",")?;
                    }
                }
                writeln!(out)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::{load_preset, PresetId, PresetOptions};

    fn brownian() -> SdeModel {
        load_preset(PresetId::Brownian, &PresetOptions::default())
            .unwrap()
            .model
    }

    #[test]
    fn estimate_examples() {
        let e = estimate(&[5.0; 4]).unwrap();
        assert_eq!((e.mean, e.std_error), (5.0, 0.0));
        let e = estimate(&[0.0, 1.0]).unwrap();
        assert!((e.mean - 0.5).abs() < 1e-15 && (e.std_error - 0.5).abs() < 1e-15);
        assert!(estimate(&[1.0]).is_err());
        assert!(estimate(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn grid_and_config_checks() {
        assert_eq!(McConfig::new(2, 1e-3, 1.0, 0).steps().unwrap(), 1000);
        assert!(McConfig::new(2, 0.3, 1.0, 0).steps().is_err());
        assert!(Simulator::new(&brownian(), &[0.0, 0.0], &McConfig::new(1, 0.1, 1.0, 0)).is_err());
        let c = McConfig::new(2, 0.25, 1.0, 0);
        assert_eq!(c.index_of(0.5).unwrap(), 2);
        assert!(c.index_of(0.3).is_err());
        assert!(c.index_of(1.25).is_err());
    }

    #[test]
    fn time_coordinate_is_exact_and_increments_are_stored() {
        let ens = simulate(&brownian(), &[0.0, 0.0], &McConfig::new(4, 0.1, 1.0, 3)).unwrap();
        for p in &ens.paths {
            for k in 0..=p.steps() {
                assert_eq!(p.state(k)[1], k as f64 * 0.1);
            }
            // X_{k+1} − X_k is exactly ΔW_k for Brownian motion
            for k in 0..p.steps() {
                assert_eq!(p.state(k + 1)[0], p.state(k)[0] + p.dw(k)[0]);
            }
        }
    }

    #[test]
    fn left_point_integrals() {
        let model = brownian();
        let ens = simulate(&model, &[0.0, 0.0], &McConfig::new(3, 0.25, 1.0, 1)).unwrap();
        let b = model.bindings();
        let z = ens.time_integral(&Expr::coord("z"), 1.0, b).unwrap();
        assert!(z.iter().all(|v| (v - 0.375).abs() < 1e-15));
        let one = ens.time_integral(&Expr::one(), 0.5, b).unwrap();
        assert!(one.iter().all(|v| *v == 0.5));
        let zero = ens.ito_integral(&[Expr::zero()], 1.0, b).unwrap();
        assert!(zero.iter().all(|v| *v == 0.0));
        let w = ens.ito_integral(&[Expr::one()], 1.0, b).unwrap();
        for (p, v) in ens.paths.iter().zip(&w) {
            assert!((v - (p.state(4)[0] - p.state(0)[0])).abs() < 1e-14);
        }
        let dd = ens.doleans_dade(&[Expr::zero()], 1.0, b).unwrap();
        assert!(dd.iter().all(|v| *v == 1.0));
        let c = 0.7;
        let dd = ens.doleans_dade(&[Expr::constant(c)], 1.0, b).unwrap();
        for (p, v) in ens.paths.iter().zip(&dd) {
            let w1 = p.state(4)[0];
            assert!((v - (c * w1 - c * c / 2.0).exp()).abs() < 1e-12);
        }
        assert!(ens.ito_integral(&[Expr::one()], 0.3, b).is_err());
    }

    #[test]
    fn paths_depend_only_on_seed_and_index() {
        let model = brownian();
        let sim = Simulator::new(&model, &[0.0, 0.0], &McConfig::new(50, 0.1, 1.0, 9)).unwrap();
        let a = sim.map_paths(|p| Ok(p.state(10)[0])).unwrap();
        let b: Vec<f64> = (0..50)
            .rev()
            .map(|i| sim.path(i).unwrap().state(10)[0])
            .collect();
        assert_eq!(a, b.into_iter().rev().collect::<Vec<_>>());
    }

    #[test]
    fn csv_dump_has_header_and_rows() {
        let ens = simulate(&brownian(), &[0.0, 0.0], &McConfig::new(2, 0.5, 1.0, 1)).unwrap();
        let mut buf = vec![];
        ens.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "path,k,t,x,z,dW1");
        assert_eq!(lines.len(), 1 + 2 * 3);
        assert!(lines[3].ends_with(','));
    }
}
