//! Symbolic stochastic-symmetry toolkit for time-augmented Itô SDEs.
//!
//! - [`expr`]: expression language (parse, differentiate, simplify, evaluate, zero test)
//! - [`sde`]: models, generator, diffusion fields, Lie brackets
//! - [`symmetry`]: infinitesimal and finite stochastic transformations
//! - [`flow`]: one-parameter groups by RK4 integration
//! - [`mc`]: Euler–Maruyama ensembles and path functionals
//! - [`verify`]: Monte-Carlo checks of quasi-invariance and integration by parts
//! - [`presets`]: the Brownian, OU, Bessel and stochastic-volatility models
//! - [`suite`]: the fixed reproduction suite behind `symsde reproduce-paper`

pub mod expr;
pub mod flow;
pub mod mc;
pub mod presets;
pub mod sde;
pub mod suite;
pub mod symmetry;
pub mod verify;
