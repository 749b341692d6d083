//! Double power law modeling of per-direction generalization loss in
//! multi-task training.
//!
//! The library models a direction's evaluation cross-entropy as a function of
//! its sampling ratio `p` and training-set size `D` (millions of examples):
//!
//! ```text
//! F(p, D) = (k * p)^(-alpha) + (D^gamma + b) * (q * p)^beta + M
//! ```
//!
//! The first term is capacity occupation (more ratio, lower loss), the second
//! is intrinsic over-fitting (more ratio, more over-fitting, damped by data
//! size), and `M` is a per-direction bias. On top of the law the crate
//! provides:
//!
//! - [`fitting`]: a three-step estimation procedure with pooled refinement
//!   passes, bias-only adaptation, and goodness of fit,
//! - [`pareto`]: dominance, front extraction, and collapse detection for
//!   trade-off sweeps,
//! - [`optimizer`]: simplex-constrained optimal sampling-ratio selection,
//! - [`simulator`]: a desk-scale multi-task trainer that reproduces the
//!   collapse phenomenon and a Hutchinson sharpness estimator,
//! - [`io`]: the CSV/JSON interchange formats shared by the CLI.
//!
//! Numeric code is generic over [`scalar::Scalar`] (`f32` or `f64`); the
//! type aliases at the crate root pin the common `f64` instantiations. The
//! simulator is `f64` only.

pub mod dpl;
pub mod error;
pub mod fitting;
pub mod io;
pub mod optimizer;
pub mod pareto;
pub mod presets;
pub mod rng;
pub mod scalar;
pub mod simulator;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Law parameters over `f64`.
pub type DplParams = dpl::DplParams<f64>;
/// Law parameters over `f32`.
pub type DplParams32 = dpl::DplParams<f32>;
/// A named direction over `f64`.
pub type DirectionSpec = dpl::DirectionSpec<f64>;
/// A named direction over `f32`.
pub type DirectionSpec32 = dpl::DirectionSpec<f32>;
/// One measured point over `f64`.
pub type Observation = io::Observation<f64>;
/// One measured point over `f32`.
pub type Observation32 = io::Observation<f32>;
/// Fit output over `f64`.
pub type FitReport = fitting::FitReport<f64>;
/// Optimizer output over `f64`.
pub type RatioSolution = optimizer::RatioSolution<f64>;
/// Collapse analysis output over `f64`.
pub type CollapseReport = pareto::CollapseReport<f64>;
