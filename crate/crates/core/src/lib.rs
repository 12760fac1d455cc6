//! Tracking control by local-linearization LPV gain scheduling and by
//! control contraction metrics (CCM), side by side.
//!
//! The crate covers the whole pipeline for small nonlinear plants:
//!
//! * [`expr`]: expression language for plants, gains, metrics and families
//! * [`model`]: plant `ẋ = f(x,u,w)`, `z = h(x,u,w)` with symbolic Jacobians
//! * [`lpv`]: equilibrium families, LPV linearization, gain-scheduled
//!   realizations, hidden-coupling and residual-term diagnostics
//! * [`certify`]: gridded parameter-dependent LMI checks and scalar bisection
//! * [`geometry`]: Riemannian metrics, path energy and numerical geodesics
//! * [`realization`]: path-integral CCM controller
//! * [`sim`]: closed-loop RK4 simulation and tracking diagnostics
//! * [`config`], [`casestudy`]: JSON configuration and the built-in
//!   two-state benchmark

pub mod casestudy;
pub mod certify;
pub mod config;
pub mod expr;
pub mod geometry;
pub mod grid;
pub mod linalg;
pub mod lpv;
pub mod model;
pub mod realization;
pub mod sim;
