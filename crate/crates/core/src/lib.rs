//! Numerical toolkit for slow/fast diffusion pairs.
//!
//! The library simulates a two-component Ito system in which the first
//! component carries a small diffusion parameter `eps` while the second is a
//! fast ergodic diffusion running at time scale `1/eps`. Around that model it
//! provides:
//!
//! - a closed registry of analytic coefficient families with numerical
//!   validation of the standing regularity assumptions ([`model`]);
//! - the explicit invariant density of the fast component, averaged
//!   coefficients, and the averaged ODE ([`invariant`]);
//! - Euler-Maruyama integration of the plain, tilted, and noise-regularized
//!   systems with reproducible counter-derived RNG streams ([`simulate`]);
//! - occupation measures of the fast component together with the uniform and
//!   CDF-based Levy-type metrics used throughout ([`occupation`]);
//! - the action functionals `S_T`, `F_T`, `L_T`, the tilt/density bijection,
//!   and grid checks of both Fenchel-Legendre dualities ([`rate`]);
//! - constrained variational solves for the contracted rate functions
//!   ([`variational`]);
//! - ball-probability estimation by crude Monte Carlo and by exponentially
//!   tilted importance sampling, with scaling-slope fits and ergodic
//!   diagnostics ([`rare_event`]).
//!
//! Everything is deterministic given the inputs and a seed: replicas draw
//! from disjoint RNG streams and reductions run in fixed order, so results do
//! not depend on thread count.

// Index loops are the house style in the numerical kernels; zipped iterator
// rewrites rarely read better there.
#![allow(clippy::needless_range_loop)]

pub mod error;
pub mod grid;
pub mod invariant;
pub mod model;
pub mod occupation;
pub mod path;
pub mod rare_event;
pub mod rate;
pub mod simulate;
pub mod variational;

pub use error::{Error, Result};
