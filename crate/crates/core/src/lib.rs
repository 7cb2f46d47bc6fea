//! Stochastic extragradient (SEG) methods for unconstrained variational
//! inequality problems with finite-sum operators.
//!
//! The crate covers:
//!
//! * [`operators`]: finite-sum operators `F(x) = (1/n) sum_i F_i(x)` and their constants,
//! * [`quadgame`]: the random quadratic min-max game generator and `.qgame` files,
//! * [`sampling`]: arbitrary sampling schemes with sample-dependent stepsizes,
//! * [`schedule`]: constant and horizon-aware decreasing stepsize policies,
//! * [`solvers`]: same-sample SEG, independent-sample SEG and deterministic EG,
//! * [`theory`]: rate constants, envelopes and Monte Carlo certificates.
//!
//! With the default `parallel` feature, multi-run work is spread over rayon's
//! thread pool; [`par::Execution`] selects between that and a plain loop.

pub mod error;
pub mod operators;
pub mod par;
pub mod quadgame;
pub mod sampling;
pub mod schedule;
pub mod solvers;
pub mod theory;

pub use error::{Error, Result};
pub use operators::{Component, FiniteSumOperator, Point};
