//! Backstepping feedback synthesis and Lyapunov–Krasovskii certification for
//! triangular time-delay systems, with the supporting numerics: monotone
//! envelopes, r-histories, a method-of-steps integrator, max-type functionals,
//! quadratic-in-control CLF tools and a small expression language.

// negated float comparisons are deliberate: they reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backstep;
pub mod clf;
pub mod dsl;
pub mod funclass;
pub mod history;
pub mod lyapunov;
pub mod qmc;
pub mod scalar;
pub mod sim;

pub use scalar::{Dual, Real, Scalar};

/// Double-precision r-history.
pub type History = history::HistorySegment<f64>;
pub type Functional = lyapunov::MaxTypeFunctional<f64>;
pub type Trajectory = sim::TrajectoryRecord<f64>;
pub type RfdeSpec = sim::GeneralRfdeSpec<f64>;
