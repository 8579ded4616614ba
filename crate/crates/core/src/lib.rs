//! Numerical solvers for deterministic first-order mean field games with
//! quadratic Lagrangian `|q|²/2` and a nonlocal cost `F(x, m)` that need not
//! be monotone in `m`.
//!
//! * [`static_game`]: equilibria `m̄` with `supp m̄ ⊆ argmin F(·, m̄)`.
//! * [`ergodic`]: triples `(c, v, m)` solving `c + ½|∇v|² = F(x, m)`,
//!   `div(m∇v) = 0`, built from an eikonal Dirichlet problem.
//! * [`horizon`]: the finite-horizon system, solved by a semi-Lagrangian
//!   backward sweep, particle transport and a damped fixed-point iteration.
//! * [`asymptotics`]: sweeps over the horizon `T` measuring support collapse,
//!   the `1/T` value rate and the weak KAM limit.

pub mod asymptotics;
pub mod cost;
pub mod ergodic;
pub mod error;
pub mod grid;
pub mod horizon;
pub mod measure;
pub mod static_game;
pub mod transport;

pub use cost::{CostFunctional, CostMetadata, CostSliceStats};
pub use error::{MfgError, Result};
pub use grid::{NodeSet, Point, SpatialGrid};
pub use measure::{DiscreteMeasure, MeasurePath};
pub use transport::wasserstein1;
