//! Economic-dispatch engine for non-convex, non-smooth generator scheduling.
//!
//! The model covers prohibited operating zones, valve-point ripple, ramp
//! limits anchored at the previous hour, spinning reserve, and Kron-formula
//! network losses.  The non-convexity is handled by committing each unit to
//! one operating zone (searched exhaustively or by branch-and-bound) and
//! solving the remaining continuous subproblem with an equal-incremental-
//! cost method, extended with multi-start subgradient descent where losses
//! or valve ripple apply.
//!
//! Module map:
//! * [`model`] — units, cases, validation, replication
//! * [`cost`] — quadratic and valve-point cost curves
//! * [`loss`] — Kron loss formula and its gradient
//! * [`subproblem`] — continuous solvers over fixed operating boxes
//! * [`search`] — zone enumeration and branch-and-bound
//! * [`audit`] — recomputing losses/violations/costs of reported dispatches
//! * [`io`] — case and reported-dispatch file formats

pub mod audit;
pub mod cost;
pub mod error;
pub mod io;
pub mod loss;
pub mod model;
pub mod search;
pub mod subproblem;

pub use error::{LoadError, SolveError, ValidationError};
pub use model::{replicate_case, validate_case, SystemCase, Unit, ValidatedCase};
pub use search::{solve, DispatchSolution, SearchOptions};
