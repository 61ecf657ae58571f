//! Solvers for parameterized sequential decision making, specialised to
//! simultaneous facility location and path optimization (FLPO).
//!
//! Two routes to the same annealed problem live side by side:
//!
//! * [`stagewise`] solves the finite-horizon, time-varying formulation with a
//!   backward partition recursion over the stage DAG and Gibbs stage
//!   associations.
//! * [`lifted`] augments every stage into one state space with stage-tagged
//!   facility copies and solves the resulting time-invariant problem through
//!   soft Bellman fixed points and their parameter gradients.
//!
//! [`learning`] approximates the lifted fixed points with tabular soft
//! Q-learning, [`optimizer`] holds the BFGS minimizer and the annealing
//! driver shared by both solvers, and [`bench`] contains the comparison
//! harness behind the `parasdm` binary.

// `!(x > 0.0)` style checks deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod error;
pub mod learning;
pub mod lifted;
pub mod model;
pub mod numeric;
pub mod optimizer;
pub mod stagewise;

pub use error::{Error, Result};
pub use model::{Beta, DatasetSpec, FacilityLayout, Network, Point2};
