// Negated float comparisons are deliberate: they reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Energy/utility optimization of slotted random-access networks under
//! per-link queueing-delay bounds.

mod barrier;
pub mod central;
pub mod distributed;
pub mod error;
pub mod feasibility;
pub mod perf_model;
pub mod scalar;
pub mod sim;
pub mod topology;

pub use error::{Error, ErrorCategory, Result};
pub use scalar::Scalar;

pub type Topology = topology::NetworkTopology<f64>;
pub type State = perf_model::PrimalState<f64>;
pub type Config = central::SolverConfig<f64>;
pub type Report = central::SolveReport<f64>;
pub type Feasibility = feasibility::FeasibilityReport<f64>;
pub type DistConfig = distributed::DistConfig<f64>;
pub type Trace = distributed::Trace<f64>;
pub type SimConfig = sim::SimConfig<f64>;
