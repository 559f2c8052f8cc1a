//! Multi-resource fair allocation for heterogeneous servers with placement
//! constraints.
//!
//! The central mechanism is per-server dominant-share fairness (PS-DSF):
//! every user gets a virtual dominant share with respect to each server,
//! and no user's task count can grow without shrinking someone whose share
//! at that server is no larger. Baseline mechanisms (pooled DRF, C-DRFH,
//! TSF), optimality verifiers, sharing-property checkers and an
//! event-driven simulator of the per-server procedure are included.

pub mod baselines;
pub mod feasibility;
pub mod fixtures;
pub mod gen;
pub mod kernel;
pub mod lp;
pub mod mechanism;
pub mod model;
pub mod properties;
pub mod psdsf;
pub mod report;
pub mod scenario;
pub mod sim;

pub use feasibility::Mode;
pub use kernel::{gamma_matrix, GammaMatrix};
pub use model::{
    validate_scenario, Allocation, ClusterSpec, ResourceId, ServerSpec, UserSpec, Verdict,
    Violation,
};
pub use psdsf::{solve_rdm, solve_tdm, SolveError, SolveReport};
