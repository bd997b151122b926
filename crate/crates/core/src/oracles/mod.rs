//! Independent reference computations: the operator on a finite box, the
//! walk semigroup by uniformization, time-domain Green values and a Monte
//! Carlo branching random walk.

pub mod lattice_box;
pub mod simulate;
pub mod time_green;
pub mod uniformization;

pub use lattice_box::{BoxGeometry, TruncatedOperator, MAX_BOX_SITES};
pub use simulate::{
    estimate_lambda0, simulate_brw, BranchingLaw, GrowthEstimate, SimMethod, SimulationConfig, SimulationOutcome,
};
pub use time_green::green_time_domain;
pub use uniformization::{evolve_m1, transition_prob, transition_row, M1Evolution};

use crate::error::Result;
use crate::gamma::SourceConfiguration;
use crate::lattice::JumpKernel;

/// Largest `k` eigenvalues of `H_beta` on `{-radius..radius}^d`.
pub fn truncated_top_eigs(
    kernel: &JumpKernel,
    sources: &SourceConfiguration,
    beta: f64,
    radius: usize,
    k: usize,
) -> Result<Vec<f64>> {
    if k > sources.len() + 3 {
        return Err(crate::error::invalid(format!("at most N + 3 = {} eigenvalues", sources.len() + 3)));
    }
    TruncatedOperator::new(kernel, sources, beta, radius)?.top_eigs(k)
}
