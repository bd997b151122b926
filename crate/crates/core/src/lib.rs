//! Positive discrete spectrum of the mean-field operator of a symmetric
//! branching random walk on `Z^d` with finitely many equal-intensity sources.

pub mod criticality;
pub mod error;
pub mod gamma;
pub mod green;
pub mod lattice;
pub mod oracles;
pub mod quadrature;
pub mod simplex;
pub mod special;
pub mod symbol;

pub use error::{Error, Result};
pub use criticality::{BetaC1, CriticalIntensities, SpectralProblem, SpectrumResult};
pub use gamma::{EigenDecomposition, GammaMatrix, SourceConfiguration};
pub use green::{GreenSolver, GreenValue};
pub use lattice::{Angular, JumpKernel, LatticePoint, TailSpec, VarianceClass};
pub use oracles::{BranchingLaw, SimulationConfig, SimulationOutcome};
pub use simplex::{SimplexBetas, SimplexConfiguration, SimplexLambdas};
pub use symbol::Symbol;
