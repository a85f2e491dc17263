//! Numerical pipelines for the tail of the gap between the two rightmost
//! particles of branching Brownian motion.
//!
//! Three independent routes are provided:
//!
//! * a PDE route: traveling wave and adjoint ([`wave`]), the front in the
//!   moving frame ([`kpp`]), and the linearized gap density with its adjoint
//!   moment ([`gap`]);
//! * direct Monte Carlo simulation of the particle system ([`bbm`]);
//! * the closed-form large-gap asymptotic and comparison tables ([`asym`]).

pub mod asym;
pub mod bbm;
pub mod error;
pub mod gap;
pub mod grid;
pub mod kpp;
pub mod numerics;
pub mod reaction;
pub mod wave;

pub use asym::{asymptotic_tail, compare_report, Constants, ExponentMode, PdeTail, Report};
pub use bbm::{estimate_gap_tail_mc, simulate_bbm, McConfig, McEstimate};
pub use error::{Error, Result};
pub use gap::{solve_gap, GapConfig, GapSolution, PotentialSource};
pub use grid::Grid1D;
pub use reaction::{build_reaction, Nonlinearity, OffspringLaw, Reaction};
pub use wave::{build_adjoint, solve_wave, AdjointProfile, WaveProfile, WaveSolverConfig};
