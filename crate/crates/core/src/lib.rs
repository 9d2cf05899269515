//! Simulation and numerical-verification toolkit for continuous-state
//! branching processes in Lévy random environments (CBLEs).
//!
//! The crate is organised around the pipeline used by every experiment:
//!
//! * [`env`] — Lévy environments `ξ`: Laplace exponent `Φ_ξ`, regime
//!   classification, exponential-moment checks and the Esscher tilt.
//! * [`path`] — exact sampling of environment trajectories (Brownian part
//!   plus finite-activity compound Poisson jumps), path functionals such as
//!   running extrema and exponential functionals, time reversal, and the
//!   negative-time extension used for stationary-law computations.
//! * [`branching`] — branching mechanisms `ψ₀`, hypothesis checks (x log x
//!   moment, Grey's condition, polynomial lower bounds) and the backward
//!   cumulant ODE solver that produces the quenched Laplace functionals.
//! * [`sde`] — forward simulation of the population mass process by
//!   operator splitting (exact multiplicative environment step, Euler
//!   demographic step), with and without immigration.
//! * [`estimators`] — Monte Carlo estimators: survival probability by three
//!   routes, limiting constants, decay-rate regression, fluctuation
//!   quantities and the Q-process identity check.

pub mod branching;
pub mod env;
pub mod error;
pub mod estimators;
pub mod numeric;
pub mod path;
pub mod rng;
pub mod sde;

pub use branching::{BranchingMechanism, CumulantSolution, SolverConfig, SolverStats};
pub use env::{EnvironmentSpec, JumpComponent, JumpLaw, Regime, RegimeTag};
pub use error::{CbleError, Result};
pub use estimators::{Estimate, RateFit};
pub use path::EnvironmentPath;
pub use sde::{ImmigrationSpec, PopulationTrajectory};
