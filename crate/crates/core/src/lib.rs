//! Simulation and large-deviation analysis of reaction networks coupled to
//! slow ODEs.
//!
//! The crate covers four layers:
//!
//! * [`model`] and [`simulate`]: exact stochastic simulation of the hybrid
//!   jump process through time-rescaled unit-rate Poisson clocks, ensembles,
//!   the deterministic fluid limit and its fixed point.
//! * [`ldp`]: the local cost `ℓ`, the flux Lagrangian, the path action, the
//!   Lagrangian contracted onto concentration velocities, the Poisson rate and
//!   the time-rescaling map with its inverse.
//! * [`optimal_path`]: Euler-Lagrange systems in flux and contracted form,
//!   shooting, a multiple-shooting boundary-value solver, hitting exponents and
//!   an independent collocation minimizer.
//! * [`calcium`]: a two-reaction calcium-channel model with closed-form
//!   contracted derivatives and the spark-to-wave experiment driver.
//!
//! [`cli`] wires these into a batch front-end.

pub mod calcium;
pub mod cli;
pub mod error;
pub mod io;
pub mod ldp;
pub mod model;
pub mod ode;
pub mod optimal_path;
mod simplex;
pub mod simulate;

pub use error::{Error, Result};
pub use ldp::{
    action, contracted_lagrangian, ell, flux_lagrangian, inverse_time_rescale, poisson_action, time_rescale_map,
    ActionResult, ContractedCalculus, ExtendedReal, SmoothPath,
};
pub use model::{apply_reaction, validate_network, HybridState, PdmpModel, ReactionNetwork, RATE_FLOOR};
pub use ode::Tolerances;
pub use optimal_path::{hitting_exponent, shoot, solve_bvp, OptimalTrajectory, ShootingProblem};
pub use simulate::{deterministic_limit, fixed_point, simulate_ensemble, simulate_pdmp, EnsembleReport, JumpPath};
