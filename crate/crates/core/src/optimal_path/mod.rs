//! Optimal fluctuation paths.
//!
//! The Euler-Lagrange system of the constrained action is assembled in flux
//! form (unknown fluxes `z`) or contracted form (unknown concentrations `x`,
//! with `L̂` from the model's calculus), then solved as a two-point
//! boundary-value problem. [`collocation`] minimizes the discretized action
//! directly and is used to cross-check shooting results.

pub mod collocation;
mod el;
mod shooting;

pub use collocation::{collocate, CollocationOptions, CollocationResult};
pub use el::{assemble_contracted_el_rhs, assemble_flux_el_rhs, ELState, ElDerivative};
pub use shooting::{
    hitting_exponent, hitting_exponent_with, shoot, solve_bvp, ElForm, HittingExponent, IterationRecord,
    OptimalTrajectory, ShootingOptions, ShootingProblem, StartSummary, Target,
};

use crate::error::Result;
use crate::ldp::ContractedDerivatives;
use crate::model::PdmpModel;

/// Sup norm over `samples` interior points of
/// `d/dt ∂L̂/∂ẋ − ∂L̂/∂x − (∂A/∂x)ᵀη`, with the time derivative taken by the
/// five-point central difference on the uniform sample grid.
pub fn el_residual(trajectory: &OptimalTrajectory, model: &PdmpModel, samples: usize) -> Result<f64> {
    let (d, m, mm) = (model.species(), model.slow_dim(), model.reactions());
    let calculus = el::calculus_for(model);
    let states = trajectory.sample(samples.max(5))?;
    let dt = trajectory.horizon() / (states.len() - 1) as f64;
    let mut der = ContractedDerivatives::zeros(d, m, mm);
    let mut theta = Vec::with_capacity(states.len());
    let mut rhs = Vec::with_capacity(states.len());
    let mut a_u = vec![0.0; m * m];
    let mut a_x = vec![0.0; m * d];
    for s in &states {
        calculus.derivatives(&s.xdot, &s.x, &s.u, &mut der)?;
        model.drift_jacobian(&s.u, &s.x, &mut a_u, &mut a_x);
        theta.push(der.d_xdot.clone());
        rhs.push(
            (0..d)
                .map(|i| der.d_x[i] + (0..m).map(|k| s.eta[k] * a_x[k * d + i]).sum::<f64>())
                .collect::<Vec<f64>>(),
        );
    }
    let mut worst = 0.0f64;
    for k in 2..states.len() - 2 {
        for i in 0..d {
            let dtheta = (theta[k - 2][i] - 8.0 * theta[k - 1][i] + 8.0 * theta[k + 1][i] - theta[k + 2][i]) / (12.0 * dt);
            worst = worst.max((dtheta - rhs[k][i]).abs());
        }
    }
    Ok(worst)
}
