//! Right-hand sides of the Euler-Lagrange systems.
//!
//! Both forms come from stationarity of `∫ L + η·(A(u, x) − u̇) dt`. The
//! multiplier obeys `η̇ = −∂L/∂u − (∂A/∂u)ᵀη` in either form; the forms differ
//! in the second-order equation for the path itself.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::ldp::{ell_unchecked, ContractedCalculus, ContractedDerivatives, DualCalculus};
use crate::model::{PdmpModel, RATE_FLOOR};

/// Time derivative of an Euler-Lagrange state.
///
/// `position` is `ẋ` (contracted form) or `ż` (flux form), `velocity` the
/// corresponding acceleration.
#[derive(Debug, Clone, PartialEq)]
pub struct ElDerivative {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    pub u: Vec<f64>,
    pub eta: Vec<f64>,
    /// Lagrangian at the state.
    pub lagrangian: f64,
    /// Optimal fluxes `ż` at the state.
    pub fluxes: Vec<f64>,
}

/// The calculus registered on the model, or the generic dual one.
pub(crate) fn calculus_for(model: &PdmpModel) -> Arc<dyn ContractedCalculus> {
    match model.calculus() {
        Some(c) => Arc::clone(c),
        None => Arc::new(DualCalculus::new(model.network().clone())),
    }
}

/// Reusable buffers for the contracted system on a flat state
/// `[x (d), ẋ (d), u (m), η (m)]`.
pub(crate) struct ContractedRhs<'a> {
    model: &'a PdmpModel,
    calculus: Arc<dyn ContractedCalculus>,
    der: ContractedDerivatives,
    a: Vec<f64>,
    a_u: Vec<f64>,
    a_x: Vec<f64>,
    rhs: Vec<f64>,
}

impl<'a> ContractedRhs<'a> {
    pub(crate) fn new(model: &'a PdmpModel) -> Self {
        let (d, m, mm) = (model.species(), model.slow_dim(), model.reactions());
        ContractedRhs {
            model,
            calculus: calculus_for(model),
            der: ContractedDerivatives::zeros(d, m, mm),
            a: vec![0.0; m],
            a_u: vec![0.0; m * m],
            a_x: vec![0.0; m * d],
            rhs: vec![0.0; d],
        }
    }

    pub(crate) fn derivatives(&self) -> &ContractedDerivatives {
        &self.der
    }

    /// Fill `dy` with the derivative of the flat state and return `L̂`.
    pub(crate) fn eval(&mut self, y: &[f64], dy: &mut [f64]) -> Result<f64> {
        let (d, m) = (self.model.species(), self.model.slow_dim());
        let (x, rest) = y.split_at(d);
        let (v, rest) = rest.split_at(d);
        let (u, eta) = rest.split_at(m);
        let eta = &eta[..m];
        self.calculus.derivatives(v, x, u, &mut self.der)?;
        self.model.drift(u, x, &mut self.a);
        self.model.drift_jacobian(u, x, &mut self.a_u, &mut self.a_x);
        let der = &self.der;
        for i in 0..d {
            let mut r = der.d_x[i];
            for k in 0..m {
                r += eta[k] * self.a_x[k * d + i];
                r -= der.mixed_u[i * m + k] * self.a[k];
            }
            for j in 0..d {
                r -= der.mixed_x[i * d + j] * v[j];
            }
            self.rhs[i] = r;
        }
        dy[..d].copy_from_slice(v);
        solve_hessian(&der.hessian, &self.rhs, &mut dy[d..2 * d])?;
        dy[2 * d..2 * d + m].copy_from_slice(&self.a);
        for j in 0..m {
            let mut s = -der.d_u[j];
            for k in 0..m {
                s -= eta[k] * self.a_u[k * m + j];
            }
            dy[2 * d + m + j] = s;
        }
        Ok(der.value)
    }
}

fn solve_hessian(h: &[f64], rhs: &[f64], out: &mut [f64]) -> Result<()> {
    let d = rhs.len();
    if d == 1 {
        if !(h[0] > 0.0) || !h[0].is_finite() {
            return Err(Error::Stiffness { condition: f64::INFINITY });
        }
        out[0] = rhs[0] / h[0];
        return Ok(());
    }
    let mat = DMatrix::from_row_slice(d, d, h);
    let eig = SymmetricEigen::new(mat.clone());
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &v| a.min(v));
    if !(min > 1e-13 * max) {
        return Err(Error::Stiffness {
            condition: if min > 0.0 { max / min } else { f64::INFINITY },
        });
    }
    let sol = mat
        .cholesky()
        .ok_or(Error::Stiffness { condition: max / min })?
        .solve(&DVector::from_column_slice(rhs));
    out.copy_from_slice(sol.as_slice());
    Ok(())
}

/// Reusable buffers for the flux system on a flat state
/// `[z (M), ż (M), u (m), η (m)]`.
pub(crate) struct FluxRhs<'a> {
    model: &'a PdmpModel,
    x: Vec<f64>,
    xdot: Vec<f64>,
    rates: Vec<f64>,
    grad_x: Vec<f64>,
    grad_u: Vec<f64>,
    a: Vec<f64>,
    a_u: Vec<f64>,
    a_x: Vec<f64>,
    g: Vec<f64>,
}

impl<'a> FluxRhs<'a> {
    pub(crate) fn new(model: &'a PdmpModel) -> Self {
        let (d, m, mm) = (model.species(), model.slow_dim(), model.reactions());
        FluxRhs {
            model,
            x: vec![0.0; d],
            xdot: vec![0.0; d],
            rates: vec![0.0; mm],
            grad_x: vec![0.0; mm * d],
            grad_u: vec![0.0; mm * m],
            a: vec![0.0; m],
            a_u: vec![0.0; m * m],
            a_x: vec![0.0; m * d],
            g: vec![0.0; d],
        }
    }

    pub(crate) fn eval(&mut self, y: &[f64], dy: &mut [f64]) -> Result<f64> {
        let net = self.model.network();
        let (d, m, mm) = (net.species(), net.slow_dim(), net.len());
        let (z, rest) = y.split_at(mm);
        let (zd, rest) = rest.split_at(mm);
        let (u, eta) = rest.split_at(m);
        let eta = &eta[..m];
        net.concentration(self.model.x0(), z, &mut self.x);
        net.velocity(zd, &mut self.xdot);
        let x = &self.x;
        let mut value = 0.0;
        for alpha in 0..mm {
            let l = net.intensity(alpha, x, u)?;
            if l <= RATE_FLOOR {
                return Err(Error::Singularity {
                    reaction: alpha,
                    reason: format!("rate {l:e} at or below the floor"),
                });
            }
            if !(zd[alpha] > RATE_FLOOR) {
                return Err(Error::Singularity {
                    reaction: alpha,
                    reason: format!("flux {:e} at or below the floor", zd[alpha]),
                });
            }
            self.rates[alpha] = l;
            value += l * ell_unchecked(zd[alpha] / l);
            net.rate_gradient(
                alpha,
                x,
                u,
                &mut self.grad_x[alpha * d..(alpha + 1) * d],
                &mut self.grad_u[alpha * m..(alpha + 1) * m],
            );
        }
        self.model.drift(u, x, &mut self.a);
        self.model.drift_jacobian(u, x, &mut self.a_u, &mut self.a_x);
        // g = ∂L/∂x + (∂A/∂x)ᵀ η
        for i in 0..d {
            let mut s = 0.0;
            for beta in 0..mm {
                s += self.grad_x[beta * d + i] * (1.0 - zd[beta] / self.rates[beta]);
            }
            for k in 0..m {
                s += eta[k] * self.a_x[k * d + i];
            }
            self.g[i] = s;
        }
        dy[..mm].copy_from_slice(zd);
        for alpha in 0..mm {
            let mut ldot = 0.0;
            for i in 0..d {
                ldot += self.grad_x[alpha * d + i] * self.xdot[i];
            }
            for k in 0..m {
                ldot += self.grad_u[alpha * m + k] * self.a[k];
            }
            let xi = net.stoichiometry(alpha);
            let mut s = ldot / self.rates[alpha];
            for i in 0..d {
                s += f64::from(xi[i]) * self.g[i];
            }
            dy[mm + alpha] = zd[alpha] * s;
        }
        dy[2 * mm..2 * mm + m].copy_from_slice(&self.a);
        for j in 0..m {
            let mut s = 0.0;
            for beta in 0..mm {
                s -= self.grad_u[beta * m + j] * (1.0 - zd[beta] / self.rates[beta]);
            }
            for k in 0..m {
                s -= eta[k] * self.a_u[k * m + j];
            }
            dy[2 * mm + m + j] = s;
        }
        Ok(value)
    }
}

/// A point of an Euler-Lagrange trajectory.
///
/// The flux form also carries `z` and `ż`; there `x` and `ẋ` must be the
/// images `x0 + Σ ξ z` and `Σ ξ ż`.
#[derive(Debug, Clone, PartialEq)]
pub struct ELState {
    pub t: f64,
    pub x: Vec<f64>,
    pub xdot: Vec<f64>,
    pub u: Vec<f64>,
    pub eta: Vec<f64>,
    pub z: Option<Vec<f64>>,
    pub zdot: Option<Vec<f64>>,
}

impl ELState {
    fn check(&self, model: &PdmpModel) -> Result<()> {
        let (d, m) = (model.species(), model.slow_dim());
        if self.x.len() != d || self.xdot.len() != d || self.u.len() != m || self.eta.len() != m {
            return Err(Error::Domain("Euler-Lagrange state has the wrong dimensions".into()));
        }
        let finite = self
            .x
            .iter()
            .chain(&self.xdot)
            .chain(&self.u)
            .chain(&self.eta)
            .chain(self.z.iter().flatten())
            .chain(self.zdot.iter().flatten())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Domain("Euler-Lagrange state is not finite".into()));
        }
        Ok(())
    }
}

/// `(ż, z̈, u̇, η̇)` of the flux-form system.
///
/// `z̈_α = ż_α [λ̇_α/λ_α + Σ_i ξ^i_α (∂L/∂x_i + Σ_k η_k ∂A_k/∂x_i)]`.
pub fn assemble_flux_el_rhs(state: &ELState, model: &PdmpModel) -> Result<ElDerivative> {
    state.check(model)?;
    let (m, mm) = (model.slow_dim(), model.reactions());
    let (z, zd) = match (&state.z, &state.zdot) {
        (Some(z), Some(zd)) if z.len() == mm && zd.len() == mm => (z, zd),
        _ => return Err(Error::Domain("flux form needs z and ż for every reaction".into())),
    };
    let mut y = Vec::with_capacity(2 * mm + 2 * m);
    y.extend_from_slice(z);
    y.extend_from_slice(zd);
    y.extend_from_slice(&state.u);
    y.extend_from_slice(&state.eta);
    let mut dy = vec![0.0; y.len()];
    let mut rhs = FluxRhs::new(model);
    let lagrangian = rhs.eval(&y, &mut dy)?;
    Ok(ElDerivative {
        position: dy[..mm].to_vec(),
        velocity: dy[mm..2 * mm].to_vec(),
        u: dy[2 * mm..2 * mm + m].to_vec(),
        eta: dy[2 * mm + m..].to_vec(),
        lagrangian,
        fluxes: zd.clone(),
    })
}

/// `(ẋ, ẍ, u̇, η̇)` of the contracted system.
///
/// `ẍ` solves `∂²L̂/∂ẋ² ẍ = ∂L̂/∂x + (∂A/∂x)ᵀη − ∂²L̂/∂ẋ∂x ẋ − ∂²L̂/∂ẋ∂u A`.
pub fn assemble_contracted_el_rhs(state: &ELState, model: &PdmpModel) -> Result<ElDerivative> {
    state.check(model)?;
    let (d, m) = (model.species(), model.slow_dim());
    let mut y = Vec::with_capacity(2 * d + 2 * m);
    y.extend_from_slice(&state.x);
    y.extend_from_slice(&state.xdot);
    y.extend_from_slice(&state.u);
    y.extend_from_slice(&state.eta);
    let mut dy = vec![0.0; y.len()];
    let mut rhs = ContractedRhs::new(model);
    let lagrangian = rhs.eval(&y, &mut dy)?;
    Ok(ElDerivative {
        position: dy[..d].to_vec(),
        velocity: dy[d..2 * d].to_vec(),
        u: dy[2 * d..2 * d + m].to_vec(),
        eta: dy[2 * d + m..].to_vec(),
        lagrangian,
        fluxes: rhs.derivatives().fluxes.clone(),
    })
}
