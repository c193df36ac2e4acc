//! The flux Lagrangian minimized over fluxes compatible with a concentration
//! velocity.
//!
//! For `min Σ λ_α ℓ(ż_α/λ_α)` subject to `Σ ξ_α ż_α = ẋ`, the minimizer has
//! the exponential-family form `ż_α = λ_α exp(θ·ξ_α)`, where `θ` minimizes the
//! convex dual `φ(θ) = Σ λ_α exp(θ·ξ_α) − θ·ẋ`. `θ` is also `∂L̂/∂ẋ`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{flux_cost, ExtendedReal};
use crate::error::{Error, Result};
use crate::model::{ReactionNetwork, RATE_FLOOR};
use crate::simplex::{maximize, LpOutcome};

const MAX_NEWTON: usize = 200;
const THETA_LIMIT: f64 = 60.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ContractedSolution {
    pub value: ExtendedReal,
    /// Minimizing fluxes; all zero when the value is infinite.
    pub fluxes: Vec<f64>,
    /// Dual variable, equal to `∂L̂/∂ẋ` when the value is finite.
    pub theta: Vec<f64>,
    /// Reactions that carry positive flux at the minimizer.
    pub support: Vec<bool>,
}

/// `L̂(ẋ, x, u)` and its minimizing fluxes.
pub fn contracted_lagrangian(xdot: &[f64], x: &[f64], u: &[f64], net: &ReactionNetwork) -> Result<ContractedSolution> {
    let rates = net.rates(x, u)?;
    contract_rates(xdot, &rates, net)
}

/// [`contracted_lagrangian`] with the rates already evaluated.
pub fn contract_rates(xdot: &[f64], rates: &[f64], net: &ReactionNetwork) -> Result<ContractedSolution> {
    let d = net.species();
    let mm = net.len();
    if xdot.len() != d || rates.len() != mm {
        return Err(Error::Domain(format!(
            "expected a velocity of length {d} and {mm} rates, got {} and {}",
            xdot.len(),
            rates.len()
        )));
    }
    if let Some(i) = xdot.iter().position(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("velocity component {i} is not finite")));
    }
    let active: Vec<bool> = rates.iter().map(|&l| l > RATE_FLOOR).collect();
    if let Some(sol) = dual_newton(xdot, rates, net, &active) {
        // Vanishing fluxes mean θ is running off to infinity toward a face of
        // the cone; the LP below finds that face exactly.
        let scale = 1.0 + xdot.iter().fold(0.0f64, |s, v| s.max(v.abs()));
        if sol.1.iter().zip(&active).all(|(&q, &on)| !on || q > 1e-9 * scale) {
            return Ok(finish(sol, rates, &active));
        }
    }

    // Newton stalls when ẋ sits on a face of the cone of active reactions, or
    // outside it. The LP decides which, and which reactions can carry flux.
    let cols: Vec<usize> = (0..mm).filter(|&a| active[a]).collect();
    let a_eq: Vec<Vec<f64>> = (0..d)
        .map(|i| cols.iter().map(|&a| net.stoichiometry(a)[i] as f64).collect())
        .collect();
    let zero = vec![0.0; cols.len()];
    if matches!(maximize(&zero, &a_eq, xdot), LpOutcome::Infeasible) {
        return Ok(ContractedSolution {
            value: ExtendedReal::Infinite,
            fluxes: vec![0.0; mm],
            theta: vec![0.0; d],
            support: vec![false; mm],
        });
    }
    let scale = 1.0 + xdot.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    let mut support = vec![false; mm];
    for (k, &a) in cols.iter().enumerate() {
        let mut c = vec![0.0; cols.len()];
        c[k] = 1.0;
        support[a] = match maximize(&c, &a_eq, xdot) {
            LpOutcome::Unbounded => true,
            LpOutcome::Optimal { value, .. } => value > 1e-9 * scale,
            LpOutcome::Infeasible => false,
        };
    }
    match dual_newton(xdot, rates, net, &support) {
        Some(sol) => Ok(finish(sol, rates, &support)),
        None => Err(Error::NewtonDivergence {
            iterations: MAX_NEWTON,
            residual: f64::NAN,
        }),
    }
}

fn finish((theta, fluxes): (Vec<f64>, Vec<f64>), rates: &[f64], support: &[bool]) -> ContractedSolution {
    let mut value = 0.0;
    for (&q, &l) in fluxes.iter().zip(rates) {
        // Fluxes off the support are exactly zero, so this never fails.
        value += flux_cost(q, l).unwrap_or(0.0);
    }
    ContractedSolution {
        value: ExtendedReal::Finite(value),
        fluxes,
        theta,
        support: support.to_vec(),
    }
}

fn fluxes_at(theta: &[f64], rates: &[f64], net: &ReactionNetwork, support: &[bool], out: &mut [f64]) {
    for (a, o) in out.iter_mut().enumerate() {
        *o = if support[a] {
            let dot: f64 = net
                .stoichiometry(a)
                .iter()
                .zip(theta)
                .map(|(&s, &t)| s as f64 * t)
                .sum();
            rates[a] * dot.exp()
        } else {
            0.0
        };
    }
}

fn dual_objective(theta: &[f64], fluxes: &[f64], xdot: &[f64]) -> f64 {
    fluxes.iter().sum::<f64>() - theta.iter().zip(xdot).map(|(a, b)| a * b).sum::<f64>()
}

/// Damped Newton on the dual restricted to `support`, with a pseudo-inverse
/// step so that degenerate stoichiometry (rank below `d`) is handled.
fn dual_newton(xdot: &[f64], rates: &[f64], net: &ReactionNetwork, support: &[bool]) -> Option<(Vec<f64>, Vec<f64>)> {
    let d = xdot.len();
    let mm = rates.len();
    let mut theta = vec![0.0; d];
    let mut fluxes = vec![0.0; mm];
    let mut trial_theta = vec![0.0; d];
    let mut trial_fluxes = vec![0.0; mm];
    let mut grad = vec![0.0; d];
    fluxes_at(&theta, rates, net, support, &mut fluxes);
    let mut phi = dual_objective(&theta, &fluxes, xdot);
    let mut polished = false;

    for _ in 0..MAX_NEWTON {
        net.velocity(&fluxes, &mut grad);
        let mut scale = 1.0;
        for i in 0..d {
            grad[i] -= xdot[i];
            scale = f64::max(scale, xdot[i].abs());
        }
        scale += fluxes.iter().sum::<f64>();
        let gnorm = grad.iter().fold(0.0f64, |s, v| s.max(v.abs()));
        if gnorm <= 1e-12 * scale {
            if polished || gnorm <= 1e-15 * scale {
                return Some((theta, fluxes));
            }
            polished = true;
        }

        let mut hess = DMatrix::<f64>::zeros(d, d);
        for a in 0..mm {
            if fluxes[a] > 0.0 {
                let xi = net.stoichiometry(a);
                for i in 0..d {
                    for j in 0..d {
                        hess[(i, j)] += fluxes[a] * xi[i] as f64 * xi[j] as f64;
                    }
                }
            }
        }
        let eig = SymmetricEigen::new(hess);
        let top = eig.eigenvalues.iter().fold(0.0f64, |s, v| s.max(v.abs()));
        if top == 0.0 {
            return None;
        }
        let g = DVector::from_column_slice(&grad);
        let proj = eig.eigenvectors.transpose() * &g;
        let mut scaled = proj.clone();
        for k in 0..d {
            let ev = eig.eigenvalues[k];
            scaled[k] = if ev > 1e-14 * top { proj[k] / ev } else { 0.0 };
        }
        let step = -(&eig.eigenvectors * scaled);
        let slope: f64 = step.iter().zip(&grad).map(|(a, b)| a * b).sum();
        if polished {
            // Final full step once the residual is small; keep it only if it helps.
            for i in 0..d {
                trial_theta[i] = theta[i] + step[i];
            }
            fluxes_at(&trial_theta, rates, net, support, &mut trial_fluxes);
            let mut tg = vec![0.0; d];
            net.velocity(&trial_fluxes, &mut tg);
            let tnorm = tg.iter().zip(xdot).fold(0.0f64, |s, (a, b)| s.max((a - b).abs()));
            if tnorm <= gnorm {
                theta.copy_from_slice(&trial_theta);
                fluxes.copy_from_slice(&trial_fluxes);
            }
            return Some((theta, fluxes));
        }
        let mut s = 1.0;
        let mut tg = vec![0.0; d];
        loop {
            for i in 0..d {
                trial_theta[i] = theta[i] + s * step[i];
            }
            fluxes_at(&trial_theta, rates, net, support, &mut trial_fluxes);
            let trial_phi = dual_objective(&trial_theta, &trial_fluxes, xdot);
            if trial_phi.is_finite() && trial_phi <= phi + 1e-4 * s * slope {
                break;
            }
            // Close to the optimum the decrease of φ drops below its rounding
            // error, so a shrinking gradient is accepted instead.
            if trial_phi.is_finite() && gnorm <= 1e-6 * scale {
                net.velocity(&trial_fluxes, &mut tg);
                let tnorm = tg.iter().zip(xdot).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                if tnorm < 0.5 * gnorm {
                    break;
                }
            }
            s *= 0.5;
            if s < 1e-12 {
                return None;
            }
        }
        theta.copy_from_slice(&trial_theta);
        fluxes.copy_from_slice(&trial_fluxes);
        phi = dual_objective(&theta, &fluxes, xdot);
        if theta.iter().any(|t| t.abs() > THETA_LIMIT) {
            return None;
        }
    }
    None
}

/// Value, first and second derivatives of `L̂` at one state.
///
/// Matrices are row-major: `hessian[i*d+j] = ∂²L̂/∂ẋ_i∂ẋ_j`,
/// `mixed_x[i*d+j] = ∂²L̂/∂ẋ_i∂x_j`, `mixed_u[i*m+k] = ∂²L̂/∂ẋ_i∂u_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContractedDerivatives {
    pub value: f64,
    pub fluxes: Vec<f64>,
    pub d_xdot: Vec<f64>,
    pub d_x: Vec<f64>,
    pub d_u: Vec<f64>,
    pub hessian: Vec<f64>,
    pub mixed_x: Vec<f64>,
    pub mixed_u: Vec<f64>,
}

impl ContractedDerivatives {
    pub fn zeros(d: usize, m: usize, reactions: usize) -> Self {
        ContractedDerivatives {
            value: 0.0,
            fluxes: vec![0.0; reactions],
            d_xdot: vec![0.0; d],
            d_x: vec![0.0; d],
            d_u: vec![0.0; m],
            hessian: vec![0.0; d * d],
            mixed_x: vec![0.0; d * d],
            mixed_u: vec![0.0; d * m],
        }
    }
}

/// Source of `L̂` derivatives for the contracted Euler-Lagrange system.
pub trait ContractedCalculus: Send + Sync {
    fn derivatives(&self, xdot: &[f64], x: &[f64], u: &[f64], out: &mut ContractedDerivatives) -> Result<()>;
}

/// Derivatives of `L̂` for any network, from the dual solution.
///
/// With `ż = λ exp(θ·ξ)`: `∂L̂/∂ẋ = θ`, `∂²L̂/∂ẋ² = (Σ ż ξ ξᵀ)⁻¹`,
/// `∂L̂/∂x = Σ ∂λ (1 − ż/λ)` by the envelope theorem, and
/// `∂θ/∂x = −(Σ ż ξ ξᵀ)⁻¹ Σ ξ (ż/λ) ∂λ/∂x` from differentiating the moment
/// equations.
#[derive(Debug, Clone)]
pub struct DualCalculus {
    net: ReactionNetwork,
}

impl DualCalculus {
    pub fn new(net: ReactionNetwork) -> Self {
        DualCalculus { net }
    }
}

impl ContractedCalculus for DualCalculus {
    fn derivatives(&self, xdot: &[f64], x: &[f64], u: &[f64], out: &mut ContractedDerivatives) -> Result<()> {
        let net = &self.net;
        let d = net.species();
        let m = net.slow_dim();
        let mm = net.len();
        let rates = net.rates(x, u)?;
        let sol = contract_rates(xdot, &rates, net)?;
        let value = match sol.value {
            ExtendedReal::Finite(v) => v,
            ExtendedReal::Infinite => {
                return Err(Error::Domain(format!(
                    "velocity {xdot:?} is not reachable by the active reactions"
                )))
            }
        };
        let mut inner = DMatrix::<f64>::zeros(d, d);
        for a in 0..mm {
            let xi = net.stoichiometry(a);
            for i in 0..d {
                for j in 0..d {
                    inner[(i, j)] += sol.fluxes[a] * xi[i] as f64 * xi[j] as f64;
                }
            }
        }
        let eig = SymmetricEigen::new(inner.clone());
        let top = eig.eigenvalues.iter().fold(0.0f64, |s, v| s.max(v.abs()));
        let low = eig.eigenvalues.iter().fold(f64::INFINITY, |s, v| s.min(v.abs()));
        if !(low > 1e-13 * top) || top == 0.0 {
            return Err(Error::Stiffness {
                condition: if low > 0.0 { top / low } else { f64::INFINITY },
            });
        }
        let inv = inner.try_inverse().ok_or(Error::Stiffness {
            condition: top / low,
        })?;

        out.value = value;
        out.fluxes.copy_from_slice(&sol.fluxes);
        out.d_xdot.copy_from_slice(&sol.theta);
        out.d_x.iter_mut().for_each(|v| *v = 0.0);
        out.d_u.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..d {
            for j in 0..d {
                out.hessian[i * d + j] = inv[(i, j)];
            }
        }
        // b_x[i][j] = Σ_α ξ_α,i (ż_α/λ_α) ∂λ_α/∂x_j, likewise for u.
        let mut b_x = DMatrix::<f64>::zeros(d, d);
        let mut b_u = DMatrix::<f64>::zeros(d, m);
        let mut gx = vec![0.0; d];
        let mut gu = vec![0.0; m];
        for a in 0..mm {
            net.rate_gradient(a, x, u, &mut gx, &mut gu);
            let ratio = if rates[a] > 0.0 { sol.fluxes[a] / rates[a] } else { 0.0 };
            for j in 0..d {
                out.d_x[j] += gx[j] * (1.0 - ratio);
            }
            for k in 0..m {
                out.d_u[k] += gu[k] * (1.0 - ratio);
            }
            let xi = net.stoichiometry(a);
            for i in 0..d {
                let w = xi[i] as f64 * ratio;
                for j in 0..d {
                    b_x[(i, j)] += w * gx[j];
                }
                for k in 0..m {
                    b_u[(i, k)] += w * gu[k];
                }
            }
        }
        let mx = -(&inv * b_x);
        let mu = -(&inv * b_u);
        for i in 0..d {
            for j in 0..d {
                out.mixed_x[i * d + j] = mx[(i, j)];
            }
            for k in 0..m {
                out.mixed_u[i * m + k] = mu[(i, k)];
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ldp::flux_lagrangian;
    use proptest::prelude::*;

    fn birth() -> ReactionNetwork {
        ReactionNetwork::builder(1, 0)
            .reaction("birth", vec![1], |_, _| 1.0)
            .build()
            .unwrap()
    }

    /// Two births and one death with state-dependent rates.
    fn three_channel() -> ReactionNetwork {
        ReactionNetwork::builder(1, 1)
            .reaction("a", vec![1], |x, u| 0.5 + u[0] * (1.0 - x[0]))
            .reaction("b", vec![1], |x, _| 0.3 + x[0])
            .reaction("c", vec![-1], |x, u| 2.0 * x[0] + 0.1 * u[0])
            .build()
            .unwrap()
    }

    /// Independent species with a coupling reaction.
    fn planar() -> ReactionNetwork {
        ReactionNetwork::builder(2, 1)
            .reaction("in0", vec![1, 0], |_, u| 1.0 + u[0])
            .reaction("out0", vec![-1, 0], |x, _| 0.5 + x[0])
            .reaction("swap", vec![-1, 1], |x, u| x[0] * (1.0 + 0.2 * u[0]))
            .reaction("out1", vec![0, -1], |x, _| 0.7 * x[1] + 0.2)
            .build()
            .unwrap()
    }

    #[test]
    fn singleton_feasible_set() {
        let s = contracted_lagrangian(&[2.0], &[0.0], &[], &birth()).unwrap();
        assert!((s.value.finite().unwrap() - 0.386_294_361_119_890_6).abs() < 1e-12);
        assert!((s.fluxes[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn unreachable_velocity_is_infinite() {
        let s = contracted_lagrangian(&[-1.0], &[0.0], &[], &birth()).unwrap();
        assert_eq!(s.value, ExtendedReal::Infinite);
    }

    #[test]
    fn boundary_velocity_uses_support() {
        let s = contracted_lagrangian(&[0.0], &[0.0], &[], &birth()).unwrap();
        assert!((s.value.finite().unwrap() - 1.0).abs() < 1e-14);
        assert_eq!(s.fluxes, vec![0.0]);

        let net = ReactionNetwork::builder(2, 0)
            .reaction("e0", vec![1, 0], |_, _| 1.0)
            .reaction("e1", vec![0, 1], |_, _| 1.0)
            .build()
            .unwrap();
        let s = contracted_lagrangian(&[1.0, 0.0], &[0.0, 0.0], &[], &net).unwrap();
        assert!((s.value.finite().unwrap() - 1.0).abs() < 1e-12);
        assert!((s.fluxes[0] - 1.0).abs() < 1e-12 && s.fluxes[1] == 0.0);
    }

    #[test]
    fn rank_deficient_stoichiometry() {
        // Only x0 - x1 can change; the feasible set is one-dimensional.
        let net = ReactionNetwork::builder(2, 0)
            .reaction("fwd", vec![1, -1], |_, _| 2.0)
            .reaction("bwd", vec![-1, 1], |_, _| 0.5)
            .build()
            .unwrap();
        let s = contracted_lagrangian(&[0.5, -0.5], &[0.5, 0.5], &[], &net).unwrap();
        // ż_f − ż_b = 0.5 and ż_f ż_b = λ_f λ_b = 1
        let zb = (-0.5 + (0.25f64 + 4.0).sqrt()) / 2.0;
        assert!((s.fluxes[1] - zb).abs() < 1e-10);
        assert!((s.fluxes[0] - zb - 0.5).abs() < 1e-10);
        let off = contracted_lagrangian(&[0.5, 0.5], &[0.5, 0.5], &[], &net).unwrap();
        assert_eq!(off.value, ExtendedReal::Infinite);
    }

    #[test]
    fn value_matches_flux_lagrangian_and_scan() {
        let net = three_channel();
        let (x, u) = ([0.4], [1.3]);
        for &xdot in &[-1.5, -0.2, 0.0, 0.7, 2.5] {
            let s = contracted_lagrangian(&[xdot], &x, &u, &net).unwrap();
            let v = s.value.finite().unwrap();
            let direct = flux_lagrangian(&s.fluxes, &x, &u, &net).unwrap().finite().unwrap();
            assert!((v - direct).abs() < 1e-12);
            let mut q = [0.0; 3];
            net.velocity(&s.fluxes, &mut q[..1]);
            assert!((q[0] - xdot).abs() < 1e-12);
            // dense scan over (ż_a, ż_b) with ż_c closing the balance
            let mut best = f64::INFINITY;
            let steps = 400;
            for i in 0..=steps {
                for j in 0..=steps {
                    let za = 4.0 * i as f64 / steps as f64;
                    let zb = 4.0 * j as f64 / steps as f64;
                    let zc = za + zb - xdot;
                    if zc < 0.0 {
                        continue;
                    }
                    let c = flux_lagrangian(&[za, zb, zc], &x, &u, &net).unwrap().finite().unwrap();
                    best = best.min(c);
                }
            }
            assert!(v <= best + 1e-8, "xdot {xdot}: {v} vs scan {best}");
        }
    }

    fn fd_check(net: &ReactionNetwork, xdot: &[f64], x: &[f64], u: &[f64]) {
        let d = x.len();
        let m = u.len();
        let calc = DualCalculus::new(net.clone());
        let mut out = ContractedDerivatives::zeros(d, m, net.len());
        calc.derivatives(xdot, x, u, &mut out).unwrap();
        let value = |xd: &[f64], xx: &[f64], uu: &[f64]| contracted_lagrangian(xd, xx, uu, net).unwrap().value.finite().unwrap();
        let grad = |xd: &[f64], xx: &[f64], uu: &[f64]| {
            let mut o = ContractedDerivatives::zeros(d, m, net.len());
            calc.derivatives(xd, xx, uu, &mut o).unwrap();
            o.d_xdot
        };
        let h = 1e-5;
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-6 * a.abs().max(b.abs()) + 1e-8;
        for i in 0..d {
            let mut p = xdot.to_vec();
            let mut q = xdot.to_vec();
            p[i] += h;
            q[i] -= h;
            let fd = (value(&p, x, u) - value(&q, x, u)) / (2.0 * h);
            assert!(close(out.d_xdot[i], fd), "d_xdot {i}: {} vs {fd}", out.d_xdot[i]);
            let (gp, gq) = (grad(&p, x, u), grad(&q, x, u));
            for j in 0..d {
                let fd = (gp[j] - gq[j]) / (2.0 * h);
                assert!(close(out.hessian[j * d + i], fd), "hessian {j},{i}");
            }
            let mut p = x.to_vec();
            let mut q = x.to_vec();
            p[i] += h;
            q[i] -= h;
            let fd = (value(xdot, &p, u) - value(xdot, &q, u)) / (2.0 * h);
            assert!(close(out.d_x[i], fd), "d_x {i}: {} vs {fd}", out.d_x[i]);
            let (gp, gq) = (grad(xdot, &p, u), grad(xdot, &q, u));
            for j in 0..d {
                let fd = (gp[j] - gq[j]) / (2.0 * h);
                assert!(close(out.mixed_x[j * d + i], fd), "mixed_x {j},{i}");
            }
        }
        for k in 0..m {
            let mut p = u.to_vec();
            let mut q = u.to_vec();
            p[k] += h;
            q[k] -= h;
            let fd = (value(xdot, x, &p) - value(xdot, x, &q)) / (2.0 * h);
            assert!(close(out.d_u[k], fd), "d_u {k}: {} vs {fd}", out.d_u[k]);
            let (gp, gq) = (grad(xdot, x, &p), grad(xdot, x, &q));
            for j in 0..d {
                let fd = (gp[j] - gq[j]) / (2.0 * h);
                assert!(close(out.mixed_u[j * m + k], fd), "mixed_u {j},{k}");
            }
        }
    }

    #[test]
    fn dual_derivatives_match_finite_differences() {
        fd_check(&three_channel(), &[0.8], &[0.4], &[1.3]);
        fd_check(&three_channel(), &[-0.6], &[0.25], &[0.7]);
        fd_check(&planar(), &[0.3, -0.2], &[0.6, 0.4], &[0.9]);
    }

    proptest! {
        #[test]
        fn convex_in_velocity(a in -3.0f64..3.0, b in -3.0f64..3.0, x in 0.05f64..0.95, u in 0.1f64..3.0) {
            let net = three_channel();
            let f = |v: f64| contracted_lagrangian(&[v], &[x], &[u], &net).unwrap().value.finite().unwrap();
            prop_assert!(f(0.5 * (a + b)) <= 0.5 * (f(a) + f(b)) + 1e-10);
        }

        #[test]
        fn planar_minimizer_is_feasible(v0 in -2.0f64..2.0, v1 in -2.0f64..2.0) {
            let net = planar();
            let s = contracted_lagrangian(&[v0, v1], &[0.5, 0.5], &[1.0], &net).unwrap();
            let mut q = [0.0; 2];
            net.velocity(&s.fluxes, &mut q);
            prop_assert!((q[0] - v0).abs() < 1e-10 && (q[1] - v1).abs() < 1e-10);
            prop_assert!(s.fluxes.iter().all(|&f| f >= 0.0));
        }
    }
}
