//! Stochastic calcium-channel model.
//!
//! A population of `N` channels opens and closes: closing fires at rate
//! `α₋₁ x` and opening at `α₁ u₁ (1 − x)`, where `x` is the open fraction and
//! `u₁` the cytosolic calcium. Calcium flows through open channels from the
//! store `u₂`, is pumped back by SERCA and leaks:
//!
//! ```text
//! du₁/dt = k_f x (u₂ − u₁) − V_s u₁² / (K_s² + u₁²) + k_leak (u₂ − u₁)
//! du₂/dt = −γ du₁/dt
//! ```
//!
//! so `γ u₁ + u₂` is conserved. With one species and two opposite reactions
//! the contracted Lagrangian has a closed form, which is registered on the
//! model so the Euler-Lagrange solver uses it.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ldp::{ell_unchecked, ContractedCalculus, ContractedDerivatives, ExtendedReal};
use crate::model::{LinearInvariant, PdmpModel, ReactionNetwork, RATE_FLOOR};
use crate::optimal_path::{el_residual, hitting_exponent_with, OptimalTrajectory, ShootingOptions, ShootingProblem};
use crate::simulate::{fixed_point, simulate_ensemble, FixedPoint, SimulationOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalciumParams {
    /// Channel flux coefficient.
    pub k_f: f64,
    /// Maximal SERCA pump rate.
    pub v_s: f64,
    /// SERCA half-saturation concentration.
    pub k_s: f64,
    pub k_leak: f64,
    /// Volume ratio between cytosol and store.
    pub gamma: f64,
    /// Opening rate per unit calcium, `α₁`.
    pub alpha_open: f64,
    /// Closing rate, `α₋₁`.
    pub alpha_close: f64,
    /// Conserved total `γ u₁ + u₂`.
    pub c_total: f64,
    /// Number of channels `N`.
    pub n: u64,
    pub horizon: f64,
    pub x_target: f64,
    /// Initial open fraction.
    pub x_init: f64,
    /// Initial cytosolic calcium; the store starts at `c_total − γ u₁`.
    pub u1_init: f64,
}

impl Default for CalciumParams {
    fn default() -> Self {
        CalciumParams {
            k_f: 1.0,
            v_s: 0.9,
            k_s: 0.2,
            k_leak: 0.05,
            gamma: 5.0,
            alpha_open: 2.0,
            alpha_close: 1.0,
            c_total: 10.0,
            n: 1000,
            horizon: 10.0,
            x_target: 0.9,
            x_init: 0.5,
            u1_init: 1.2,
        }
    }
}

impl CalciumParams {
    /// Check parameter ranges, listing every violation.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let positive = [
            ("k_f", self.k_f),
            ("v_s", self.v_s),
            ("k_s", self.k_s),
            ("k_leak", self.k_leak),
            ("gamma", self.gamma),
            ("alpha_open", self.alpha_open),
            ("alpha_close", self.alpha_close),
            ("c_total", self.c_total),
            ("horizon", self.horizon),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                problems.push(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if self.n == 0 {
            problems.push("n must be a positive integer".into());
        }
        if !(self.x_target > 0.0 && self.x_target <= 1.0) {
            problems.push(format!("x_target must lie in (0, 1], got {}", self.x_target));
        }
        if !(self.x_init >= 0.0 && self.x_init <= 1.0) {
            problems.push(format!("x_init must lie in [0, 1], got {}", self.x_init));
        }
        if !(self.u1_init >= 0.0) || !self.u1_init.is_finite() {
            problems.push(format!("u1_init must be finite and nonnegative, got {}", self.u1_init));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    /// `V_s u₁² / (K_s² + u₁²)`.
    pub fn serca(&self, u1: f64) -> f64 {
        self.v_s * u1 * u1 / (self.k_s * self.k_s + u1 * u1)
    }

    fn serca_derivative(&self, u1: f64) -> f64 {
        let k2 = self.k_s * self.k_s;
        let den = k2 + u1 * u1;
        self.v_s * 2.0 * u1 * k2 / (den * den)
    }

    /// `du₁/dt` at `(u₁, u₂, x)`.
    pub fn cytosol_drift(&self, u1: f64, u2: f64, x: f64) -> f64 {
        self.k_f * x * (u2 - u1) - self.serca(u1) + self.k_leak * (u2 - u1)
    }

    pub fn close_rate(&self, x: f64) -> f64 {
        self.alpha_close * x
    }

    pub fn open_rate(&self, x: f64, u1: f64) -> f64 {
        self.alpha_open * u1 * (1.0 - x)
    }

    /// Asserted uniform rate bound: `u₁` stays below `c_total` on physical states.
    pub fn rate_bound(&self) -> f64 {
        self.alpha_close.max(self.alpha_open * self.c_total)
    }
}

/// Store calcium from the conservation law, with a physicality flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StoreCalcium {
    pub u2: f64,
    /// False when `u₂ < 0`; the algebra still holds but the state is unphysical.
    pub physical: bool,
}

/// `u₂ = c_total − γ u₁`.
pub fn reduce_u2(params: &CalciumParams, u1: f64) -> StoreCalcium {
    let u2 = params.c_total - params.gamma * u1;
    StoreCalcium { u2, physical: u2 >= 0.0 }
}

fn channel_network(p: &CalciumParams, slow_dim: usize) -> Result<ReactionNetwork> {
    let (pc, po, pg, pgo) = (p.clone(), p.clone(), p.clone(), p.clone());
    ReactionNetwork::builder(1, slow_dim)
        .reaction_with_gradient(
            "close",
            vec![-1],
            move |x, _| pc.close_rate(x[0]),
            move |_, _, dx, du| {
                dx[0] = pg.alpha_close;
                du.iter_mut().for_each(|v| *v = 0.0);
            },
        )
        .reaction_with_gradient(
            "open",
            vec![1],
            move |x, u| po.open_rate(x[0], u[0]),
            move |x, u, dx, du| {
                dx[0] = -pgo.alpha_open * u[0];
                du.iter_mut().for_each(|v| *v = 0.0);
                du[0] = pgo.alpha_open * (1.0 - x[0]);
            },
        )
        .rate_bound(p.rate_bound())
        .build()
}

/// The model with both calcium pools as slow variables (`m = 2`).
pub fn calcium_model(params: &CalciumParams) -> Result<PdmpModel> {
    params.validate()?;
    let net = channel_network(params, 2)?;
    let (pd, pj) = (params.clone(), params.clone());
    let u0 = vec![params.u1_init, reduce_u2(params, params.u1_init).u2];
    let model = PdmpModel::new(
        net,
        move |u, x, a| {
            let a1 = pd.cytosol_drift(u[0], u[1], x[0]);
            a[0] = a1;
            a[1] = -pd.gamma * a1;
        },
        vec![params.x_init],
        u0,
        params.n,
    )?
    .named("calcium")
    .with_drift_jacobian(move |u, x, du, dx| {
        let d_u1 = -pj.k_f * x[0] - pj.serca_derivative(u[0]) - pj.k_leak;
        let d_u2 = pj.k_f * x[0] + pj.k_leak;
        let d_x = pj.k_f * (u[1] - u[0]);
        du[0] = d_u1;
        du[1] = d_u2;
        du[2] = -pj.gamma * d_u1;
        du[3] = -pj.gamma * d_u2;
        dx[0] = d_x;
        dx[1] = -pj.gamma * d_x;
    })
    .with_invariant(LinearInvariant {
        x_weights: vec![0.0],
        u_weights: vec![params.gamma, 1.0],
    })?
    .with_calculus(Arc::new(CalciumCalculus { params: params.clone() }));
    Ok(model)
}

/// The model after eliminating `u₂ = c_total − γ u₁` (`m = 1`).
pub fn calcium_model_reduced(params: &CalciumParams) -> Result<PdmpModel> {
    params.validate()?;
    let net = channel_network(params, 1)?;
    let (pd, pj) = (params.clone(), params.clone());
    let model = PdmpModel::new(
        net,
        move |u, x, a| {
            let u2 = pd.c_total - pd.gamma * u[0];
            a[0] = pd.cytosol_drift(u[0], u2, x[0]);
        },
        vec![params.x_init],
        vec![params.u1_init],
        params.n,
    )?
    .named("calcium-reduced")
    .with_drift_jacobian(move |u, x, du, dx| {
        let u2 = pj.c_total - pj.gamma * u[0];
        let d_u1 = -pj.k_f * x[0] - pj.serca_derivative(u[0]) - pj.k_leak;
        let d_u2 = pj.k_f * x[0] + pj.k_leak;
        du[0] = d_u1 - pj.gamma * d_u2;
        dx[0] = pj.k_f * (u2 - u[0]);
    })
    .with_calculus(Arc::new(CalciumCalculus { params: params.clone() }));
    Ok(model)
}

/// Minimizing closing flux for velocity `ẋ`: the nonnegative root of
/// `ż₁ (ẋ + ż₁) = λ₁ λ₂`, evaluated without cancellation.
pub fn z1dot_quadratic(xdot: f64, lambda1: f64, lambda2: f64) -> Result<f64> {
    if !xdot.is_finite() || !(lambda1 >= 0.0) || !(lambda2 >= 0.0) {
        return Err(Error::Domain(format!(
            "invalid arguments: xdot {xdot}, rates ({lambda1}, {lambda2})"
        )));
    }
    if lambda1 <= RATE_FLOOR && lambda2 <= RATE_FLOOR && xdot != 0.0 {
        return Err(Error::Domain(format!(
            "velocity {xdot} is infeasible with both rates at the floor"
        )));
    }
    let p = lambda1 * lambda2;
    if p == 0.0 {
        return Ok((-xdot).max(0.0));
    }
    let root = (xdot * xdot + 4.0 * p).sqrt();
    Ok(if xdot >= 0.0 { 2.0 * p / (xdot + root) } else { 0.5 * (root - xdot) })
}

/// Closed-form contracted Lagrangian and its derivatives.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalciumDerivatives {
    pub lhat: f64,
    pub z1dot: f64,
    pub z2dot: f64,
    /// `∂L̂/∂ẋ = log(ż₂/λ₂)`.
    pub d_xdot: f64,
    /// `∂ż₁/∂ẋ = −ż₁/(2ż₁ + ẋ)`.
    pub dz1_dxdot: f64,
    /// `∂²ż₁/∂ẋ² = 2ż₁(ż₁ + ẋ)/(2ż₁ + ẋ)³`.
    pub d2z1_dxdot2: f64,
    /// `∂²L̂/∂ẋ² = 1/(2ż₁ + ẋ)`.
    pub d2_xdot2: f64,
    pub d2_xdot_x: f64,
    /// One entry per slow variable; only `u₁` enters the rates.
    pub d2_xdot_u: Vec<f64>,
    pub d_x: f64,
    pub d_u: Vec<f64>,
}

/// Evaluate [`CalciumDerivatives`] at `(ẋ, x, u)`; `u` holds `u₁` first and
/// may also carry `u₂`.
pub fn calcium_lagrangian_derivatives(xdot: f64, x: f64, u: &[f64], params: &CalciumParams) -> Result<CalciumDerivatives> {
    let l1 = params.close_rate(x);
    let l2 = params.open_rate(x, u[0]);
    if l1 <= RATE_FLOOR || l2 <= RATE_FLOOR {
        let reaction = if l1 <= RATE_FLOOR { 0 } else { 1 };
        return Err(Error::Singularity {
            reaction,
            reason: format!("rate at or below the floor (λ₁ = {l1}, λ₂ = {l2})"),
        });
    }
    let z1 = z1dot_quadratic(xdot, l1, l2)?;
    let z2 = l1 * l2 / z1;
    let denom = z1 + z2;
    if !(denom > 1e-12) {
        return Err(Error::Singularity {
            reaction: 0,
            reason: format!("2ż₁ + ẋ = {denom} is degenerate"),
        });
    }
    let dz1 = -z1 / denom;
    let d2z1 = 2.0 * z1 * z2 / (denom * denom * denom);
    // rate partials: λ₁ = α₋₁ x, λ₂ = α₁ u₁ (1 − x)
    let l1_x = params.alpha_close;
    let l2_x = -params.alpha_open * u[0];
    let l2_u1 = params.alpha_open * (1.0 - x);
    let mut d2_xdot_u = vec![0.0; u.len()];
    d2_xdot_u[0] = -(l2_u1 / l2) * (1.0 + dz1);
    let mut d_u = vec![0.0; u.len()];
    d_u[0] = l2_u1 * (1.0 - z2 / l2);
    Ok(CalciumDerivatives {
        lhat: l1 * ell_unchecked(z1 / l1) + l2 * ell_unchecked(z2 / l2),
        z1dot: z1,
        z2dot: z2,
        d_xdot: (z2 / l2).ln(),
        dz1_dxdot: dz1,
        d2z1_dxdot2: d2z1,
        d2_xdot2: 1.0 / denom,
        d2_xdot_x: -(l1_x / l1) * dz1 - (l2_x / l2) * (1.0 + dz1),
        d2_xdot_u,
        d_x: l1_x * (1.0 - z1 / l1) + l2_x * (1.0 - z2 / l2),
        d_u,
    })
}

/// Closed-form `L̂` for the Euler-Lagrange solver.
#[derive(Debug, Clone)]
pub struct CalciumCalculus {
    pub params: CalciumParams,
}

impl ContractedCalculus for CalciumCalculus {
    fn derivatives(&self, xdot: &[f64], x: &[f64], u: &[f64], out: &mut ContractedDerivatives) -> Result<()> {
        let c = calcium_lagrangian_derivatives(xdot[0], x[0], u, &self.params)?;
        out.value = c.lhat;
        out.fluxes[0] = c.z1dot;
        out.fluxes[1] = c.z2dot;
        out.d_xdot[0] = c.d_xdot;
        out.d_x[0] = c.d_x;
        out.d_u.copy_from_slice(&c.d_u);
        out.hessian[0] = c.d2_xdot2;
        out.mixed_x[0] = c.d2_xdot_x;
        out.mixed_u.copy_from_slice(&c.d2_xdot_u);
        Ok(())
    }
}

/// `L̂` from the closed form, `+∞` when the velocity is unreachable.
pub fn calcium_lhat(xdot: f64, x: f64, u1: f64, params: &CalciumParams) -> Result<ExtendedReal> {
    let l1 = params.close_rate(x);
    let l2 = params.open_rate(x, u1);
    let z1 = match z1dot_quadratic(xdot, l1, l2) {
        Ok(z) => z,
        Err(_) => return Ok(ExtendedReal::Infinite),
    };
    let z2 = xdot + z1;
    match (crate::ldp::flux_cost(z1, l1), crate::ldp::flux_cost(z2.max(0.0), l2)) {
        (Some(a), Some(b)) => Ok(ExtendedReal::Finite(a + b)),
        _ => Ok(ExtendedReal::Infinite),
    }
}

/// Where the optimal path and the Monte Carlo runs start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaveStart {
    /// The fluid-limit fixed point `(x*, u*)`.
    FixedPoint,
    /// `(x_init, u1_init)` from the parameters.
    Initial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MonteCarloOptions {
    /// Channel counts `N` to simulate.
    pub sizes: Vec<u64>,
    pub trials: u64,
    pub seed: u64,
}

impl Default for MonteCarloOptions {
    fn default() -> Self {
        MonteCarloOptions {
            sizes: vec![20, 40, 80],
            trials: 100_000,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WaveOptions {
    pub start: WaveStart,
    pub shooting: ShootingOptions,
    /// Monte Carlo validation of the exponent; skipped when absent.
    pub monte_carlo: Option<MonteCarloOptions>,
}

impl Default for WaveOptions {
    fn default() -> Self {
        WaveOptions {
            start: WaveStart::FixedPoint,
            shooting: ShootingOptions::default(),
            monte_carlo: None,
        }
    }
}

/// One Monte Carlo estimate of `P(x(T) ≥ x̂)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloRow {
    #[serde(rename = "N")]
    pub n: u64,
    pub trials: u64,
    pub hits: u64,
    pub probability: f64,
    #[serde(rename = "minus_logP_over_N")]
    pub minus_log_p_over_n: ExtendedReal,
}

#[derive(Debug, Clone, Serialize)]
pub struct WaveReport {
    pub params: CalciumParams,
    pub fixed_point: FixedPoint,
    pub x_start: f64,
    pub u_start: Vec<f64>,
    pub horizon: f64,
    pub x_target: f64,
    #[serde(rename = "J_star")]
    pub j_star: f64,
    /// `N J*` at the configured `N`.
    pub exponent: f64,
    pub residual: f64,
    pub el_residual: f64,
    pub start_index: usize,
    /// Filled in by whoever writes the trajectory to disk.
    pub trajectory_files: Vec<String>,
    pub monte_carlo: Vec<MonteCarloRow>,
    /// Least-squares slope of `−log P̂` against `N` over rows with hits.
    pub monte_carlo_slope: Option<f64>,
    #[serde(skip)]
    pub trajectory: OptimalTrajectory,
}

/// Least-squares slope of `y` against `x`; `None` with fewer than two points.
pub fn least_squares_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Spark-to-wave transition: fixed point, optimal path to `x̂`, its
/// exponent, and optionally Monte Carlo estimates of `P(x(T) ≥ x̂)`.
pub fn wave_transition_experiment(params: &CalciumParams, options: &WaveOptions) -> Result<WaveReport> {
    let model = calcium_model(params).map_err(Error::stage("model"))?;
    let fp = fixed_point(&model, model.x0(), model.u0()).map_err(Error::stage("fixed point"))?;
    if params.x_target < fp.x[0] - 1e-9 {
        return Err(Error::stage("fixed point")(Error::Domain(format!(
            "x_target {} lies below the fixed point x* = {}",
            params.x_target, fp.x[0]
        ))));
    }
    let (x_start, u_start) = match options.start {
        WaveStart::FixedPoint => (fp.x[0], fp.u.clone()),
        WaveStart::Initial => (params.x_init, model.u0().to_vec()),
    };
    let model = model
        .with_initial_state(vec![x_start], u_start.clone())
        .map_err(Error::stage("model"))?;
    let problem = ShootingProblem::concentration(&model, vec![params.x_target], params.horizon)
        .with_options(options.shooting.clone());
    let hit = hitting_exponent_with(&problem).map_err(Error::stage("optimal path"))?;
    let el = el_residual(&hit.trajectory, &model, 2001).map_err(Error::stage("optimal path"))?;

    let mut monte_carlo = Vec::new();
    if let Some(mc) = &options.monte_carlo {
        let target = params.x_target;
        for &n in &mc.sizes {
            let scaled = model.clone().with_scale(n).map_err(Error::stage("monte carlo"))?;
            let report = simulate_ensemble(
                &scaled,
                params.horizon,
                mc.trials,
                mc.seed,
                |p| p.terminal.x[0] >= target - 1e-12,
                &SimulationOptions::terminal_only(),
            )
            .map_err(Error::stage("monte carlo"))?;
            monte_carlo.push(MonteCarloRow {
                n,
                trials: report.trajectories,
                hits: report.hits,
                probability: report.probability,
                minus_log_p_over_n: report.minus_log_p_over_n,
            });
        }
    }
    let points: Vec<(f64, f64)> = monte_carlo
        .iter()
        .filter(|r| r.hits > 0)
        .map(|r| (r.n as f64, -r.probability.ln()))
        .collect();
    Ok(WaveReport {
        params: params.clone(),
        fixed_point: fp,
        x_start,
        u_start,
        horizon: params.horizon,
        x_target: params.x_target,
        j_star: hit.j_star,
        exponent: hit.exponent,
        residual: hit.trajectory.residual,
        el_residual: el,
        start_index: hit.trajectory.start,
        trajectory_files: Vec::new(),
        monte_carlo,
        monte_carlo_slope: least_squares_slope(&points),
        trajectory: hit.trajectory,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ldp::contracted_lagrangian;
    use crate::model::{validate_network, SamplingBox};

    #[test]
    fn boundary_guards_and_examples() {
        let mut p = CalciumParams::default();
        p.alpha_close = 2.0;
        p.alpha_open = 5.0;
        let model = calcium_model(&p).unwrap();
        let net = model.network();
        assert_eq!(net.intensity(0, &[0.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(net.intensity(1, &[1.0], &[3.7, 1.0]).unwrap(), 0.0);
        assert_eq!(net.intensity(0, &[0.5], &[1.0, 1.0]).unwrap(), 1.0);
        assert!((net.intensity(1, &[0.25], &[0.8, 1.0]).unwrap() - 3.0).abs() < 1e-15);
    }

    #[test]
    fn drift_examples() {
        let p = CalciumParams::default();
        let model = calcium_model(&p).unwrap();
        let mut a = [0.0; 2];
        model.drift(&[0.7, 4.0], &[0.0], &mut a);
        assert!((a[0] - (-p.serca(0.7) + p.k_leak * 3.3)).abs() < 1e-15);
        for &(u1, u2, x) in &[(0.3, 2.0, 0.1), (1.5, 0.2, 0.9), (4.0, 7.0, 0.5)] {
            model.drift(&[u1, u2], &[x], &mut a);
            assert!((p.gamma * a[0] + a[1]).abs() < 1e-14);
        }
    }

    #[test]
    fn validation_passes_on_unit_box() {
        let model = calcium_model(&CalciumParams::default()).unwrap();
        let b = SamplingBox {
            x: vec![(0.0, 1.0)],
            u: vec![(0.0, 10.0), (0.0, 10.0)],
        };
        let r = validate_network(model.network(), &b, 2000).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn store_reduction() {
        let p = CalciumParams {
            gamma: 1.0,
            c_total: 5.0,
            ..Default::default()
        };
        let s = reduce_u2(&p, 2.0);
        assert_eq!(s.u2, 3.0);
        assert!(s.physical);
        assert_eq!(p.gamma * 2.0 + s.u2, p.c_total);
        assert!(!reduce_u2(&p, 6.0).physical);
    }

    #[test]
    fn quadratic_root_examples() {
        assert!((z1dot_quadratic(0.0, 1.0, 4.0).unwrap() - 2.0).abs() < 1e-15);
        let z1 = z1dot_quadratic(3.0, 2.0, 2.0).unwrap();
        assert!((z1 - 1.0).abs() < 1e-15);
        assert!((z1 * (3.0 + z1) - 4.0).abs() < 1e-12);
        assert!(z1dot_quadratic(1.0, 0.0, 0.0).is_err());
        assert_eq!(z1dot_quadratic(0.0, 0.0, 0.0).unwrap(), 0.0);
        // large negative velocity keeps ż₂ ≥ 0
        let z1 = z1dot_quadratic(-50.0, 0.1, 0.1).unwrap();
        assert!(z1 >= 50.0 && (z1 * (z1 - 50.0) - 0.01).abs() < 1e-10);
    }

    #[test]
    fn derivative_examples() {
        let p = CalciumParams {
            alpha_close: 1.0,
            alpha_open: 2.0,
            ..Default::default()
        };
        // x = 0.5, u₁ = 0.5 gives λ₁ = λ₂ = 0.5, so ẋ = 0 is the deterministic flow.
        let c = calcium_lagrangian_derivatives(0.0, 0.5, &[0.5, 5.0], &p).unwrap();
        assert!(c.d_xdot.abs() < 1e-15);
        assert!(c.lhat.abs() < 1e-15);
        // λ₁ = λ₂ = 1 at x = 0.5 when α₋₁ = 2 and α₁ u₁ = 2
        let q = CalciumParams {
            alpha_close: 2.0,
            alpha_open: 2.0,
            ..Default::default()
        };
        let c = calcium_lagrangian_derivatives(0.0, 0.5, &[1.0], &q).unwrap();
        assert!((c.z1dot - 1.0).abs() < 1e-15);
        assert!((c.dz1_dxdot + 0.5).abs() < 1e-15);
        assert!(calcium_lagrangian_derivatives(0.1, 0.0, &[1.0], &q).is_err());
    }

    #[test]
    fn closed_form_matches_dual_solver() {
        let p = CalciumParams::default();
        let model = calcium_model(&p).unwrap();
        for &(xdot, x, u1) in &[(0.3, 0.4, 1.2), (-2.0, 0.8, 0.3), (4.0, 0.1, 3.0)] {
            let dual = contracted_lagrangian(&[xdot], &[x], &[u1, 2.0], model.network()).unwrap();
            let c = calcium_lagrangian_derivatives(xdot, x, &[u1, 2.0], &p).unwrap();
            assert!((dual.fluxes[0] - c.z1dot).abs() < 1e-10);
            assert!((dual.value.finite().unwrap() - c.lhat).abs() < 1e-10);
            assert!((dual.theta[0] - c.d_xdot).abs() < 1e-9);
            assert_eq!(calcium_lhat(xdot, x, u1, &p).unwrap().finite().map(|v| (v - c.lhat).abs() < 1e-12), Some(true));
        }
    }

    #[test]
    fn reduced_model_matches_full_drift() {
        let p = CalciumParams::default();
        let full = calcium_model(&p).unwrap();
        let reduced = calcium_model_reduced(&p).unwrap();
        let (mut a, mut b) = ([0.0; 2], [0.0; 1]);
        for &(u1, x) in &[(0.5, 0.2), (1.4, 0.75), (1.9, 0.95)] {
            full.drift(&[u1, reduce_u2(&p, u1).u2], &[x], &mut a);
            reduced.drift(&[u1], &[x], &mut b);
            assert!((a[0] - b[0]).abs() < 1e-14);
        }
    }

    #[test]
    fn analytic_drift_jacobian_matches_differences() {
        let p = CalciumParams::default();
        for model in [calcium_model(&p).unwrap(), calcium_model_reduced(&p).unwrap()] {
            let m = model.slow_dim();
            let u: Vec<f64> = [1.1, 3.0][..m].to_vec();
            let x = [0.6];
            let (mut du, mut dx) = (vec![0.0; m * m], vec![0.0; m]);
            model.drift_jacobian(&u, &x, &mut du, &mut dx);
            let h = 1e-6;
            let mut ap = vec![0.0; m];
            let mut am = vec![0.0; m];
            for j in 0..m {
                let mut up = u.clone();
                let mut um = u.clone();
                up[j] += h;
                um[j] -= h;
                model.drift(&up, &x, &mut ap);
                model.drift(&um, &x, &mut am);
                for k in 0..m {
                    assert!((du[k * m + j] - (ap[k] - am[k]) / (2.0 * h)).abs() < 1e-7);
                }
            }
            model.drift(&u, &[x[0] + h], &mut ap);
            model.drift(&u, &[x[0] - h], &mut am);
            for k in 0..m {
                assert!((dx[k] - (ap[k] - am[k]) / (2.0 * h)).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn params_validation_lists_every_problem() {
        let p = CalciumParams {
            k_s: 0.0,
            gamma: -1.0,
            x_target: 1.5,
            ..Default::default()
        };
        match p.validate() {
            Err(Error::Config(list)) => assert_eq!(list.len(), 3, "{list:?}"),
            other => panic!("{other:?}"),
        }
    }
}
