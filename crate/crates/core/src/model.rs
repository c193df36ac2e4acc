//! Reaction networks coupled to a slow ODE.
//!
//! A [`ReactionNetwork`] holds the stoichiometric vectors `ξ_α` and per-capita
//! intensities `λ_α(x, u)`; a [`PdmpModel`] adds the slow drift `du/dt =
//! A(u, x)`, the initial condition and the system size `N`. Concentrations
//! move on the lattice `x = x0 + Σ_α z_α ξ_α` where `z_α` is the scaled count
//! of firings of reaction `α`.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ldp::ContractedCalculus;

/// Rates at or below this value count as zero when deciding whether a path
/// asks a reaction to fire where it cannot.
pub const RATE_FLOOR: f64 = 1e-12;

/// `λ(x, u)`.
pub type RateFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;
/// Writes `∂λ/∂x` (length d) and `∂λ/∂u` (length m).
pub type RateGradientFn = Arc<dyn Fn(&[f64], &[f64], &mut [f64], &mut [f64]) + Send + Sync>;
/// `A(u, x)` written into the output slice (length m).
pub type DriftFn = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;
/// Writes `∂A/∂u` (m×m, row k holds `∂A^k/∂u^j`) and `∂A/∂x` (m×d), row-major.
pub type DriftJacobianFn = Arc<dyn Fn(&[f64], &[f64], &mut [f64], &mut [f64]) + Send + Sync>;

const FD_STEP: f64 = 1e-6;

#[derive(Clone)]
pub struct Reaction {
    label: String,
    stoichiometry: Vec<i32>,
    rate: RateFn,
    gradient: Option<RateGradientFn>,
}

impl Reaction {
    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn stoichiometry(&self) -> &[i32] {
        &self.stoichiometry
    }

    pub fn has_analytic_gradient(&self) -> bool {
        self.gradient.is_some()
    }
}

impl fmt::Debug for Reaction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Reaction")
            .field("label", &self.label)
            .field("stoichiometry", &self.stoichiometry)
            .field("analytic_gradient", &self.gradient.is_some())
            .finish()
    }
}

#[derive(Clone, Debug)]
pub struct ReactionNetwork {
    species: usize,
    slow_dim: usize,
    reactions: Vec<Reaction>,
    rate_bound: f64,
}

pub struct NetworkBuilder {
    species: usize,
    slow_dim: usize,
    reactions: Vec<Reaction>,
    rate_bound: f64,
}

impl NetworkBuilder {
    pub fn reaction<F>(self, label: &str, stoichiometry: Vec<i32>, rate: F) -> Self
    where
        F: Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
    {
        self.push(label, stoichiometry, Arc::new(rate), None)
    }

    /// Register a reaction together with its analytic rate gradient.
    pub fn reaction_with_gradient<F, G>(
        self,
        label: &str,
        stoichiometry: Vec<i32>,
        rate: F,
        gradient: G,
    ) -> Self
    where
        F: Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static,
        G: Fn(&[f64], &[f64], &mut [f64], &mut [f64]) + Send + Sync + 'static,
    {
        self.push(label, stoichiometry, Arc::new(rate), Some(Arc::new(gradient)))
    }

    fn push(
        mut self,
        label: &str,
        stoichiometry: Vec<i32>,
        rate: RateFn,
        gradient: Option<RateGradientFn>,
    ) -> Self {
        self.reactions.push(Reaction {
            label: label.to_string(),
            stoichiometry,
            rate,
            gradient,
        });
        self
    }

    pub fn rate_bound(mut self, bound: f64) -> Self {
        self.rate_bound = bound;
        self
    }

    pub fn build(self) -> Result<ReactionNetwork> {
        if self.species == 0 {
            return Err(Error::InvalidNetwork("network needs at least one species".into()));
        }
        if self.reactions.is_empty() {
            return Err(Error::InvalidNetwork("network has no reactions".into()));
        }
        for (alpha, r) in self.reactions.iter().enumerate() {
            if r.stoichiometry.len() != self.species {
                return Err(Error::InvalidNetwork(format!(
                    "reaction {alpha} has a stoichiometric vector of length {} but the network has {} species",
                    r.stoichiometry.len(),
                    self.species
                )));
            }
            if r.stoichiometry.iter().all(|&s| s == 0) {
                return Err(Error::InvalidNetwork(format!(
                    "reaction {alpha} has a zero stoichiometric vector"
                )));
            }
        }
        if !(self.rate_bound >= 0.0) {
            return Err(Error::InvalidNetwork(format!(
                "rate bound must be nonnegative, got {}",
                self.rate_bound
            )));
        }
        Ok(ReactionNetwork {
            species: self.species,
            slow_dim: self.slow_dim,
            reactions: self.reactions,
            rate_bound: self.rate_bound,
        })
    }
}

impl ReactionNetwork {
    /// Start a network over `species` concentrations whose rates may read
    /// `slow_dim` slow variables.
    pub fn builder(species: usize, slow_dim: usize) -> NetworkBuilder {
        NetworkBuilder {
            species,
            slow_dim,
            reactions: Vec::new(),
            rate_bound: f64::INFINITY,
        }
    }

    pub fn species(&self) -> usize {
        self.species
    }

    pub fn slow_dim(&self) -> usize {
        self.slow_dim
    }

    pub fn len(&self) -> usize {
        self.reactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reactions.is_empty()
    }

    pub fn reactions(&self) -> &[Reaction] {
        &self.reactions
    }

    pub fn rate_bound(&self) -> f64 {
        self.rate_bound
    }

    pub fn stoichiometry(&self, alpha: usize) -> &[i32] {
        &self.reactions[alpha].stoichiometry
    }

    /// Per-capita intensity `λ_α(x, u)`; the total firing rate is `N` times this.
    pub fn intensity(&self, alpha: usize, x: &[f64], u: &[f64]) -> Result<f64> {
        let value = (self.reactions[alpha].rate)(x, u);
        if !value.is_finite() || value < 0.0 {
            return Err(Error::model_eval(format!("intensity of reaction {alpha}"), value));
        }
        Ok(value)
    }

    /// Rate evaluation without checks, for inner loops that check in bulk.
    #[inline]
    pub fn rate(&self, alpha: usize, x: &[f64], u: &[f64]) -> f64 {
        (self.reactions[alpha].rate)(x, u)
    }

    pub fn rates_into(&self, x: &[f64], u: &[f64], out: &mut [f64]) -> Result<()> {
        for (alpha, o) in out.iter_mut().enumerate() {
            *o = self.intensity(alpha, x, u)?;
        }
        Ok(())
    }

    pub fn rates(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.len()];
        self.rates_into(x, u, &mut out)?;
        Ok(out)
    }

    /// `∂λ_α/∂x` and `∂λ_α/∂u`, analytic when registered, otherwise central
    /// finite differences.
    pub fn rate_gradient(&self, alpha: usize, x: &[f64], u: &[f64], dx: &mut [f64], du: &mut [f64]) {
        let r = &self.reactions[alpha];
        if let Some(g) = &r.gradient {
            g(x, u, dx, du);
            return;
        }
        let mut xp = x.to_vec();
        for i in 0..x.len() {
            let h = FD_STEP * x[i].abs().max(1.0);
            xp[i] = x[i] + h;
            let fp = (r.rate)(&xp, u);
            xp[i] = x[i] - h;
            let fm = (r.rate)(&xp, u);
            xp[i] = x[i];
            dx[i] = (fp - fm) / (2.0 * h);
        }
        let mut up = u.to_vec();
        for j in 0..u.len() {
            let h = FD_STEP * u[j].abs().max(1.0);
            up[j] = u[j] + h;
            let fp = (r.rate)(x, &up);
            up[j] = u[j] - h;
            let fm = (r.rate)(x, &up);
            up[j] = u[j];
            du[j] = (fp - fm) / (2.0 * h);
        }
    }

    /// `Σ_α ξ_α q_α`.
    pub fn velocity(&self, fluxes: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (r, &q) in self.reactions.iter().zip(fluxes) {
            for (o, &s) in out.iter_mut().zip(&r.stoichiometry) {
                *o += s as f64 * q;
            }
        }
    }

    /// `x0 + Σ_α z_α ξ_α`.
    pub fn concentration(&self, x0: &[f64], z: &[f64], out: &mut [f64]) {
        self.velocity(z, out);
        for (o, &b) in out.iter_mut().zip(x0) {
            *o += b;
        }
    }
}

/// Axis-aligned box that [`validate_network`] samples from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingBox {
    pub x: Vec<(f64, f64)>,
    pub u: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RateSample {
    pub reaction: usize,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub rate: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub samples: usize,
    pub max_rate: Vec<f64>,
    pub rate_bound: f64,
    pub negative_rates: Vec<RateSample>,
    pub non_finite_rates: Vec<RateSample>,
    pub bound_violations: Vec<RateSample>,
    pub positivity_guard_violations: Vec<RateSample>,
    pub passed: bool,
}

const MAX_REPORTED: usize = 16;

fn record(list: &mut Vec<RateSample>, reaction: usize, x: &[f64], u: &[f64], rate: f64) {
    if list.len() < MAX_REPORTED {
        list.push(RateSample {
            reaction,
            x: x.to_vec(),
            u: u.to_vec(),
            rate,
        });
    }
}

/// Spot-check the structural assumptions on a network by sampling the box.
///
/// Rates must be finite, nonnegative and at most the asserted bound `K`, and
/// a reaction that would push a zero coordinate negative must have zero rate
/// there. Box corners are always included when the box has at most 12
/// dimensions.
pub fn validate_network(net: &ReactionNetwork, bounds: &SamplingBox, samples: usize) -> Result<ValidationReport> {
    if samples == 0 {
        return Err(Error::Domain("validation needs at least one sample".into()));
    }
    if net.is_empty() {
        return Err(Error::InvalidNetwork("network has no reactions".into()));
    }
    if bounds.x.len() != net.species() || bounds.u.len() != net.slow_dim() {
        return Err(Error::InvalidNetwork(format!(
            "sampling box has dimensions ({}, {}) but the network expects ({}, {})",
            bounds.x.len(),
            bounds.u.len(),
            net.species(),
            net.slow_dim()
        )));
    }
    let d = net.species();
    let m = net.slow_dim();
    let dims = d + m;
    let mut points: Vec<Vec<f64>> = Vec::new();
    let lo_hi: Vec<(f64, f64)> = bounds.x.iter().chain(&bounds.u).copied().collect();
    if dims <= 12 {
        for mask in 0..(1usize << dims) {
            points.push(
                lo_hi
                    .iter()
                    .enumerate()
                    .map(|(i, &(lo, hi))| if mask >> i & 1 == 1 { hi } else { lo })
                    .collect(),
            );
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for _ in 0..samples {
        points.push(lo_hi.iter().map(|&(lo, hi)| lo + (hi - lo) * rng.random::<f64>()).collect());
    }

    let mut report = ValidationReport {
        samples: points.len(),
        max_rate: vec![0.0; net.len()],
        rate_bound: net.rate_bound(),
        negative_rates: Vec::new(),
        non_finite_rates: Vec::new(),
        bound_violations: Vec::new(),
        positivity_guard_violations: Vec::new(),
        passed: true,
    };
    let mut counts = [0usize; 4];
    for p in &points {
        let (x, u) = p.split_at(d);
        for alpha in 0..net.len() {
            let rate = net.rate(alpha, x, u);
            if !rate.is_finite() {
                counts[0] += 1;
                record(&mut report.non_finite_rates, alpha, x, u, rate);
                continue;
            }
            if rate < 0.0 {
                counts[1] += 1;
                record(&mut report.negative_rates, alpha, x, u, rate);
            }
            if rate > net.rate_bound() {
                counts[2] += 1;
                record(&mut report.bound_violations, alpha, x, u, rate);
            }
            report.max_rate[alpha] = report.max_rate[alpha].max(rate);

            let xi = net.stoichiometry(alpha);
            for i in 0..d {
                if xi[i] < 0 {
                    let mut xz = x.to_vec();
                    xz[i] = 0.0;
                    let r0 = net.rate(alpha, &xz, u);
                    if r0 != 0.0 {
                        counts[3] += 1;
                        record(&mut report.positivity_guard_violations, alpha, &xz, u, r0);
                    }
                }
            }
        }
    }
    report.passed = counts.iter().all(|&c| c == 0);
    let _ = m;
    Ok(report)
}

/// Linear conserved quantity `w_x·x + w_u·u` of the coupled dynamics.
///
/// Fixed-point searches pin these to their initial values, which removes the
/// degeneracy they otherwise cause.
#[derive(Debug, Clone, Serialize)]
pub struct LinearInvariant {
    pub x_weights: Vec<f64>,
    pub u_weights: Vec<f64>,
}

impl LinearInvariant {
    pub fn eval(&self, x: &[f64], u: &[f64]) -> f64 {
        self.x_weights.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            + self.u_weights.iter().zip(u).map(|(a, b)| a * b).sum::<f64>()
    }
}

#[derive(Clone)]
pub struct PdmpModel {
    name: String,
    network: ReactionNetwork,
    drift: DriftFn,
    drift_jacobian: Option<DriftJacobianFn>,
    x0: Vec<f64>,
    u0: Vec<f64>,
    scale: u64,
    invariants: Vec<LinearInvariant>,
    calculus: Option<Arc<dyn ContractedCalculus>>,
}

impl fmt::Debug for PdmpModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PdmpModel")
            .field("name", &self.name)
            .field("network", &self.network)
            .field("x0", &self.x0)
            .field("u0", &self.u0)
            .field("scale", &self.scale)
            .field("invariants", &self.invariants)
            .field("analytic_calculus", &self.calculus.is_some())
            .finish()
    }
}

impl PdmpModel {
    pub fn new<F>(network: ReactionNetwork, drift: F, x0: Vec<f64>, u0: Vec<f64>, scale: u64) -> Result<Self>
    where
        F: Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        let model = PdmpModel {
            name: "custom".into(),
            network,
            drift: Arc::new(drift),
            drift_jacobian: None,
            x0,
            u0,
            scale,
            invariants: Vec::new(),
            calculus: None,
        };
        model.check()?;
        Ok(model)
    }

    fn check(&self) -> Result<()> {
        let d = self.network.species();
        let m = self.network.slow_dim();
        if self.x0.len() != d || self.u0.len() != m {
            return Err(Error::InvalidNetwork(format!(
                "initial state has dimensions ({}, {}) but the network expects ({d}, {m})",
                self.x0.len(),
                self.u0.len()
            )));
        }
        if self.scale == 0 {
            return Err(Error::Domain("system size N must be positive".into()));
        }
        if let Some(i) = self.x0.iter().position(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::Domain(format!(
                "initial concentration x0[{i}] = {} is not a finite nonnegative number",
                self.x0[i]
            )));
        }
        let mut a = vec![0.0; m];
        (self.drift)(&self.u0, &self.x0, &mut a);
        if let Some(k) = a.iter().position(|v| !v.is_finite()) {
            return Err(Error::model_eval(format!("drift component {k} at the initial state"), a[k]));
        }
        for inv in &self.invariants {
            if inv.x_weights.len() != d || inv.u_weights.len() != m {
                return Err(Error::InvalidNetwork("invariant weights have the wrong dimension".into()));
            }
        }
        Ok(())
    }

    pub fn named(mut self, name: &str) -> Self {
        self.name = name.to_string();
        self
    }

    pub fn with_drift_jacobian<F>(mut self, jac: F) -> Self
    where
        F: Fn(&[f64], &[f64], &mut [f64], &mut [f64]) + Send + Sync + 'static,
    {
        self.drift_jacobian = Some(Arc::new(jac));
        self
    }

    pub fn with_invariant(mut self, inv: LinearInvariant) -> Result<Self> {
        self.invariants.push(inv);
        self.check()?;
        Ok(self)
    }

    /// Register closed-form contracted-Lagrangian derivatives for this model.
    pub fn with_calculus(mut self, calculus: Arc<dyn ContractedCalculus>) -> Self {
        self.calculus = Some(calculus);
        self
    }

    pub fn with_initial_state(mut self, x0: Vec<f64>, u0: Vec<f64>) -> Result<Self> {
        self.x0 = x0;
        self.u0 = u0;
        self.check()?;
        Ok(self)
    }

    pub fn with_scale(mut self, scale: u64) -> Result<Self> {
        self.scale = scale;
        self.check()?;
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn network(&self) -> &ReactionNetwork {
        &self.network
    }

    pub fn species(&self) -> usize {
        self.network.species()
    }

    pub fn slow_dim(&self) -> usize {
        self.network.slow_dim()
    }

    pub fn reactions(&self) -> usize {
        self.network.len()
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    pub fn u0(&self) -> &[f64] {
        &self.u0
    }

    pub fn scale(&self) -> u64 {
        self.scale
    }

    pub fn invariants(&self) -> &[LinearInvariant] {
        &self.invariants
    }

    pub fn calculus(&self) -> Option<&Arc<dyn ContractedCalculus>> {
        self.calculus.as_ref()
    }

    /// `A(u, x)`.
    #[inline]
    pub fn drift(&self, u: &[f64], x: &[f64], out: &mut [f64]) {
        (self.drift)(u, x, out)
    }

    /// `∂A/∂u` (m×m) and `∂A/∂x` (m×d), row-major, analytic when registered.
    pub fn drift_jacobian(&self, u: &[f64], x: &[f64], du: &mut [f64], dx: &mut [f64]) {
        if let Some(j) = &self.drift_jacobian {
            j(u, x, du, dx);
            return;
        }
        let m = u.len();
        let d = x.len();
        let mut ap = vec![0.0; m];
        let mut am = vec![0.0; m];
        let mut up = u.to_vec();
        for j in 0..m {
            let h = FD_STEP * u[j].abs().max(1.0);
            up[j] = u[j] + h;
            (self.drift)(&up, x, &mut ap);
            up[j] = u[j] - h;
            (self.drift)(&up, x, &mut am);
            up[j] = u[j];
            for k in 0..m {
                du[k * m + j] = (ap[k] - am[k]) / (2.0 * h);
            }
        }
        let mut xp = x.to_vec();
        for i in 0..d {
            let h = FD_STEP * x[i].abs().max(1.0);
            xp[i] = x[i] + h;
            (self.drift)(u, &xp, &mut ap);
            xp[i] = x[i] - h;
            (self.drift)(u, &xp, &mut am);
            xp[i] = x[i];
            for k in 0..m {
                dx[k * d + i] = (ap[k] - am[k]) / (2.0 * h);
            }
        }
    }

    /// Initial concentration actually used at size `N`: the nearest lattice
    /// point `round(N x0) / N`.
    pub fn lattice_x0(&self) -> Vec<f64> {
        let n = self.scale as f64;
        self.x0.iter().map(|&v| (v * n).round() / n).collect()
    }
}

/// Snapshot `(t, z, x, u)` of a hybrid trajectory.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HybridState {
    pub t: f64,
    pub z: Vec<f64>,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
}

impl HybridState {
    pub fn initial(model: &PdmpModel) -> Self {
        HybridState {
            t: 0.0,
            z: vec![0.0; model.reactions()],
            x: model.x0().to_vec(),
            u: model.u0().to_vec(),
        }
    }

    /// Fire reaction `alpha` once in place.
    pub fn fire(&mut self, net: &ReactionNetwork, alpha: usize, scale: u64) -> Result<()> {
        let n = scale as f64;
        let xi = net.stoichiometry(alpha);
        let mut next = self.x.clone();
        for (i, (v, &s)) in next.iter_mut().zip(xi).enumerate() {
            *v += s as f64 / n;
            if *v < 0.0 {
                // Rounding of lattice arithmetic, not a real excursion.
                if *v > -1e-12 {
                    *v = 0.0;
                } else {
                    return Err(Error::InvariantViolation(format!(
                        "reaction {alpha} drove x[{i}] to {v} at t = {}",
                        self.t
                    )));
                }
            }
        }
        self.x = next;
        self.z[alpha] += 1.0 / n;
        Ok(())
    }
}

/// Return the state after one firing of reaction `alpha` in a system of size `scale`.
pub fn apply_reaction(net: &ReactionNetwork, state: &HybridState, alpha: usize, scale: u64) -> Result<HybridState> {
    let mut next = state.clone();
    next.fire(net, alpha, scale)?;
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn channel_net(open: f64, close: f64) -> ReactionNetwork {
        ReactionNetwork::builder(1, 1)
            .reaction("close", vec![-1], move |x, _| close * x[0])
            .reaction("open", vec![1], move |x, u| open * u[0] * (1.0 - x[0]))
            .rate_bound(open * 10.0 + close)
            .build()
            .unwrap()
    }

    #[test]
    fn intensity_examples() {
        let net = channel_net(5.0, 2.0);
        assert_eq!(net.intensity(0, &[0.5], &[0.0]).unwrap(), 1.0);
        assert_eq!(net.intensity(1, &[1.0], &[3.7]).unwrap(), 0.0);
        assert!((net.intensity(1, &[0.25], &[0.8]).unwrap() - 3.0).abs() < 1e-15);
    }

    #[test]
    fn intensity_rejects_non_finite() {
        let net = ReactionNetwork::builder(1, 0)
            .reaction("bad", vec![1], |x, _| 1.0 / x[0] - f64::INFINITY)
            .build()
            .unwrap();
        assert!(matches!(net.intensity(0, &[0.0], &[]), Err(Error::ModelEvaluation { .. })));
    }

    #[test]
    fn intensity_is_bitwise_deterministic() {
        let net = channel_net(2.0, 1.0);
        let a = net.intensity(1, &[0.3137], &[1.2345]).unwrap();
        let b = net.intensity(1, &[0.3137], &[1.2345]).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn build_rejects_malformed_networks() {
        assert!(matches!(
            ReactionNetwork::builder(1, 0).build(),
            Err(Error::InvalidNetwork(_))
        ));
        assert!(ReactionNetwork::builder(2, 0)
            .reaction("r", vec![1], |_, _| 1.0)
            .build()
            .is_err());
        assert!(ReactionNetwork::builder(1, 0)
            .reaction("r", vec![0], |_, _| 1.0)
            .build()
            .is_err());
    }

    #[test]
    fn validation_passes_for_channel_network() {
        let net = channel_net(2.0, 1.0);
        let b = SamplingBox {
            x: vec![(0.0, 1.0)],
            u: vec![(0.0, 10.0)],
        };
        let report = validate_network(&net, &b, 500).unwrap();
        assert!(report.passed, "{report:?}");
        assert!(report.max_rate[1] <= 20.0 + 1e-12);
    }

    #[test]
    fn validation_flags_negative_rate() {
        let net = ReactionNetwork::builder(1, 0)
            .reaction("neg", vec![1], |_, _| -1.0)
            .rate_bound(10.0)
            .build()
            .unwrap();
        let b = SamplingBox {
            x: vec![(0.0, 1.0)],
            u: vec![],
        };
        let report = validate_network(&net, &b, 10).unwrap();
        assert!(!report.passed);
        assert!(!report.negative_rates.is_empty());
    }

    #[test]
    fn validation_flags_positivity_guard() {
        let net = ReactionNetwork::builder(1, 1)
            .reaction("decay", vec![-1], |_, _| 1.0)
            .rate_bound(10.0)
            .build()
            .unwrap();
        let b = SamplingBox {
            x: vec![(0.0, 1.0)],
            u: vec![(0.0, 1.0)],
        };
        let report = validate_network(&net, &b, 10).unwrap();
        assert!(!report.passed);
        assert!(!report.positivity_guard_violations.is_empty());
    }

    #[test]
    fn validation_flags_bound_violation_and_bad_dims() {
        let net = channel_net(2.0, 1.0);
        let tight = ReactionNetwork::builder(1, 1)
            .reaction("open", vec![1], |_, u| u[0])
            .rate_bound(1.0)
            .build()
            .unwrap();
        let b = SamplingBox {
            x: vec![(0.0, 1.0)],
            u: vec![(0.0, 10.0)],
        };
        assert!(!validate_network(&tight, &b, 20).unwrap().passed);
        let wrong = SamplingBox {
            x: vec![(0.0, 1.0), (0.0, 1.0)],
            u: vec![(0.0, 1.0)],
        };
        assert!(matches!(validate_network(&net, &wrong, 5), Err(Error::InvalidNetwork(_))));
        assert!(matches!(validate_network(&net, &b, 0), Err(Error::Domain(_))));
    }

    #[test]
    fn apply_reaction_examples() {
        let net = channel_net(2.0, 1.0);
        let s = HybridState {
            t: 0.0,
            z: vec![0.0, 0.0],
            x: vec![0.5],
            u: vec![1.0],
        };
        let s1 = apply_reaction(&net, &s, 1, 10).unwrap();
        assert!((s1.x[0] - 0.6).abs() < 1e-15);
        assert!((s1.z[1] - 0.1).abs() < 1e-15);
        assert_eq!(s1.u, s.u);
        assert_eq!(s1.t, s.t);

        let back = apply_reaction(&net, &s1, 0, 10).unwrap();
        assert!((back.x[0] - 0.5).abs() < 1e-15);
        assert!((back.z[0] - 0.1).abs() < 1e-15 && (back.z[1] - 0.1).abs() < 1e-15);

        let transfer = ReactionNetwork::builder(2, 0)
            .reaction("move", vec![1, -1], |x, _| x[1])
            .build()
            .unwrap();
        let s = HybridState {
            t: 0.0,
            z: vec![0.0],
            x: vec![0.0, 0.25],
            u: vec![],
        };
        let s1 = apply_reaction(&transfer, &s, 0, 4).unwrap();
        assert_eq!(s1.x, vec![0.25, 0.0]);
    }

    #[test]
    fn apply_reaction_detects_broken_guard() {
        let net = channel_net(2.0, 1.0);
        let s = HybridState {
            t: 0.0,
            z: vec![0.0, 0.0],
            x: vec![0.0],
            u: vec![1.0],
        };
        assert!(matches!(
            apply_reaction(&net, &s, 0, 10),
            Err(Error::InvariantViolation(_))
        ));
    }

    #[test]
    fn finite_difference_gradients_match_analytic() {
        let fd = channel_net(2.0, 1.0);
        let analytic = ReactionNetwork::builder(1, 1)
            .reaction_with_gradient(
                "open",
                vec![1],
                |x, u| 2.0 * u[0] * (1.0 - x[0]),
                |x, u, dx, du| {
                    dx[0] = -2.0 * u[0];
                    du[0] = 2.0 * (1.0 - x[0]);
                },
            )
            .build()
            .unwrap();
        let (mut a, mut b) = ([0.0], [0.0]);
        let (mut c, mut e) = ([0.0], [0.0]);
        fd.rate_gradient(1, &[0.3], &[1.7], &mut a, &mut b);
        analytic.rate_gradient(0, &[0.3], &[1.7], &mut c, &mut e);
        assert!((a[0] - c[0]).abs() < 1e-8 && (b[0] - e[0]).abs() < 1e-8);
    }

    #[test]
    fn model_rejects_negative_initial_concentration() {
        let net = channel_net(2.0, 1.0);
        let err = PdmpModel::new(net, |_, _, a| a[0] = 0.0, vec![-0.1], vec![1.0], 10).unwrap_err();
        assert!(matches!(err, Error::Domain(_)));
    }

    #[test]
    fn model_rejects_non_finite_initial_drift() {
        let net = channel_net(2.0, 1.0);
        let err = PdmpModel::new(net, |u, _, a| a[0] = 1.0 / (u[0] - 1.0), vec![0.1], vec![1.0], 10).unwrap_err();
        assert!(matches!(err, Error::ModelEvaluation { .. }));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn linear_constraint_identity_holds(seq in proptest::collection::vec(0usize..2, 0..200)) {
                let net = channel_net(2.0, 1.0);
                let n = 50;
                let mut s = HybridState { t: 0.0, z: vec![0.0, 0.0], x: vec![0.5], u: vec![1.0] };
                for alpha in seq {
                    let before = s.clone();
                    match s.fire(&net, alpha, n) {
                        Ok(()) => {}
                        Err(_) => { s = before; continue; }
                    }
                    let mut rec = [0.0];
                    net.concentration(&[0.5], &s.z, &mut rec);
                    prop_assert!((rec[0] - s.x[0]).abs() <= 1e-10);
                    prop_assert!(s.x[0] >= 0.0);
                }
            }
        }
    }
}
