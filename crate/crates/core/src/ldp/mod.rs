//! Large-deviation costs of hybrid paths.
//!
//! The local cost of running a reaction at `a` times its intensity is
//! `ℓ(a) = a log a − a + 1`; the flux Lagrangian sums `λ_α ℓ(q_α/λ_α)` over
//! reactions and the action integrates it along a path. A path that asks a
//! reaction with zero intensity to fire on an interval of positive length has
//! infinite action, which is reported as [`ExtendedReal::Infinite`] together
//! with the offending intervals.

mod contracted;
mod rescale;

use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::model::{PdmpModel, ReactionNetwork, RATE_FLOOR};

pub use contracted::{
    contract_rates, contracted_lagrangian, ContractedCalculus, ContractedDerivatives, ContractedSolution, DualCalculus,
};
pub use rescale::{inverse_time_rescale, time_rescale_map, RescaledPath, TimeRescaling};

/// A nonnegative cost that may be `+∞`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExtendedReal {
    Finite(f64),
    Infinite,
}

impl ExtendedReal {
    pub fn is_finite(self) -> bool {
        matches!(self, ExtendedReal::Finite(_))
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            ExtendedReal::Finite(v) => Some(v),
            ExtendedReal::Infinite => None,
        }
    }

    /// Lossy view for plotting and logging; `+∞` maps to `f64::INFINITY`.
    pub fn to_f64(self) -> f64 {
        self.finite().unwrap_or(f64::INFINITY)
    }
}

impl std::ops::Add for ExtendedReal {
    type Output = ExtendedReal;

    fn add(self, rhs: ExtendedReal) -> ExtendedReal {
        match (self, rhs) {
            (ExtendedReal::Finite(a), ExtendedReal::Finite(b)) => ExtendedReal::Finite(a + b),
            _ => ExtendedReal::Infinite,
        }
    }
}

impl std::fmt::Display for ExtendedReal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ExtendedReal::Finite(v) => write!(f, "{v}"),
            ExtendedReal::Infinite => f.write_str("+inf"),
        }
    }
}

impl Serialize for ExtendedReal {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ExtendedReal::Finite(v) => s.serialize_f64(*v),
            ExtendedReal::Infinite => s.serialize_str("+inf"),
        }
    }
}

/// `ℓ(a) = a log a − a + 1`, with `ℓ(0) = 1`.
pub fn ell(a: f64) -> Result<f64> {
    if !(a >= 0.0) || !a.is_finite() {
        return Err(Error::Domain(format!("ell requires a finite a >= 0, got {a}")));
    }
    Ok(ell_unchecked(a))
}

#[inline]
pub(crate) fn ell_unchecked(a: f64) -> f64 {
    if a == 0.0 {
        1.0
    } else {
        a * a.ln() - (a - 1.0)
    }
}

/// `λ ℓ(q/λ)` with the zero-rate conventions; `None` when `q > 0` but the
/// rate is at or below the floor.
#[inline]
pub(crate) fn flux_cost(q: f64, rate: f64) -> Option<f64> {
    if q <= 0.0 {
        Some(rate.max(0.0))
    } else if rate <= RATE_FLOOR {
        None
    } else {
        Some(q * (q / rate).ln() - q + rate)
    }
}

/// `Σ_α λ_α ℓ(q_α/λ_α)` at the state `(x, u)`.
pub fn flux_lagrangian(q: &[f64], x: &[f64], u: &[f64], net: &ReactionNetwork) -> Result<ExtendedReal> {
    if q.len() != net.len() {
        return Err(Error::Domain(format!("expected {} fluxes, got {}", net.len(), q.len())));
    }
    if let Some(a) = q.iter().position(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::Domain(format!("flux q[{a}] = {} is not finite and nonnegative", q[a])));
    }
    let mut total = 0.0;
    for (alpha, &qa) in q.iter().enumerate() {
        match flux_cost(qa, net.intensity(alpha, x, u)?) {
            Some(c) => total += c,
            None => return Ok(ExtendedReal::Infinite),
        }
    }
    Ok(ExtendedReal::Finite(total))
}

/// Piecewise-linear hybrid path on a uniform grid, stored node by node.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmoothPath {
    pub t: Vec<f64>,
    pub z: Vec<Vec<f64>>,
    pub x: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
}

impl SmoothPath {
    /// Checks shapes and grid uniformity; path consistency is checked by the
    /// consumers that need it.
    pub fn new(t: Vec<f64>, z: Vec<Vec<f64>>, x: Vec<Vec<f64>>, u: Vec<Vec<f64>>) -> Result<Self> {
        let n = t.len();
        if n < 2 {
            return Err(Error::Path {
                node: 0,
                reason: "a path needs at least two nodes".into(),
            });
        }
        if z.len() != n || x.len() != n || u.len() != n {
            return Err(Error::Path {
                node: 0,
                reason: format!(
                    "node counts differ: t {n}, z {}, x {}, u {}",
                    z.len(),
                    x.len(),
                    u.len()
                ),
            });
        }
        let h = (t[n - 1] - t[0]) / (n - 1) as f64;
        if !(h > 0.0) {
            return Err(Error::Path {
                node: 0,
                reason: "time grid must be increasing".into(),
            });
        }
        for i in 0..n {
            let expected = t[0] + h * i as f64;
            if (t[i] - expected).abs() > 1e-9 * h.max(t[n - 1].abs()) {
                return Err(Error::Path {
                    node: i,
                    reason: format!("time grid is not uniform: t = {} but expected {expected}", t[i]),
                });
            }
            if z[i].len() != z[0].len() || x[i].len() != x[0].len() || u[i].len() != u[0].len() {
                return Err(Error::Path {
                    node: i,
                    reason: "inconsistent state dimensions".into(),
                });
            }
        }
        Ok(SmoothPath { t, z, x, u })
    }

    pub fn nodes(&self) -> usize {
        self.t.len()
    }

    pub fn step(&self) -> f64 {
        (self.t[self.t.len() - 1] - self.t[0]) / (self.t.len() - 1) as f64
    }

    pub fn horizon(&self) -> f64 {
        self.t[self.t.len() - 1] - self.t[0]
    }

    /// Check the lattice identity and monotonicity of `z` against a network.
    pub fn check(&self, net: &ReactionNetwork) -> Result<()> {
        let d = net.species();
        let mm = net.len();
        if self.z[0].len() != mm || self.x[0].len() != d || self.u[0].len() != net.slow_dim() {
            return Err(Error::Path {
                node: 0,
                reason: format!(
                    "path dimensions (z {}, x {}, u {}) do not match the network ({mm}, {d}, {})",
                    self.z[0].len(),
                    self.x[0].len(),
                    self.u[0].len(),
                    net.slow_dim()
                ),
            });
        }
        let mut dz = vec![0.0; mm];
        let mut dx = vec![0.0; d];
        for i in 0..self.nodes() {
            for a in 0..mm {
                dz[a] = self.z[i][a] - self.z[0][a];
            }
            net.velocity(&dz, &mut dx);
            for k in 0..d {
                let err = (self.x[i][k] - self.x[0][k] - dx[k]).abs();
                if err > 1e-10 {
                    return Err(Error::Path {
                        node: i,
                        reason: format!("x[{k}] differs from x0 + Σ z ξ by {err:e}"),
                    });
                }
                if self.x[i][k] < -1e-12 {
                    return Err(Error::Path {
                        node: i,
                        reason: format!("negative concentration x[{k}] = {}", self.x[i][k]),
                    });
                }
            }
            if i > 0 {
                for a in 0..mm {
                    let slack = 1e-14 * self.z[i][a].abs().max(1.0);
                    if self.z[i][a] < self.z[i - 1][a] - slack {
                        return Err(Error::Path {
                            node: i,
                            reason: format!("z[{a}] decreases"),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

/// Interval on which a path asks reaction `reaction` to fire at zero rate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub reaction: usize,
    pub t_start: f64,
    pub t_end: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ActionResult {
    pub total: ExtendedReal,
    pub per_reaction: Vec<ExtendedReal>,
    pub violations: Vec<Violation>,
    /// Largest mismatch between the path's `u` increments and the drift,
    /// `max |Δu/h − (A_i + A_{i+1})/2|`.
    pub drift_defect: f64,
}

fn merge_violation(list: &mut Vec<Violation>, reaction: usize, t0: f64, t1: f64) {
    if let Some(last) = list.iter_mut().rev().find(|v| v.reaction == reaction) {
        if last.t_end == t0 {
            last.t_end = t1;
            return;
        }
    }
    list.push(Violation {
        reaction,
        t_start: t0,
        t_end: t1,
    });
}

/// Action of a piecewise-linear path.
///
/// Fluxes are forward differences of `z`; each interval is integrated with the
/// trapezoid rule using the rates at both of its nodes. When exactly one node
/// has a rate at the floor, that reaction's term uses the midpoint state
/// instead.
pub fn action(path: &SmoothPath, model: &PdmpModel) -> Result<ActionResult> {
    let net = model.network();
    path.check(net)?;
    let mm = net.len();
    let m = net.slow_dim();
    let n = path.nodes();
    let h = path.step();

    let mut rates = vec![vec![0.0; mm]; n];
    let mut drift = vec![vec![0.0; m]; n];
    for i in 0..n {
        net.rates_into(&path.x[i], &path.u[i], &mut rates[i])?;
    }
    let mut per = vec![0.0; mm];
    let mut infinite = vec![false; mm];
    let mut violations = Vec::new();
    let mut xm = vec![0.0; net.species()];
    let mut um = vec![0.0; m];

    for i in 0..n - 1 {
        for a in 0..mm {
            let q = ((path.z[i + 1][a] - path.z[i][a]) / h).max(0.0);
            let (l0, l1) = (rates[i][a], rates[i + 1][a]);
            let low0 = l0 <= RATE_FLOOR;
            let low1 = l1 <= RATE_FLOOR;
            let cost = if low0 == low1 {
                match (flux_cost(q, l0), flux_cost(q, l1)) {
                    (Some(c0), Some(c1)) => Some(0.5 * h * (c0 + c1)),
                    _ => None,
                }
            } else {
                for k in 0..xm.len() {
                    xm[k] = 0.5 * (path.x[i][k] + path.x[i + 1][k]);
                }
                for k in 0..m {
                    um[k] = 0.5 * (path.u[i][k] + path.u[i + 1][k]);
                }
                flux_cost(q, net.intensity(a, &xm, &um)?).map(|c| h * c)
            };
            match cost {
                Some(c) => per[a] += c,
                None => {
                    infinite[a] = true;
                    merge_violation(&mut violations, a, path.t[i], path.t[i + 1]);
                }
            }
        }
    }

    let mut defect: f64 = 0.0;
    if m > 0 {
        for i in 0..n {
            model.drift(&path.u[i], &path.x[i], &mut drift[i]);
        }
        for i in 0..n - 1 {
            for k in 0..m {
                let slope = (path.u[i + 1][k] - path.u[i][k]) / h;
                defect = defect.max((slope - 0.5 * (drift[i][k] + drift[i + 1][k])).abs());
            }
        }
    }
    let per_reaction: Vec<ExtendedReal> = per
        .iter()
        .zip(&infinite)
        .map(|(&v, &inf)| if inf { ExtendedReal::Infinite } else { ExtendedReal::Finite(v) })
        .collect();
    let total = if infinite.iter().any(|&b| b) {
        ExtendedReal::Infinite
    } else {
        ExtendedReal::Finite(per.iter().sum())
    };
    Ok(ActionResult {
        total,
        per_reaction,
        violations,
        drift_defect: defect,
    })
}

/// Poisson rate `Σ_α ∫ ℓ(ẏ_α) dr` of unit-rate counting paths stored in `z`.
pub fn poisson_action(path: &SmoothPath) -> Result<ActionResult> {
    let mm = path.z[0].len();
    let n = path.nodes();
    let h = path.step();
    let mut per = vec![0.0; mm];
    for i in 0..n - 1 {
        for a in 0..mm {
            let q = (path.z[i + 1][a] - path.z[i][a]) / h;
            if q < -1e-14 * path.z[i][a].abs().max(1.0) / h {
                return Err(Error::Path {
                    node: i + 1,
                    reason: format!("y[{a}] decreases"),
                });
            }
            per[a] += h * ell_unchecked(q.max(0.0));
        }
    }
    Ok(ActionResult {
        total: ExtendedReal::Finite(per.iter().sum()),
        per_reaction: per.into_iter().map(ExtendedReal::Finite).collect(),
        violations: Vec::new(),
        drift_defect: 0.0,
    })
}
