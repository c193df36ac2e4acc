//! The time-rescaling map `z ↦ w` with `w_α(Λ_α(t)) = z_α(t)` and
//! `Λ_α(t) = ∫₀ᵗ λ_α ds`, and its inverse by forward integration.

use serde::Serialize;

use super::SmoothPath;
use crate::error::{Error, Result};
use crate::model::{PdmpModel, ReactionNetwork, RATE_FLOOR};
use crate::ode::{integrate, Tolerances};

/// Monotone cubic Hermite interpolant of `w` on nodes `s`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RescaledPath {
    pub s: Vec<f64>,
    pub w: Vec<f64>,
    slopes: Vec<f64>,
}

impl RescaledPath {
    /// Build from strictly increasing `s` and nondecreasing `w`. Node slopes
    /// come from three-point differences and are limited so the interpolant
    /// stays monotone.
    pub fn from_nodes(s: Vec<f64>, w: Vec<f64>) -> Result<Self> {
        let n = s.len();
        if n < 2 || w.len() != n {
            return Err(Error::Domain("a rescaled path needs at least two nodes of matching length".into()));
        }
        for k in 1..n {
            if !(s[k] > s[k - 1]) {
                return Err(Error::Domain(format!("rescaled times must increase (node {k})")));
            }
            if w[k] < w[k - 1] - 1e-14 * w[k].abs().max(1.0) {
                return Err(Error::Domain(format!("rescaled path decreases at node {k}")));
            }
        }
        let secant: Vec<f64> = (0..n - 1).map(|k| (w[k + 1] - w[k]) / (s[k + 1] - s[k])).collect();
        let mut slopes = vec![0.0; n];
        if n == 2 {
            slopes = vec![secant[0], secant[0]];
        } else {
            for k in 0..n {
                // Quadratic through three neighbouring nodes.
                let (a, b, c) = if k == 0 {
                    (0, 1, 2)
                } else if k == n - 1 {
                    (n - 3, n - 2, n - 1)
                } else {
                    (k - 1, k, k + 1)
                };
                slopes[k] = quadratic_slope(&s, &w, a, b, c, s[k]);
            }
            for k in 0..n {
                let left = if k > 0 { Some(secant[k - 1]) } else { None };
                let right = if k < n - 1 { Some(secant[k]) } else { None };
                let bound = match (left, right) {
                    (Some(l), Some(r)) => 3.0 * l.min(r),
                    (Some(l), None) => 3.0 * l,
                    (None, Some(r)) => 3.0 * r,
                    (None, None) => 0.0,
                };
                slopes[k] = slopes[k].clamp(0.0, bound.max(0.0));
            }
        }
        Ok(RescaledPath { s, w, slopes })
    }

    /// `τ`, the end of the rescaled time interval.
    pub fn horizon(&self) -> f64 {
        self.s[self.s.len() - 1]
    }

    fn locate(&self, s: f64) -> usize {
        let n = self.s.len();
        match self.s.binary_search_by(|v| v.total_cmp(&s)) {
            Ok(k) => k.min(n - 2),
            Err(k) => k.saturating_sub(1).min(n - 2),
        }
    }

    /// `w(s)`; linear extrapolation with the end slopes outside the nodes.
    pub fn eval(&self, s: f64) -> f64 {
        let n = self.s.len();
        if s <= self.s[0] {
            return self.w[0] + self.slopes[0] * (s - self.s[0]);
        }
        if s >= self.s[n - 1] {
            return self.w[n - 1] + self.slopes[n - 1] * (s - self.s[n - 1]);
        }
        let k = self.locate(s);
        let h = self.s[k + 1] - self.s[k];
        let r = (s - self.s[k]) / h;
        let r2 = r * r;
        let r3 = r2 * r;
        (2.0 * r3 - 3.0 * r2 + 1.0) * self.w[k]
            + (r3 - 2.0 * r2 + r) * h * self.slopes[k]
            + (-2.0 * r3 + 3.0 * r2) * self.w[k + 1]
            + (r3 - r2) * h * self.slopes[k + 1]
    }

    /// `dw/ds`.
    pub fn derivative(&self, s: f64) -> f64 {
        let n = self.s.len();
        if s <= self.s[0] {
            return self.slopes[0];
        }
        if s >= self.s[n - 1] {
            return self.slopes[n - 1];
        }
        let k = self.locate(s);
        let h = self.s[k + 1] - self.s[k];
        let r = (s - self.s[k]) / h;
        let r2 = r * r;
        ((6.0 * r2 - 6.0 * r) * self.w[k] - (6.0 * r2 - 6.0 * r) * self.w[k + 1]) / h
            + (3.0 * r2 - 4.0 * r + 1.0) * self.slopes[k]
            + (3.0 * r2 - 2.0 * r) * self.slopes[k + 1]
    }
}

fn quadratic_slope(s: &[f64], w: &[f64], a: usize, b: usize, c: usize, at: f64) -> f64 {
    let (x0, x1, x2) = (s[a], s[b], s[c]);
    let (y0, y1, y2) = (w[a], w[b], w[c]);
    y0 * (2.0 * at - x1 - x2) / ((x0 - x1) * (x0 - x2))
        + y1 * (2.0 * at - x0 - x2) / ((x1 - x0) * (x1 - x2))
        + y2 * (2.0 * at - x0 - x1) / ((x2 - x0) * (x2 - x1))
}

/// Output of [`time_rescale_map`].
#[derive(Debug, Clone, Serialize)]
pub struct TimeRescaling {
    pub t: Vec<f64>,
    /// `Λ_α(t_k)`, indexed `[α][k]`.
    pub cumulative: Vec<Vec<f64>>,
    pub paths: Vec<RescaledPath>,
}

/// Nodal derivative of uniformly sampled values, second order everywhere.
fn grid_derivative(f: &[f64], h: f64) -> Vec<f64> {
    let n = f.len();
    let mut out = vec![0.0; n];
    if n == 2 {
        let s = (f[1] - f[0]) / h;
        return vec![s, s];
    }
    out[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * h);
    out[n - 1] = (3.0 * f[n - 1] - 4.0 * f[n - 2] + f[n - 3]) / (2.0 * h);
    for k in 1..n - 1 {
        out[k] = (f[k + 1] - f[k - 1]) / (2.0 * h);
    }
    out
}

/// Map a path to its unit-rate clocks `w_α = z_α ∘ Λ_α⁻¹`.
///
/// `Λ_α` is accumulated with the endpoint-corrected trapezoid rule, which is
/// fourth order on smooth rates.
pub fn time_rescale_map(path: &SmoothPath, net: &ReactionNetwork) -> Result<TimeRescaling> {
    path.check(net)?;
    let n = path.nodes();
    let h = path.step();
    let mm = net.len();
    let mut cumulative = Vec::with_capacity(mm);
    let mut paths = Vec::with_capacity(mm);
    for a in 0..mm {
        let mut rates = Vec::with_capacity(n);
        for i in 0..n {
            rates.push(net.intensity(a, &path.x[i], &path.u[i])?);
        }
        if let Some(first) = rates.iter().position(|&l| l <= RATE_FLOOR) {
            let last = (first..n).take_while(|&i| rates[i] <= RATE_FLOOR).last().unwrap_or(first);
            return Err(Error::RateFloor {
                reaction: a,
                t_start: path.t[first],
                t_end: path.t[last],
            });
        }
        let slope = grid_derivative(&rates, h);
        let mut lam = vec![0.0; n];
        for i in 0..n - 1 {
            lam[i + 1] =
                lam[i] + 0.5 * h * (rates[i] + rates[i + 1]) + h * h / 12.0 * (slope[i] - slope[i + 1]);
        }
        let w: Vec<f64> = (0..n).map(|i| path.z[i][a] - path.z[0][a]).collect();
        paths.push(RescaledPath::from_nodes(lam.clone(), w)?);
        cumulative.push(lam);
    }
    Ok(TimeRescaling {
        t: path.t.clone(),
        cumulative,
        paths,
    })
}

/// Rebuild the path from its clocks by integrating `(Λ, u)` forward with
/// `z_α = w_α(Λ_α)`, starting from the model's initial state.
pub fn inverse_time_rescale(w: &[RescaledPath], model: &PdmpModel, t: &[f64]) -> Result<SmoothPath> {
    let net = model.network();
    let mm = net.len();
    let d = net.species();
    let m = net.slow_dim();
    if w.len() != mm {
        return Err(Error::Domain(format!("expected {mm} rescaled paths, got {}", w.len())));
    }
    for (a, p) in w.iter().enumerate() {
        if p.s[0] != 0.0 || p.w[0].abs() > 1e-12 {
            return Err(Error::Domain(format!("rescaled path {a} must start at w(0) = 0")));
        }
    }
    if t.len() < 2 || t[0] != 0.0 {
        return Err(Error::Domain("output grid must start at 0 and have at least two nodes".into()));
    }
    let x0 = model.x0().to_vec();
    let mut y0 = vec![0.0; mm + m];
    y0[mm..].copy_from_slice(model.u0());
    let mut z = vec![0.0; mm];
    let mut x = vec![0.0; d];
    let mut floor_hit: Option<(usize, f64)> = None;
    let mut bad_rate: Option<(usize, f64)> = None;
    let rhs = |time: f64, y: &[f64], dy: &mut [f64]| {
        for a in 0..mm {
            z[a] = w[a].eval(y[a]);
        }
        net.concentration(&x0, &z, &mut x);
        let u = &y[mm..];
        for a in 0..mm {
            let l = net.rate(a, &x, u);
            if !(l >= 0.0) || !l.is_finite() {
                bad_rate.get_or_insert((a, l));
                dy[a] = f64::NAN;
            } else {
                if l <= RATE_FLOOR {
                    floor_hit.get_or_insert((a, time));
                }
                dy[a] = l;
            }
        }
        model.drift(u, &x, &mut dy[mm..]);
    };
    let sol = integrate(rhs, 0.0, &y0, t[t.len() - 1], Tolerances::SHOOTING);
    if let Some((a, l)) = bad_rate {
        return Err(Error::model_eval(format!("intensity of reaction {a} during reconstruction"), l));
    }
    let sol = sol?;
    if let Some((a, time)) = floor_hit {
        return Err(Error::RateFloor {
            reaction: a,
            t_start: time,
            t_end: time,
        });
    }
    let mut zs = Vec::with_capacity(t.len());
    let mut xs = Vec::with_capacity(t.len());
    let mut us = Vec::with_capacity(t.len());
    let mut y = vec![0.0; mm + m];
    for &ti in t {
        sol.eval(ti, &mut y);
        let zi: Vec<f64> = (0..mm).map(|a| w[a].eval(y[a])).collect();
        let mut xi = vec![0.0; d];
        net.concentration(&x0, &zi, &mut xi);
        zs.push(zi);
        xs.push(xi);
        us.push(y[mm..].to_vec());
    }
    SmoothPath::new(t.to_vec(), zs, xs, us)
}
