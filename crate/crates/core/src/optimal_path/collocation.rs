//! Direct minimization of the discretized action over piecewise-linear
//! concentration paths.
//!
//! `x` is linear between uniform nodes with both endpoints fixed, `u` follows
//! `u̇ = A(u, x)` by classical RK4 within each interval, and the action is
//! Simpson's rule for `L̂` on each interval. Interior nodes are optimized by projected
//! L-BFGS with central-difference gradients. This shares nothing with the
//! shooting solver beyond `L̂` itself, so it serves as an oracle for it.

use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ldp::{ContractedCalculus, ContractedDerivatives};
use crate::model::PdmpModel;
use crate::optimal_path::el::calculus_for;
use crate::simulate::deterministic_limit;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CollocationOptions {
    pub nodes: usize,
    /// RK4 substeps per interval for `u`, rounded up to an even number.
    pub substeps: usize,
    /// Box constraints on each species.
    pub bounds: Option<Vec<(f64, f64)>>,
    pub max_iterations: usize,
    /// Stop when the projected gradient's max-norm falls below this.
    pub gradient_tolerance: f64,
    pub memory: usize,
}

impl Default for CollocationOptions {
    fn default() -> Self {
        CollocationOptions {
            nodes: 128,
            substeps: 4,
            bounds: None,
            max_iterations: 20_000,
            gradient_tolerance: 1e-11,
            memory: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollocationResult {
    pub t: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub action: f64,
    pub iterations: usize,
    pub projected_gradient: f64,
    pub converged: bool,
}

struct Discretization<'a> {
    model: &'a PdmpModel,
    calculus: Arc<dyn ContractedCalculus>,
    d: usize,
    m: usize,
    n: usize,
    h: f64,
    substeps: usize,
    x_start: Vec<f64>,
    x_end: Vec<f64>,
}

/// Per-node `u` and per-interval cost of one path.
struct Evaluation {
    u: Vec<Vec<f64>>,
    cost: Vec<f64>,
}

impl Discretization<'_> {
    fn node<'v>(&'v self, vars: &'v [f64], k: usize) -> &'v [f64] {
        if k == 0 {
            &self.x_start
        } else if k == self.n - 1 {
            &self.x_end
        } else {
            &vars[(k - 1) * self.d..k * self.d]
        }
    }

    fn lhat(&self, der: &mut ContractedDerivatives, v: &[f64], x: &[f64], u: &[f64]) -> f64 {
        match self.calculus.derivatives(v, x, u, der) {
            Ok(()) if der.value.is_finite() => der.value,
            _ => f64::INFINITY,
        }
    }

    /// Advance `u` across interval `k` and return the interval cost.
    fn interval(&self, vars: &[f64], k: usize, u: &mut [f64], der: &mut ContractedDerivatives) -> f64 {
        let d = self.d;
        let (xa, xb) = (self.node(vars, k), self.node(vars, k + 1));
        let v: Vec<f64> = (0..d).map(|i| (xb[i] - xa[i]) / self.h).collect();
        let xm: Vec<f64> = (0..d).map(|i| 0.5 * (xa[i] + xb[i])).collect();
        let first = self.lhat(der, &v, xa, u);
        if !first.is_finite() {
            return f64::INFINITY;
        }
        let half = self.substeps.div_ceil(2);
        let dt = 0.5 * self.h / half as f64;
        self.advance(xa, &v, 0.0, dt, half, u);
        let middle = self.lhat(der, &v, &xm, u);
        self.advance(xa, &v, 0.5 * self.h, dt, half, u);
        let last = self.lhat(der, &v, xb, u);
        self.h / 6.0 * (first + 4.0 * middle + last)
    }

    /// `steps` RK4 steps of `u̇ = A(u, xa + s v)` from `s = s0`.
    fn advance(&self, xa: &[f64], v: &[f64], s0: f64, dt: f64, steps: usize, u: &mut [f64]) {
        let (d, m) = (self.d, self.m);
        if m == 0 {
            return;
        }
        let mut x = vec![0.0; d];
        let mut k1 = vec![0.0; m];
        let mut k2 = vec![0.0; m];
        let mut k3 = vec![0.0; m];
        let mut k4 = vec![0.0; m];
        let mut tmp = vec![0.0; m];
        let at = |s: f64, x: &mut [f64]| {
            for i in 0..d {
                x[i] = xa[i] + s * v[i];
            }
        };
        for j in 0..steps {
            let s = s0 + j as f64 * dt;
            at(s, &mut x);
            self.model.drift(u, &x, &mut k1);
            at(s + 0.5 * dt, &mut x);
            for c in 0..m {
                tmp[c] = u[c] + 0.5 * dt * k1[c];
            }
            self.model.drift(&tmp, &x, &mut k2);
            for c in 0..m {
                tmp[c] = u[c] + 0.5 * dt * k2[c];
            }
            self.model.drift(&tmp, &x, &mut k3);
            at(s + dt, &mut x);
            for c in 0..m {
                tmp[c] = u[c] + dt * k3[c];
            }
            self.model.drift(&tmp, &x, &mut k4);
            for c in 0..m {
                u[c] += dt / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
            }
        }
    }

    fn evaluate(&self, vars: &[f64]) -> Evaluation {
        let mut der = ContractedDerivatives::zeros(self.d, self.m, self.model.reactions());
        let mut u = vec![self.model.u0().to_vec()];
        let mut cost = Vec::with_capacity(self.n - 1);
        let mut cur = self.model.u0().to_vec();
        for k in 0..self.n - 1 {
            cost.push(self.interval(vars, k, &mut cur, &mut der));
            u.push(cur.clone());
        }
        Evaluation { u, cost }
    }

    /// Action with interval costs before `from` taken from `base`.
    fn tail(&self, vars: &[f64], base: &Evaluation, prefix: &[f64], from: usize) -> f64 {
        let mut der = ContractedDerivatives::zeros(self.d, self.m, self.model.reactions());
        let mut cur = base.u[from].clone();
        let mut total = prefix[from];
        for k in from..self.n - 1 {
            total += self.interval(vars, k, &mut cur, &mut der);
        }
        total
    }

    fn value_and_gradient(&self, vars: &[f64], bounds: &[(f64, f64)]) -> (f64, Vec<f64>) {
        let base = self.evaluate(vars);
        let mut prefix = vec![0.0; self.n];
        for k in 0..self.n - 1 {
            prefix[k + 1] = prefix[k] + base.cost[k];
        }
        let value = prefix[self.n - 1];
        let mut grad = vec![0.0; vars.len()];
        let mut work = vars.to_vec();
        for c in 0..vars.len() {
            let node = c / self.d + 1;
            let (lo, hi) = bounds[c % self.d];
            let step = 1e-6 * vars[c].abs().max(1.0);
            let orig = vars[c];
            let up = (orig + step).min(hi);
            let down = (orig - step).max(lo);
            work[c] = up;
            let fp = self.tail(&work, &base, &prefix, node - 1);
            work[c] = down;
            let fm = self.tail(&work, &base, &prefix, node - 1);
            work[c] = orig;
            grad[c] = if up > down { (fp - fm) / (up - down) } else { 0.0 };
        }
        (value, grad)
    }
}

fn project(vars: &mut [f64], bounds: &[(f64, f64)], d: usize) {
    for (c, v) in vars.iter_mut().enumerate() {
        let (lo, hi) = bounds[c % d];
        *v = v.clamp(lo, hi);
    }
}

fn projected_gradient(vars: &[f64], grad: &[f64], bounds: &[(f64, f64)], d: usize) -> Vec<f64> {
    vars.iter()
        .zip(grad)
        .enumerate()
        .map(|(c, (&v, &g))| {
            let (lo, hi) = bounds[c % d];
            if (v <= lo && g > 0.0) || (v >= hi && g < 0.0) {
                0.0
            } else {
                g
            }
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimize the discretized action from `x0` to `x̂` over `[0, T]`.
///
/// The initial path is the deterministic flow shifted linearly onto the
/// target.
pub fn collocate(
    model: &PdmpModel,
    x_target: &[f64],
    horizon: f64,
    options: &CollocationOptions,
) -> Result<CollocationResult> {
    let d = model.species();
    let mut problems = Vec::new();
    if options.nodes < 3 {
        problems.push("collocation needs at least 3 nodes".to_string());
    }
    if options.substeps == 0 {
        problems.push("collocation needs at least one RK4 substep".to_string());
    }
    if x_target.len() != d {
        problems.push(format!("target has {} components, expected {d}", x_target.len()));
    }
    if !(horizon > 0.0) || !horizon.is_finite() {
        problems.push(format!("horizon must be positive and finite, got {horizon}"));
    }
    let bounds = options
        .bounds
        .clone()
        .unwrap_or_else(|| vec![(0.0, f64::INFINITY); d]);
    if bounds.len() != d || bounds.iter().any(|(lo, hi)| !(lo <= hi)) {
        problems.push("bounds must give one ordered pair per species".to_string());
    }
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    let n = options.nodes;
    let disc = Discretization {
        model,
        calculus: calculus_for(model),
        d,
        m: model.slow_dim(),
        n,
        h: horizon / (n - 1) as f64,
        substeps: options.substeps,
        x_start: model.x0().to_vec(),
        x_end: x_target.to_vec(),
    };
    let det = deterministic_limit(model, horizon)?;
    let end = det.state(horizon).x;
    let mut vars = Vec::with_capacity((n - 2) * d);
    for k in 1..n - 1 {
        let t = horizon * k as f64 / (n - 1) as f64;
        let s = det.state(t);
        for i in 0..d {
            vars.push(s.x[i] + (x_target[i] - end[i]) * t / horizon);
        }
    }
    project(&mut vars, &bounds, d);

    let (mut f, mut g) = disc.value_and_gradient(&vars, &bounds);
    if !f.is_finite() {
        return Err(Error::Domain("the initial collocation path has infinite action".into()));
    }
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;
    let mut stalled = 0;
    let mut pg_norm = f64::INFINITY;
    let mut converged = false;
    while iterations < options.max_iterations {
        let pg = projected_gradient(&vars, &g, &bounds, d);
        pg_norm = pg.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if pg_norm <= options.gradient_tolerance || stalled >= 8 {
            converged = true;
            break;
        }
        iterations += 1;

        // two-loop recursion on the projected gradient
        let mut q = pg.clone();
        let mut alphas = Vec::with_capacity(memory.len());
        for (s, y, rho) in memory.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = memory.back() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        } else {
            let scale = 1e-2 / pg_norm.max(1e-300);
            q.iter_mut().for_each(|v| *v *= scale);
        }
        for ((s, y, rho), a) in memory.iter().zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += (a - b) * si;
            }
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        for (c, di) in dir.iter_mut().enumerate() {
            let (lo, hi) = bounds[c % d];
            if (vars[c] <= lo && *di < 0.0) || (vars[c] >= hi && *di > 0.0) {
                *di = 0.0;
            }
        }
        if dot(&dir, &pg) >= 0.0 {
            memory.clear();
            let scale = 1e-2 / pg_norm.max(1e-300);
            dir = pg.iter().map(|v| -v * scale).collect();
        }

        let mut step = 1.0;
        let accepted = loop {
            let mut trial: Vec<f64> = vars.iter().zip(&dir).map(|(v, di)| v + step * di).collect();
            project(&mut trial, &bounds, d);
            let delta: Vec<f64> = trial.iter().zip(&vars).map(|(a, b)| a - b).collect();
            let (ft, gt) = disc.value_and_gradient(&trial, &bounds);
            if ft.is_finite() && ft <= f + 1e-4 * dot(&g, &delta) {
                break Some((trial, delta, ft, gt));
            }
            step *= 0.5;
            if step < 1e-12 {
                break None;
            }
        };
        let Some((trial, s, ft, gt)) = accepted else {
            converged = pg_norm <= 1e3 * options.gradient_tolerance;
            break;
        };
        let y: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-16 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() && sy > 0.0 {
            memory.push_back((s, y, 1.0 / sy));
            if memory.len() > options.memory {
                memory.pop_front();
            }
        }
        stalled = if (f - ft).abs() <= 1e-15 * f.abs().max(1e-12) { stalled + 1 } else { 0 };
        vars = trial;
        f = ft;
        g = gt;
    }

    let eval = disc.evaluate(&vars);
    let t = (0..n).map(|k| horizon * k as f64 / (n - 1) as f64).collect();
    let x = (0..n).map(|k| disc.node(&vars, k).to_vec()).collect();
    Ok(CollocationResult {
        t,
        x,
        u: eval.u,
        action: eval.cost.iter().sum(),
        iterations,
        projected_gradient: pg_norm,
        converged,
    })
}
