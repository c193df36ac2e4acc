//! Shooting and multiple shooting for the Euler-Lagrange boundary-value
//! problem.
//!
//! Unknowns at `t = 0` are the initial velocity (`ẋ` or `ż`) and `η(0)`;
//! the terminal constraints are the target and `η(T) = 0`. The horizon is cut
//! into segments whose interior node states are extra unknowns matched by
//! continuity residuals, which keeps the unstable Euler-Lagrange flow from
//! amplifying Newton errors over long horizons.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ldp::{ContractedCalculus, ContractedDerivatives, SmoothPath};
use crate::model::{PdmpModel, ReactionNetwork};
use crate::ode::{integrate_limited, DenseSolution, Tolerances};
use crate::optimal_path::el::{calculus_for, ContractedRhs, ELState, FluxRhs};
use crate::simulate::{deterministic_flow, DeterministicPath};

/// What the path must reach at `T`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Target {
    /// `x(T) = x̂`, solved in contracted form.
    Concentration(Vec<f64>),
    /// `z(T) = z*`, solved in flux form.
    Flux(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ElForm {
    Contracted,
    Flux,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShootingOptions {
    pub tolerances: Tolerances,
    /// Max-norm bound on the terminal and continuity residuals.
    pub residual_tolerance: f64,
    pub max_iterations: usize,
    /// Number of shooting segments; `None` uses `max(1, ⌈2T⌉)`.
    pub segments: Option<usize>,
    /// Multipliers applied to the guessed initial velocity.
    pub velocity_scales: Vec<f64>,
    /// Values added to every component of `η(0)`.
    pub eta_offsets: Vec<f64>,
    /// Target continuation steps tried when no start converges; 0 disables.
    pub continuation_steps: usize,
    /// Accepted-step budget per segment integration.
    pub max_steps: usize,
}

impl Default for ShootingOptions {
    fn default() -> Self {
        ShootingOptions {
            tolerances: Tolerances::SHOOTING,
            residual_tolerance: 1e-8,
            max_iterations: 60,
            segments: None,
            velocity_scales: vec![0.5, 1.0, 2.0],
            eta_offsets: vec![0.0, 0.1, -0.1],
            continuation_steps: 8,
            max_steps: 200_000,
        }
    }
}

/// Two-point boundary-value problem for an optimal path from the model's
/// initial state.
#[derive(Debug, Clone)]
pub struct ShootingProblem<'a> {
    pub model: &'a PdmpModel,
    pub horizon: f64,
    pub target: Target,
    pub options: ShootingOptions,
}

impl<'a> ShootingProblem<'a> {
    pub fn concentration(model: &'a PdmpModel, x_target: Vec<f64>, horizon: f64) -> Self {
        ShootingProblem {
            model,
            horizon,
            target: Target::Concentration(x_target),
            options: ShootingOptions::default(),
        }
    }

    pub fn flux(model: &'a PdmpModel, z_target: Vec<f64>, horizon: f64) -> Self {
        ShootingProblem {
            model,
            horizon,
            target: Target::Flux(z_target),
            options: ShootingOptions::default(),
        }
    }

    pub fn with_options(mut self, options: ShootingOptions) -> Self {
        self.options = options;
        self
    }

    pub fn form(&self) -> ElForm {
        match self.target {
            Target::Concentration(_) => ElForm::Contracted,
            Target::Flux(_) => ElForm::Flux,
        }
    }

    /// Unknowns at `t = 0`: the initial velocity and `η(0)`.
    pub fn unknowns(&self) -> usize {
        let m = self.model.slow_dim();
        match self.form() {
            ElForm::Contracted => self.model.species() + m,
            ElForm::Flux => self.model.reactions() + m,
        }
    }

    /// Terminal constraints: the target and `η(T) = 0`.
    pub fn constraints(&self) -> usize {
        let m = self.model.slow_dim();
        match &self.target {
            Target::Concentration(x) | Target::Flux(x) => x.len() + m,
        }
    }

    pub fn segments(&self) -> usize {
        self.options
            .segments
            .unwrap_or_else(|| ((2.0 * self.horizon).ceil() as usize).max(1))
            .max(1)
    }

    fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            problems.push(format!("horizon must be positive and finite, got {}", self.horizon));
        }
        let (want, got, what) = match &self.target {
            Target::Concentration(x) => (self.model.species(), x, "concentration"),
            Target::Flux(z) => (self.model.reactions(), z, "flux"),
        };
        if got.len() != want {
            problems.push(format!("{what} target has {} components, expected {want}", got.len()));
        }
        if got.iter().any(|v| !v.is_finite()) {
            problems.push(format!("{what} target is not finite"));
        }
        if got.len() == want && self.unknowns() != self.constraints() {
            problems.push("unknown and constraint counts differ".into());
        }
        let o = &self.options;
        if !(o.residual_tolerance > 0.0) {
            problems.push("residual tolerance must be positive".into());
        }
        if o.velocity_scales.is_empty() || o.eta_offsets.is_empty() {
            problems.push("the multi-start grid is empty".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    /// Unknowns of the deterministic flow: its initial velocity and `η = 0`.
    pub fn deterministic_guess(&self) -> Result<Vec<f64>> {
        let det = self.deterministic()?;
        let sys = System::new(self, self.target_values().to_vec());
        let core = sys.deterministic_core(&det, 0.0);
        let mut v = core[sys.n_pos..2 * sys.n_pos].to_vec();
        v.resize(sys.free, 0.0);
        Ok(v)
    }

    fn target_values(&self) -> &[f64] {
        match &self.target {
            Target::Concentration(v) | Target::Flux(v) => v,
        }
    }

    fn deterministic(&self) -> Result<DeterministicPath> {
        deterministic_flow(
            self.model,
            self.model.x0(),
            self.model.u0(),
            self.horizon,
            self.options.tolerances,
        )
    }
}

/// Flat layout of one form. The core state is
/// `[position (p), velocity (p), u (m), η (m)]`, followed by auxiliary
/// quadratures: fluxes (contracted form only) and the action.
struct System<'p, 'a> {
    problem: &'p ShootingProblem<'a>,
    form: ElForm,
    target: Vec<f64>,
    n_pos: usize,
    m: usize,
    core: usize,
    aux: usize,
    free: usize,
}

impl<'p, 'a> System<'p, 'a> {
    fn new(problem: &'p ShootingProblem<'a>, target: Vec<f64>) -> Self {
        let model = problem.model;
        let form = problem.form();
        let m = model.slow_dim();
        let n_pos = match form {
            ElForm::Contracted => model.species(),
            ElForm::Flux => model.reactions(),
        };
        let aux = match form {
            ElForm::Contracted => model.reactions() + 1,
            ElForm::Flux => 1,
        };
        System {
            problem,
            form,
            target,
            n_pos,
            m,
            core: 2 * n_pos + 2 * m,
            aux,
            free: n_pos + m,
        }
    }

    fn full(&self) -> usize {
        self.core + self.aux
    }

    /// Full state at `t = 0` from the unknowns.
    fn initial(&self, unknowns: &[f64]) -> Vec<f64> {
        let model = self.problem.model;
        let (p, m) = (self.n_pos, self.m);
        let mut y = vec![0.0; self.full()];
        if self.form == ElForm::Contracted {
            y[..p].copy_from_slice(model.x0());
        }
        y[p..2 * p].copy_from_slice(&unknowns[..p]);
        y[2 * p..2 * p + m].copy_from_slice(model.u0());
        y[2 * p + m..self.core].copy_from_slice(&unknowns[p..p + m]);
        y
    }

    fn terminal(&self, y: &[f64], res: &mut [f64]) {
        let (p, m) = (self.n_pos, self.m);
        for i in 0..p {
            res[i] = y[i] - self.target[i];
        }
        res[p..p + m].copy_from_slice(&y[2 * p + m..2 * p + 2 * m]);
    }

    /// Deterministic flow shifted linearly onto the target, with `η = 0`.
    fn guess_core(&self, det: &DeterministicPath, t: f64) -> Vec<f64> {
        let mut y = self.deterministic_core(det, t);
        let horizon = self.problem.horizon;
        let end = self.deterministic_core(det, horizon);
        let p = self.n_pos;
        for i in 0..p {
            let shift = self.target[i] - end[i];
            y[i] += shift * t / horizon;
            y[p + i] += shift / horizon;
            if self.form == ElForm::Flux {
                let floor = 1e-3 * end[p + i].abs().max(1e-3);
                y[p + i] = y[p + i].max(floor);
            }
        }
        y
    }

    fn deterministic_core(&self, det: &DeterministicPath, t: f64) -> Vec<f64> {
        let model = self.problem.model;
        let net = model.network();
        let s = det.state(t);
        let (p, m) = (self.n_pos, self.m);
        let rates: Vec<f64> = (0..net.len()).map(|a| net.rate(a, &s.x, &s.u).max(0.0)).collect();
        let mut y = vec![0.0; self.core];
        match self.form {
            ElForm::Contracted => {
                y[..p].copy_from_slice(&s.x);
                net.velocity(&rates, &mut y[p..2 * p]);
            }
            ElForm::Flux => {
                y[..p].copy_from_slice(&s.z);
                y[p..2 * p].copy_from_slice(&rates);
            }
        }
        y[2 * p..2 * p + m].copy_from_slice(&s.u);
        y
    }

    fn integrate(&self, t0: f64, t1: f64, y0: &[f64]) -> Result<DenseSolution> {
        let model = self.problem.model;
        let opts = &self.problem.options;
        let (core, aux) = (self.core, self.aux);
        let mut failure: Option<Error> = None;
        let result = match self.form {
            ElForm::Contracted => {
                let mut rhs = ContractedRhs::new(model);
                let mut f = |_t: f64, y: &[f64], dy: &mut [f64]| match rhs.eval(&y[..core], &mut dy[..core]) {
                    Ok(value) => {
                        let fl = &rhs.derivatives().fluxes;
                        dy[core..core + fl.len()].copy_from_slice(fl);
                        dy[core + aux - 1] = value;
                    }
                    Err(e) => {
                        failure.get_or_insert(e);
                        dy.iter_mut().for_each(|v| *v = f64::NAN);
                    }
                };
                integrate_limited(&mut f, t0, y0, t1, opts.tolerances, opts.max_steps)
            }
            ElForm::Flux => {
                let mut rhs = FluxRhs::new(model);
                let mut f = |_t: f64, y: &[f64], dy: &mut [f64]| match rhs.eval(&y[..core], &mut dy[..core]) {
                    Ok(value) => dy[core] = value,
                    Err(e) => {
                        failure.get_or_insert(e);
                        dy.iter_mut().for_each(|v| *v = f64::NAN);
                    }
                };
                integrate_limited(&mut f, t0, y0, t1, opts.tolerances, opts.max_steps)
            }
        };
        result.map_err(|e| {
            let time = match &e {
                Error::Integration { time, .. } => *time,
                _ => t0,
            };
            let reason = match failure {
                Some(inner) => inner.to_string(),
                None => e.to_string(),
            };
            Error::Shooting { time, reason }
        })
    }

    fn node_times(&self, segments: usize) -> Vec<f64> {
        let horizon = self.problem.horizon;
        (0..=segments)
            .map(|j| if j == segments { horizon } else { horizon * j as f64 / segments as f64 })
            .collect()
    }
}

/// Integrate from the given unknowns over `[0, T]` and return the terminal
/// residual: `(x(T) − x̂, η(T))` or `(z(T) − z*, η(T))`.
///
/// A trajectory that blows up is reported as [`Error::Shooting`] with the
/// escape time.
pub fn shoot(problem: &ShootingProblem<'_>, guess: &[f64]) -> Result<Vec<f64>> {
    problem.validate()?;
    if guess.len() != problem.unknowns() || guess.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain(format!(
            "shooting guess must have {} finite components",
            problem.unknowns()
        )));
    }
    let sys = System::new(problem, problem.target_values().to_vec());
    let sol = sys.integrate(0.0, problem.horizon, &sys.initial(guess))?;
    let mut res = vec![0.0; sys.free];
    sys.terminal(&sol.final_state(), &mut res);
    Ok(res)
}

/// Multiple-shooting unknowns and residuals for one target.
struct Multiple<'s, 'p, 'a> {
    sys: &'s System<'p, 'a>,
    times: Vec<f64>,
}

impl Multiple<'_, '_, '_> {
    fn segments(&self) -> usize {
        self.times.len() - 1
    }

    fn len(&self) -> usize {
        self.sys.free + (self.segments() - 1) * self.sys.core
    }

    fn start(&self, w: &[f64], j: usize) -> Vec<f64> {
        let sys = self.sys;
        if j == 0 {
            return sys.initial(&w[..sys.free]);
        }
        let off = sys.free + (j - 1) * sys.core;
        let mut y = vec![0.0; sys.full()];
        y[..sys.core].copy_from_slice(&w[off..off + sys.core]);
        y
    }

    fn segment_end(&self, w: &[f64], j: usize) -> Result<Vec<f64>> {
        let sol = self.sys.integrate(self.times[j], self.times[j + 1], &self.start(w, j))?;
        Ok(sol.final_state())
    }

    /// Write segment `j`'s contribution `e_j` into its residual block.
    fn block(&self, w: &[f64], j: usize, end: &[f64], out: &mut [f64]) {
        let sys = self.sys;
        if j + 1 == self.segments() {
            sys.terminal(end, out);
        } else {
            let next = &w[sys.free + j * sys.core..sys.free + (j + 1) * sys.core];
            for i in 0..sys.core {
                out[i] = end[i] - next[i];
            }
        }
    }

    fn block_range(&self, j: usize) -> std::ops::Range<usize> {
        let core = self.sys.core;
        if j + 1 == self.segments() {
            j * core..j * core + self.sys.free
        } else {
            j * core..(j + 1) * core
        }
    }

    fn residual(&self, w: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let ends = (0..self.segments())
            .map(|j| self.segment_end(w, j))
            .collect::<Result<Vec<_>>>()?;
        let mut r = vec![0.0; self.len()];
        for (j, end) in ends.iter().enumerate() {
            let range = self.block_range(j);
            self.block(w, j, end, &mut r[range]);
        }
        Ok((r, ends))
    }

    /// Forward-difference Jacobian using the block-bidiagonal structure.
    fn jacobian(&self, w: &[f64], ends: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        let sys = self.sys;
        let n = self.len();
        let columns: Vec<(usize, Vec<f64>)> = (0..n)
            .into_par_iter()
            .map(|c| {
                let j = if c < sys.free { 0 } else { 1 + (c - sys.free) / sys.core };
                let h = 1e-7 * w[c].abs().max(1.0);
                let mut wp = w.to_vec();
                wp[c] += h;
                let end = self.segment_end(&wp, j)?;
                let range = self.block_range(j);
                let mut base = vec![0.0; range.len()];
                let mut pert = vec![0.0; range.len()];
                self.block(w, j, &ends[j], &mut base);
                self.block(&wp, j, &end, &mut pert);
                let col: Vec<f64> = base.iter().zip(&pert).map(|(b, p)| (p - b) / h).collect();
                Ok((c, col))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut jac = DMatrix::zeros(n, n);
        for (c, col) in columns {
            let j = if c < sys.free { 0 } else { 1 + (c - sys.free) / sys.core };
            for (k, v) in self.block_range(j).zip(col) {
                jac[(k, c)] = v;
            }
            // −I from the continuity residual of the previous segment
            if j >= 1 {
                let local = (c - sys.free) % sys.core;
                jac[((j - 1) * sys.core + local, c)] -= 1.0;
            }
        }
        Ok(jac)
    }
}

/// One Newton iteration of one start.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub start: usize,
    pub iteration: usize,
    pub residual: f64,
    pub damping: f64,
}

/// Outcome of one multi-start.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StartSummary {
    pub start: usize,
    pub velocity_scale: f64,
    pub eta_offset: f64,
    pub converged: bool,
    pub residual: f64,
    pub action: Option<f64>,
    pub iterations: usize,
    pub message: Option<String>,
}

struct NewtonRun {
    w: Vec<f64>,
    residual: f64,
    log: Vec<IterationRecord>,
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

fn newton(ms: &Multiple<'_, '_, '_>, mut w: Vec<f64>, start: usize) -> std::result::Result<NewtonRun, (String, Vec<IterationRecord>)> {
    let opts = &ms.sys.problem.options;
    let mut log = Vec::new();
    let (mut r, mut ends) = match ms.residual(&w) {
        Ok(v) => v,
        Err(e) => return Err((format!("initial guess: {e}"), log)),
    };
    let mut damping = 1.0;
    for iteration in 0..=opts.max_iterations {
        let norm = max_norm(&r);
        log.push(IterationRecord {
            start,
            iteration,
            residual: norm,
            damping,
        });
        if norm <= opts.residual_tolerance {
            return Ok(NewtonRun { w, residual: norm, log });
        }
        if iteration == opts.max_iterations {
            break;
        }
        let jac = match ms.jacobian(&w, &ends) {
            Ok(j) => j,
            Err(e) => return Err((format!("Jacobian: {e}"), log)),
        };
        let step = match jac.lu().solve(&DVector::from_vec(r.iter().map(|v| -v).collect())) {
            Some(s) if s.iter().all(|v| v.is_finite()) => s,
            _ => return Err(("singular Jacobian".into(), log)),
        };
        let norm2 = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        damping = 1.0;
        loop {
            let trial: Vec<f64> = w.iter().zip(step.iter()).map(|(a, b)| a + damping * b).collect();
            if let Ok((rt, et)) = ms.residual(&trial) {
                let nt = rt.iter().map(|v| v * v).sum::<f64>().sqrt();
                if nt < norm2 || max_norm(&rt) <= opts.residual_tolerance {
                    w = trial;
                    r = rt;
                    ends = et;
                    break;
                }
            }
            damping *= 0.5;
            if damping < 1.0 / 4096.0 {
                return Err((format!("line search stalled at residual {norm:e}"), log));
            }
        }
    }
    Err((
        format!("no convergence in {} iterations (residual {:e})", opts.max_iterations, max_norm(&r)),
        log,
    ))
}

/// A solved optimal path with its multipliers.
#[derive(Clone)]
pub struct OptimalTrajectory {
    form: ElForm,
    network: ReactionNetwork,
    calculus: Arc<dyn ContractedCalculus>,
    x0: Vec<f64>,
    slow_dim: usize,
    horizon: f64,
    times: Vec<f64>,
    segments: Vec<DenseSolution>,
    /// Auxiliary offsets (fluxes, action) at each segment start.
    offsets: Vec<Vec<f64>>,
    core: usize,
    /// `𝒥_T` of the path.
    pub action: f64,
    /// Max-norm of the terminal and continuity residuals.
    pub residual: f64,
    pub start: usize,
    pub starts: Vec<StartSummary>,
    pub iterations: Vec<IterationRecord>,
}

impl std::fmt::Debug for OptimalTrajectory {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OptimalTrajectory")
            .field("form", &self.form)
            .field("horizon", &self.horizon)
            .field("segments", &self.segments.len())
            .field("action", &self.action)
            .field("residual", &self.residual)
            .field("start", &self.start)
            .finish()
    }
}

impl OptimalTrajectory {
    pub fn form(&self) -> ElForm {
        self.form
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn network(&self) -> &ReactionNetwork {
        &self.network
    }

    fn raw(&self, t: f64) -> Vec<f64> {
        let t = t.clamp(0.0, self.horizon);
        let j = match self.times.binary_search_by(|s| s.partial_cmp(&t).expect("NaN time")) {
            Ok(i) => i.min(self.segments.len() - 1),
            Err(i) => i.saturating_sub(1).min(self.segments.len() - 1),
        };
        let mut y = self.segments[j].at(t);
        for (v, o) in y[self.core..].iter_mut().zip(&self.offsets[j]) {
            *v += o;
        }
        y
    }

    /// Action accumulated up to `t`.
    pub fn action_until(&self, t: f64) -> f64 {
        *self.raw(t).last().expect("action quadrature")
    }

    /// State at `t` with fluxes and their rates.
    pub fn state(&self, t: f64) -> Result<ELState> {
        let y = self.raw(t);
        let net = &self.network;
        let (d, m, mm) = (net.species(), self.slow_dim, net.len());
        match self.form {
            ElForm::Contracted => {
                let (x, v, u) = (&y[..d], &y[d..2 * d], &y[2 * d..2 * d + m]);
                let mut der = ContractedDerivatives::zeros(d, m, mm);
                self.calculus.derivatives(v, x, u, &mut der)?;
                Ok(ELState {
                    t,
                    x: x.to_vec(),
                    xdot: v.to_vec(),
                    u: u.to_vec(),
                    eta: y[2 * d + m..2 * d + 2 * m].to_vec(),
                    z: Some(y[self.core..self.core + mm].to_vec()),
                    zdot: Some(der.fluxes),
                })
            }
            ElForm::Flux => {
                let mut x = vec![0.0; d];
                let mut xd = vec![0.0; d];
                net.concentration(&self.x0, &y[..mm], &mut x);
                net.velocity(&y[mm..2 * mm], &mut xd);
                Ok(ELState {
                    t,
                    x,
                    xdot: xd,
                    u: y[2 * mm..2 * mm + m].to_vec(),
                    eta: y[2 * mm + m..2 * mm + 2 * m].to_vec(),
                    z: Some(y[..mm].to_vec()),
                    zdot: Some(y[mm..2 * mm].to_vec()),
                })
            }
        }
    }

    /// States on `nodes` uniformly spaced times of `[0, T]`.
    pub fn sample(&self, nodes: usize) -> Result<Vec<ELState>> {
        let n = nodes.max(2);
        (0..n)
            .map(|i| {
                let t = if i + 1 == n { self.horizon } else { self.horizon * i as f64 / (n - 1) as f64 };
                self.state(t)
            })
            .collect()
    }

    /// The path on `nodes` uniform nodes.
    pub fn path(&self, nodes: usize) -> Result<SmoothPath> {
        let states = self.sample(nodes)?;
        let t = states.iter().map(|s| s.t).collect();
        let z = states.iter().map(|s| s.z.clone().unwrap_or_default()).collect();
        let x = states.iter().map(|s| s.x.clone()).collect();
        let u = states.iter().map(|s| s.u.clone()).collect();
        SmoothPath::new(t, z, x, u)
    }

    /// `η` on `nodes` uniform nodes.
    pub fn eta(&self, nodes: usize) -> Result<Vec<Vec<f64>>> {
        Ok(self.sample(nodes)?.into_iter().map(|s| s.eta).collect())
    }
}

fn build_trajectory(
    ms: &Multiple<'_, '_, '_>,
    run: NewtonRun,
    start: usize,
    starts: Vec<StartSummary>,
    iterations: Vec<IterationRecord>,
) -> Result<OptimalTrajectory> {
    let sys = ms.sys;
    let model = sys.problem.model;
    let mut segments = Vec::with_capacity(ms.segments());
    let mut offsets = Vec::with_capacity(ms.segments());
    let mut acc = vec![0.0; sys.aux];
    for j in 0..ms.segments() {
        let sol = sys.integrate(ms.times[j], ms.times[j + 1], &ms.start(&run.w, j))?;
        offsets.push(acc.clone());
        let end = sol.final_state();
        for (a, e) in acc.iter_mut().zip(&end[sys.core..]) {
            *a += e;
        }
        segments.push(sol);
    }
    let action = *acc.last().expect("action quadrature");
    Ok(OptimalTrajectory {
        form: sys.form,
        network: model.network().clone(),
        calculus: calculus_for(model),
        x0: model.x0().to_vec(),
        slow_dim: model.slow_dim(),
        horizon: sys.problem.horizon,
        times: ms.times.clone(),
        segments,
        offsets,
        core: sys.core,
        action,
        residual: run.residual,
        start,
        starts,
        iterations,
    })
}

fn initial_unknowns(ms: &Multiple<'_, '_, '_>, det: &DeterministicPath, scale: f64, offset: f64) -> Vec<f64> {
    let sys = ms.sys;
    let (p, m) = (sys.n_pos, sys.m);
    let mut w = vec![0.0; ms.len()];
    let g0 = sys.guess_core(det, 0.0);
    for i in 0..p {
        w[i] = scale * g0[p + i];
    }
    for k in 0..m {
        w[p + k] = offset;
    }
    for j in 1..ms.segments() {
        let g = sys.deterministic_core(det, ms.times[j]);
        let off = sys.free + (j - 1) * sys.core;
        w[off..off + sys.core].copy_from_slice(&g);
    }
    w
}

/// Solve the boundary-value problem by damped Newton on the multiple-shooting
/// residuals from a grid of starts, returning the lowest-action solution.
pub fn solve_bvp(problem: &ShootingProblem<'_>) -> Result<OptimalTrajectory> {
    problem.validate()?;
    let opts = &problem.options;
    let det = problem.deterministic()?;
    let sys = System::new(problem, problem.target_values().to_vec());
    let ms = Multiple {
        sys: &sys,
        times: sys.node_times(problem.segments()),
    };
    let grid: Vec<(f64, f64)> = opts
        .velocity_scales
        .iter()
        .flat_map(|&s| opts.eta_offsets.iter().map(move |&e| (s, e)))
        .collect();
    let runs: Vec<_> = grid
        .par_iter()
        .enumerate()
        .map(|(i, &(s, e))| {
            let run = newton(&ms, initial_unknowns(&ms, &det, s, e), i);
            let action = match &run {
                Ok(r) => action_of(&ms, &r.w),
                Err(_) => None,
            };
            (run, action)
        })
        .collect();

    let mut starts = Vec::with_capacity(grid.len());
    let mut log = Vec::new();
    let mut best: Option<(usize, f64)> = None;
    let mut winners = Vec::new();
    for (i, ((run, action), &(s, e))) in runs.into_iter().zip(&grid).enumerate() {
        let (converged, residual, iterations, message) = match &run {
            Ok(r) => (true, r.residual, r.log.len(), None),
            Err((msg, l)) => (false, l.last().map_or(f64::NAN, |r| r.residual), l.len(), Some(msg.clone())),
        };
        let converged = converged && action.is_some();
        starts.push(StartSummary {
            start: i,
            velocity_scale: s,
            eta_offset: e,
            converged,
            residual,
            action,
            iterations,
            message,
        });
        match run {
            Ok(r) => {
                log.extend(r.log.iter().cloned());
                if let Some(a) = action {
                    if best.map_or(true, |(_, b)| a < b) {
                        best = Some((winners.len(), a));
                    }
                    winners.push((i, r));
                    continue;
                }
            }
            Err((_, l)) => log.extend(l),
        }
    }
    if let Some((k, _)) = best {
        let (i, run) = winners.swap_remove(k);
        return build_trajectory(&ms, run, i, starts, log);
    }

    if opts.continuation_steps > 0 {
        match continuation(problem, &det, grid.len(), &mut log) {
            Ok((ms_sys_target, run)) => {
                let sys = System::new(problem, ms_sys_target);
                let ms = Multiple {
                    sys: &sys,
                    times: sys.node_times(problem.segments()),
                };
                let action = action_of(&ms, &run.w);
                starts.push(StartSummary {
                    start: grid.len(),
                    velocity_scale: 1.0,
                    eta_offset: 0.0,
                    converged: true,
                    residual: run.residual,
                    action,
                    iterations: run.log.len(),
                    message: Some("target continuation".into()),
                });
                return build_trajectory(&ms, run, grid.len(), starts, log);
            }
            Err(msg) => starts.push(StartSummary {
                start: grid.len(),
                velocity_scale: 1.0,
                eta_offset: 0.0,
                converged: false,
                residual: f64::NAN,
                action: None,
                iterations: 0,
                message: Some(msg),
            }),
        }
    }
    Err(Error::Bvp(
        starts
            .iter()
            .map(|s| {
                format!(
                    "start {} (velocity x{}, eta {:+}): {}",
                    s.start,
                    s.velocity_scale,
                    s.eta_offset,
                    s.message.as_deref().unwrap_or("converged without a finite action")
                )
            })
            .collect(),
    ))
}

fn action_of(ms: &Multiple<'_, '_, '_>, w: &[f64]) -> Option<f64> {
    let mut total = 0.0;
    for j in 0..ms.segments() {
        let sol = ms.sys.integrate(ms.times[j], ms.times[j + 1], &ms.start(w, j)).ok()?;
        total += *sol.final_state().last()?;
    }
    (total.is_finite() && total >= -1e-12).then_some(total.max(0.0))
}

/// Walk the target from the deterministic endpoint to the requested one,
/// warm-starting each Newton solve from the previous solution.
fn continuation(
    problem: &ShootingProblem<'_>,
    det: &DeterministicPath,
    index: usize,
    log: &mut Vec<IterationRecord>,
) -> std::result::Result<(Vec<f64>, NewtonRun), String> {
    let target = problem.target_values().to_vec();
    let base_sys = System::new(problem, target.clone());
    let end = base_sys.deterministic_core(det, problem.horizon);
    let steps = problem.options.continuation_steps;
    let mut w: Option<Vec<f64>> = None;
    let mut last = None;
    for k in 1..=steps {
        let frac = k as f64 / steps as f64;
        let tk: Vec<f64> = (0..target.len())
            .map(|i| end[i] + frac * (target[i] - end[i]))
            .collect();
        let sys = System::new(problem, tk.clone());
        let ms = Multiple {
            sys: &sys,
            times: sys.node_times(problem.segments()),
        };
        let w0 = w.take().unwrap_or_else(|| initial_unknowns(&ms, det, 1.0, 0.0));
        match newton(&ms, w0, index) {
            Ok(run) => {
                log.extend(run.log.iter().cloned());
                w = Some(run.w.clone());
                last = Some((tk, run));
            }
            Err((msg, l)) => {
                log.extend(l);
                return Err(format!("continuation step {k}/{steps}: {msg}"));
            }
        }
    }
    last.ok_or_else(|| "continuation produced no solution".into())
}

/// Large-deviation estimate for reaching `x̂` at time `T`.
#[derive(Debug, Clone)]
pub struct HittingExponent {
    /// `J* = 𝒥_T` of the optimal path.
    pub j_star: f64,
    /// `N J*`.
    pub exponent: f64,
    /// `exp(−N J*)`, up to subexponential factors.
    pub probability: f64,
    pub trajectory: OptimalTrajectory,
}

pub fn hitting_exponent(model: &PdmpModel, x_target: &[f64], horizon: f64) -> Result<HittingExponent> {
    hitting_exponent_with(&ShootingProblem::concentration(model, x_target.to_vec(), horizon))
}

pub fn hitting_exponent_with(problem: &ShootingProblem<'_>) -> Result<HittingExponent> {
    let trajectory = solve_bvp(problem)?;
    let j_star = trajectory.action;
    let exponent = problem.model.scale() as f64 * j_star;
    Ok(HittingExponent {
        j_star,
        exponent,
        probability: (-exponent).exp(),
        trajectory,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ldp::ell;

    fn poisson(rate: f64) -> PdmpModel {
        let net = ReactionNetwork::builder(1, 0)
            .reaction("birth", vec![1], move |_, _| rate)
            .build()
            .unwrap();
        PdmpModel::new(net, |_, _, _| {}, vec![0.0], vec![], 100).unwrap()
    }

    /// Birth at rate 1 + u with `u̇ = x − u`, so the multiplier matters.
    fn coupled() -> PdmpModel {
        let net = ReactionNetwork::builder(1, 1)
            .reaction("birth", vec![1], |_, u| 1.0 + u[0])
            .reaction("death", vec![-1], |x, _| 2.0 * x[0])
            .build()
            .unwrap();
        PdmpModel::new(net, |u, x, a| a[0] = x[0] - u[0], vec![0.6], vec![0.3], 100).unwrap()
    }

    #[test]
    fn poisson_exponent_in_both_forms() {
        let model = poisson(1.0);
        let expected = ell(2.0).unwrap();
        let h = hitting_exponent(&model, &[2.0], 1.0).unwrap();
        assert!((h.j_star - expected).abs() < 1e-6, "{}", h.j_star);
        assert!((h.exponent - 100.0 * h.j_star).abs() < 1e-12);
        let flux = solve_bvp(&ShootingProblem::flux(&model, vec![2.0], 1.0)).unwrap();
        assert!((flux.action - expected).abs() < 1e-6);
        // the optimal flux is the straight line z = 2t
        for s in flux.sample(11).unwrap() {
            assert!((s.z.unwrap()[0] - 2.0 * s.t).abs() < 1e-7);
        }
    }

    #[test]
    fn deterministic_target_has_zero_action_and_multipliers() {
        let model = coupled();
        let det = deterministic_flow(&model, model.x0(), model.u0(), 2.0, Tolerances::SHOOTING).unwrap();
        let end = det.state(2.0).x;
        let tr = solve_bvp(&ShootingProblem::concentration(&model, end.clone(), 2.0)).unwrap();
        assert!(tr.action <= 1e-8, "{}", tr.action);
        for s in tr.sample(41).unwrap() {
            assert!(s.eta.iter().all(|e| e.abs() <= 1e-6));
            let d = det.state(s.t);
            assert!((s.x[0] - d.x[0]).abs() <= 1e-6 && (s.u[0] - d.u[0]).abs() <= 1e-6);
        }
        let h = hitting_exponent(&model, &end, 2.0).unwrap();
        assert!((h.probability - 1.0).abs() < 1e-6);
    }

    #[test]
    fn shooting_from_the_deterministic_velocity_hits_the_deterministic_endpoint() {
        let model = coupled();
        let det = deterministic_flow(&model, model.x0(), model.u0(), 1.5, Tolerances::SHOOTING).unwrap();
        let problem = ShootingProblem::concentration(&model, det.state(1.5).x, 1.5);
        let guess = problem.deterministic_guess().unwrap();
        let r = shoot(&problem, &guess).unwrap();
        assert!(r.iter().all(|v| v.abs() < 1e-8), "{r:?}");
        let again = shoot(&problem, &guess).unwrap();
        assert_eq!(
            r.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            again.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn shooting_jacobian_matches_secants() {
        let model = coupled();
        let problem = ShootingProblem::concentration(&model, vec![0.9], 1.0);
        let g = vec![0.2, 0.05];
        for c in 0..2 {
            let fd = |h: f64| {
                let mut p = g.clone();
                p[c] += h;
                let mut q = g.clone();
                q[c] -= h;
                let (a, b) = (shoot(&problem, &p).unwrap(), shoot(&problem, &q).unwrap());
                a.iter().zip(&b).map(|(x, y)| (x - y) / (2.0 * h)).collect::<Vec<f64>>()
            };
            let (fine, coarse) = (fd(1e-5), fd(1e-3));
            for (a, b) in fine.iter().zip(&coarse) {
                assert!((a - b).abs() <= 1e-4 * a.abs().max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn action_grows_along_a_ray_of_targets() {
        let model = coupled();
        let det = deterministic_flow(&model, model.x0(), model.u0(), 1.0, Tolerances::SHOOTING).unwrap();
        let end = det.state(1.0).x[0];
        let mut last = -1.0;
        for k in 0..5 {
            let target = end + 0.1 * k as f64;
            let a = solve_bvp(&ShootingProblem::concentration(&model, vec![target], 1.0))
                .unwrap()
                .action;
            assert!(a > last || (k == 0 && a < 1e-8), "target {target}: {a} after {last}");
            last = a;
        }
    }

    #[test]
    fn counts_match_and_bad_problems_are_rejected() {
        let model = coupled();
        let p = ShootingProblem::concentration(&model, vec![0.5], 1.0);
        assert_eq!(p.unknowns(), p.constraints());
        assert_eq!(p.segments(), 2);
        let f = ShootingProblem::flux(&model, vec![0.5, 0.2], 1.0);
        assert_eq!(f.unknowns(), 3);
        assert_eq!(f.unknowns(), f.constraints());
        let bad = ShootingProblem::concentration(&model, vec![0.5, 0.1], -1.0);
        match solve_bvp(&bad) {
            Err(Error::Config(list)) => assert_eq!(list.len(), 2, "{list:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unreachable_target_reports_every_start() {
        let model = poisson(1.0);
        // births only: x can never decrease
        let mut p = ShootingProblem::concentration(&model, vec![-0.5], 1.0);
        p.options.continuation_steps = 2;
        match solve_bvp(&p) {
            Err(Error::Bvp(list)) => assert_eq!(list.len(), 10, "{list:?}"),
            other => panic!("{other:?}"),
        }
    }
}
