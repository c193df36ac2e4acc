//! Adaptive Dormand–Prince 5(4) integrator with continuous (dense) output.
//!
//! The stepper is exposed directly because the jump simulator needs to stop
//! at arbitrary event times, locate threshold crossings on the interpolant,
//! and restart from a modified state. [`integrate`] wraps it for the common
//! case of a single smooth interval.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative and absolute error tolerances of the step-size controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
}

impl Tolerances {
    pub const SIMULATION: Tolerances = Tolerances {
        rtol: 1e-8,
        atol: 1e-10,
    };
    pub const SHOOTING: Tolerances = Tolerances {
        rtol: 1e-10,
        atol: 1e-12,
    };

    pub fn new(rtol: f64, atol: f64) -> Self {
        Tolerances { rtol, atol }
    }
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances::SIMULATION
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const MAX_REJECTS: usize = 200;

/// One-step-at-a-time DOPRI5 integrator.
///
/// After every accepted [`step`](Dopri5::step) the interpolant covering the
/// last step is available through [`dense`](Dopri5::dense).
#[derive(Debug, Clone)]
pub struct Dopri5 {
    dim: usize,
    tol: Tolerances,
    max_step: f64,
    t: f64,
    y: Vec<f64>,
    h: f64,
    k: [Vec<f64>; 7],
    y_stage: Vec<f64>,
    y_new: Vec<f64>,
    t_old: f64,
    h_old: f64,
    rcont: [Vec<f64>; 5],
    steps: u64,
    evaluations: u64,
}

impl Dopri5 {
    pub fn new(dim: usize, tol: Tolerances) -> Self {
        let v = || vec![0.0; dim];
        Dopri5 {
            dim,
            tol,
            max_step: f64::INFINITY,
            t: 0.0,
            y: v(),
            h: 0.0,
            k: [v(), v(), v(), v(), v(), v(), v()],
            y_stage: v(),
            y_new: v(),
            t_old: 0.0,
            h_old: 0.0,
            rcont: [v(), v(), v(), v(), v()],
            steps: 0,
            evaluations: 0,
        }
    }

    pub fn with_max_step(mut self, max_step: f64) -> Self {
        self.max_step = max_step;
        self
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    /// Derivative at the current point (valid after `reset` or `step`).
    pub fn derivative(&self) -> &[f64] {
        &self.k[0]
    }

    /// Start of the last accepted step.
    pub fn t_prev(&self) -> f64 {
        self.t_old
    }

    pub fn accepted_steps(&self) -> u64 {
        self.steps
    }

    pub fn evaluations(&self) -> u64 {
        self.evaluations
    }

    fn eval<F>(&mut self, f: &mut F, t: f64, stage: usize, from_stage: bool) -> Result<()>
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        self.evaluations += 1;
        let src = if from_stage { &self.y_stage } else { &self.y };
        let out = &mut self.k[stage];
        f(t, src, out);
        if let Some(bad) = out.iter().position(|v| !v.is_finite()) {
            return Err(Error::Integration {
                time: t,
                reason: format!("non-finite derivative in component {bad}"),
            });
        }
        Ok(())
    }

    /// Restart the integrator at `(t, y)`.
    ///
    /// The previous step-size suggestion is kept when one exists, which makes
    /// restarts after discontinuities (jumps) cheap.
    pub fn reset<F>(&mut self, f: &mut F, t: f64, y: &[f64]) -> Result<()>
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        assert_eq!(y.len(), self.dim, "state dimension mismatch");
        if let Some(bad) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::Integration {
                time: t,
                reason: format!("non-finite state in component {bad}"),
            });
        }
        self.t = t;
        self.y.copy_from_slice(y);
        self.eval(f, t, 0, false)?;
        self.t_old = t;
        self.h_old = 0.0;
        for r in &mut self.rcont {
            r.iter_mut().for_each(|v| *v = 0.0);
        }
        self.rcont[0].copy_from_slice(y);
        if !(self.h > 0.0) {
            self.h = self.initial_step(f)?;
        }
        Ok(())
    }

    /// Forget the step-size history so the next `reset` re-estimates it.
    pub fn forget_step(&mut self) {
        self.h = 0.0;
    }

    fn weight(&self, a: f64, b: f64) -> f64 {
        self.tol.atol + self.tol.rtol * a.abs().max(b.abs())
    }

    fn initial_step<F>(&mut self, f: &mut F) -> Result<f64>
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        if self.dim == 0 {
            return Ok(self.max_step.min(1.0));
        }
        let n = self.dim as f64;
        let mut d0 = 0.0;
        let mut d1 = 0.0;
        for i in 0..self.dim {
            let sk = self.weight(self.y[i], self.y[i]);
            d0 += (self.y[i] / sk).powi(2);
            d1 += (self.k[0][i] / sk).powi(2);
        }
        d0 = (d0 / n).sqrt();
        d1 = (d1 / n).sqrt();
        let mut h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        h0 = h0.min(self.max_step);
        for i in 0..self.dim {
            self.y_stage[i] = self.y[i] + h0 * self.k[0][i];
        }
        self.eval(f, self.t + h0, 1, true)?;
        let mut d2 = 0.0;
        for i in 0..self.dim {
            let sk = self.weight(self.y[i], self.y[i]);
            d2 += ((self.k[1][i] - self.k[0][i]) / sk).powi(2);
        }
        d2 = (d2 / n).sqrt() / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        Ok((100.0 * h0).min(h1).min(self.max_step))
    }

    /// Take one accepted step, never stepping past `t_end`.
    ///
    /// Returns the new time. Calling this when `t == t_end` is a no-op.
    pub fn step<F>(&mut self, f: &mut F, t_end: f64) -> Result<f64>
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        if self.t >= t_end {
            return Ok(self.t);
        }
        let dim = self.dim;
        let mut rejected = false;
        let mut rejects = 0usize;
        loop {
            let mut h = self.h.min(self.max_step);
            let mut last = false;
            if self.t + h >= t_end || self.t + 1.01 * h >= t_end {
                h = t_end - self.t;
                last = true;
            }
            if h <= 1e-14 * self.t.abs().max(1.0) && !last {
                return Err(Error::Integration {
                    time: self.t,
                    reason: format!("step size underflow (h = {h:e})"),
                });
            }
            let t = self.t;

            for i in 0..dim {
                self.y_stage[i] = self.y[i] + h * A21 * self.k[0][i];
            }
            self.eval(f, t + C2 * h, 1, true)?;
            for i in 0..dim {
                self.y_stage[i] = self.y[i] + h * (A31 * self.k[0][i] + A32 * self.k[1][i]);
            }
            self.eval(f, t + C3 * h, 2, true)?;
            for i in 0..dim {
                self.y_stage[i] = self.y[i]
                    + h * (A41 * self.k[0][i] + A42 * self.k[1][i] + A43 * self.k[2][i]);
            }
            self.eval(f, t + C4 * h, 3, true)?;
            for i in 0..dim {
                self.y_stage[i] = self.y[i]
                    + h * (A51 * self.k[0][i]
                        + A52 * self.k[1][i]
                        + A53 * self.k[2][i]
                        + A54 * self.k[3][i]);
            }
            self.eval(f, t + C5 * h, 4, true)?;
            for i in 0..dim {
                self.y_stage[i] = self.y[i]
                    + h * (A61 * self.k[0][i]
                        + A62 * self.k[1][i]
                        + A63 * self.k[2][i]
                        + A64 * self.k[3][i]
                        + A65 * self.k[4][i]);
            }
            self.eval(f, t + h, 5, true)?;
            for i in 0..dim {
                self.y_new[i] = self.y[i]
                    + h * (A71 * self.k[0][i]
                        + A73 * self.k[2][i]
                        + A74 * self.k[3][i]
                        + A75 * self.k[4][i]
                        + A76 * self.k[5][i]);
            }
            self.y_stage.copy_from_slice(&self.y_new);
            self.eval(f, t + h, 6, true)?;

            let mut err = 0.0;
            for i in 0..dim {
                let e = h
                    * (E1 * self.k[0][i]
                        + E3 * self.k[2][i]
                        + E4 * self.k[3][i]
                        + E5 * self.k[4][i]
                        + E6 * self.k[5][i]
                        + E7 * self.k[6][i]);
                let sk = self.weight(self.y[i], self.y_new[i]);
                err += (e / sk).powi(2);
            }
            if dim > 0 {
                err = (err / dim as f64).sqrt();
            }

            if err <= 1.0 {
                for i in 0..dim {
                    let y0 = self.y[i];
                    let y1 = self.y_new[i];
                    let dy = y1 - y0;
                    let bspl = h * self.k[0][i] - dy;
                    self.rcont[0][i] = y0;
                    self.rcont[1][i] = dy;
                    self.rcont[2][i] = bspl;
                    self.rcont[3][i] = dy - h * self.k[6][i] - bspl;
                    self.rcont[4][i] = h
                        * (D1 * self.k[0][i]
                            + D3 * self.k[2][i]
                            + D4 * self.k[3][i]
                            + D5 * self.k[4][i]
                            + D6 * self.k[5][i]
                            + D7 * self.k[6][i]);
                }
                self.t_old = t;
                self.h_old = h;
                self.t = if last { t_end } else { t + h };
                std::mem::swap(&mut self.y, &mut self.y_new);
                let (first, rest) = self.k.split_at_mut(1);
                std::mem::swap(&mut first[0], &mut rest[5]);
                self.steps += 1;

                let mut fac = if err == 0.0 {
                    FAC_MAX
                } else {
                    (SAFETY * err.powf(-0.2)).clamp(FAC_MIN, FAC_MAX)
                };
                if rejected {
                    fac = fac.min(1.0);
                }
                // A truncated final step says nothing about the natural step.
                if !last || h >= self.h {
                    self.h = (h * fac).min(self.max_step);
                }
                return Ok(self.t);
            }

            rejected = true;
            rejects += 1;
            if rejects > MAX_REJECTS {
                return Err(Error::Integration {
                    time: t,
                    reason: "too many rejected steps".into(),
                });
            }
            let fac = (SAFETY * err.powf(-0.2)).clamp(FAC_MIN, 1.0);
            self.h = h * fac;
        }
    }

    /// Evaluate the interpolant of the last accepted step at `t`.
    pub fn dense(&self, t: f64, out: &mut [f64]) {
        if self.h_old == 0.0 {
            out.copy_from_slice(&self.y);
            return;
        }
        let theta = (t - self.t_old) / self.h_old;
        let theta1 = 1.0 - theta;
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.rcont[0][i]
                + theta
                    * (self.rcont[1][i]
                        + theta1
                            * (self.rcont[2][i]
                                + theta * (self.rcont[3][i] + theta1 * self.rcont[4][i])));
        }
    }

    /// Single component of the interpolant; cheap enough for root bracketing.
    pub fn dense_component(&self, t: f64, i: usize) -> f64 {
        if self.h_old == 0.0 {
            return self.y[i];
        }
        let theta = (t - self.t_old) / self.h_old;
        let theta1 = 1.0 - theta;
        self.rcont[0][i]
            + theta
                * (self.rcont[1][i]
                    + theta1
                        * (self.rcont[2][i]
                            + theta * (self.rcont[3][i] + theta1 * self.rcont[4][i])))
    }

    pub(crate) fn push_segment(&self, sol: &mut DenseSolution) {
        sol.starts.push(self.t_old);
        sol.widths.push(self.h_old);
        for r in &self.rcont {
            sol.coeffs.extend_from_slice(r);
        }
    }
}

/// Piecewise interpolant over a whole integration interval.
#[derive(Debug, Clone)]
pub struct DenseSolution {
    dim: usize,
    t0: f64,
    t1: f64,
    y0: Vec<f64>,
    starts: Vec<f64>,
    widths: Vec<f64>,
    coeffs: Vec<f64>,
}

impl DenseSolution {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn span(&self) -> (f64, f64) {
        (self.t0, self.t1)
    }

    pub fn steps(&self) -> usize {
        self.starts.len()
    }

    pub fn final_state(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval(self.t1, &mut out);
        out
    }

    /// Evaluate at `t`, clamped to the integration span.
    pub fn eval(&self, t: f64, out: &mut [f64]) {
        if self.starts.is_empty() {
            out.copy_from_slice(&self.y0);
            return;
        }
        let t = t.clamp(self.t0, self.t1);
        let idx = match self
            .starts
            .binary_search_by(|s| s.partial_cmp(&t).expect("NaN time"))
        {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) => i - 1,
        };
        let h = self.widths[idx];
        let theta = if h > 0.0 { (t - self.starts[idx]) / h } else { 0.0 };
        let theta1 = 1.0 - theta;
        let base = idx * 5 * self.dim;
        let r = |j: usize, i: usize| self.coeffs[base + j * self.dim + i];
        for (i, o) in out.iter_mut().enumerate() {
            *o = r(0, i)
                + theta * (r(1, i) + theta1 * (r(2, i) + theta * (r(3, i) + theta1 * r(4, i))));
        }
    }

    pub fn at(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval(t, &mut out);
        out
    }
}

/// Integrate `dy/dt = f(t, y)` from `t0` to `t1` keeping the full interpolant.
pub fn integrate<F>(mut f: F, t0: f64, y0: &[f64], t1: f64, tol: Tolerances) -> Result<DenseSolution>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    integrate_with(&mut f, t0, y0, t1, tol, f64::INFINITY)
}

pub fn integrate_with<F>(
    f: &mut F,
    t0: f64,
    y0: &[f64],
    t1: f64,
    tol: Tolerances,
    max_step: f64,
) -> Result<DenseSolution>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let dim = y0.len();
    let mut sol = DenseSolution {
        dim,
        t0,
        t1,
        y0: y0.to_vec(),
        starts: Vec::new(),
        widths: Vec::new(),
        coeffs: Vec::new(),
    };
    if t1 <= t0 {
        sol.t1 = t0;
        return Ok(sol);
    }
    let mut stepper = Dopri5::new(dim, tol).with_max_step(max_step);
    stepper.reset(f, t0, y0)?;
    while stepper.t() < t1 {
        stepper.step(f, t1)?;
        stepper.push_segment(&mut sol);
    }
    Ok(sol)
}

/// Like [`integrate_with`] but gives up after `max_steps` accepted steps.
pub(crate) fn integrate_limited<F>(
    f: &mut F,
    t0: f64,
    y0: &[f64],
    t1: f64,
    tol: Tolerances,
    max_steps: usize,
) -> Result<DenseSolution>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let dim = y0.len();
    let mut sol = DenseSolution {
        dim,
        t0,
        t1: t1.max(t0),
        y0: y0.to_vec(),
        starts: Vec::new(),
        widths: Vec::new(),
        coeffs: Vec::new(),
    };
    if t1 <= t0 {
        return Ok(sol);
    }
    let mut stepper = Dopri5::new(dim, tol);
    stepper.reset(f, t0, y0)?;
    while stepper.t() < t1 {
        if sol.starts.len() >= max_steps {
            return Err(Error::Integration {
                time: stepper.t(),
                reason: format!("step budget of {max_steps} exhausted"),
            });
        }
        stepper.step(f, t1)?;
        stepper.push_segment(&mut sol);
    }
    Ok(sol)
}
