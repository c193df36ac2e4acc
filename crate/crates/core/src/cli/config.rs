//! Run configuration: a JSON document with optional dotted-path overrides.
//!
//! Every section is optional. Unknown keys are collected across the whole
//! document and reported together with range violations.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::cli::Command;
use crate::calcium::{calcium_model, CalciumParams, WaveOptions, WaveStart};
use crate::error::{Error, Result};
use crate::model::{PdmpModel, ReactionNetwork, SamplingBox};
use crate::ode::Tolerances;
use crate::optimal_path::{CollocationOptions, ShootingOptions};
use crate::simulate::SimulationOptions;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Calcium,
    Custom,
}

/// A mass-action reaction `k ∏ xᵢ^{νᵢ} ∏ u_k^{μ_k}`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ReactionConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub stoichiometry: Vec<i32>,
    pub rate_constant: f64,
    /// Exponents `ν`; empty means all zero.
    pub orders: Vec<u32>,
    /// Exponents `μ` on the slow variables; empty means all zero.
    pub slow_orders: Vec<u32>,
}

/// Affine slow drift `A(u, x) = M u + C x + b`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DriftConfig {
    /// `M`, one row per slow variable.
    pub u: Vec<Vec<f64>>,
    /// `C`, one row per slow variable.
    pub x: Vec<Vec<f64>>,
    pub constant: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Calcium parameters; defaults when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub params: Option<CalciumParams>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub x0: Vec<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub u0: Vec<f64>,
    /// System size `N` of a custom model.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scale: Option<u64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub reactions: Vec<ReactionConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub drift: Option<DriftConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rate_bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateConfig {
    /// One trajectory writes the sample path; more write ensemble statistics.
    pub trajectories: u64,
    pub options: SimulationOptions,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            trajectories: 1,
            options: SimulationOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ActionConfig {
    /// Path CSV with columns `t, x_i, u_k, z_a`.
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimalPathConfig {
    /// Concentration target `x̂`; the calcium model defaults to `x_target`.
    pub target: Option<Vec<f64>>,
    /// Flux target `z*`, solved in flux form instead.
    pub flux_target: Option<Vec<f64>>,
    pub shooting: ShootingOptions,
    /// Cross-check by direct minimization when present.
    pub collocation: Option<CollocationOptions>,
    /// Output samples along the trajectory.
    pub nodes: usize,
}

impl Default for OptimalPathConfig {
    fn default() -> Self {
        OptimalPathConfig {
            target: None,
            flux_target: None,
            shooting: ShootingOptions::default(),
            collocation: None,
            nodes: 201,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub sizes: Vec<u64>,
    pub trials: u64,
    /// Event `x(T) ≥ target` componentwise; calcium defaults to `x_target`.
    pub target: Option<Vec<f64>>,
    pub start: WaveStart,
    /// Also solve for `J*` at the target.
    pub exponent: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            sizes: vec![20, 40, 80],
            trials: 100_000,
            target: None,
            start: WaveStart::FixedPoint,
            exponent: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidateConfig {
    pub samples: usize,
    #[serde(rename = "box")]
    pub bounds: Option<SamplingBox>,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        ValidateConfig {
            samples: 10_000,
            bounds: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputConfig {
    #[serde(skip_serializing)]
    pub dir: Option<PathBuf>,
    /// Also write long-format `series,t,value` files.
    pub plot_data: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub model: ModelConfig,
    /// Time horizon `T`; the calcium model defaults to `params.horizon`.
    pub horizon: Option<f64>,
    pub seed: u64,
    #[serde(skip_serializing)]
    pub threads: Option<usize>,
    pub simulate: SimulateConfig,
    pub action: ActionConfig,
    pub optimal_path: OptimalPathConfig,
    pub calcium_wave: WaveOptions,
    pub sweep: SweepConfig,
    pub validate: ValidateConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            horizon: None,
            seed: 42,
            threads: None,
            simulate: SimulateConfig::default(),
            action: ActionConfig::default(),
            optimal_path: OptimalPathConfig::default(),
            calcium_wave: WaveOptions::default(),
            sweep: SweepConfig::default(),
            validate: ValidateConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

/// Set `key=value` at a dotted path, creating objects on the way.
///
/// The value is parsed as JSON and taken as a plain string otherwise.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(vec![format!("override '{assignment}' is not of the form key=value")]))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(vec![format!("override key '{key}' has an empty component")]));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    for (i, part) in parts.iter().enumerate() {
        if !node.is_object() {
            if node.is_null() {
                *node = Value::Object(Default::default());
            } else {
                return Err(Error::Config(vec![format!(
                    "override '{key}': '{}' is not an object",
                    parts[..i].join(".")
                )]));
            }
        }
        let map = node.as_object_mut().expect("checked above");
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map.entry(part.to_string()).or_insert(Value::Null);
    }
    unreachable!("split always yields at least one part")
}

/// Deserialize a document, reporting every unknown key.
pub fn from_value(doc: Value) -> Result<RunConfig> {
    let mut unknown = Vec::new();
    let parsed: std::result::Result<RunConfig, _> = {
        // Option layers show up as `?` segments; drop them.
        let mut record = |path: serde_ignored::Path<'_>| {
            let key = path.to_string().replace(".?", "").replace("?.", "");
            unknown.push(format!("unknown key '{key}'"))
        };
        let de = serde_ignored::Deserializer::new(doc, &mut record);
        serde_path_to_error::deserialize(de)
    };
    match parsed {
        Ok(cfg) if unknown.is_empty() => Ok(cfg),
        Ok(_) => Err(Error::Config(unknown)),
        Err(e) => {
            let path = e.path().to_string();
            unknown.push(format!("{path}: {}", e.into_inner()));
            Err(Error::Config(unknown))
        }
    }
}

/// Read the config file (or start from defaults), apply overrides and
/// resolve defaults.
pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut doc = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", p.display()))))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(vec![format!("{}: invalid JSON: {e}", p.display())]))?
        }
        None => Value::Object(Default::default()),
    };
    if doc.is_null() {
        doc = Value::Object(Default::default());
    }
    let mut problems = Vec::new();
    for o in overrides {
        if let Err(Error::Config(p)) = apply_override(&mut doc, o) {
            problems.extend(p);
        }
    }
    if !problems.is_empty() {
        return Err(Error::Config(problems));
    }
    from_value(doc)?.resolve()
}

fn check(problems: &mut Vec<String>, ok: bool, msg: impl FnOnce() -> String) {
    if !ok {
        problems.push(msg());
    }
}

fn check_tolerances(problems: &mut Vec<String>, key: &str, t: &Tolerances) {
    check(problems, t.rtol > 0.0 && t.rtol.is_finite(), || {
        format!("{key}.rtol must be positive, got {}", t.rtol)
    });
    check(problems, t.atol > 0.0 && t.atol.is_finite(), || {
        format!("{key}.atol must be positive, got {}", t.atol)
    });
}

fn check_shooting(problems: &mut Vec<String>, key: &str, s: &ShootingOptions) {
    check_tolerances(problems, &format!("{key}.tolerances"), &s.tolerances);
    check(problems, s.residual_tolerance > 0.0, || {
        format!("{key}.residual_tolerance must be positive")
    });
    check(problems, s.max_iterations >= 1, || format!("{key}.max_iterations must be at least 1"));
    check(problems, s.segments != Some(0), || format!("{key}.segments must be at least 1"));
    check(problems, !s.velocity_scales.is_empty(), || {
        format!("{key}.velocity_scales must not be empty")
    });
    check(problems, !s.eta_offsets.is_empty(), || format!("{key}.eta_offsets must not be empty"));
    check(problems, s.max_steps >= 1, || format!("{key}.max_steps must be at least 1"));
}

fn check_len(problems: &mut Vec<String>, key: &str, v: &[f64], n: usize) {
    check(problems, v.len() == n, || format!("{key} has {} entries, expected {n}", v.len()));
    check(problems, v.iter().all(|x| x.is_finite()), || format!("{key} must be finite"));
}

impl RunConfig {
    /// `(species, slow variables, reactions)` of the selected model.
    pub fn dimensions(&self) -> (usize, usize, usize) {
        match self.model.kind {
            ModelKind::Calcium => (1, 2, 2),
            ModelKind::Custom => (self.model.x0.len(), self.model.u0.len(), self.model.reactions.len()),
        }
    }

    pub fn params(&self) -> Option<&CalciumParams> {
        match self.model.kind {
            ModelKind::Calcium => self.model.params.as_ref(),
            ModelKind::Custom => None,
        }
    }

    /// Horizon after resolution.
    pub fn horizon(&self) -> f64 {
        self.horizon.unwrap_or(1.0)
    }

    /// Fill in model-dependent defaults and check every range.
    pub fn resolve(mut self) -> Result<RunConfig> {
        let mut problems = Vec::new();
        match self.model.kind {
            ModelKind::Calcium => {
                let m = &self.model;
                for (key, present) in [
                    ("x0", !m.x0.is_empty()),
                    ("u0", !m.u0.is_empty()),
                    ("scale", m.scale.is_some()),
                    ("reactions", !m.reactions.is_empty()),
                    ("drift", m.drift.is_some()),
                    ("rate_bound", m.rate_bound.is_some()),
                ] {
                    check(&mut problems, !present, || {
                        format!("model.{key} only applies to custom models; use model.params")
                    });
                }
                let mut params = self.model.params.take().unwrap_or_default();
                match self.horizon {
                    Some(h) => params.horizon = h,
                    None => self.horizon = Some(params.horizon),
                }
                if let Err(Error::Config(p)) = params.validate() {
                    problems.extend(p.into_iter().map(|s| format!("model.params: {s}")));
                }
                let target = vec![params.x_target];
                self.optimal_path.target.get_or_insert_with(|| target.clone());
                self.sweep.target.get_or_insert(target);
                self.validate.bounds.get_or_insert_with(|| SamplingBox {
                    x: vec![(0.0, 1.0)],
                    u: vec![(0.0, params.c_total / params.gamma), (0.0, params.c_total)],
                });
                self.model.params = Some(params);
            }
            ModelKind::Custom => {
                check(&mut problems, self.model.params.is_none(), || {
                    "model.params only applies to the calcium model".into()
                });
                self.horizon.get_or_insert(1.0);
                self.model.scale.get_or_insert(100);
                self.check_custom(&mut problems);
                let span = |v: f64| (v.min(0.0) * 2.0, (2.0 * v.abs()).max(1.0));
                let (x0, u0) = (&self.model.x0, &self.model.u0);
                self.validate.bounds.get_or_insert_with(|| SamplingBox {
                    x: x0.iter().map(|&v| span(v)).collect(),
                    u: u0.iter().map(|&v| span(v)).collect(),
                });
            }
        }
        if let Some(mc) = self.calcium_wave.monte_carlo.as_mut() {
            mc.seed = self.seed;
        }
        self.check_ranges(&mut problems);
        if problems.is_empty() {
            Ok(self)
        } else {
            Err(Error::Config(problems))
        }
    }

    fn check_custom(&self, problems: &mut Vec<String>) {
        let m = &self.model;
        let (d, s) = (m.x0.len(), m.u0.len());
        check(problems, d >= 1, || "model.x0 must list at least one species".into());
        check(problems, m.x0.iter().all(|v| *v >= 0.0 && v.is_finite()), || {
            "model.x0 must be finite and nonnegative".into()
        });
        check(problems, m.u0.iter().all(|v| v.is_finite()), || "model.u0 must be finite".into());
        check(problems, m.scale != Some(0), || "model.scale must be positive".into());
        check(problems, !m.reactions.is_empty(), || "model.reactions must not be empty".into());
        check(problems, m.rate_bound.map_or(true, |b| b >= 0.0), || {
            "model.rate_bound must be nonnegative".into()
        });
        for (a, r) in m.reactions.iter().enumerate() {
            let key = format!("model.reactions[{a}]");
            check(problems, r.stoichiometry.len() == d, || {
                format!("{key}.stoichiometry has {} entries, expected {d}", r.stoichiometry.len())
            });
            check(problems, r.stoichiometry.iter().any(|&v| v != 0), || {
                format!("{key}.stoichiometry must not be zero")
            });
            check(problems, r.rate_constant >= 0.0 && r.rate_constant.is_finite(), || {
                format!("{key}.rate_constant must be finite and nonnegative")
            });
            check(problems, r.orders.is_empty() || r.orders.len() == d, || {
                format!("{key}.orders has {} entries, expected {d}", r.orders.len())
            });
            check(problems, r.slow_orders.is_empty() || r.slow_orders.len() == s, || {
                format!("{key}.slow_orders has {} entries, expected {s}", r.slow_orders.len())
            });
            for (i, &nu) in r.stoichiometry.iter().enumerate() {
                let order = r.orders.get(i).copied().unwrap_or(0);
                check(problems, nu >= 0 || order >= 1, || {
                    format!("{key} consumes species {i} so its order in that species must be at least 1")
                });
            }
        }
        let drift = m.drift.clone().unwrap_or_default();
        let rows = |rows: &Vec<Vec<f64>>, width: usize| {
            rows.is_empty() || (rows.len() == s && rows.iter().all(|r| r.len() == width))
        };
        check(problems, rows(&drift.u, s), || format!("model.drift.u must be empty or {s}x{s}"));
        check(problems, rows(&drift.x, d), || format!("model.drift.x must be empty or {s}x{d}"));
        check(problems, drift.constant.is_empty() || drift.constant.len() == s, || {
            format!("model.drift.constant must be empty or have {s} entries")
        });
    }

    fn check_ranges(&self, problems: &mut Vec<String>) {
        let (d, m, mm) = self.dimensions();
        let t = self.horizon();
        // Calcium parameters carry their own horizon check.
        if self.model.kind == ModelKind::Custom {
            check(problems, t > 0.0 && t.is_finite(), || format!("horizon must be positive, got {t}"));
        }
        check(problems, self.threads != Some(0), || "threads must be at least 1".into());

        let sim = &self.simulate;
        check(problems, sim.trajectories >= 1, || "simulate.trajectories must be at least 1".into());
        check(problems, sim.options.output_step.map_or(true, |s| s > 0.0), || {
            "simulate.options.output_step must be positive".into()
        });
        check_tolerances(problems, "simulate.options.tolerances", &sim.options.tolerances);

        let op = &self.optimal_path;
        check(problems, !(op.target.is_some() && op.flux_target.is_some()), || {
            "optimal_path.target and optimal_path.flux_target are mutually exclusive".into()
        });
        if let Some(x) = &op.target {
            check_len(problems, "optimal_path.target", x, d);
        }
        if let Some(z) = &op.flux_target {
            check_len(problems, "optimal_path.flux_target", z, mm);
        }
        check(problems, !(op.flux_target.is_some() && op.collocation.is_some()), || {
            "optimal_path.collocation needs a concentration target".into()
        });
        check(problems, op.nodes >= 2, || "optimal_path.nodes must be at least 2".into());
        check_shooting(problems, "optimal_path.shooting", &op.shooting);
        if let Some(c) = &op.collocation {
            check(problems, c.nodes >= 2, || "optimal_path.collocation.nodes must be at least 2".into());
            check(problems, c.substeps >= 1, || {
                "optimal_path.collocation.substeps must be at least 1".into()
            });
            check(problems, c.memory >= 1, || "optimal_path.collocation.memory must be at least 1".into());
            if let Some(b) = &c.bounds {
                check(problems, b.len() == d, || {
                    format!("optimal_path.collocation.bounds has {} entries, expected {d}", b.len())
                });
            }
        }

        check_shooting(problems, "calcium_wave.shooting", &self.calcium_wave.shooting);
        if let Some(mc) = &self.calcium_wave.monte_carlo {
            check(problems, !mc.sizes.is_empty() && mc.sizes.iter().all(|&n| n > 0), || {
                "calcium_wave.monte_carlo.sizes must be a nonempty list of positive integers".into()
            });
            check(problems, mc.trials >= 1, || "calcium_wave.monte_carlo.trials must be at least 1".into());
        }

        let sw = &self.sweep;
        check(problems, !sw.sizes.is_empty() && sw.sizes.iter().all(|&n| n > 0), || {
            "sweep.sizes must be a nonempty list of positive integers".into()
        });
        check(problems, sw.trials >= 1, || "sweep.trials must be at least 1".into());
        if let Some(x) = &sw.target {
            check_len(problems, "sweep.target", x, d);
        }

        check(problems, self.validate.samples >= 1, || "validate.samples must be at least 1".into());
        if let Some(b) = &self.validate.bounds {
            check(problems, b.x.len() == d && b.u.len() == m, || {
                format!("validate.box must have {d} x-intervals and {m} u-intervals")
            });
            check(problems, b.x.iter().chain(&b.u).all(|(lo, hi)| lo <= hi), || {
                "validate.box intervals must satisfy lower <= upper".into()
            });
        }
    }

    /// Settings a subcommand cannot run without.
    pub fn require(&self, command: Command) -> Result<()> {
        let missing = match command {
            Command::Action if self.action.path.is_none() => "action.path is required for the action command",
            Command::OptimalPath if self.optimal_path.target.is_none() && self.optimal_path.flux_target.is_none() => {
                "optimal_path.target or optimal_path.flux_target is required"
            }
            Command::CalciumWave if self.model.kind != ModelKind::Calcium => {
                "calcium-wave needs model.kind = \"calcium\""
            }
            Command::Sweep if self.sweep.target.is_none() => "sweep.target is required for custom models",
            _ => return Ok(()),
        };
        Err(Error::Config(vec![missing.into()]))
    }

    /// Build the selected model at its configured system size.
    pub fn build_model(&self) -> Result<PdmpModel> {
        match self.model.kind {
            ModelKind::Calcium => calcium_model(self.model.params.as_ref().expect("resolved config")),
            ModelKind::Custom => build_custom(&self.model),
        }
    }
}

fn monomial(c: f64, orders: &[u32], values: &[f64]) -> f64 {
    orders.iter().zip(values).fold(c, |acc, (&k, &v)| acc * v.powi(k as i32))
}

/// `∂/∂vⱼ` of `c ∏ vᵢ^{kᵢ} ∏ wₗ^{pₗ}` for every `j`, with `w` held fixed.
fn monomial_gradient(
    c: f64,
    orders: &[u32],
    values: &[f64],
    other_orders: &[u32],
    other_values: &[f64],
    out: &mut [f64],
) {
    let base = monomial(c, other_orders, other_values);
    for j in 0..values.len() {
        let k = orders.get(j).copied().unwrap_or(0);
        out[j] = if k == 0 {
            0.0
        } else {
            let mut g = base * k as f64 * values[j].powi(k as i32 - 1);
            for (i, &v) in values.iter().enumerate() {
                if i != j {
                    g *= v.powi(orders.get(i).copied().unwrap_or(0) as i32);
                }
            }
            g
        };
    }
}

fn build_custom(cfg: &ModelConfig) -> Result<PdmpModel> {
    let (d, s) = (cfg.x0.len(), cfg.u0.len());
    let mut builder = ReactionNetwork::builder(d, s);
    for (a, r) in cfg.reactions.iter().enumerate() {
        let label = r.label.clone().unwrap_or_else(|| format!("R{}", a + 1));
        let pad = |v: &[u32], n: usize| {
            let mut v = v.to_vec();
            v.resize(n, 0);
            v
        };
        let (nu, mu) = (pad(&r.orders, d), pad(&r.slow_orders, s));
        let (nu2, mu2, k) = (nu.clone(), mu.clone(), r.rate_constant);
        builder = builder.reaction_with_gradient(
            &label,
            r.stoichiometry.clone(),
            move |x, u| monomial(monomial(k, &nu, x), &mu, u),
            move |x, u, dx, du| {
                monomial_gradient(k, &nu2, x, &mu2, u, dx);
                monomial_gradient(k, &mu2, u, &nu2, x, du);
            },
        );
    }
    if let Some(b) = cfg.rate_bound {
        builder = builder.rate_bound(b);
    }
    let net = builder.build()?;
    let drift = cfg.drift.clone().unwrap_or_default();
    let dense = |rows: &Vec<Vec<f64>>, width: usize| {
        if rows.is_empty() {
            vec![0.0; s * width]
        } else {
            rows.concat()
        }
    };
    let (mu, cx) = (dense(&drift.u, s), dense(&drift.x, d));
    let b = if drift.constant.is_empty() { vec![0.0; s] } else { drift.constant.clone() };
    let (mu2, cx2) = (mu.clone(), cx.clone());
    let model = PdmpModel::new(
        net,
        move |u, x, a| {
            for k in 0..s {
                a[k] = b[k]
                    + (0..s).map(|j| mu[k * s + j] * u[j]).sum::<f64>()
                    + (0..d).map(|i| cx[k * d + i] * x[i]).sum::<f64>();
            }
        },
        cfg.x0.clone(),
        cfg.u0.clone(),
        cfg.scale.unwrap_or(100),
    )?
    .with_drift_jacobian(move |_, _, du, dx| {
        du.copy_from_slice(&mu2);
        dx.copy_from_slice(&cx2);
    });
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn defaults_resolve_to_the_calcium_model() {
        let cfg = load(None, &[]).unwrap();
        assert_eq!(cfg.horizon, Some(10.0));
        assert_eq!(cfg.optimal_path.target, Some(vec![0.9]));
        assert_eq!(cfg.build_model().unwrap().name(), "calcium");
    }

    #[test]
    fn every_unknown_key_is_reported() {
        let doc = json!({"horizon": 2.0, "bogus": 1, "model": {"params": {"k_ff": 1.0}}, "sweep": {"trails": 3}});
        let Err(Error::Config(p)) = from_value(doc) else { panic!("expected a config error") };
        assert_eq!(p.len(), 3, "{p:?}");
        assert!(p.iter().any(|s| s.contains("model.params.k_ff")));
        assert!(p.iter().any(|s| s.contains("sweep.trails")));
    }

    #[test]
    fn type_errors_name_the_key() {
        let Err(Error::Config(p)) = from_value(json!({"sweep": {"trials": "many"}})) else { panic!() };
        assert!(p[0].starts_with("sweep.trials"), "{p:?}");
    }

    #[test]
    fn overrides_parse_json_and_create_objects() {
        let mut doc = json!({});
        apply_override(&mut doc, "model.params.n=250").unwrap();
        apply_override(&mut doc, "sweep.sizes=[5,10]").unwrap();
        apply_override(&mut doc, "action.path=runs/p.csv").unwrap();
        assert_eq!(doc, json!({"model": {"params": {"n": 250}}, "sweep": {"sizes": [5, 10]}, "action": {"path": "runs/p.csv"}}));
        assert!(apply_override(&mut doc, "novalue").is_err());
        assert!(apply_override(&mut doc, "sweep.sizes.x=1").is_err());
    }

    #[test]
    fn range_errors_are_collected() {
        let overrides = ["horizon=-1", "sweep.trials=0", "optimal_path.target=[0.5,0.5]", "model.params.k_f=0"]
            .map(String::from);
        let Err(Error::Config(p)) = load(None, &overrides) else { panic!() };
        assert_eq!(p.len(), 4, "{p:?}");
    }

    #[test]
    fn custom_model_rates_and_gradients() {
        let doc = json!({
            "model": {
                "kind": "custom",
                "x0": [0.5, 0.2],
                "u0": [1.0],
                "reactions": [
                    {"stoichiometry": [-1, 1], "rate_constant": 2.0, "orders": [2, 0], "slow_orders": [1]},
                    {"stoichiometry": [0, -1], "rate_constant": 1.5, "orders": [0, 1]}
                ],
                "drift": {"u": [[-1.0]], "x": [[1.0, 0.0]], "constant": [0.1]}
            }
        });
        let cfg = from_value(doc).unwrap().resolve().unwrap();
        let model = cfg.build_model().unwrap();
        let net = model.network();
        let (x, u) = ([0.3, 0.7], [1.4]);
        assert!((net.rate(0, &x, &u) - 2.0 * 0.09 * 1.4).abs() < 1e-15);
        let (mut dx, mut du) = ([0.0; 2], [0.0]);
        net.rate_gradient(0, &x, &u, &mut dx, &mut du);
        assert!((dx[0] - 2.0 * 2.0 * 0.3 * 1.4).abs() < 1e-14 && dx[1] == 0.0);
        assert!((du[0] - 2.0 * 0.09).abs() < 1e-15);
        let mut a = [0.0];
        model.drift(&u, &x, &mut a);
        assert!((a[0] - (0.1 - 1.4 + 0.3)).abs() < 1e-15);
    }

    #[test]
    fn custom_model_checks() {
        let doc = json!({
            "model": {"kind": "custom", "x0": [0.5], "params": {},
                      "reactions": [{"stoichiometry": [-1], "rate_constant": 1.0}]}
        });
        let Err(Error::Config(p)) = from_value(doc).unwrap().resolve() else { panic!() };
        assert_eq!(p.len(), 2, "{p:?}");
    }
}
