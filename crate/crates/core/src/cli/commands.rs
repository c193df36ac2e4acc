use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::calcium::{least_squares_slope, wave_transition_experiment, MonteCarloRow, WaveStart};
use crate::cli::config::{ModelKind, RunConfig};
use crate::cli::plot::{emit_plot_data, PlotReport};
use crate::error::{Error, Result};
use crate::io::{path_table, read_path_csv, sha256_hex, state_columns, to_json, trajectory_table, write_text, Table};
use crate::ldp::{action, ExtendedReal, Violation};
use crate::model::{validate_network, HybridState};
use crate::optimal_path::{
    collocate, el_residual, hitting_exponent_with, solve_bvp, ElForm, ShootingProblem, StartSummary, Target,
};
use crate::simulate::{fixed_point, simulate_ensemble, simulate_pdmp_with, trajectory_rng, SimulationOptions};

/// One written artifact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Output directory that records what was written into it.
#[derive(Debug)]
pub struct Output {
    dir: PathBuf,
    plot_data: bool,
    files: Vec<FileEntry>,
}

impl Output {
    pub fn new(dir: PathBuf, plot_data: bool) -> Self {
        Output {
            dir,
            plot_data,
            files: Vec::new(),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn files(&self) -> &[FileEntry] {
        &self.files
    }

    pub fn write(&mut self, name: &str, text: &str) -> Result<()> {
        write_text(&self.dir.join(name), text)?;
        self.files.retain(|f| f.path != name);
        self.files.push(FileEntry {
            path: name.to_string(),
            bytes: text.len() as u64,
            sha256: sha256_hex(text.as_bytes()),
        });
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.write(name, &to_json(value)?)
    }

    fn plot(&mut self, name: &str, report: PlotReport<'_>) -> Result<()> {
        if self.plot_data {
            self.write(name, &emit_plot_data(report).to_csv())?;
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct PathSummary<'a> {
    model: &'a str,
    #[serde(rename = "N")]
    n: u64,
    horizon: f64,
    seed: u64,
    event_count: u64,
    terminal: &'a HybridState,
    event_times: &'a [f64],
    event_reactions: &'a [usize],
}

#[derive(Serialize)]
struct EnsembleSummary<'a> {
    model: &'a str,
    #[serde(rename = "N")]
    n: u64,
    horizon: f64,
    seed: u64,
    trajectories: u64,
    mean_events: f64,
    columns: &'a [String],
    terminal_mean: &'a [f64],
    terminal_stderr: &'a [f64],
}

pub fn simulate(cfg: &RunConfig, out: &mut Output) -> Result<()> {
    let model = cfg.build_model().map_err(Error::stage("model"))?;
    let horizon = cfg.horizon();
    let options = &cfg.simulate.options;
    if cfg.simulate.trajectories == 1 {
        let mut rng = trajectory_rng(cfg.seed, 0);
        let path = simulate_pdmp_with(&model, horizon, &mut rng, options).map_err(Error::stage("simulate"))?;
        let mut header = vec!["t".to_string()];
        header.extend(state_columns(path.species, path.slow_dim, path.reactions));
        let mut table = Table::new(header);
        for (r, &t) in path.grid.iter().enumerate() {
            let mut row = vec![t];
            row.extend(path.x_at(r));
            row.extend(path.u_at(r));
            row.extend(path.z_at(r));
            table.push(row);
        }
        out.write("simulate.csv", &table.to_csv())?;
        out.json(
            "simulate.json",
            &PathSummary {
                model: model.name(),
                n: model.scale(),
                horizon,
                seed: cfg.seed,
                event_count: path.event_count,
                terminal: &path.terminal,
                event_times: &path.event_times,
                event_reactions: &path.event_reactions,
            },
        )?;
        out.plot("simulate_plot.csv", PlotReport::Path(&path))
    } else {
        let report = simulate_ensemble(&model, horizon, cfg.simulate.trajectories, cfg.seed, |_| false, options)
            .map_err(Error::stage("ensemble"))?;
        let se = report.standard_error();
        let mut header = vec!["t".to_string()];
        for c in &report.columns {
            header.push(format!("{c}_mean"));
            header.push(format!("{c}_stderr"));
        }
        let mut table = Table::new(header);
        for (r, &t) in report.grid.iter().enumerate() {
            let mut row = vec![t];
            for c in 0..report.columns.len() {
                row.push(report.mean[r][c]);
                row.push(se[r][c]);
            }
            table.push(row);
        }
        out.write("ensemble.csv", &table.to_csv())?;
        let last = report.grid.len() - 1;
        out.json(
            "ensemble.json",
            &EnsembleSummary {
                model: model.name(),
                n: model.scale(),
                horizon,
                seed: cfg.seed,
                trajectories: report.trajectories,
                mean_events: report.mean_events,
                columns: &report.columns,
                terminal_mean: &report.mean[last],
                terminal_stderr: &se[last],
            },
        )?;
        out.plot("ensemble_plot.csv", PlotReport::Ensemble(&report))
    }
}

#[derive(Serialize)]
struct ActionReport<'a> {
    model: &'a str,
    path: String,
    nodes: usize,
    horizon: f64,
    total: ExtendedReal,
    per_reaction: &'a [ExtendedReal],
    violations: &'a [Violation],
    drift_defect: f64,
}

pub fn action_cmd(cfg: &RunConfig, base: &Path, out: &mut Output) -> Result<()> {
    let rel = cfg
        .action
        .path
        .as_ref()
        .ok_or_else(|| Error::Config(vec!["action.path is required for the action command".into()]))?;
    let file = base.join(rel);
    let model = cfg.build_model().map_err(Error::stage("model"))?;
    let path = read_path_csv(&file, &model)?;
    let result = action(&path, &model).map_err(Error::stage("action"))?;
    out.json(
        "action.json",
        &ActionReport {
            model: model.name(),
            path: rel.display().to_string(),
            nodes: path.nodes(),
            horizon: path.horizon(),
            total: result.total,
            per_reaction: &result.per_reaction,
            violations: &result.violations,
            drift_defect: result.drift_defect,
        },
    )
}

#[derive(Serialize)]
struct CollocationSummary {
    action: f64,
    relative_gap: f64,
    nodes: usize,
    iterations: usize,
    projected_gradient: f64,
    converged: bool,
}

#[derive(Serialize)]
struct OptimalReport<'a> {
    model: &'a str,
    form: ElForm,
    target: &'a Target,
    horizon: f64,
    action: f64,
    residual: f64,
    el_residual: Option<f64>,
    eta_terminal: &'a [f64],
    start_index: usize,
    starts: &'a [StartSummary],
    newton_iterations: usize,
    trajectory_file: &'static str,
    collocation: Option<CollocationSummary>,
}

pub fn optimal_path(cfg: &RunConfig, out: &mut Output) -> Result<()> {
    let model = cfg.build_model().map_err(Error::stage("model"))?;
    let op = &cfg.optimal_path;
    let horizon = cfg.horizon();
    let problem = match (&op.target, &op.flux_target) {
        (_, Some(z)) => ShootingProblem::flux(&model, z.clone(), horizon),
        (Some(x), None) => ShootingProblem::concentration(&model, x.clone(), horizon),
        (None, None) => {
            return Err(Error::Config(vec![
                "optimal_path.target or optimal_path.flux_target is required".into(),
            ]))
        }
    }
    .with_options(op.shooting.clone());
    let trajectory = solve_bvp(&problem).map_err(Error::stage("optimal path"))?;
    let states = trajectory.sample(op.nodes).map_err(Error::stage("optimal path"))?;
    out.write("optimal_path.csv", &trajectory_table(&states).to_csv())?;

    let collocation = match (&op.collocation, &problem.target) {
        (Some(options), Target::Concentration(x)) => {
            let c = collocate(&model, x, horizon, options).map_err(Error::stage("collocation"))?;
            let mut header = vec!["t".to_string()];
            header.extend(state_columns(model.species(), model.slow_dim(), 0));
            let mut table = Table::new(header);
            for k in 0..c.t.len() {
                let mut row = vec![c.t[k]];
                row.extend(&c.x[k]);
                row.extend(&c.u[k]);
                table.push(row);
            }
            out.write("collocation.csv", &table.to_csv())?;
            Some(CollocationSummary {
                action: c.action,
                relative_gap: (trajectory.action - c.action).abs() / trajectory.action.abs().max(f64::MIN_POSITIVE),
                nodes: options.nodes,
                iterations: c.iterations,
                projected_gradient: c.projected_gradient,
                converged: c.converged,
            })
        }
        (Some(_), Target::Flux(_)) => {
            return Err(Error::Config(vec![
                "optimal_path.collocation needs a concentration target".into(),
            ]))
        }
        (None, _) => None,
    };
    let el = el_residual(&trajectory, &model, 2001).ok();
    let last = states.last().expect("at least two samples");
    out.json(
        "optimal_path.json",
        &OptimalReport {
            model: model.name(),
            form: trajectory.form(),
            target: &problem.target,
            horizon,
            action: trajectory.action,
            residual: trajectory.residual,
            el_residual: el,
            eta_terminal: &last.eta,
            start_index: trajectory.start,
            starts: &trajectory.starts,
            newton_iterations: trajectory.iterations.len(),
            trajectory_file: "optimal_path.csv",
            collocation,
        },
    )?;
    out.plot("optimal_path_plot.csv", PlotReport::Optimal(&states))
}

pub fn calcium_wave(cfg: &RunConfig, out: &mut Output) -> Result<()> {
    let params = match cfg.model.kind {
        ModelKind::Calcium => cfg.params().expect("resolved config"),
        ModelKind::Custom => {
            return Err(Error::Config(vec!["calcium-wave needs model.kind = \"calcium\"".into()]));
        }
    };
    let mut report = wave_transition_experiment(params, &cfg.calcium_wave)?;
    let states = report
        .trajectory
        .sample(cfg.optimal_path.nodes)
        .map_err(Error::stage("optimal path"))?;
    out.write("calcium_wave_path.csv", &trajectory_table(&states).to_csv())?;
    report.trajectory_files = vec!["calcium_wave_path.csv".into()];
    out.json("calcium_wave.json", &report)?;
    out.plot("calcium_wave_plot.csv", PlotReport::Optimal(&states))?;
    if !report.monte_carlo.is_empty() {
        out.plot(
            "calcium_wave_sweep_plot.csv",
            PlotReport::Sweep {
                rows: &report.monte_carlo,
                j_star: Some(report.j_star),
            },
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
struct SweepReport<'a> {
    model: &'a str,
    horizon: f64,
    seed: u64,
    start: WaveStart,
    x_start: &'a [f64],
    u_start: &'a [f64],
    target: &'a [f64],
    #[serde(rename = "J_star")]
    j_star: Option<f64>,
    monte_carlo: &'a [MonteCarloRow],
    /// Least-squares slope of `−log P̂` against `N` over rows with hits.
    monte_carlo_slope: Option<f64>,
}

pub fn sweep(cfg: &RunConfig, out: &mut Output) -> Result<()> {
    let sw = &cfg.sweep;
    let horizon = cfg.horizon();
    let target = sw
        .target
        .clone()
        .ok_or_else(|| Error::Config(vec!["sweep.target is required for custom models".into()]))?;
    let model = cfg.build_model().map_err(Error::stage("model"))?;
    let (x_start, u_start) = match sw.start {
        WaveStart::FixedPoint => {
            let fp = fixed_point(&model, model.x0(), model.u0()).map_err(Error::stage("fixed point"))?;
            (fp.x, fp.u)
        }
        WaveStart::Initial => (model.x0().to_vec(), model.u0().to_vec()),
    };
    let model = model
        .with_initial_state(x_start.clone(), u_start.clone())
        .map_err(Error::stage("model"))?;
    let j_star = if sw.exponent {
        let problem = ShootingProblem::concentration(&model, target.clone(), horizon)
            .with_options(cfg.optimal_path.shooting.clone());
        Some(hitting_exponent_with(&problem).map_err(Error::stage("optimal path"))?.j_star)
    } else {
        None
    };
    let options = SimulationOptions {
        tolerances: cfg.simulate.options.tolerances,
        ..SimulationOptions::terminal_only()
    };
    let mut rows = Vec::new();
    for &n in &sw.sizes {
        let scaled = model.clone().with_scale(n).map_err(Error::stage("monte carlo"))?;
        let hit = |p: &crate::simulate::JumpPath| p.terminal.x.iter().zip(&target).all(|(x, t)| *x >= t - 1e-12);
        let r = simulate_ensemble(&scaled, horizon, sw.trials, cfg.seed, hit, &options)
            .map_err(Error::stage("monte carlo"))?;
        rows.push(MonteCarloRow {
            n,
            trials: r.trajectories,
            hits: r.hits,
            probability: r.probability,
            minus_log_p_over_n: r.minus_log_p_over_n,
        });
    }
    let points: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.hits > 0)
        .map(|r| (r.n as f64, -r.probability.ln()))
        .collect();
    let mut table = Table::new(
        ["N", "trials", "hits", "probability", "minus_logP_over_N"]
            .map(String::from)
            .to_vec(),
    );
    for r in &rows {
        table.push(vec![
            r.n as f64,
            r.trials as f64,
            r.hits as f64,
            r.probability,
            r.minus_log_p_over_n.to_f64(),
        ]);
    }
    out.write("sweep.csv", &table.to_csv())?;
    out.json(
        "sweep.json",
        &SweepReport {
            model: model.name(),
            horizon,
            seed: cfg.seed,
            start: sw.start,
            x_start: &x_start,
            u_start: &u_start,
            target: &target,
            j_star,
            monte_carlo: &rows,
            monte_carlo_slope: least_squares_slope(&points),
        },
    )?;
    out.plot("sweep_plot.csv", PlotReport::Sweep { rows: &rows, j_star })
}

pub fn validate(cfg: &RunConfig, out: &mut Output) -> Result<()> {
    let model = cfg.build_model().map_err(Error::stage("model"))?;
    let bounds = cfg.validate.bounds.as_ref().expect("resolved config");
    let report = validate_network(model.network(), bounds, cfg.validate.samples).map_err(Error::stage("validate"))?;
    out.json("validate.json", &report)?;
    if report.passed {
        Ok(())
    } else {
        Err(Error::stage("validate")(Error::InvariantViolation(
            "network validation failed; see validate.json".into(),
        )))
    }
}

/// Table of a smooth path, for writing inputs to the `action` command.
pub fn path_csv(path: &crate::ldp::SmoothPath) -> String {
    path_table(path).to_csv()
}
