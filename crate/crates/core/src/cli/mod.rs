//! Batch front-end.
//!
//! Every subcommand reads one JSON config (all sections optional), applies
//! `--set key.path=value` overrides, runs, and writes its artifacts plus a
//! `manifest.json` with the resolved config, the seed and a SHA-256 of every
//! file. The output directory is `--out`, else `output.dir` from the config,
//! else `$PDMP_LDP_OUT`, else `pdmp-ldp-out`.
//!
//! Exit codes: 0 success, 2 config error, 3 solver failure, 4 I/O error. On
//! failure a JSON object `{"error": {...}}` goes to stderr.

pub mod commands;
pub mod config;
pub mod plot;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::error::{Error, Result};
pub use commands::{FileEntry, Output};
pub use config::RunConfig;
pub use plot::{emit_plot_data, PlotReport};

/// Environment variable naming the default output directory.
pub const OUTPUT_ENV: &str = "PDMP_LDP_OUT";
pub const DEFAULT_OUTPUT: &str = "pdmp-ldp-out";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Sample one path, or ensemble statistics when `simulate.trajectories > 1`.
    Simulate,
    /// Evaluate the action of the path CSV named by `action.path`.
    Action,
    /// Solve the Euler-Lagrange boundary-value problem for `optimal_path.target`.
    OptimalPath,
    /// Spark-to-wave experiment on the calcium model.
    CalciumWave,
    /// Monte Carlo estimates of `P(x(T) >= target)` over `sweep.sizes`.
    Sweep,
    /// Spot-check rates over `validate.box`.
    Validate,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Action => "action",
            Command::OptimalPath => "optimal-path",
            Command::CalciumWave => "calcium-wave",
            Command::Sweep => "sweep",
            Command::Validate => "validate",
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "pdmp-ldp", version, about = "Hybrid jump-process simulation and large-deviation paths")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON run configuration.
    #[arg(short, long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a config key by dotted path, e.g. `model.params.n=500`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Output directory.
    #[arg(short, long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for ensembles and Jacobians.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

/// What a successful run produced.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub files: Vec<FileEntry>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'static str,
    version: &'static str,
    status: &'static str,
    seed: u64,
    config: &'a RunConfig,
    files: &'a [FileEntry],
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<serde_json::Value>,
}

fn output_dir(cli: &Cli, cfg: &RunConfig, base: &Path) -> PathBuf {
    if let Some(dir) = &cli.out {
        return dir.clone();
    }
    if let Some(dir) = &cfg.output.dir {
        return base.join(dir);
    }
    match std::env::var_os(OUTPUT_ENV) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir),
        _ => PathBuf::from(DEFAULT_OUTPUT),
    }
}

/// Run one parsed invocation.
pub fn run(cli: &Cli) -> Result<RunSummary> {
    let cfg = config::load(cli.config.as_deref(), &cli.overrides)?;
    cfg.require(cli.command)?;
    let base = cli
        .config
        .as_deref()
        .and_then(Path::parent)
        .map(Path::to_path_buf)
        .unwrap_or_default();
    let dir = output_dir(cli, &cfg, &base);
    std::fs::create_dir_all(&dir)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", dir.display()))))?;
    let mut out = Output::new(dir, cfg.output.plot_data);

    let dispatch = |out: &mut Output| match cli.command {
        Command::Simulate => commands::simulate(&cfg, out),
        Command::Action => commands::action_cmd(&cfg, &base, out),
        Command::OptimalPath => commands::optimal_path(&cfg, out),
        Command::CalciumWave => commands::calcium_wave(&cfg, out),
        Command::Sweep => commands::sweep(&cfg, out),
        Command::Validate => commands::validate(&cfg, out),
    };
    let result = match cli.threads.or(cfg.threads) {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(vec![format!("threads: {e}")]))?;
            pool.install(|| dispatch(&mut out))
        }
        None => dispatch(&mut out),
    };

    if result.is_ok() || !out.files().is_empty() {
        let manifest = Manifest {
            command: cli.command.name(),
            version: env!("CARGO_PKG_VERSION"),
            status: if result.is_ok() { "ok" } else { "failed" },
            seed: cfg.seed,
            config: &cfg,
            files: out.files(),
            error: result.as_ref().err().map(error_report),
        };
        let text = crate::io::to_json(&manifest)?;
        crate::io::write_text(&out.dir().join("manifest.json"), &text)?;
    }
    result.map(|()| RunSummary {
        dir: out.dir().to_path_buf(),
        files: out.files().to_vec(),
    })
}

/// Process exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e.root() {
        Error::Config(_) | Error::InvalidNetwork(_) | Error::Json(_) => 2,
        Error::Io(_) => 4,
        _ => 3,
    }
}

/// Machine-readable description of an error.
pub fn error_report(e: &Error) -> serde_json::Value {
    let code = exit_code(e);
    let kind = match code {
        2 => "config",
        4 => "io",
        _ => "solver",
    };
    let mut stages = Vec::new();
    let mut node = e;
    loop {
        match node {
            Error::Stage { stage, source } => {
                stages.push(stage.to_string());
                node = source;
            }
            Error::Trajectory { index, source } => {
                stages.push(format!("trajectory {index}"));
                node = source;
            }
            _ => break,
        }
    }
    let details = match node {
        Error::Config(list) | Error::Bvp(list) => list.clone(),
        other => vec![other.to_string()],
    };
    json!({"error": {"kind": kind, "exit_code": code, "message": e.to_string(), "stages": stages, "details": details}})
}

/// Parse `args` (program name first), run, and return the exit status.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            let report = json!({"error": {"kind": "config", "exit_code": 2, "message": e.to_string(), "stages": [], "details": []}});
            eprintln!("{report}");
            return 2;
        }
    };
    match run(&cli) {
        Ok(summary) => {
            let line = json!({
                "status": "ok",
                "command": cli.command.name(),
                "output_dir": summary.dir.display().to_string(),
                "files": summary.files.iter().map(|f| f.path.clone()).collect::<Vec<_>>(),
            });
            println!("{line}");
            0
        }
        Err(e) => {
            eprintln!("{}", error_report(&e));
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_root_error() {
        assert_eq!(exit_code(&Error::Config(vec![])), 2);
        let staged = Error::stage("optimal path")(Error::Bvp(vec!["start 0: diverged".into()]));
        assert_eq!(exit_code(&staged), 3);
        let report = error_report(&staged);
        assert_eq!(report["error"]["stages"][0], "optimal path");
        assert_eq!(report["error"]["details"][0], "start 0: diverged");
        assert_eq!(exit_code(&Error::Io(std::io::Error::other("disk"))), 4);
    }

    #[test]
    fn subcommand_names_round_trip_through_clap() {
        for c in [
            Command::Simulate,
            Command::Action,
            Command::OptimalPath,
            Command::CalciumWave,
            Command::Sweep,
            Command::Validate,
        ] {
            let cli = Cli::try_parse_from(["pdmp-ldp", c.name(), "--set", "seed=1"]).unwrap();
            assert_eq!(cli.command, c);
            assert_eq!(cli.overrides, ["seed=1"]);
        }
    }
}
