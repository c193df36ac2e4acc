//! Long-format plot series derived from reports.

use crate::calcium::MonteCarloRow;
use crate::io::LongSeries;
use crate::optimal_path::ELState;
use crate::simulate::{EnsembleReport, JumpPath};

/// Anything [`emit_plot_data`] knows how to flatten.
#[derive(Debug, Clone, Copy)]
pub enum PlotReport<'a> {
    /// Samples of an optimal trajectory: series `x_i`, `u_k`, `eta_k`.
    Optimal(&'a [ELState]),
    /// One sample path: series `x_i`, `u_k`, `z_a`.
    Path(&'a JumpPath),
    /// Ensemble mean with `±` one standard error: `<col>_mean`,
    /// `<col>_lower`, `<col>_upper`.
    Ensemble(&'a EnsembleReport),
    /// `(N, −log P̂ / N)` in series `minus_logP_over_N`, plus `J_star` at the
    /// same abscissae. The `t` column holds `N`.
    Sweep {
        rows: &'a [MonteCarloRow],
        j_star: Option<f64>,
    },
}

pub fn emit_plot_data(report: PlotReport<'_>) -> LongSeries {
    let mut out = LongSeries::default();
    match report {
        PlotReport::Optimal(states) => {
            let Some(first) = states.first() else { return out };
            for i in 0..first.x.len() {
                let name = format!("x_{}", i + 1);
                states.iter().for_each(|s| out.push(&name, s.t, s.x[i]));
            }
            for k in 0..first.u.len() {
                let name = format!("u_{}", k + 1);
                states.iter().for_each(|s| out.push(&name, s.t, s.u[k]));
            }
            for k in 0..first.eta.len() {
                let name = format!("eta_{}", k + 1);
                states.iter().for_each(|s| out.push(&name, s.t, s.eta[k]));
            }
        }
        PlotReport::Path(path) => {
            let columns = [(path.species, 'x'), (path.slow_dim, 'u'), (path.reactions, 'z')];
            for (width, c) in columns {
                for j in 0..width {
                    let name = format!("{c}_{}", j + 1);
                    for (r, &t) in path.grid.iter().enumerate() {
                        let v = match c {
                            'x' => path.x_at(r)[j],
                            'u' => path.u_at(r)[j],
                            _ => path.z_at(r)[j],
                        };
                        out.push(&name, t, v);
                    }
                }
            }
        }
        PlotReport::Ensemble(report) => {
            let se = report.standard_error();
            for (c, col) in report.columns.iter().enumerate() {
                let series = [
                    (format!("{col}_mean"), 0.0),
                    (format!("{col}_lower"), -1.0),
                    (format!("{col}_upper"), 1.0),
                ];
                for (name, sign) in series {
                    for (r, &t) in report.grid.iter().enumerate() {
                        out.push(&name, t, report.mean[r][c] + sign * se[r][c]);
                    }
                }
            }
        }
        PlotReport::Sweep { rows, j_star } => {
            for r in rows {
                out.push("minus_logP_over_N", r.n as f64, r.minus_log_p_over_n.to_f64());
            }
            if let Some(j) = j_star {
                for r in rows {
                    out.push("J_star", r.n as f64, j);
                }
            }
        }
    }
    out
}
