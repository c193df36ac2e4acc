//! File formats: numeric CSV tables, long-format plot series, JSON reports
//! and content hashes.
//!
//! Numbers are written as `{:.16e}` (17 significant digits), so identical
//! values always produce identical bytes and parse back exactly.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ldp::SmoothPath;
use crate::model::PdmpModel;
use crate::optimal_path::ELState;

pub fn format_number(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}

/// A header plus numeric rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(header: Vec<String>) -> Self {
        Table { header, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|&v| format_number(v)).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }
}

/// Tidy plot data: one `(series, t, value)` triple per row.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LongSeries {
    pub rows: Vec<(String, f64, f64)>,
}

impl LongSeries {
    pub fn push(&mut self, series: &str, t: f64, value: f64) {
        self.rows.push((series.to_string(), t, value));
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("series,t,value\n");
        for (s, t, v) in &self.rows {
            out.push_str(&format!("{s},{},{}\n", format_number(*t), format_number(*v)));
        }
        out
    }
}

fn io_error(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| io_error(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| io_error(path, e))
}

/// Pretty-printed JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Column names `x_i`, `u_k`, `z_α` (1-based) used by every table.
pub fn state_columns(d: usize, m: usize, reactions: usize) -> Vec<String> {
    (1..=d)
        .map(|i| format!("x_{i}"))
        .chain((1..=m).map(|k| format!("u_{k}")))
        .chain((1..=reactions).map(|a| format!("z_{a}")))
        .collect()
}

pub fn path_table(path: &SmoothPath) -> Table {
    let d = path.x.first().map_or(0, Vec::len);
    let m = path.u.first().map_or(0, Vec::len);
    let mm = path.z.first().map_or(0, Vec::len);
    let mut header = vec!["t".to_string()];
    header.extend(state_columns(d, m, mm));
    let mut table = Table::new(header);
    for k in 0..path.nodes() {
        let mut row = vec![path.t[k]];
        row.extend(&path.x[k]);
        row.extend(&path.u[k]);
        row.extend(&path.z[k]);
        table.push(row);
    }
    table
}

/// Euler-Lagrange samples as `t, x_i, u_k, eta_k, zdot_α`.
pub fn trajectory_table(states: &[ELState]) -> Table {
    let first = states.first();
    let d = first.map_or(0, |s| s.x.len());
    let m = first.map_or(0, |s| s.u.len());
    let mm = first.and_then(|s| s.zdot.as_ref()).map_or(0, Vec::len);
    let mut header = vec!["t".to_string()];
    header.extend((1..=d).map(|i| format!("x_{i}")));
    header.extend((1..=m).map(|k| format!("u_{k}")));
    header.extend((1..=m).map(|k| format!("eta_{k}")));
    header.extend((1..=mm).map(|a| format!("zdot_{a}")));
    let mut table = Table::new(header);
    for s in states {
        let mut row = vec![s.t];
        row.extend(&s.x);
        row.extend(&s.u);
        row.extend(&s.eta);
        match &s.zdot {
            Some(z) => row.extend(z),
            None => row.extend(std::iter::repeat(f64::NAN).take(mm)),
        }
        table.push(row);
    }
    table
}

/// Parse a numeric CSV with a header row.
pub fn parse_table(text: &str) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Config(vec![format!("CSV header: {e}")]))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut table = Table::new(header);
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Config(vec![format!("CSV row {}: {e}", line + 1)]))?;
        let row = record
            .iter()
            .map(|c| {
                c.parse::<f64>()
                    .map_err(|_| Error::Config(vec![format!("CSV row {}: '{c}' is not a number", line + 1)]))
            })
            .collect::<Result<Vec<f64>>>()?;
        if row.len() != table.header.len() {
            return Err(Error::Config(vec![format!(
                "CSV row {} has {} cells, expected {}",
                line + 1,
                row.len(),
                table.header.len()
            )]));
        }
        table.rows.push(row);
    }
    Ok(table)
}

/// Read a path with columns `t`, `x_i`, `u_k` and `z_α` for `model`.
pub fn read_path_csv(path: &Path, model: &PdmpModel) -> Result<SmoothPath> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let table = parse_table(&text)?;
    let (d, m, mm) = (model.species(), model.slow_dim(), model.reactions());
    let mut missing = Vec::new();
    let mut column = |name: &str| {
        table.column(name).unwrap_or_else(|| {
            missing.push(format!("path CSV lacks column '{name}'"));
            Vec::new()
        })
    };
    let t = column("t");
    let xs: Vec<Vec<f64>> = (1..=d).map(|i| column(&format!("x_{i}"))).collect();
    let us: Vec<Vec<f64>> = (1..=m).map(|k| column(&format!("u_{k}"))).collect();
    let zs: Vec<Vec<f64>> = (1..=mm).map(|a| column(&format!("z_{a}"))).collect();
    if !missing.is_empty() {
        return Err(Error::Config(missing));
    }
    let rows = |cols: &[Vec<f64>]| (0..t.len()).map(|r| cols.iter().map(|c| c[r]).collect()).collect();
    SmoothPath::new(t.clone(), rows(&zs), rows(&xs), rows(&us))
}
