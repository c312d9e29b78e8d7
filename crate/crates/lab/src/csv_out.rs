//! CSV artifacts. Column layouts are documented in `docs/csv-schema.md`.
//!
//! Floats are written with 9 significant digits in scientific notation so
//! every file round-trips through `f64::from_str`.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use dam_core::Tensor;

use crate::analysis::CkaReport;
use crate::dr::{AblationPoint, SweepCell};
use crate::error::{LabError, Result};
use crate::prune::PruneReport;
use crate::trace::RunTrace;

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
    Empty,
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl<T: Into<Cell>> From<Option<T>> for Cell {
    fn from(v: Option<T>) -> Self {
        v.map_or(Cell::Empty, Into::into)
    }
}

pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v:.8e}")
    }
}

impl Cell {
    pub fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => format_float(*v),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Table {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.header.len(), "row width must match the header");
        self.rows.push(row);
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render))?;
        }
        w.into_inner().map_err(|e| LabError::Csv(e.into_error().into()))
    }
}

/// Writes `table` to `path`, creating parent directories.
pub fn emit_csv(table: &Table, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
    }
    let bytes = table.to_bytes()?;
    let mut f = File::create(path).map_err(|e| LabError::io(path, e))?;
    f.write_all(&bytes).map_err(|e| LabError::io(path, e))
}

/// Reads a CSV back as a header and string rows.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec?.iter().map(String::from).collect());
    }
    Ok((header, rows))
}

/// One row per epoch. Gate and mask columns are numbered by position.
pub fn trace_table(trace: &RunTrace) -> Table {
    let gates = trace.gate_count();
    let masks = trace.rows.first().map_or(0, |r| r.l1_dims.len());
    let mut header: Vec<String> = vec!["epoch".into(), "task_loss".into(), "objective".into()];
    for g in 0..gates {
        for name in ["beta", "l0_exact", "l0_continuous", "equilibrium_residual"] {
            header.push(format!("{name}_{g}"));
        }
    }
    for m in 0..masks {
        header.push(format!("l1_dim_{m}"));
    }
    let mut t = Table {
        header,
        rows: Vec::new(),
    };
    for row in &trace.rows {
        let mut cells = vec![row.epoch.into(), row.task_loss.into(), row.objective.into()];
        for g in &row.gates {
            cells.extend([
                g.beta.into(),
                g.l0_exact.into(),
                g.l0_continuous.into(),
                g.equilibrium_residual.into(),
            ]);
        }
        cells.extend(row.l1_dims.iter().map(|&d| Cell::from(d)));
        t.push(cells);
    }
    t
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(";")
}

/// One row per report; `labels` become leading columns.
pub fn reports_table(label_names: &[&str], rows: &[(Vec<Cell>, &PruneReport)]) -> Table {
    let mut header: Vec<String> = label_names.iter().map(|s| s.to_string()).collect();
    header.extend(
        [
            "test_accuracy",
            "channels_pruned_pct",
            "params_pruned_pct",
            "remaining_params",
            "surviving_widths",
            "betas",
        ]
        .map(String::from),
    );
    let mut t = Table {
        header,
        rows: Vec::new(),
    };
    for (labels, r) in rows {
        let mut cells = labels.clone();
        let betas: Vec<String> = r.betas.iter().map(|b| format_float(*b)).collect();
        cells.extend([
            r.test_accuracy.into(),
            r.channels_pruned_pct.into(),
            r.params_pruned_pct.into(),
            r.remaining_params().into(),
            Cell::Text(join(&r.surviving_widths)),
            Cell::Text(betas.join(";")),
        ]);
        t.push(cells);
    }
    t
}

/// A dense matrix with a leading `row` column; column names are `c<j>` or
/// the given labels.
pub fn matrix_table(m: &Tensor, labels: Option<&[usize]>) -> Table {
    let names: Vec<String> = match labels {
        Some(l) => l.iter().map(|j| format!("n{j}")).collect(),
        None => (0..m.cols()).map(|j| format!("c{j}")).collect(),
    };
    let mut header = vec!["row".to_string()];
    header.extend(names.iter().cloned());
    let mut t = Table {
        header,
        rows: Vec::new(),
    };
    for r in 0..m.rows() {
        let mut cells = vec![Cell::Text(match labels {
            Some(_) => names[r].clone(),
            None => r.to_string(),
        })];
        cells.extend(m.row(r).iter().map(|&v| Cell::Float(v)));
        t.push(cells);
    }
    t
}

pub fn cka_summary_table(rows: &[(&str, &CkaReport)]) -> Table {
    let mut t = Table::new(["network", "neurons", "constant", "mean", "std", "max"]);
    for (name, r) in rows {
        t.push(vec![
            (*name).into(),
            r.neurons.len().into(),
            r.constant.len().into(),
            r.mean.into(),
            r.std.into(),
            r.max.into(),
        ]);
    }
    t
}

pub fn sweep_table(cells: &[SweepCell]) -> Table {
    let mut t = Table::new(["lr", "lambda", "beta0", "seed", "l0_exact", "reconstruction_loss", "failed_epoch"]);
    for c in cells {
        t.push(vec![
            c.lr.into(),
            c.lambda.into(),
            c.beta0.into(),
            c.seed.into(),
            c.dimension.into(),
            c.loss.into(),
            c.failed_epoch.into(),
        ]);
    }
    t
}

pub fn ablation_table(points: &[AblationPoint]) -> Table {
    let mut t = Table::new(["method", "lambda", "dimension", "reconstruction_loss"]);
    for p in points {
        t.push(vec![p.method.name().into(), p.lambda.into(), p.dimension.into(), p.loss.into()]);
    }
    t
}
