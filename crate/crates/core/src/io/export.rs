//! CSV / JSON tables for traces, metrics and matrices.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::IoError;
use crate::optim::ConvergenceTrace;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Csv,
    Json,
}

impl ExportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ExportFormat::Csv => "csv",
            ExportFormat::Json => "json",
        }
    }
}

impl FromStr for ExportFormat {
    type Err = IoError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ExportFormat::Csv),
            "json" => Ok(ExportFormat::Json),
            _ => Err(IoError::Config(format!("unknown export format '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Int(i64),
    Num(f64),
    Text(String),
}

impl Cell {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Int(v) => Some(*v as f64),
            Cell::Num(v) => Some(*v),
            Cell::Text(_) => None,
        }
    }

    fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Num(v) => format_float(*v),
            Cell::Text(s) => s.clone(),
        }
    }

    fn parse(s: &str) -> Cell {
        if let Ok(v) = s.parse::<i64>() {
            Cell::Int(v)
        } else if let Ok(v) = s.parse::<f64>() {
            Cell::Num(v)
        } else {
            Cell::Text(s.to_string())
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

/// 17 significant digits.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width must match the header");
        self.rows.push(row);
    }

    /// Removes a column if present.
    pub fn drop_column(&mut self, name: &str) {
        if let Some(j) = self.columns.iter().position(|c| c == name) {
            self.columns.remove(j);
            for r in &mut self.rows {
                r.remove(j);
            }
        }
    }

    pub fn column(&self, name: &str) -> Option<Vec<Cell>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[j].clone()).collect())
    }

    /// Square matrix with row labels in the first column.
    pub fn from_matrix<T: Copy + Into<f64> + nalgebra::Scalar>(
        m: &DMatrix<T>,
        labels: &[String],
    ) -> Self {
        let mut columns = vec!["label".to_string()];
        columns.extend(labels.iter().cloned());
        let rows = (0..m.nrows())
            .map(|i| {
                let mut r = vec![Cell::Text(labels.get(i).cloned().unwrap_or_default())];
                r.extend((0..m.ncols()).map(|j| Cell::Num(m[(i, j)].into())));
                r
            })
            .collect();
        Self { columns, rows }
    }
}

pub fn export_table(table: &Table, path: impl AsRef<Path>, format: ExportFormat) -> Result<(), IoError> {
    let path = path.as_ref();
    match format {
        ExportFormat::Csv => {
            let mut w = csv::Writer::from_path(path).map_err(|e| IoError::Csv(e.to_string()))?;
            w.write_record(&table.columns)
                .map_err(|e| IoError::Csv(e.to_string()))?;
            for row in &table.rows {
                w.write_record(row.iter().map(Cell::render))
                    .map_err(|e| IoError::Csv(e.to_string()))?;
            }
            w.flush().map_err(|e| IoError::at(path, e))?;
        }
        ExportFormat::Json => {
            let f = File::create(path).map_err(|e| IoError::at(path, e))?;
            let mut w = BufWriter::new(f);
            serde_json::to_writer_pretty(&mut w, table)?;
            w.flush().map_err(|e| IoError::at(path, e))?;
        }
    }
    Ok(())
}

pub fn read_table_csv(path: impl AsRef<Path>) -> Result<Table, IoError> {
    let mut r = csv::Reader::from_path(path.as_ref()).map_err(|e| IoError::Csv(e.to_string()))?;
    let columns = r
        .headers()
        .map_err(|e| IoError::Csv(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| IoError::Csv(e.to_string()))?;
        rows.push(rec.iter().map(Cell::parse).collect());
    }
    Ok(Table { columns, rows })
}

const TRACE_COLUMNS: [&str; 7] = [
    "iter",
    "objective",
    "grad_norm",
    "step_norm",
    "time_s",
    "inner_iters",
    "relative_residual",
];

pub fn trace_table(trace: &ConvergenceTrace) -> Table {
    let kkt = trace.records.iter().any(|r| r.kkt_residual.is_some());
    let mut cols = TRACE_COLUMNS.to_vec();
    if kkt {
        cols.push("kkt_residual");
    }
    let mut t = Table::new(&cols);
    for r in &trace.records {
        let mut row: Vec<Cell> = vec![
            r.iter.into(),
            r.objective.into(),
            r.grad_norm.into(),
            r.step_norm.into(),
            r.time_s.into(),
            r.inner_iters.into(),
            r.relative_residual.into(),
        ];
        if kkt {
            row.push(r.kkt_residual.unwrap_or(f64::NAN).into());
        }
        t.push(row);
    }
    t
}

pub fn export_trace(
    trace: &ConvergenceTrace,
    path: impl AsRef<Path>,
    format: ExportFormat,
) -> Result<(), IoError> {
    export_table(&trace_table(trace), path, format)
}

pub fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let m = values.len();
    if m % 2 == 1 {
        values[m / 2]
    } else {
        0.5 * (values[m / 2 - 1] + values[m / 2])
    }
}

/// Per-iteration medians across runs. A run that stopped early contributes
/// its final record to later iterations.
pub fn median_trace(traces: &[ConvergenceTrace]) -> Table {
    let kkt = traces
        .iter()
        .any(|t| t.records.iter().any(|r| r.kkt_residual.is_some()));
    let mut cols = vec!["iter", "objective", "grad_norm", "relative_residual", "time_s"];
    if kkt {
        cols.push("kkt_residual");
    }
    let mut table = Table::new(&cols);
    let len = traces.iter().map(|t| t.records.len()).max().unwrap_or(0);
    for i in 0..len {
        let at: Vec<_> = traces
            .iter()
            .filter_map(|t| t.records.get(i).or_else(|| t.records.last()))
            .collect();
        let col = |f: &dyn Fn(&crate::optim::IterRecord) -> f64| {
            let mut v: Vec<f64> = at.iter().map(|r| f(r)).collect();
            Cell::Num(median(&mut v))
        };
        let mut row = vec![
            Cell::from(i),
            col(&|r| r.objective),
            col(&|r| r.grad_norm),
            col(&|r| r.relative_residual),
            col(&|r| r.time_s),
        ];
        if kkt {
            row.push(col(&|r| r.kkt_residual.unwrap_or(f64::NAN)));
        }
        table.push(row);
    }
    table
}
