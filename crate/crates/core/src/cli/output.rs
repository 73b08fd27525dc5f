//! CSV and summary writers. Every float is written with 17 significant
//! digits so runs can be compared byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::Result;
use crate::ltv::SignalTrajectory;
use crate::timegrid::{MatrixTrajectory, TimeGrid};

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// A CSV table built in memory and written in one go.
pub struct Table {
    text: String,
    width: usize,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        let cols: Vec<&str> = header.iter().map(|s| s.as_ref()).collect();
        Table {
            text: format!("{}\n", cols.join(",")),
            width: cols.len(),
        }
    }

    pub fn push(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.width);
        let cells: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
        let _ = writeln!(self.text, "{}", cells.join(","));
    }

    /// Row whose first cell is an integer label (iteration numbers).
    pub fn push_labeled(&mut self, label: usize, row: &[f64]) {
        debug_assert_eq!(row.len() + 1, self.width);
        let cells: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
        let _ = writeln!(self.text, "{label},{}", cells.join(","));
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, &self.text)?;
        Ok(())
    }
}

/// Column names `prefix_i_j` in row-major order.
pub fn matrix_columns(prefix: &str, rows: usize, cols: usize) -> Vec<String> {
    (0..rows)
        .flat_map(|i| (0..cols).map(move |j| format!("{prefix}_{i}_{j}")))
        .collect()
}

fn push_row_major(row: &mut Vec<f64>, m: &nalgebra::DMatrix<f64>) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            row.push(m[(i, j)]);
        }
    }
}

/// One row per node: `t` followed by each trajectory flattened row-major.
pub fn trajectories_table(grid: &TimeGrid, named: &[(&str, &MatrixTrajectory)]) -> Table {
    let mut header = vec!["t".to_string()];
    for (name, m) in named {
        header.extend(matrix_columns(name, m.rows(), m.cols()));
    }
    let mut table = Table::new(&header);
    for k in 0..grid.len() {
        let mut row = vec![grid.point(k)];
        for (_, m) in named {
            push_row_major(&mut row, m.at(k));
        }
        table.push(&row);
    }
    table
}

/// One row per node: `t` followed by the channels of each signal.
pub fn signals_table(named: &[(&str, &SignalTrajectory)]) -> Table {
    let grid = *named[0].1.grid();
    let mut header = vec!["t".to_string()];
    for (name, s) in named {
        if s.dim() == 1 {
            header.push((*name).to_string());
        } else {
            header.extend((0..s.dim()).map(|i| format!("{name}_{i}")));
        }
    }
    let mut table = Table::new(&header);
    for k in 0..grid.len() {
        let mut row = vec![grid.point(k)];
        for (_, s) in named {
            row.extend(s.value(k).iter());
        }
        table.push(&row);
    }
    table
}

/// `key = value` lines.
#[derive(Default)]
pub struct Summary {
    text: String,
}

impl Summary {
    pub fn num(&mut self, key: &str, v: f64) {
        let _ = writeln!(self.text, "{key} = {}", fmt_f64(v));
    }

    pub fn int(&mut self, key: &str, v: usize) {
        let _ = writeln!(self.text, "{key} = {v}");
    }

    pub fn text(&mut self, key: &str, v: &str) {
        let _ = writeln!(self.text, "{key} = {v}");
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, &self.text)?;
        Ok(())
    }
}
