//! File formats: trajectory and histogram CSV, JSON-lines records.
//!
//! Floats in CSV files are written with 17 significant digits, enough to
//! read back the exact binary value.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rank_sde_core::analysis::HistogramBin;
use rank_sde_core::Trajectory;
use serde::Serialize;

use crate::error::{CliError, CliResult};

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(format!("creating {}", path.display()), e))
}

fn io_at(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::io(format!("writing {}", path.display()), e)
}

pub fn write_float<W: Write>(w: &mut W, v: f64) -> std::io::Result<()> {
    write!(w, "{v:.16e}")
}

/// Writes `t,x1,...,xN` followed by one row per recorded step.
pub fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> CliResult<()> {
    let mut w = create(path)?;
    let err = io_at(path);
    let mut header = String::from("t");
    for i in 1..=traj.n {
        header.push_str(&format!(",x{i}"));
    }
    writeln!(w, "{header}").map_err(&err)?;
    for (t, row) in traj.rows() {
        write_float(&mut w, t).map_err(&err)?;
        for &v in row {
            w.write_all(b",").map_err(&err)?;
            write_float(&mut w, v).map_err(&err)?;
        }
        w.write_all(b"\n").map_err(&err)?;
    }
    w.flush().map_err(&err)
}

/// Trajectory data read back from CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTrajectory {
    pub n: usize,
    pub times: Vec<f64>,
    /// Row-major, `times.len() * n` entries.
    pub states: Vec<f64>,
}

impl CsvTrajectory {
    pub fn row(&self, m: usize) -> &[f64] {
        &self.states[m * self.n..(m + 1) * self.n]
    }
}

pub fn read_trajectory_csv(path: &Path) -> CliResult<CsvTrajectory> {
    let file = File::open(path).map_err(|e| CliError::io(format!("opening {}", path.display()), e))?;
    let bad = |line: usize, msg: String| CliError::Parse { path: path.to_path_buf(), message: format!("line {line}: {msg}") };
    let mut lines = BufReader::new(file).lines();
    let header = match lines.next() {
        Some(h) => h.map_err(|e| CliError::io(format!("reading {}", path.display()), e))?,
        None => return Err(bad(1, "empty file".into())),
    };
    let cols: Vec<&str> = header.split(',').collect();
    let n = cols.len().saturating_sub(1);
    let expected: Vec<String> = std::iter::once("t".to_string()).chain((1..=n).map(|i| format!("x{i}"))).collect();
    if n == 0 || cols != expected {
        return Err(bad(1, format!("unexpected header {header:?}")));
    }
    let mut out = CsvTrajectory { n, times: Vec::new(), states: Vec::new() };
    for (k, line) in lines.enumerate() {
        let line = line.map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
        let values: Vec<f64> = line
            .split(',')
            .map(|s| s.parse::<f64>().map_err(|e| bad(k + 2, format!("{s:?}: {e}"))))
            .collect::<CliResult<_>>()?;
        if values.len() != n + 1 {
            return Err(bad(k + 2, format!("expected {} fields, got {}", n + 1, values.len())));
        }
        out.times.push(values[0]);
        out.states.extend_from_slice(&values[1..]);
    }
    Ok(out)
}

pub fn write_histogram_csv(path: &Path, bins: &[HistogramBin]) -> CliResult<()> {
    let mut w = create(path)?;
    let err = io_at(path);
    writeln!(w, "bin_left,bin_right,count").map_err(&err)?;
    for b in bins {
        write_float(&mut w, b.left).map_err(&err)?;
        w.write_all(b",").map_err(&err)?;
        write_float(&mut w, b.right).map_err(&err)?;
        writeln!(w, ",{}", b.count).map_err(&err)?;
    }
    w.flush().map_err(&err)
}

/// Writes one JSON object per line.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> CliResult<()> {
    let mut w = create(path)?;
    let err = io_at(path);
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| CliError::io(format!("writing {}", path.display()), e.into()))?;
        w.write_all(b"\n").map_err(&err)?;
    }
    w.flush().map_err(&err)
}
