//! CSV and JSON rendering shared by the CLI. Floats are written with 17
//! significant digits so reruns are byte-identical and values round-trip.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::probe::ProbeResult;
use crate::tasks::ProbeTask;
use crate::train::TrainReport;
use crate::Result;

/// `x` in scientific notation with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn push_row(out: &mut String, cells: impl IntoIterator<Item = String>) {
    let mut first = true;
    for c in cells {
        if !first {
            out.push(',');
        }
        out.push_str(&c);
        first = false;
    }
    out.push('\n');
}

/// One row per matrix row, prefixed by a `state` column.
pub fn matrix_csv(m: &DMatrix<f64>, column_prefix: &str) -> String {
    let mut out = String::new();
    push_row(
        &mut out,
        std::iter::once("state".to_string())
            .chain((1..=m.ncols()).map(|j| format!("{column_prefix}{j}"))),
    );
    for (i, row) in m.row_iter().enumerate() {
        push_row(
            &mut out,
            std::iter::once(i.to_string()).chain(row.iter().map(|&v| fmt_f64(v))),
        );
    }
    out
}

/// `index,eigenvalue` rows, descending.
pub fn eigenvalues_csv(values: &DVector<f64>) -> String {
    let mut out = String::from("index,eigenvalue\n");
    for (i, v) in values.iter().enumerate() {
        let _ = writeln!(out, "{},{}", i + 1, fmt_f64(*v));
    }
    out
}

/// `step,loss,mode` rows of a training run.
pub fn loss_curve_csv(report: &TrainReport) -> String {
    let mut out = String::from("step,loss,mode\n");
    for p in &report.loss_curve {
        let mode = match p.mode {
            crate::train::CurveKind::Population => "population",
            crate::train::CurveKind::Empirical => "empirical",
        };
        let _ = writeln!(out, "{},{},{}", p.step, fmt_f64(p.loss), mode);
    }
    out
}

/// Per-state targets next to probe predictions.
pub fn predictions_csv(task: &ProbeTask, result: &ProbeResult) -> String {
    let q = task.targets.ncols();
    let mut out = String::new();
    push_row(
        &mut out,
        std::iter::once("state".to_string())
            .chain((1..=q).map(|j| format!("target_{j}")))
            .chain((1..=q).map(|j| format!("prediction_{j}"))),
    );
    for i in 0..task.targets.nrows() {
        push_row(
            &mut out,
            std::iter::once(i.to_string())
                .chain(task.targets.row(i).iter().map(|&v| fmt_f64(v)))
                .chain(result.predictions.row(i).iter().map(|&v| fmt_f64(v))),
        );
    }
    out
}

pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, contents)?;
    Ok(())
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_text(path, &s)
}
