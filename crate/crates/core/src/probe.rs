//! Least-squares linear probes on frozen embeddings.

use nalgebra::{DMatrix, DVector, SVD};
use serde::Serialize;

use crate::tasks::ProbeTask;
use crate::{Error, Result};

/// Singular values below this fraction of the largest are treated as zero,
/// giving the minimum-norm solution on rank-deficient designs.
pub const PROBE_RCOND: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeResult {
    /// `k x q` (or `(k + 1) x q` with the intercept as the last row).
    pub weights: DMatrix<f64>,
    pub intercept: bool,
    pub predictions: DMatrix<f64>,
    pub r_squared: RSquared,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RSquared {
    pub per_column: Vec<f64>,
    pub mean: f64,
}

/// Fits `targets ~ embedding * W (+ b)` by minimum-norm least squares.
pub fn fit_linear_probe(
    embedding: &DMatrix<f64>,
    task: &ProbeTask,
    intercept: bool,
) -> Result<ProbeResult> {
    let n = task.targets.nrows();
    if embedding.nrows() != n {
        return Err(Error::DimensionMismatch {
            context: "probe rows",
            expected: n,
            actual: embedding.nrows(),
        });
    }
    let design = if intercept {
        embedding.clone().insert_column(embedding.ncols(), 1.0)
    } else {
        embedding.clone()
    };
    let svd = SVD::new(design.clone(), true, true);
    let cutoff = PROBE_RCOND * svd.singular_values.max();
    let weights = svd
        .solve(&task.targets, cutoff)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let predictions = &design * &weights;
    let r_squared = r_squared(&predictions, &task.targets)?;
    Ok(ProbeResult {
        weights,
        intercept,
        predictions,
        r_squared,
    })
}

/// `1 - SS_res / SS_tot` per column, plus the unweighted mean.
pub fn r_squared(predictions: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<RSquared> {
    if predictions.shape() != targets.shape() {
        return Err(Error::DimensionMismatch {
            context: "r_squared shape",
            expected: targets.len(),
            actual: predictions.len(),
        });
    }
    let mut per_column = Vec::with_capacity(targets.ncols());
    for (j, (p, y)) in predictions
        .column_iter()
        .zip(targets.column_iter())
        .enumerate()
    {
        let mean = y.mean();
        let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
        if ss_tot <= 0.0 {
            return Err(Error::ZeroVariance { column: j });
        }
        let ss_res: f64 = y.iter().zip(p.iter()).map(|(a, b)| (a - b).powi(2)).sum();
        per_column.push(1.0 - ss_res / ss_tot);
    }
    let mean = DVector::from_column_slice(&per_column).mean();
    Ok(RSquared { per_column, mean })
}
