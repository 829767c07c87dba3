//! Evaluation metrics. Callers drop washout rows before scoring.

use serde::{Deserialize, Serialize};

use crate::error::{shape, Error, Result};
use crate::readout::argmax_rows;
use crate::tensor_core::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub name: String,
    pub value: f64,
    pub per_output: Vec<f64>,
}

fn check_shapes(pred: &Matrix<f64>, target: &Matrix<f64>) -> Result<()> {
    if pred.rows() != target.rows() || pred.cols() != target.cols() {
        return Err(shape(format!(
            "prediction {}x{} vs target {}x{}",
            pred.rows(),
            pred.cols(),
            target.rows(),
            target.cols()
        )));
    }
    if pred.rows() == 0 || pred.cols() == 0 {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Pearson correlation; 0 when either side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0)
}

/// Per-column mean squared error; the value is the mean over columns.
pub fn metric_mse(pred: &Matrix<f64>, target: &Matrix<f64>) -> Result<MetricReport> {
    check_shapes(pred, target)?;
    let per_output: Vec<f64> = (0..pred.cols())
        .map(|c| {
            let (p, t) = (pred.column(c), target.column(c));
            p.iter().zip(&t).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / p.len() as f64
        })
        .collect();
    Ok(MetricReport { name: "mse".into(), value: mean(&per_output), per_output })
}

/// RMSE over the population standard deviation of the target, per column,
/// averaged over columns.
pub fn metric_nrmse(pred: &Matrix<f64>, target: &Matrix<f64>) -> Result<MetricReport> {
    let mse = metric_mse(pred, target)?;
    let mut per_output = Vec::with_capacity(pred.cols());
    for (c, m) in mse.per_output.iter().enumerate() {
        let t = target.column(c);
        let mu = mean(&t);
        let var = t.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / t.len() as f64;
        if var <= 0.0 {
            return Err(Error::Domain(format!("target column {c} has zero variance")));
        }
        per_output.push((m / var).sqrt());
    }
    Ok(MetricReport { name: "nrmse".into(), value: mean(&per_output), per_output })
}

/// Fraction of rows whose argmax matches. `target` is one-hot (or scores).
pub fn metric_accuracy(pred: &Matrix<f64>, target: &Matrix<f64>) -> Result<MetricReport> {
    check_shapes(pred, target)?;
    let (p, t) = (argmax_rows(pred), argmax_rows(target));
    let hits = p.iter().zip(&t).filter(|(a, b)| a == b).count();
    Ok(MetricReport { name: "accuracy".into(), value: hits as f64 / p.len() as f64, per_output: vec![] })
}

/// Sum of squared per-delay correlations; `per_output[k-1]` is corr² at delay `k`.
pub fn metric_memory_capacity(pred: &Matrix<f64>, target: &Matrix<f64>) -> Result<MetricReport> {
    check_shapes(pred, target)?;
    let per_output: Vec<f64> = (0..pred.cols())
        .map(|c| pearson(&pred.column(c), &target.column(c)).powi(2))
        .collect();
    Ok(MetricReport { name: "memory_capacity".into(), value: per_output.iter().sum(), per_output })
}
