//! Trainable output maps: feature standardization, closed-form ridge
//! regression and a two-layer MLP head.

mod mlp;
mod ridge;
mod standardize;

pub use mlp::{fit_mlp, MlpConfig, MlpGradients, MlpLoss, MlpReadout};
pub use ridge::{fit_ridge, RidgeProblem, RidgeReadout};
pub use standardize::{Standardizer, STD_FLOOR};

use crate::tensor_core::Matrix;

/// Index of the largest entry in every row.
pub fn argmax_rows(m: &Matrix<f64>) -> Vec<usize> {
    (0..m.rows())
        .map(|i| {
            m.row(i)
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map_or(0, |(j, _)| j)
        })
        .collect()
}
