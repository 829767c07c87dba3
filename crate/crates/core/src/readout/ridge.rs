use serde::{Deserialize, Serialize};

use crate::error::{shape, Error, Result};
use crate::tensor_core::Matrix;

/// Jitter ladder for singular normal equations, relative to the mean
/// diagonal of the Gram matrix.
const JITTER_LADDER: [f64; 5] = [1e-12, 1e-11, 1e-10, 1e-9, 1e-8];

/// Linear map `y = W x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeReadout {
    /// `N_out x N_feat`.
    pub w_out: Matrix<f64>,
    pub b_out: Vec<f64>,
    pub lambda_reg: f64,
    /// Diagonal jitter that had to be added to factorize, if any.
    pub jitter: f64,
}

impl RidgeReadout {
    pub fn n_features(&self) -> usize {
        self.w_out.cols()
    }

    pub fn n_outputs(&self) -> usize {
        self.w_out.rows()
    }

    pub fn predict(&self, features: &Matrix<f64>) -> Result<Matrix<f64>> {
        if features.cols() != self.n_features() {
            return Err(shape(format!(
                "readout expects {} features, got {}",
                self.n_features(),
                features.cols()
            )));
        }
        let mut out = features.matmul(&self.w_out.transpose())?;
        for i in 0..out.rows() {
            for (v, b) in out.row_mut(i).iter_mut().zip(&self.b_out) {
                *v += b;
            }
        }
        Ok(out)
    }

    pub fn weight_norm(&self) -> f64 {
        self.w_out.frobenius_norm()
    }
}

/// Centered normal equations of one training set, reusable across
/// regularization strengths.
#[derive(Debug, Clone)]
pub struct RidgeProblem {
    gram: Matrix<f64>,
    cross: Matrix<f64>,
    x_mean: Vec<f64>,
    y_mean: Vec<f64>,
}

impl RidgeProblem {
    pub fn new(features: &Matrix<f64>, targets: &Matrix<f64>) -> Result<Self> {
        let m = features.rows();
        if m == 0 {
            return Err(Error::InsufficientData { needed: 1, got: 0 });
        }
        if targets.rows() != m {
            return Err(shape(format!("{m} feature rows but {} target rows", targets.rows())));
        }
        let (f, o) = (features.cols(), targets.cols());
        let col_mean = |mat: &Matrix<f64>| -> Vec<f64> {
            let mut mu = vec![0.0; mat.cols()];
            for i in 0..m {
                for (a, v) in mu.iter_mut().zip(mat.row(i)) {
                    *a += v;
                }
            }
            mu.iter().map(|v| v / m as f64).collect()
        };
        let x_mean = col_mean(features);
        let y_mean = col_mean(targets);
        let mut gram = Matrix::zeros(f, f);
        let mut cross = Matrix::zeros(f, o);
        let mut xc = vec![0.0; f];
        let mut yc = vec![0.0; o];
        for i in 0..m {
            for ((c, v), mu) in xc.iter_mut().zip(features.row(i)).zip(&x_mean) {
                *c = v - mu;
            }
            for ((c, v), mu) in yc.iter_mut().zip(targets.row(i)).zip(&y_mean) {
                *c = v - mu;
            }
            for a in 0..f {
                let xa = xc[a];
                if xa == 0.0 {
                    continue;
                }
                let g = &mut gram.as_mut_slice()[a * f..a * f + a + 1];
                for (gv, xb) in g.iter_mut().zip(&xc[..=a]) {
                    *gv += xa * xb;
                }
                for (cv, yv) in cross.row_mut(a).iter_mut().zip(&yc) {
                    *cv += xa * yv;
                }
            }
        }
        for a in 0..f {
            for b in 0..a {
                let v = gram.get(a, b);
                gram.set(b, a, v);
            }
        }
        Ok(Self {
            gram,
            cross,
            x_mean,
            y_mean,
        })
    }

    /// Minimizer of `‖X Wᵀ + b - Y‖² + λ ‖W‖²` with an unregularized bias.
    pub fn solve(&self, lambda_reg: f64) -> Result<RidgeReadout> {
        if !(lambda_reg >= 0.0 && lambda_reg.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "regularization must be finite and non-negative, got {lambda_reg}"
            )));
        }
        let f = self.gram.rows();
        let mut system = self.gram.clone();
        for i in 0..f {
            system.set(i, i, system.get(i, i) + lambda_reg);
        }
        let diag_scale = (0..f).map(|i| self.gram.get(i, i)).sum::<f64>() / f.max(1) as f64;
        let diag_scale = if diag_scale > 0.0 { diag_scale } else { 1.0 };

        let mut jitter = 0.0;
        let factor = match cholesky(&system) {
            Some(l) => l,
            None => {
                let mut found = None;
                for rel in JITTER_LADDER {
                    let mut jittered = system.clone();
                    for i in 0..f {
                        jittered.set(i, i, jittered.get(i, i) + rel * diag_scale);
                    }
                    if let Some(l) = cholesky(&jittered) {
                        jitter = rel * diag_scale;
                        system = jittered;
                        found = Some(l);
                        break;
                    }
                }
                found.ok_or_else(|| {
                    Error::Singular(format!(
                        "normal equations stay indefinite with jitter up to {:e}",
                        JITTER_LADDER[JITTER_LADDER.len() - 1] * diag_scale
                    ))
                })?
            }
        };

        // W^T = system⁻¹ · cross, then one step of iterative refinement.
        let mut wt = cholesky_solve(&factor, &self.cross);
        let residual = {
            let sw = system.matmul(&wt)?;
            Matrix::from_fn(f, self.cross.cols(), |i, j| self.cross.get(i, j) - sw.get(i, j))
        };
        let correction = cholesky_solve(&factor, &residual);
        for (w, c) in wt.as_mut_slice().iter_mut().zip(correction.as_slice()) {
            *w += c;
        }

        let w_out = wt.transpose();
        let b_out = (0..w_out.rows())
            .map(|o| self.y_mean[o] - w_out.row(o).iter().zip(&self.x_mean).map(|(w, x)| w * x).sum::<f64>())
            .collect();
        Ok(RidgeReadout {
            w_out,
            b_out,
            lambda_reg,
            jitter,
        })
    }
}

pub fn fit_ridge(features: &Matrix<f64>, targets: &Matrix<f64>, lambda_reg: f64) -> Result<RidgeReadout> {
    RidgeProblem::new(features, targets)?.solve(lambda_reg)
}

/// Lower-triangular `L` with `L Lᵀ = a`, or `None` if `a` is not positive
/// definite.
fn cholesky(a: &Matrix<f64>) -> Option<Matrix<f64>> {
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a.get(j, j);
        for k in 0..j {
            d -= l.get(j, k) * l.get(j, k);
        }
        if !d.is_finite() || d <= 0.0 {
            return None;
        }
        let d = d.sqrt();
        l.set(j, j, d);
        for i in j + 1..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / d);
        }
    }
    Some(l)
}

fn cholesky_solve(l: &Matrix<f64>, rhs: &Matrix<f64>) -> Matrix<f64> {
    let n = l.rows();
    let mut x = rhs.clone();
    for c in 0..rhs.cols() {
        for i in 0..n {
            let mut s = x.get(i, c);
            for k in 0..i {
                s -= l.get(i, k) * x.get(k, c);
            }
            x.set(i, c, s / l.get(i, i));
        }
        for i in (0..n).rev() {
            let mut s = x.get(i, c);
            for k in i + 1..n {
                s -= l.get(k, i) * x.get(k, c);
            }
            x.set(i, c, s / l.get(i, i));
        }
    }
    x
}
