use serde::{Deserialize, Serialize};

use crate::error::{shape, Error, Result};
use crate::tensor_core::Matrix;

pub const STD_FLOOR: f64 = 1e-8;

/// Per-feature mean and population standard deviation (floored).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(features: &Matrix<f64>) -> Result<Self> {
        let m = features.rows();
        if m < 2 {
            return Err(Error::InsufficientData { needed: 2, got: m });
        }
        let n = features.cols();
        let mut mean = vec![0.0; n];
        for i in 0..m {
            for (acc, v) in mean.iter_mut().zip(features.row(i)) {
                *acc += v;
            }
        }
        mean.iter_mut().for_each(|v| *v /= m as f64);
        let mut var = vec![0.0; n];
        for i in 0..m {
            for ((acc, v), mu) in var.iter_mut().zip(features.row(i)).zip(&mean) {
                *acc += (v - mu) * (v - mu);
            }
        }
        let scale = var.iter().map(|v| (v / m as f64).sqrt().max(STD_FLOOR)).collect();
        Ok(Self { mean, scale })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    fn check(&self, features: &Matrix<f64>) -> Result<()> {
        if features.cols() != self.mean.len() {
            return Err(shape(format!(
                "standardizer fit on {} features, got {}",
                self.mean.len(),
                features.cols()
            )));
        }
        Ok(())
    }

    pub fn transform(&self, features: &Matrix<f64>) -> Result<Matrix<f64>> {
        self.check(features)?;
        let mut out = features.clone();
        for i in 0..out.rows() {
            for ((v, mu), s) in out.row_mut(i).iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = (*v - mu) / s;
            }
        }
        Ok(out)
    }

    pub fn inverse_transform(&self, features: &Matrix<f64>) -> Result<Matrix<f64>> {
        self.check(features)?;
        let mut out = features.clone();
        for i in 0..out.rows() {
            for ((v, mu), s) in out.row_mut(i).iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = *v * s + mu;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor_core::RngSpec;

    #[test]
    fn constant_column_maps_to_zero() {
        let x = Matrix::from_rows(&[vec![3.0, 1.0], vec![3.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let s = Standardizer::fit(&x).unwrap();
        assert_eq!(s.scale()[0], STD_FLOOR);
        let t = s.transform(&x).unwrap();
        assert!(t.column(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_point_column() {
        let x = Matrix::from_rows(&[vec![0.0], vec![2.0]]).unwrap();
        let s = Standardizer::fit(&x).unwrap();
        assert_eq!(s.mean(), &[1.0]);
        assert_eq!(s.scale(), &[1.0]);
        assert_eq!(s.transform(&x).unwrap().as_slice(), &[-1.0, 1.0]);
    }

    #[test]
    fn round_trip_and_moments() {
        let mut rng = RngSpec::new(1).stream(0);
        let x = Matrix::from_fn(500, 6, |_, j| rng.uniform(-3.0, 5.0) * (j as f64 + 1.0) + j as f64);
        let s = Standardizer::fit(&x).unwrap();
        let t = s.transform(&x).unwrap();
        for j in 0..6 {
            let col = t.column(j);
            let mean = col.iter().sum::<f64>() / 500.0;
            let std = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 500.0).sqrt();
            assert!(mean.abs() <= 1e-9);
            assert!((std - 1.0).abs() <= 1e-6);
        }
        let back = s.inverse_transform(&t).unwrap();
        for (a, b) in back.as_slice().iter().zip(x.as_slice()) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn needs_two_rows() {
        let x = Matrix::from_rows(&[vec![1.0]]).unwrap();
        assert!(matches!(Standardizer::fit(&x), Err(Error::InsufficientData { .. })));
    }

    #[test]
    fn applying_does_not_refit() {
        let train = Matrix::from_rows(&[vec![0.0], vec![2.0]]).unwrap();
        let s = Standardizer::fit(&train).unwrap();
        let before = s.clone();
        let other = Matrix::from_rows(&[vec![100.0], vec![-50.0], vec![7.0]]).unwrap();
        let t = s.transform(&other).unwrap();
        assert_eq!(s, before);
        assert_eq!(t.as_slice(), &[99.0, -51.0, 6.0]);
    }
}
