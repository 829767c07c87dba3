use std::ops::Range;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_core::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

/// Exclusive end indices of the three consecutive splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitBounds {
    pub train_end: usize,
    pub valid_end: usize,
    pub test_end: usize,
}

impl SplitBounds {
    /// Splits `len` rows proportionally to `train : valid : rest`.
    pub fn fractions(len: usize, train: f64, valid: f64) -> Result<Self> {
        if !(train > 0.0 && valid >= 0.0 && train + valid < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "split fractions {train} / {valid} must be positive and sum below 1"
            )));
        }
        let train_end = (len as f64 * train).round() as usize;
        let valid_end = (len as f64 * (train + valid)).round() as usize;
        Ok(Self {
            train_end,
            valid_end,
            test_end: len,
        })
    }
}

/// Where a dataset came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator: String,
    pub params: serde_json::Value,
    pub seed: Option<u64>,
    pub rng_algorithm: Option<String>,
}

#[derive(Debug, Default)]
struct AccessLog {
    train: AtomicUsize,
    valid: AtomicUsize,
    test: AtomicUsize,
}

/// A single time series task: inputs and targets aligned by row, split into
/// consecutive train / validation / test ranges.
#[derive(Debug, Serialize, Deserialize)]
pub struct TaskDataset {
    pub name: String,
    pub inputs: Matrix<f64>,
    pub targets: Matrix<f64>,
    pub split: SplitBounds,
    pub washout: usize,
    /// First row at which each target column is defined (delayed-copy
    /// targets are undefined for their first `k` rows).
    pub target_valid_from: Vec<usize>,
    pub provenance: Provenance,
    #[serde(skip)]
    access: AccessLog,
}

impl Clone for TaskDataset {
    fn clone(&self) -> Self {
        Self {
            name: self.name.clone(),
            inputs: self.inputs.clone(),
            targets: self.targets.clone(),
            split: self.split,
            washout: self.washout,
            target_valid_from: self.target_valid_from.clone(),
            provenance: self.provenance.clone(),
            access: AccessLog::default(),
        }
    }
}

impl TaskDataset {
    pub fn new(
        name: impl Into<String>,
        inputs: Matrix<f64>,
        targets: Matrix<f64>,
        split: SplitBounds,
        washout: usize,
        provenance: Provenance,
    ) -> Result<Self> {
        let cols = targets.cols();
        let ds = Self {
            name: name.into(),
            inputs,
            targets,
            split,
            washout,
            target_valid_from: vec![0; cols],
            provenance,
            access: AccessLog::default(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.inputs.rows();
        if self.targets.rows() != t {
            return Err(Error::InvalidConfig(format!(
                "{t} input rows but {} target rows",
                self.targets.rows()
            )));
        }
        let s = self.split;
        if !(s.train_end <= s.valid_end && s.valid_end <= s.test_end && s.test_end <= t) {
            return Err(Error::InvalidConfig(format!("splits {s:?} are not ordered within {t} rows")));
        }
        if self.washout >= s.train_end {
            return Err(Error::InvalidConfig(format!(
                "washout {} leaves no training rows before {}",
                self.washout, s.train_end
            )));
        }
        if self.target_valid_from.len() != self.targets.cols() {
            return Err(Error::InvalidConfig("target mask does not match target columns".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.rows() == 0
    }

    /// Rows of a split used for fitting or scoring. Training starts after
    /// the washout and after every target column is defined.
    pub fn rows(&self, split: Split) -> Range<usize> {
        let s = self.split;
        match split {
            Split::Train => {
                let first_defined = self.target_valid_from.iter().copied().max().unwrap_or(0);
                self.washout.max(first_defined).min(s.train_end)..s.train_end
            }
            Split::Valid => s.train_end..s.valid_end,
            Split::Test => s.valid_end..s.test_end,
        }
    }

    /// Target rows of a split. Every call is counted per split.
    pub fn targets_for(&self, split: Split) -> Matrix<f64> {
        let counter = match split {
            Split::Train => &self.access.train,
            Split::Valid => &self.access.valid,
            Split::Test => &self.access.test,
        };
        counter.fetch_add(1, Ordering::Relaxed);
        let r = self.rows(split);
        self.targets.slice_rows(r.start, r.end)
    }

    /// Number of times the targets of `split` have been read.
    pub fn target_reads(&self, split: Split) -> usize {
        match split {
            Split::Train => self.access.train.load(Ordering::Relaxed),
            Split::Valid => self.access.valid.load(Ordering::Relaxed),
            Split::Test => self.access.test.load(Ordering::Relaxed),
        }
    }

    /// Rows of `features` (aligned with the dataset) belonging to `split`.
    pub fn slice(&self, features: &Matrix<f64>, split: Split) -> Matrix<f64> {
        let r = self.rows(split);
        features.slice_rows(r.start, r.end)
    }
}
