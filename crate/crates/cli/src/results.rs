//! Run records: JSON for machines, flat CSV for spreadsheets.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use paralesn::tensor_core::RNG_ALGORITHM;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Mode};
use crate::pipeline::{RepeatResult, Timings};

pub const RESULT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    /// Population standard deviation over repeats.
    pub std: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub format_version: u32,
    pub library_version: String,
    pub rng_algorithm: String,
    pub config_hash: String,
    pub seed: u64,
    pub mode: Mode,
    pub workers: usize,
    /// Primary metric, e.g. `test_nrmse`.
    pub metric: String,
    pub higher_is_better: bool,
    pub param_count: usize,
    pub config: ExperimentConfig,
    pub repeats: Vec<RepeatResult>,
    pub summary: BTreeMap<String, MetricSummary>,
    /// Mean timings over repeats.
    pub timings: Timings,
}

/// Mean and population std of every metric present in all repeats.
pub fn summarize(repeats: &[RepeatResult]) -> BTreeMap<String, MetricSummary> {
    let mut out = BTreeMap::new();
    let Some(first) = repeats.first() else {
        return out;
    };
    for key in first.metrics.keys() {
        let values: Vec<f64> = repeats.iter().filter_map(|r| r.metrics.get(key).copied()).collect();
        if values.len() != repeats.len() {
            continue;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        out.insert(key.clone(), MetricSummary { mean, std, n: values.len() });
    }
    out
}

pub fn mean_timings(repeats: &[RepeatResult]) -> Timings {
    let n = repeats.len().max(1) as f64;
    let sum = |f: fn(&Timings) -> f64| repeats.iter().map(|r| f(&r.timings)).sum::<f64>() / n;
    Timings {
        init_s: sum(|t| t.init_s),
        recurrence_s: sum(|t| t.recurrence_s),
        readout_s: sum(|t| t.readout_s),
        total_s: sum(|t| t.total_s),
    }
}

impl RunResult {
    pub fn new(config: &ExperimentConfig, repeats: Vec<RepeatResult>, workers: usize, evaluated_test: bool) -> Self {
        let (name, higher) = config.task.metric();
        let split = if evaluated_test { "test" } else { "valid" };
        Self {
            format_version: RESULT_FORMAT_VERSION,
            library_version: paralesn::VERSION.to_string(),
            rng_algorithm: RNG_ALGORITHM.to_string(),
            config_hash: config.config_hash(),
            seed: config.seed,
            mode: config.mode,
            workers,
            metric: format!("{split}_{name}"),
            higher_is_better: higher,
            param_count: repeats.first().map_or(0, |r| r.param_count),
            config: config.clone(),
            summary: summarize(&repeats),
            timings: mean_timings(&repeats),
            repeats,
        }
    }

    pub fn primary(&self) -> MetricSummary {
        self.summary[&self.metric]
    }

    /// `metric = mean ± std (n repeats)`.
    pub fn headline(&self) -> String {
        let s = self.primary();
        format!("{} = {:.6} ± {:.6} ({} repeats)", self.metric, s.mean, s.std, s.n)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(text).context("parsing run record")?;
        if r.format_version != RESULT_FORMAT_VERSION {
            bail!("unsupported run record version {}", r.format_version);
        }
        Ok(r)
    }

    /// Writes `result.json`, `summary.csv`, `repeats.csv` and, when test
    /// predictions were kept, `predictions_r<i>.csv`. Returns the paths.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let mut written = Vec::new();

        let json = dir.join("result.json");
        fs::write(&json, self.to_json()?)?;
        written.push(json);

        let summary = dir.join("summary.csv");
        let mut w = csv::Writer::from_path(&summary)?;
        w.write_record(["config_hash", "seed", "rng_algorithm", "library_version", "metric", "mean", "std", "n"])?;
        for (name, s) in &self.summary {
            w.write_record([
                self.config_hash.clone(),
                self.seed.to_string(),
                self.rng_algorithm.clone(),
                self.library_version.clone(),
                name.clone(),
                s.mean.to_string(),
                s.std.to_string(),
                s.n.to_string(),
            ])?;
        }
        w.flush()?;
        written.push(summary);

        let repeats = dir.join("repeats.csv");
        let mut w = csv::Writer::from_path(&repeats)?;
        let keys: Vec<&String> = self.summary.keys().collect();
        let mut header = vec!["repeat".to_string(), "seed".into(), "selected_lambda".into()];
        header.extend(keys.iter().map(|k| k.to_string()));
        header.extend(["recurrence_s", "readout_s", "total_s", "param_count"].map(String::from));
        w.write_record(&header)?;
        for r in &self.repeats {
            let mut row = vec![
                r.repeat.to_string(),
                r.seed.to_string(),
                r.selected_lambda.map_or(String::new(), |l| l.to_string()),
            ];
            row.extend(keys.iter().map(|k| r.metrics.get(*k).map_or(String::new(), |v| v.to_string())));
            row.extend([
                r.timings.recurrence_s.to_string(),
                r.timings.readout_s.to_string(),
                r.timings.total_s.to_string(),
                r.param_count.to_string(),
            ]);
            w.write_record(&row)?;
        }
        w.flush()?;
        written.push(repeats);

        for r in &self.repeats {
            let Some((pred, target)) = &r.test_predictions else { continue };
            let path = dir.join(format!("predictions_r{}.csv", r.repeat));
            let mut w = csv::Writer::from_path(&path)?;
            let mut header: Vec<String> = (0..pred.cols()).map(|c| format!("pred_{c}")).collect();
            header.extend((0..target.cols()).map(|c| format!("target_{c}")));
            w.write_record(&header)?;
            for t in 0..pred.rows() {
                let row: Vec<String> = pred.row(t).iter().chain(target.row(t)).map(|v| v.to_string()).collect();
                w.write_record(&row)?;
            }
            w.flush()?;
            written.push(path);
        }
        Ok(written)
    }
}
