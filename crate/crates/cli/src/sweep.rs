//! Grid, random and one-factor-at-a-time hyperparameter sweeps. Points are
//! ranked by the validation metric; the test split is scored only for the
//! winning configuration, after selection.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use paralesn::RngSpec;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{ExperimentConfig, Strategy, SweepSpec};
use crate::results::{MetricSummary, RunResult};
use crate::run::{cmd_run, run_with};
use crate::UsageError;

const MAX_GRID: usize = 10_000_000;

pub type Assignment = BTreeMap<String, Value>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub index: usize,
    pub assignment: Assignment,
    pub config_hash: String,
    pub valid: Option<MetricSummary>,
    pub selected_lambdas: Vec<Option<f64>>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub strategy: Strategy,
    /// Validation metric used for ranking, e.g. `valid_nrmse`.
    pub metric: String,
    pub higher_is_better: bool,
    /// Every evaluated point, in enumeration order.
    pub points: Vec<SweepPoint>,
    /// Index into `points` of the selected configuration.
    pub best: usize,
    pub best_config: ExperimentConfig,
    /// Test-target reads while points were being ranked; always zero.
    pub test_reads_during_selection: usize,
    /// `cmd_run` of the selected configuration, when requested.
    pub final_result: Option<RunResult>,
}

impl SweepReport {
    /// Points ordered best first; failed points last.
    pub fn ranked(&self) -> Vec<&SweepPoint> {
        let mut v: Vec<&SweepPoint> = self.points.iter().collect();
        let key = |p: &SweepPoint| p.valid.map(|s| s.mean).filter(|m| !m.is_nan());
        v.sort_by(|a, b| match (key(a), key(b)) {
            (Some(x), Some(y)) if self.higher_is_better => y.total_cmp(&x),
            (Some(x), Some(y)) => x.total_cmp(&y),
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => std::cmp::Ordering::Equal,
        });
        v
    }

    /// `sweep.csv` (one row per point), `best.toml` and, if present, the
    /// final run under `best/`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        let path = dir.join("sweep.csv");
        let mut w = csv::Writer::from_path(&path)?;
        let keys: Vec<String> = self
            .points
            .iter()
            .flat_map(|p| p.assignment.keys().cloned())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut header = vec!["index".to_string(), "config_hash".into()];
        header.extend(keys.iter().cloned());
        header.extend([format!("{}_mean", self.metric), format!("{}_std", self.metric), "selected_lambdas".into(), "error".into()]);
        w.write_record(&header)?;
        for p in &self.points {
            let mut row = vec![p.index.to_string(), p.config_hash.clone()];
            row.extend(keys.iter().map(|k| p.assignment.get(k).map_or(String::new(), Value::to_string)));
            row.push(p.valid.map_or(String::new(), |s| s.mean.to_string()));
            row.push(p.valid.map_or(String::new(), |s| s.std.to_string()));
            row.push(
                p.selected_lambdas
                    .iter()
                    .map(|l| l.map_or("-".to_string(), |v| v.to_string()))
                    .collect::<Vec<_>>()
                    .join(";"),
            );
            row.push(p.error.clone().unwrap_or_default());
            w.write_record(&row)?;
        }
        w.flush()?;
        written.push(path);
        let best = dir.join("best.toml");
        fs::write(&best, self.best_config.to_toml())?;
        written.push(best);
        if let Some(result) = &self.final_result {
            written.extend(result.write(&dir.join("best"))?);
        }
        Ok(written)
    }
}

fn grid_size(spec: &SweepSpec) -> Result<usize, UsageError> {
    spec.params.iter().try_fold(1usize, |acc, (name, values)| {
        if values.is_empty() {
            return Err(UsageError(format!("sweep parameter {name} has no values")));
        }
        acc.checked_mul(values.len())
            .filter(|&n| n <= MAX_GRID)
            .ok_or_else(|| UsageError(format!("sweep grid exceeds {MAX_GRID} points")))
    })
}

/// The `index`-th grid point, last parameter varying fastest.
fn grid_point(spec: &SweepSpec, mut index: usize) -> Assignment {
    let mut out = Assignment::new();
    for (name, values) in spec.params.iter().rev() {
        out.insert(name.clone(), values[index % values.len()].clone());
        index /= values.len();
    }
    out
}

/// Enumerates the assignments a sweep evaluates. `seed` drives random draws.
pub fn sweep_points(spec: &SweepSpec, seed: u64) -> Result<Vec<Assignment>, UsageError> {
    let total = grid_size(spec)?;
    Ok(match spec.strategy {
        Strategy::Grid => (0..total).map(|i| grid_point(spec, i)).collect(),
        Strategy::Random => {
            let budget = spec.budget.ok_or_else(|| UsageError("random sweep needs a budget".into()))?;
            if budget == 0 {
                return Err(UsageError("sweep budget must be positive".into()));
            }
            let mut order: Vec<usize> = (0..total).collect();
            RngSpec::new(seed).stream(0).shuffle(&mut order);
            order.truncate(budget.min(total));
            order.into_iter().map(|i| grid_point(spec, i)).collect()
        }
        Strategy::Sensitivity => {
            let mut out = vec![Assignment::new()];
            for (name, values) in &spec.params {
                for v in values {
                    out.push(Assignment::from([(name.clone(), v.clone())]));
                }
            }
            out
        }
    })
}

fn apply(base: &ExperimentConfig, assignment: &Assignment) -> Result<ExperimentConfig, UsageError> {
    let mut cfg = base.clone();
    for (path, value) in assignment {
        cfg = cfg.with_override(path, value)?;
    }
    cfg.sweep = None;
    Ok(cfg)
}

/// Evaluates every point on the validation split (in parallel over the
/// current rayon pool), selects the best, and, with `score_best`, runs it
/// once more with test scoring.
pub fn cmd_sweep(config: &ExperimentConfig, allow_unlisted: bool, score_best: bool) -> Result<SweepReport> {
    let spec = config.sweep.clone().unwrap_or(SweepSpec {
        strategy: Strategy::Grid,
        budget: None,
        params: BTreeMap::new(),
    });
    if spec.budget == Some(0) {
        return Err(UsageError("sweep budget must be positive".into()).into());
    }
    let assignments = sweep_points(&spec, config.seed)?;
    let configs = assignments
        .iter()
        .map(|a| {
            let cfg = apply(config, a)?;
            cfg.validate(allow_unlisted)?;
            Ok(cfg)
        })
        .collect::<Result<Vec<_>, UsageError>>()?;

    let outcomes: Vec<Result<RunResult>> = configs.par_iter().map(|cfg| run_with(cfg, false)).collect();

    let (name, higher) = config.task.metric();
    let metric = format!("valid_{name}");
    let mut test_reads = 0;
    let mut points = Vec::with_capacity(outcomes.len());
    for (index, ((assignment, cfg), outcome)) in assignments.into_iter().zip(&configs).zip(outcomes).enumerate() {
        let point = match outcome {
            Ok(result) => {
                test_reads += result.repeats.iter().map(|r| r.test_target_reads).sum::<usize>();
                SweepPoint {
                    index,
                    assignment,
                    config_hash: cfg.config_hash(),
                    valid: result.summary.get(&metric).copied(),
                    selected_lambdas: result.repeats.iter().map(|r| r.selected_lambda).collect(),
                    error: None,
                }
            }
            Err(e) => SweepPoint {
                index,
                assignment,
                config_hash: cfg.config_hash(),
                valid: None,
                selected_lambdas: Vec::new(),
                error: Some(format!("{e:#}")),
            },
        };
        points.push(point);
    }
    if test_reads != 0 {
        bail!("test targets were read {test_reads} times during selection");
    }
    let mut report = SweepReport {
        strategy: spec.strategy,
        metric,
        higher_is_better: higher,
        points,
        best: 0,
        best_config: config.clone(),
        test_reads_during_selection: test_reads,
        final_result: None,
    };
    let best = report.ranked()[0];
    if best.valid.is_none() {
        bail!("no sweep point produced a validation score; first error: {}", best.error.clone().unwrap_or_default());
    }
    let best = best.index;
    report.best = best;
    report.best_config = configs[best].clone();
    if score_best {
        report.final_result = Some(cmd_run(&report.best_config)?);
    }
    Ok(report)
}
