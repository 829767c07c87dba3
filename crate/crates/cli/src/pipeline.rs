//! One experiment run: data, reservoir features, readout selection, scores.

use std::collections::BTreeMap;
use std::ops::Range;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use paralesn::baselines::{BaselineKind, DeepEsn};
use paralesn::readout::{argmax_rows, fit_mlp, MlpLoss, RidgeProblem, Standardizer};
use paralesn::reservoir::{DeepParalEsn, ScanMode};
use paralesn::tasks::{
    gen_ctxor, gen_lorenz96, gen_mackey_glass, gen_memcap, gen_narma, gen_sinmem, load_csv_classification,
    load_csv_forecasting, metric_accuracy, metric_memory_capacity, metric_mse, metric_nrmse, SequenceDataset,
    Split, TaskDataset,
};
use paralesn::tensor_core::Matrix;
use paralesn::RngSpec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, Mode, ModelKind, ModelSpec, ReadoutSpec, TaskSpec};

/// Independent seed for one purpose (`"data"`, `"model"`, `"readout"`) of a run seed.
pub fn derive_seed(seed: u64, purpose: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(purpose.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

pub enum Prepared {
    Series(TaskDataset),
    Sequences {
        data: SequenceDataset,
        train: Range<usize>,
        valid: Range<usize>,
        test: Range<usize>,
    },
}

impl Prepared {
    pub fn n_inputs(&self) -> usize {
        match self {
            Prepared::Series(ds) => ds.inputs.cols(),
            Prepared::Sequences { data, .. } => data.feature_names.len(),
        }
    }
}

/// Generates or loads the task data. `seed` is the run seed.
pub fn prepare_task(task: &TaskSpec, seed: u64) -> Result<Prepared> {
    let rng = RngSpec::new(derive_seed(seed, "data"));
    let ds = match *task {
        TaskSpec::Memcap { length, max_delay, washout } => gen_memcap(length, max_delay, washout, &rng)?,
        TaskSpec::Ctxor { delay, length, washout } => gen_ctxor(delay, length, washout, &rng)?,
        TaskSpec::Sinmem { delay, length, washout } => gen_sinmem(delay, length, washout, &rng)?,
        TaskSpec::Narma { order, length, washout } => gen_narma(order, length, washout, &rng)?,
        TaskSpec::MackeyGlass { horizon, length, washout } => gen_mackey_glass(length, horizon, washout)?,
        TaskSpec::Lorenz96 { horizon, length, washout } => gen_lorenz96(length, horizon, washout)?,
        TaskSpec::CsvForecast { ref path, .. } => {
            let opts = task.csv_options().expect("csv task");
            load_csv_forecasting(path, &opts).with_context(|| format!("loading {}", path.display()))?
        }
        TaskSpec::CsvClassification { ref path, train_frac, valid_frac } => {
            let data = load_csv_classification(path).with_context(|| format!("loading {}", path.display()))?;
            let n = data.len();
            let train_end = (n as f64 * train_frac).round() as usize;
            let valid_end = (n as f64 * (train_frac + valid_frac)).round() as usize;
            if !(0.0..1.0).contains(&(train_frac + valid_frac)) || train_end < 2 || valid_end <= train_end || valid_end >= n {
                bail!("{n} sequences cannot be split {train_frac}/{valid_frac}/rest with every part non-empty");
            }
            return Ok(Prepared::Sequences { data, train: 0..train_end, valid: train_end..valid_end, test: valid_end..n });
        }
    };
    Ok(Prepared::Series(ds))
}

pub enum Reservoir {
    Paral(DeepParalEsn),
    Baseline(DeepEsn),
    Linear,
}

impl Reservoir {
    pub fn build(spec: &ModelSpec, n_in: usize, seed: u64) -> Result<Self> {
        let rng = RngSpec::new(derive_seed(seed, "model"));
        Ok(match spec.kind {
            ModelKind::Paralesn => Reservoir::Paral(DeepParalEsn::new(spec.paralesn_layers()?, n_in, spec.concat, rng)?),
            ModelKind::Esn => Reservoir::Baseline(DeepEsn::new(BaselineKind::Esn, spec.esn_layers()?, n_in, spec.concat, rng)?),
            ModelKind::Scr => Reservoir::Baseline(DeepEsn::new(BaselineKind::Scr, spec.esn_layers()?, n_in, spec.concat, rng)?),
            ModelKind::Linear => Reservoir::Linear,
        })
    }

    /// Stored (untrained) reservoir parameters.
    pub fn param_count(&self) -> usize {
        match self {
            Reservoir::Paral(m) => m.param_count(),
            Reservoir::Baseline(m) => m.param_count(),
            Reservoir::Linear => 0,
        }
    }

    pub fn features(&self, inputs: &Matrix<f64>, mode: Mode) -> Result<Matrix<f64>> {
        Ok(match self {
            Reservoir::Paral(m) => {
                let scan = match mode {
                    Mode::Sequential => ScanMode::Sequential,
                    Mode::Parallel => ScanMode::Parallel { chunk_size: None },
                };
                m.forward(inputs, None, scan)?.features
            }
            Reservoir::Baseline(m) => m.forward(inputs)?.1,
            Reservoir::Linear => inputs.clone(),
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    /// Model construction; not part of `total_s`.
    pub init_s: f64,
    pub recurrence_s: f64,
    /// Standardization, readout fits and validation passes.
    pub readout_s: f64,
    pub total_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatResult {
    pub repeat: usize,
    pub seed: u64,
    /// `valid_*` always, `test_*` when the test split was scored.
    pub metrics: BTreeMap<String, f64>,
    pub selected_lambda: Option<f64>,
    /// `(λ, validation metric)` for every ridge candidate.
    pub lambda_table: Vec<(f64, f64)>,
    pub param_count: usize,
    pub readout_param_count: usize,
    pub timings: Timings,
    /// How often the test targets were read during this repeat.
    pub test_target_reads: usize,
    #[serde(skip)]
    pub test_predictions: Option<(Matrix<f64>, Matrix<f64>)>,
}

fn score(task: &TaskSpec, pred: &Matrix<f64>, target: &Matrix<f64>) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    match task.metric().0 {
        "memory_capacity" => {
            out.insert("memory_capacity".into(), metric_memory_capacity(pred, target)?.value);
        }
        "accuracy" => {
            out.insert("accuracy".into(), metric_accuracy(pred, target)?.value);
        }
        _ => {
            out.insert("nrmse".into(), metric_nrmse(pred, target)?.value);
            out.insert("mse".into(), metric_mse(pred, target)?.value);
        }
    }
    Ok(out)
}

/// Ranks a candidate; NaN always loses.
fn better(candidate: f64, incumbent: Option<f64>, higher_is_better: bool) -> bool {
    if candidate.is_nan() {
        return false;
    }
    match incumbent {
        None => true,
        Some(b) if higher_is_better => candidate > b,
        Some(b) => candidate < b,
    }
}

enum Fitted {
    Ridge(paralesn::readout::RidgeReadout),
    Mlp(Box<paralesn::readout::MlpReadout>),
}

impl Fitted {
    fn predict(&self, x: &Matrix<f64>) -> Result<Matrix<f64>> {
        Ok(match self {
            Fitted::Ridge(r) => r.predict(x)?,
            Fitted::Mlp(m) => m.predict(x)?,
        })
    }

    fn param_count(&self) -> usize {
        match self {
            Fitted::Ridge(r) => r.w_out.rows() * r.w_out.cols() + r.b_out.len(),
            Fitted::Mlp(m) => m.param_count(),
        }
    }
}

struct Selection {
    fitted: Fitted,
    lambda: Option<f64>,
    table: Vec<(f64, f64)>,
    valid: BTreeMap<String, f64>,
}

/// Fits on the training rows and picks the readout by the validation metric.
fn select_readout(
    cfg: &ExperimentConfig,
    seed: u64,
    x_train: &Matrix<f64>,
    y_train: &Matrix<f64>,
    x_valid: &Matrix<f64>,
    y_valid: &Matrix<f64>,
) -> Result<Selection> {
    let (metric, higher) = cfg.task.metric();
    match &cfg.readout {
        ReadoutSpec::Ridge { lambdas } => {
            let problem = RidgeProblem::new(x_train, y_train)?;
            let mut best: Option<(f64, paralesn::readout::RidgeReadout, BTreeMap<String, f64>)> = None;
            let mut table = Vec::with_capacity(lambdas.len());
            for &lambda in lambdas {
                let readout = problem.solve(lambda)?;
                let scores = score(&cfg.task, &readout.predict(x_valid)?, y_valid)?;
                let v = scores[metric];
                table.push((lambda, v));
                if better(v, best.as_ref().map(|b| b.2[metric]), higher) {
                    best = Some((lambda, readout, scores));
                }
            }
            let Some((lambda, readout, valid)) = best else {
                bail!("every ridge candidate produced a non-finite validation score");
            };
            Ok(Selection { fitted: Fitted::Ridge(readout), lambda: Some(lambda), table, valid })
        }
        ReadoutSpec::Mlp { .. } => {
            let loss = if cfg.task.is_classification() { MlpLoss::CrossEntropy } else { MlpLoss::MeanSquared };
            let mlp_cfg = cfg.readout.mlp_config(loss, derive_seed(seed, "readout")).expect("mlp readout");
            let mlp = fit_mlp(x_train, y_train, Some((x_valid, y_valid)), &mlp_cfg)?;
            let valid = score(&cfg.task, &mlp.predict(x_valid)?, y_valid)?;
            Ok(Selection { fitted: Fitted::Mlp(Box::new(mlp)), lambda: None, table: Vec::new(), valid })
        }
    }
}

fn prefixed(prefix: &str, scores: BTreeMap<String, f64>) -> impl Iterator<Item = (String, f64)> + '_ {
    scores.into_iter().map(move |(k, v)| (format!("{prefix}_{k}"), v))
}

/// Runs one repeat with run seed `seed`. The test split is only touched
/// when `evaluate_test` is set.
pub fn run_repeat(cfg: &ExperimentConfig, repeat: usize, seed: u64, evaluate_test: bool) -> Result<RepeatResult> {
    let prepared = prepare_task(&cfg.task, seed)?;
    let t_init = Instant::now();
    let reservoir = Reservoir::build(&cfg.model, prepared.n_inputs(), seed)?;
    let init_s = t_init.elapsed().as_secs_f64();

    let t_rec = Instant::now();
    let (features, rows): (Matrix<f64>, [Range<usize>; 3]) = match &prepared {
        Prepared::Series(ds) => (
            reservoir.features(&ds.inputs, cfg.mode)?,
            [ds.rows(Split::Train), ds.rows(Split::Valid), ds.rows(Split::Test)],
        ),
        Prepared::Sequences { data, train, valid, test } => {
            let mut last = Vec::with_capacity(data.len());
            for seq in &data.sequences {
                let f = reservoir.features(seq, cfg.mode)?;
                last.push(f.row(f.rows() - 1).to_vec());
            }
            (Matrix::from_rows(&last)?, [train.clone(), valid.clone(), test.clone()])
        }
    };
    let recurrence_s = t_rec.elapsed().as_secs_f64();
    if !features.is_finite() {
        bail!("reservoir produced non-finite features");
    }

    let t_fit = Instant::now();
    let [train, valid, test] = rows;
    let standardizer = Standardizer::fit(&features.slice_rows(train.start, train.end))?;
    let features = standardizer.transform(&features)?;
    let targets = |split: Split, range: &Range<usize>| -> Matrix<f64> {
        match &prepared {
            Prepared::Series(ds) => ds.targets_for(split),
            Prepared::Sequences { data, .. } => data.one_hot(&range.clone().collect::<Vec<_>>()),
        }
    };
    let x_train = features.slice_rows(train.start, train.end);
    let x_valid = features.slice_rows(valid.start, valid.end);
    let y_train = targets(Split::Train, &train);
    let y_valid = targets(Split::Valid, &valid);
    let selection = select_readout(cfg, seed, &x_train, &y_train, &x_valid, &y_valid)?;
    let readout_s = t_fit.elapsed().as_secs_f64();

    let mut metrics: BTreeMap<String, f64> = prefixed("valid", selection.valid).collect();
    let mut test_predictions = None;
    if evaluate_test {
        let x_test = features.slice_rows(test.start, test.end);
        let y_test = targets(Split::Test, &test);
        let pred = selection.fitted.predict(&x_test)?;
        metrics.extend(prefixed("test", score(&cfg.task, &pred, &y_test)?));
        let pred = if cfg.task.is_classification() {
            let labels = argmax_rows(&pred);
            Matrix::from_vec(labels.len(), 1, labels.into_iter().map(|l| l as f64).collect())?
        } else {
            pred
        };
        test_predictions = Some((pred, y_test));
    }
    let test_target_reads = match &prepared {
        Prepared::Series(ds) => ds.target_reads(Split::Test),
        Prepared::Sequences { .. } => usize::from(evaluate_test),
    };
    Ok(RepeatResult {
        repeat,
        seed,
        metrics,
        selected_lambda: selection.lambda,
        lambda_table: selection.table,
        param_count: reservoir.param_count(),
        readout_param_count: selection.fitted.param_count(),
        timings: Timings { init_s, recurrence_s, readout_s, total_s: recurrence_s + readout_s },
        test_target_reads,
        test_predictions,
    })
}
