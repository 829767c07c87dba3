//! Wall-clock probes of the reservoir forward pass and the stored-parameter audit.

use std::time::Instant;

use anyhow::Result;
use paralesn::baselines::{BaselineKind, DeepEsn, EsnHyperparams};
use paralesn::reservoir::{DeepParalEsn, LayerHyperparams, ScanMode};
use paralesn::tensor_core::Matrix;
use paralesn::RngSpec;
use serde::{Deserialize, Serialize};

use crate::config::Mode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub widths: Vec<usize>,
    pub lengths: Vec<usize>,
    pub modes: Vec<Mode>,
    /// Thread count for parallel mode.
    pub workers: usize,
    /// Timed repetitions per cell; the median is reported.
    pub reps: usize,
    pub seed: u64,
    /// Widths for the parameter audit.
    pub audit_widths: Vec<usize>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            widths: vec![128],
            lengths: vec![1024, 4096, 16384, 65536],
            modes: vec![Mode::Sequential, Mode::Parallel],
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            reps: 5,
            seed: 0,
            audit_widths: vec![128, 1024],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineInfo {
    pub os: String,
    pub arch: String,
    pub available_parallelism: usize,
    pub workers: usize,
}

impl MachineInfo {
    pub fn detect(workers: usize) -> Self {
        Self {
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
            available_parallelism: std::thread::available_parallelism().map_or(1, |n| n.get()),
            workers,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub length: usize,
    pub n_h: usize,
    pub mode: Mode,
    pub workers: usize,
    pub median_s: f64,
    pub samples_s: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Speedup {
    pub length: usize,
    pub n_h: usize,
    /// Sequential over parallel median time.
    pub speedup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Growth {
    pub n_h: usize,
    pub from_length: usize,
    pub to_length: usize,
    /// Sequential median time ratio between the two lengths.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamAudit {
    pub n_h: usize,
    pub n_in: usize,
    pub kernel_size: usize,
    pub paralesn_stored: usize,
    pub paralesn_formula: usize,
    pub esn_stored: usize,
    pub esn_formula: usize,
    /// ParalESN over ESN stored parameters.
    pub ratio: f64,
}

impl ParamAudit {
    pub fn exact(&self) -> bool {
        self.paralesn_stored == self.paralesn_formula && self.esn_stored == self.esn_formula
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub machine: MachineInfo,
    pub rows: Vec<TimingRow>,
    pub speedups: Vec<Speedup>,
    pub growth: Vec<Growth>,
    pub audit: Vec<ParamAudit>,
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Closed-form stored parameters of one ParalESN layer with dense input:
/// diagonal, input weights, bias, mixer kernel and mixer bias.
pub fn paralesn_param_formula(n_h: usize, n_in: usize, kernel_size: usize) -> usize {
    n_h + n_h * n_in + n_h + kernel_size + 1
}

/// Closed-form stored parameters of one ESN layer: recurrent, input, bias.
pub fn esn_param_formula(n_h: usize, n_in: usize) -> usize {
    n_h * n_h + n_h * n_in + n_h
}

pub fn param_audit(n_h: usize, n_in: usize, kernel_size: usize, seed: u64) -> Result<ParamAudit> {
    let hp = LayerHyperparams { n_h, kernel_size, ..Default::default() };
    let paral = DeepParalEsn::new(vec![hp], n_in, false, RngSpec::new(seed))?;
    let esn = DeepEsn::new(
        BaselineKind::Esn,
        vec![EsnHyperparams { n_h, ..Default::default() }],
        n_in,
        false,
        RngSpec::new(seed),
    )?;
    let (p, e) = (paral.param_count(), esn.param_count());
    Ok(ParamAudit {
        n_h,
        n_in,
        kernel_size,
        paralesn_stored: p,
        paralesn_formula: paralesn_param_formula(n_h, n_in, kernel_size),
        esn_stored: e,
        esn_formula: esn_param_formula(n_h, n_in),
        ratio: p as f64 / e as f64,
    })
}

/// Median-of-`reps` wall time of a single-layer forward (drive, scan and
/// mixer) for every (length, width, mode) cell.
pub fn cmd_bench_scan(cfg: &BenchConfig) -> Result<BenchReport> {
    anyhow::ensure!(cfg.reps > 0 && cfg.workers > 0, "reps and workers must be positive");
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build()?;
    let mut rows = Vec::new();
    for &n_h in &cfg.widths {
        let hp = LayerHyperparams { n_h, ..Default::default() };
        let model = DeepParalEsn::new(vec![hp], 1, false, RngSpec::new(cfg.seed))?;
        for &length in &cfg.lengths {
            let mut rng = RngSpec::new(cfg.seed).stream(1);
            let inputs = Matrix::from_fn(length, 1, |_, _| rng.uniform(-1.0, 1.0));
            for &mode in &cfg.modes {
                let (scan, workers) = match mode {
                    Mode::Sequential => (ScanMode::Sequential, 1),
                    Mode::Parallel => (ScanMode::Parallel { chunk_size: None }, cfg.workers),
                };
                let mut samples = Vec::with_capacity(cfg.reps);
                for _ in 0..cfg.reps {
                    let t = Instant::now();
                    let out = pool.install(|| model.forward(&inputs, None, scan))?;
                    samples.push(t.elapsed().as_secs_f64());
                    std::hint::black_box(out);
                }
                rows.push(TimingRow { length, n_h, mode, workers, median_s: median(&samples), samples_s: samples });
            }
        }
    }
    let find = |len: usize, n_h: usize, mode: Mode| {
        rows.iter().find(|r| r.length == len && r.n_h == n_h && r.mode == mode).map(|r| r.median_s)
    };
    let mut speedups = Vec::new();
    let mut growth = Vec::new();
    for &n_h in &cfg.widths {
        for &length in &cfg.lengths {
            if let (Some(s), Some(p)) = (find(length, n_h, Mode::Sequential), find(length, n_h, Mode::Parallel)) {
                speedups.push(Speedup { length, n_h, speedup: s / p });
            }
        }
        let (lo, hi) = (cfg.lengths.iter().min(), cfg.lengths.iter().max());
        if let (Some(&lo), Some(&hi)) = (lo, hi) {
            if let (Some(a), Some(b)) = (find(lo, n_h, Mode::Sequential), find(hi, n_h, Mode::Sequential)) {
                if lo < hi {
                    growth.push(Growth { n_h, from_length: lo, to_length: hi, ratio: b / a });
                }
            }
        }
    }
    let audit = cfg
        .audit_widths
        .iter()
        .map(|&n_h| param_audit(n_h, 1, 5, cfg.seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(BenchReport { machine: MachineInfo::detect(cfg.workers), rows, speedups, growth, audit })
}

impl BenchReport {
    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["length", "n_h", "mode", "workers", "median_s", "speedup"])?;
        for r in &self.rows {
            let speedup = match r.mode {
                Mode::Parallel => self
                    .speedups
                    .iter()
                    .find(|s| s.length == r.length && s.n_h == r.n_h)
                    .map_or(String::new(), |s| s.speedup.to_string()),
                Mode::Sequential => String::new(),
            };
            let mode = match r.mode {
                Mode::Sequential => "sequential",
                Mode::Parallel => "parallel",
            };
            w.write_record([
                r.length.to_string(),
                r.n_h.to_string(),
                mode.to_string(),
                r.workers.to_string(),
                r.median_s.to_string(),
                speedup,
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
