use anyhow::{Context, Result};

use crate::config::ExperimentConfig;
use crate::pipeline::run_repeat;
use crate::results::RunResult;

/// Runs every repeat (run seed `config.seed + r`) and scores the test split.
pub fn cmd_run(config: &ExperimentConfig) -> Result<RunResult> {
    run_with(config, true)
}

/// Like [`cmd_run`]; with `evaluate_test == false` only validation scores
/// are computed and the test targets are never read.
pub fn run_with(config: &ExperimentConfig, evaluate_test: bool) -> Result<RunResult> {
    let mut repeats = Vec::with_capacity(config.repeats);
    for r in 0..config.repeats {
        let seed = config.seed.wrapping_add(r as u64);
        let result = run_repeat(config, r, seed, evaluate_test)
            .with_context(|| format!("repeat {r} (seed {seed}) of config {}", config.config_hash()))?;
        repeats.push(result);
    }
    Ok(RunResult::new(config, repeats, rayon::current_num_threads(), evaluate_test))
}
