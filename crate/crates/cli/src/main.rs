use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use paralesn::tasks::write_dataset_csv;
use paralesn_cli::bench::{cmd_bench_scan, BenchConfig};
use paralesn_cli::config::{ExperimentConfig, Mode};
use paralesn_cli::pipeline::{prepare_task, Prepared};
use paralesn_cli::verify::cmd_verify;
use paralesn_cli::{cmd_run, cmd_sweep, UsageError};

const EXIT_USAGE: u8 = 1;
const EXIT_VERIFY: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Debug, thiserror::Error)]
#[error("{0} verification check(s) failed")]
struct VerificationFailed(usize);

#[derive(Parser)]
#[command(name = "paralesn", version, about = "Parallel echo state network experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment config and report the test metric.
    Run(ExperimentArgs),
    /// Evaluate the config's sweep grid on validation and rerun the best point.
    Sweep(SweepArgs),
    /// Time sequential and parallel forward passes; audit parameter counts.
    BenchScan(BenchArgs),
    /// Run the numerical self-checks; exit code 2 on any failure.
    Verify(VerifyArgs),
    /// Write the config's dataset to CSV with a provenance sidecar.
    Generate(GenerateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Sequential,
    Parallel,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory for result files.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    repeats: Option<usize>,
    /// Accept hyperparameter values outside the standard search grid.
    #[arg(long)]
    allow_unlisted: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: ExperimentArgs,
    /// Skip the final test-scored run of the selected configuration.
    #[arg(long)]
    no_final: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Sequence lengths.
    #[arg(long, value_delimiter = ',', default_values_t = [1024usize, 4096, 16384, 65536])]
    lengths: Vec<usize>,
    /// Hidden widths.
    #[arg(long, value_delimiter = ',', default_values_t = [128usize])]
    widths: Vec<usize>,
    /// Timed repetitions per cell (median reported).
    #[arg(long, default_value_t = 5)]
    reps: usize,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

fn set_workers(workers: Option<usize>) -> Result<()> {
    if let Some(n) = workers {
        if n == 0 {
            return Err(UsageError("--workers must be positive".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn load_config(args: &ExperimentArgs) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| UsageError(format!("cannot read {}: {e}", args.config.display())))?;
    let mut cfg = ExperimentConfig::from_toml(&text)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(mode) = args.mode {
        cfg.mode = match mode {
            ModeArg::Sequential => Mode::Sequential,
            ModeArg::Parallel => Mode::Parallel,
        };
    }
    if let Some(r) = args.repeats {
        cfg.repeats = r;
    }
    cfg.validate(args.allow_unlisted)?;
    Ok(cfg)
}

fn write_json(dir: &Path, name: &str, value: &impl serde::Serialize) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(value)?)?;
    Ok(path)
}

fn run(args: ExperimentArgs) -> Result<()> {
    let cfg = load_config(&args)?;
    set_workers(args.workers)?;
    let result = cmd_run(&cfg)?;
    println!("{}", result.headline());
    println!(
        "config {} seed {} rng {} | {} reservoir parameters | recurrence {:.3}s readout {:.3}s",
        result.config_hash,
        result.seed,
        result.rng_algorithm,
        result.param_count,
        result.timings.recurrence_s,
        result.timings.readout_s
    );
    if let Some(out) = &args.out {
        for p in result.write(out)? {
            println!("wrote {}", p.display());
        }
    }
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<()> {
    let cfg = load_config(&args.common)?;
    set_workers(args.common.workers)?;
    let report = cmd_sweep(&cfg, args.common.allow_unlisted, !args.no_final)?;
    for p in report.ranked().iter().take(10) {
        let value = p.valid.map_or("failed".to_string(), |s| format!("{:.6} ± {:.6}", s.mean, s.std));
        println!("{:>5}  {} = {value}  {}", p.index, report.metric, serde_json::to_string(&p.assignment)?);
    }
    println!("selected point {} of {}", report.best, report.points.len());
    if let Some(result) = &report.final_result {
        println!("{}", result.headline());
    }
    if let Some(out) = &args.common.out {
        for p in report.write(out)? {
            println!("wrote {}", p.display());
        }
    }
    Ok(())
}

fn bench(args: BenchArgs) -> Result<()> {
    let mut cfg = BenchConfig { lengths: args.lengths, widths: args.widths, reps: args.reps, ..Default::default() };
    if let Some(w) = args.workers {
        if w == 0 {
            return Err(UsageError("--workers must be positive".into()).into());
        }
        cfg.workers = w;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let report = cmd_bench_scan(&cfg)?;
    let m = &report.machine;
    println!("machine: {} {}, {} hardware threads, {} workers", m.os, m.arch, m.available_parallelism, m.workers);
    for r in &report.rows {
        println!("T={:>7} N_h={:>5} {:?}: median {:.6}s", r.length, r.n_h, r.mode, r.median_s);
    }
    for s in &report.speedups {
        println!("T={:>7} N_h={:>5}: parallel speedup {:.2}x", s.length, s.n_h, s.speedup);
    }
    for g in &report.growth {
        println!("N_h={}: sequential time grows {:.1}x from T={} to T={}", g.n_h, g.ratio, g.from_length, g.to_length);
    }
    for a in &report.audit {
        println!(
            "N_h={}: ParalESN {} params (formula {}), ESN {} (formula {}), ratio {:.5}",
            a.n_h, a.paralesn_stored, a.paralesn_formula, a.esn_stored, a.esn_formula, a.ratio
        );
    }
    if let Some(out) = &args.out {
        println!("wrote {}", write_json(out, "bench.json", &report)?.display());
        let csv = out.join("bench.csv");
        report.write_csv(&csv)?;
        println!("wrote {}", csv.display());
    }
    Ok(())
}

fn verify(args: VerifyArgs) -> Result<()> {
    set_workers(args.workers)?;
    let report = cmd_verify(args.seed);
    for c in &report.checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    if let Some(out) = &args.out {
        println!("wrote {}", write_json(out, "verify.json", &report)?.display());
    }
    let failed = report.checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(VerificationFailed(failed).into());
    }
    Ok(())
}

fn generate(args: GenerateArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| UsageError(format!("cannot read {}: {e}", args.config.display())))?;
    let mut cfg = ExperimentConfig::from_toml(&text)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let Prepared::Series(ds) = prepare_task(&cfg.task, cfg.seed)? else {
        return Err(UsageError("generate only supports time series tasks".into()).into());
    };
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let path = args.out.join(format!("{}.csv", ds.name));
    let side = write_dataset_csv(&ds, &path)?;
    println!("wrote {} ({} rows)", path.display(), ds.len());
    println!("wrote {}", side.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::Run(a) => run(a),
        Command::Sweep(a) => sweep(a),
        Command::BenchScan(a) => bench(a),
        Command::Verify(a) => verify(a),
        Command::Generate(a) => generate(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(EXIT_USAGE)
            } else if e.downcast_ref::<VerificationFailed>().is_some() {
                ExitCode::from(EXIT_VERIFY)
            } else {
                ExitCode::from(EXIT_RUNTIME)
            }
        }
    }
}
