use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::process::Command;

use paralesn_cli::config::{ExperimentConfig, Mode, Strategy, SweepSpec};
use paralesn_cli::results::summarize;
use paralesn_cli::{cmd_run, cmd_sweep, RunResult};
use serde_json::json;

const NARMA_SMALL: &str = r#"
seed = 4
repeats = 3

[task]
kind = "narma"
order = 10
length = 2000

[model]
kind = "paralesn"
units = 32

[model.first]
rho_min = 0.5
theta_max = 3.141592653589793
"#;

fn small() -> ExperimentConfig {
    ExperimentConfig::from_toml(NARMA_SMALL).unwrap()
}

fn workspace_file(rel: &str) -> String {
    std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)).unwrap()
}

fn metric_bits(r: &RunResult) -> Vec<u64> {
    r.repeats.iter().flat_map(|x| x.metrics.values().map(|v| v.to_bits())).collect()
}

#[test]
fn written_result_round_trips_to_the_printed_summary() {
    let result = cmd_run(&small()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    result.write(dir.path()).unwrap();
    let parsed = RunResult::from_json(&std::fs::read_to_string(dir.path().join("result.json")).unwrap()).unwrap();
    assert_eq!(parsed.summary, summarize(&parsed.repeats));
    assert_eq!(parsed.headline(), result.headline());
    assert_eq!(parsed.repeats.len(), 3);

    let mut rdr = csv::Reader::from_path(dir.path().join("summary.csv")).unwrap();
    let rows: Vec<BTreeMap<String, String>> = rdr.deserialize().map(Result::unwrap).collect();
    let primary = rows.iter().find(|r| r["metric"] == result.metric).unwrap();
    assert_eq!(primary["mean"].parse::<f64>().unwrap(), result.primary().mean);
    assert_eq!(primary["std"].parse::<f64>().unwrap(), result.primary().std);
    assert_eq!(primary["config_hash"], result.config_hash);
    assert_eq!(primary["rng_algorithm"], "chacha20");
}

#[test]
fn one_point_grid_equals_run() {
    let mut cfg = small();
    cfg.repeats = 1;
    cfg.sweep = Some(SweepSpec {
        strategy: Strategy::Grid,
        budget: None,
        params: BTreeMap::from([("model.first.tau".to_string(), vec![json!(0.9)])]),
    });
    let sweep = cmd_sweep(&cfg, false, true).unwrap();
    assert_eq!(sweep.points.len(), 1);
    let direct = cmd_run(&cfg.with_override("model.first.tau", &json!(0.9)).unwrap()).unwrap();
    let swept = sweep.final_result.unwrap();
    assert_eq!(metric_bits(&swept), metric_bits(&direct));
    assert_eq!(swept.config_hash, direct.config_hash);
}

#[test]
fn selected_lambda_is_the_argmin_of_the_emitted_table() {
    let result = cmd_run(&small()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    result.write(dir.path()).unwrap();
    let record: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("result.json")).unwrap()).unwrap();
    for rep in record["repeats"].as_array().unwrap() {
        let table: Vec<(f64, f64)> = serde_json::from_value(rep["lambda_table"].clone()).unwrap();
        assert_eq!(table.len(), 6);
        let best = table.iter().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
        assert_eq!(rep["selected_lambda"].as_f64().unwrap(), best.0);
        assert_eq!(rep["metrics"]["valid_nrmse"].as_f64().unwrap(), best.1);
    }
}

#[test]
fn sweep_never_reads_test_targets_before_selection() {
    let mut cfg = small();
    cfg.repeats = 1;
    cfg.sweep = Some(SweepSpec {
        strategy: Strategy::Random,
        budget: Some(3),
        params: BTreeMap::from([
            ("model.first.tau".to_string(), vec![json!(0.5), json!(0.9), json!(1.0)]),
            ("model.first.kernel_size".to_string(), vec![json!(3), json!(5)]),
        ]),
    });
    let report = cmd_sweep(&cfg, false, false).unwrap();
    assert_eq!(report.points.len(), 3);
    assert_eq!(report.test_reads_during_selection, 0);
    assert!(report.final_result.is_none());
    let best = report.points[report.best].valid.unwrap().mean;
    assert!(report.points.iter().all(|p| p.valid.unwrap().mean >= best));
}

#[test]
fn zero_budget_is_rejected() {
    let mut cfg = small();
    cfg.sweep = Some(SweepSpec {
        strategy: Strategy::Random,
        budget: Some(0),
        params: BTreeMap::from([("model.first.tau".to_string(), vec![json!(0.5)])]),
    });
    let err = cmd_sweep(&cfg, false, false).unwrap_err();
    assert!(err.downcast_ref::<paralesn_cli::UsageError>().is_some());
}

#[test]
fn shrinking_rho_max_hurts_narma10() {
    let cfg = ExperimentConfig::from_toml(&workspace_file("configs/narma10_sensitivity.toml")).unwrap();
    let report = cmd_sweep(&cfg, false, false).unwrap();
    let base = report.points[0].valid.unwrap().mean;
    let degraded = report
        .points
        .iter()
        .find(|p| p.assignment.get("model.first.rho_max") == Some(&json!(0.1)))
        .unwrap();
    assert!(degraded.valid.unwrap().mean > base);
}

#[test]
fn esn_beats_the_constant_mean_on_narma10() {
    let cfg = ExperimentConfig::from_toml(&workspace_file("configs/narma10_esn.toml")).unwrap();
    let result = cmd_run(&cfg).unwrap();
    // A constant prediction at the target mean has NRMSE 1.
    assert!(result.primary().mean < 1.0, "{}", result.headline());
}

#[test]
fn every_example_config_validates() {
    for entry in std::fs::read_dir(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")).unwrap() {
        let path = entry.unwrap().path();
        let cfg = ExperimentConfig::from_toml(&std::fs::read_to_string(&path).unwrap()).unwrap();
        cfg.validate(false).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }
}

#[test]
fn parallel_mode_is_reproducible_across_pools() {
    let mut cfg = small();
    cfg.mode = Mode::Parallel;
    let a = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| cmd_run(&cfg).unwrap());
    let b = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap().install(|| cmd_run(&cfg).unwrap());
    assert_eq!(metric_bits(&a), metric_bits(&b));
}

#[test]
fn csv_tasks_run_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let series = dir.path().join("series.csv");
    let mut text = String::from("a,b\n");
    for t in 0..600 {
        let x = t as f64 * 0.1;
        writeln!(text, "{},{}", x.sin(), (0.7 * x).cos()).unwrap();
    }
    std::fs::write(&series, text).unwrap();
    let cfg = ExperimentConfig::from_toml(&format!(
        "[task]\nkind = \"csv_forecast\"\npath = {:?}\ndelay = 5\nwashout = 20\n[model]\nkind = \"paralesn\"\nunits = 16\n",
        series.to_str().unwrap()
    ))
    .unwrap();
    let result = cmd_run(&cfg).unwrap();
    assert!(result.primary().mean < 0.5, "{}", result.headline());

    let labelled = dir.path().join("seqs.csv");
    let mut text = String::from("id,label,x\n");
    for s in 0..40 {
        for t in 0..20 {
            let v = if s % 2 == 0 { (t as f64 * 0.5).sin() } else { 0.5 };
            writeln!(text, "s{s},{},{v}", s % 2).unwrap();
        }
    }
    std::fs::write(&labelled, text).unwrap();
    let cfg = ExperimentConfig::from_toml(&format!(
        "[task]\nkind = \"csv_classification\"\npath = {:?}\n[model]\nkind = \"paralesn\"\nunits = 16\n",
        labelled.to_str().unwrap()
    ))
    .unwrap();
    let result = cmd_run(&cfg).unwrap();
    assert_eq!(result.metric, "test_accuracy");
    assert_eq!(result.primary().mean, 1.0);
}

fn paralesn(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_paralesn")).args(args).output().unwrap()
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");

    assert_eq!(paralesn(&["run", "--bogus"]).status.code(), Some(1));
    assert_eq!(paralesn(&["run", "--config", "/nonexistent.toml"]).status.code(), Some(1));

    std::fs::write(&cfg, "[task]\nkind = \"narma\"\nlength = 1500\ncolour = 1\n[model]\nkind = \"esn\"\n").unwrap();
    assert_eq!(paralesn(&["run", "--config", cfg.to_str().unwrap()]).status.code(), Some(1));

    let off_grid = "[task]\nkind = \"narma\"\nlength = 1500\n[model]\nkind = \"esn\"\nunits = 16\n[model.first]\nrho = 0.95\n";
    std::fs::write(&cfg, off_grid).unwrap();
    let out = paralesn(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("rho"));
    let out = paralesn(&["run", "--config", cfg.to_str().unwrap(), "--allow-unlisted", "--repeats", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("test_nrmse"));

    std::fs::write(&cfg, "[task]\nkind = \"csv_forecast\"\npath = \"/nonexistent.csv\"\n[model]\nkind = \"esn\"\n").unwrap();
    assert_eq!(paralesn(&["run", "--config", cfg.to_str().unwrap()]).status.code(), Some(3));

    let out = paralesn(&["verify", "--workers", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(!String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

#[test]
fn generate_writes_csv_and_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "seed = 2\n[task]\nkind = \"narma\"\nlength = 500\n[model]\nkind = \"esn\"\n").unwrap();
    let out_dir = dir.path().join("data");
    let out = paralesn(&["generate", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csvs: Vec<_> = std::fs::read_dir(&out_dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    assert_eq!(csvs.len(), 1);
    let rows = csv::Reader::from_path(&csvs[0]).unwrap().records().count();
    assert_eq!(rows, 500);
    assert!(paralesn::tasks::provenance_path(&csvs[0]).exists());
}
