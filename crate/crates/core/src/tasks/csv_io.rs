//! CSV ingestion and export.
//!
//! Parse errors report the 1-based file line (the header is line 1) and the
//! 1-based column.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::dataset::{Provenance, SplitBounds, TaskDataset};
use crate::error::{Error, Result};
use crate::readout::Standardizer;
use crate::tensor_core::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvForecastOptions {
    pub delay: usize,
    pub train_frac: f64,
    pub valid_frac: f64,
    pub clip: f64,
    pub washout: usize,
}

impl Default for CsvForecastOptions {
    fn default() -> Self {
        Self { delay: 192, train_frac: 0.6, valid_frac: 0.2, clip: 10.0, washout: 100 }
    }
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
    lines: Vec<usize>,
}

fn read_table<R: Read>(reader: R) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.iter().map(str::to_string).collect::<Vec<_>>();
    let mut rows = Vec::new();
    let mut lines = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        lines.push(rec.position().map_or(rows.len() + 2, |p| p.line() as usize));
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok(Table { header, rows, lines })
}

fn parse_cell(cell: &str, line: usize, col: usize) -> Result<f64> {
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(v) => Err(Error::Parse { row: line, col: col + 1, msg: format!("non-finite value {v}") }),
        Err(e) => Err(Error::Parse { row: line, col: col + 1, msg: format!("{cell:?}: {e}") }),
    }
}

fn numeric_matrix(table: &Table, skip: usize) -> Result<Matrix<f64>> {
    let cols = table.header.len() - skip;
    let mut data = Vec::with_capacity(table.rows.len() * cols);
    for (row, line) in table.rows.iter().zip(&table.lines) {
        for (c, cell) in row.iter().enumerate().skip(skip) {
            data.push(parse_cell(cell, *line, c)?);
        }
    }
    Matrix::from_vec(table.rows.len(), cols, data)
}

fn clip_rows(m: &mut Matrix<f64>, end: usize, bound: f64) {
    let cols = m.cols();
    for v in &mut m.as_mut_slice()[..end * cols] {
        *v = v.clamp(-bound, bound);
    }
}

/// Multivariate forecasting of every feature `delay` steps ahead.
///
/// Each feature is standardized with statistics of the training rows, then
/// training inputs and targets are clipped to `±clip`. Validation and test
/// rows are left unclipped.
pub fn load_csv_forecasting(path: &Path, opts: &CsvForecastOptions) -> Result<TaskDataset> {
    let table = read_table(File::open(path)?)?;
    if table.header.is_empty() {
        return Err(Error::InvalidConfig(format!("{} has no columns", path.display())));
    }
    let raw = numeric_matrix(&table, 0)?;
    let t = raw.rows();
    let usable = t.saturating_sub(opts.delay);
    let split = SplitBounds::fractions(usable, opts.train_frac, opts.valid_frac)?;
    if usable == 0 || split.train_end < 2 || split.train_end <= opts.washout {
        return Err(Error::InvalidConfig(format!(
            "{t} rows are too few for delay {} and washout {}",
            opts.delay, opts.washout
        )));
    }
    let stats = Standardizer::fit(&raw.slice_rows(0, split.train_end))?;
    let z = stats.transform(&raw)?;
    let mut inputs = z.slice_rows(0, usable);
    let mut targets = z.slice_rows(opts.delay, t);
    clip_rows(&mut inputs, split.train_end, opts.clip);
    clip_rows(&mut targets, split.train_end, opts.clip);
    TaskDataset::new(
        path.file_stem().map_or("csv".into(), |s| s.to_string_lossy().into_owned()),
        inputs,
        targets,
        split,
        opts.washout,
        Provenance {
            generator: "csv".into(),
            params: json!({
                "path": path.display().to_string(),
                "columns": table.header,
                "options": opts,
                "mean": stats.mean(),
                "scale": stats.scale(),
            }),
            seed: None,
            rng_algorithm: None,
        },
    )
}

/// Labelled sequences for classification, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceDataset {
    pub ids: Vec<String>,
    pub sequences: Vec<Matrix<f64>>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    pub feature_names: Vec<String>,
}

impl SequenceDataset {
    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// One-hot label matrix for the given sequence indices.
    pub fn one_hot(&self, indices: &[usize]) -> Matrix<f64> {
        Matrix::from_fn(indices.len(), self.n_classes, |r, c| f64::from(self.labels[indices[r]] == c))
    }
}

/// Reads `sequence_id, label, feature...` rows. Consecutive rows sharing an
/// id form one sequence; labels are non-negative integers and must be
/// constant within a sequence.
pub fn load_csv_classification(path: &Path) -> Result<SequenceDataset> {
    let table = read_table(File::open(path)?)?;
    if table.header.len() < 3 {
        return Err(Error::InvalidConfig(
            "classification CSV needs sequence id, label and at least one feature".into(),
        ));
    }
    let features = numeric_matrix(&table, 2)?;
    let mut ids: Vec<String> = Vec::new();
    let mut bounds: Vec<(usize, usize)> = Vec::new();
    let mut labels = Vec::new();
    let mut seen = BTreeMap::new();
    for (i, (row, line)) in table.rows.iter().zip(&table.lines).enumerate() {
        let label: usize = row[1]
            .parse()
            .map_err(|e| Error::Parse { row: *line, col: 2, msg: format!("label {:?}: {e}", row[1]) })?;
        if ids.last() == Some(&row[0]) {
            if labels.last() != Some(&label) {
                return Err(Error::Parse { row: *line, col: 2, msg: "label changes within a sequence".into() });
            }
            bounds.last_mut().expect("open sequence").1 = i + 1;
        } else {
            if seen.insert(row[0].clone(), ()).is_some() {
                return Err(Error::Parse { row: *line, col: 1, msg: format!("sequence {:?} is not contiguous", row[0]) });
            }
            ids.push(row[0].clone());
            labels.push(label);
            bounds.push((i, i + 1));
        }
    }
    if ids.is_empty() {
        return Err(Error::InvalidConfig(format!("{} contains no rows", path.display())));
    }
    let sequences = bounds.iter().map(|&(a, b)| features.slice_rows(a, b)).collect();
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    Ok(SequenceDataset {
        ids,
        sequences,
        labels,
        n_classes,
        feature_names: table.header[2..].to_vec(),
    })
}

#[derive(Serialize)]
struct Sidecar<'a> {
    name: &'a str,
    provenance: &'a Provenance,
    split: SplitBounds,
    washout: usize,
    target_valid_from: &'a [usize],
}

/// Path of the provenance file written next to a dataset CSV.
pub fn provenance_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("provenance.json")
}

/// Writes `input_*` and `target_*` columns plus a JSON provenance sidecar.
/// Returns the sidecar path.
pub fn write_dataset_csv(ds: &TaskDataset, path: &Path) -> Result<PathBuf> {
    let mut w = csv::Writer::from_path(path)?;
    let header: Vec<String> = (0..ds.inputs.cols())
        .map(|i| format!("input_{i}"))
        .chain((0..ds.targets.cols()).map(|i| format!("target_{i}")))
        .collect();
    w.write_record(&header)?;
    for t in 0..ds.len() {
        let record: Vec<String> = ds.inputs.row(t).iter().chain(ds.targets.row(t)).map(|v| v.to_string()).collect();
        w.write_record(&record)?;
    }
    w.flush()?;
    let side = provenance_path(path);
    let sidecar = Sidecar {
        name: &ds.name,
        provenance: &ds.provenance,
        split: ds.split,
        washout: ds.washout,
        target_valid_from: &ds.target_valid_from,
    };
    std::fs::write(&side, serde_json::to_string_pretty(&sidecar)?)?;
    Ok(side)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::Split;
    use std::io::Write;

    fn write_tmp(dir: &tempfile::TempDir, name: &str, body: &str) -> PathBuf {
        let p = dir.path().join(name);
        File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn toy_values_round_trip_before_normalization() {
        let t = read_table("a,b\n1.5,-2\n0.25,3e2\n7,0\n".as_bytes()).unwrap();
        let m = numeric_matrix(&t, 0).unwrap();
        assert_eq!(m.as_slice(), &[1.5, -2.0, 0.25, 300.0, 7.0, 0.0]);
    }

    #[test]
    fn parse_error_reports_location() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(&dir, "bad.csv", "a,b\n1,2\n3,x\n");
        let opts = CsvForecastOptions { delay: 1, washout: 0, ..Default::default() };
        match load_csv_forecasting(&p, &opts) {
            Err(Error::Parse { row, col, .. }) => assert_eq!((row, col), (3, 2)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn too_short_series_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(&dir, "short.csv", "a\n1\n2\n3\n");
        assert!(matches!(
            load_csv_forecasting(&p, &CsvForecastOptions::default()),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn standardization_and_training_only_clipping() {
        let n = 2000;
        let mut body = String::from("f\n");
        for t in 0..n {
            let v = match t {
                500 | 1900 => 100.0,
                _ if t % 2 == 0 => 1.0,
                _ => -1.0,
            };
            body.push_str(&format!("{v}\n"));
        }
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(&dir, "outlier.csv", &body);
        let opts = CsvForecastOptions { delay: 2, train_frac: 0.6, valid_frac: 0.2, clip: 10.0, washout: 10 };
        let ds = load_csv_forecasting(&p, &opts).unwrap();
        assert_eq!(ds.inputs.get(500, 0), 10.0);
        let unclipped = ds.inputs.get(1900, 0);
        assert!(unclipped > 10.0, "{unclipped}");
        // The target two steps earlier sees the same training outlier.
        assert_eq!(ds.targets.get(498, 0), 10.0);
        assert!(ds.split.valid_end <= 1900);
    }

    #[test]
    fn training_statistics_are_standard() {
        let mut body = String::from("a,b\n");
        for t in 0..600 {
            body.push_str(&format!("{},{}\n", (t as f64 * 0.37).sin() * 3.0 + 5.0, t as f64 * 0.01));
        }
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(&dir, "smooth.csv", &body);
        let opts = CsvForecastOptions { delay: 10, washout: 5, ..Default::default() };
        let ds = load_csv_forecasting(&p, &opts).unwrap();
        let train = ds.inputs.slice_rows(0, ds.split.train_end);
        for c in 0..2 {
            let col = train.column(c);
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64;
            assert!(mean.abs() <= 1e-9);
            assert!((var.sqrt() - 1.0).abs() <= 1e-6);
        }
        assert_eq!(ds.targets.row(0), ds.inputs.row(10));
        assert_eq!(ds.rows(Split::Train).start, 5);
    }

    #[test]
    fn classification_groups_sequences() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_tmp(&dir, "cls.csv", "id,label,x,y\ns1,0,1,2\ns1,0,3,4\ns2,2,5,6\n");
        let ds = load_csv_classification(&p).unwrap();
        assert_eq!(ds.ids, vec!["s1", "s2"]);
        assert_eq!(ds.labels, vec![0, 2]);
        assert_eq!(ds.n_classes, 3);
        assert_eq!(ds.sequences[0].rows(), 2);
        assert_eq!(ds.sequences[1].row(0), &[5.0, 6.0]);
        assert_eq!(ds.one_hot(&[1]).row(0), &[0.0, 0.0, 1.0]);
        let bad = write_tmp(&dir, "bad.csv", "id,label,x\ns1,0,1\ns1,1,2\n");
        assert!(matches!(load_csv_classification(&bad), Err(Error::Parse { row: 3, .. })));
    }

    #[test]
    fn export_writes_sidecar() {
        let ds = crate::tasks::gen_sinmem(2, 150, 10, &crate::RngSpec::new(1)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sin.csv");
        let side = write_dataset_csv(&ds, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("input_0,target_0\n"));
        assert_eq!(text.lines().count(), 151);
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(side).unwrap()).unwrap();
        assert_eq!(v["provenance"]["seed"], 1);
        assert_eq!(v["provenance"]["rng_algorithm"], "chacha20");
    }
}
