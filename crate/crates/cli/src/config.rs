//! Experiment configuration, read from TOML.

use std::f64::consts::PI;
use std::path::PathBuf;

use paralesn::baselines::EsnHyperparams;
use paralesn::readout::{MlpConfig, MlpLoss};
use paralesn::reservoir::{split_units, InputKind, LayerHyperparams};
use paralesn::tasks::{CsvForecastOptions, DEFAULT_WASHOUT};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::UsageError;

pub const RIDGE_GRID: [f64; 6] = [0.0, 0.01, 0.1, 1.0, 10.0, 100.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Sequential,
    Parallel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default = "one")]
    pub repeats: usize,
    pub task: TaskSpec,
    pub model: ModelSpec,
    #[serde(default)]
    pub readout: ReadoutSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
}

fn one() -> usize {
    1
}

fn washout() -> usize {
    DEFAULT_WASHOUT
}

fn memcap_len() -> usize {
    7000
}

fn memcap_k() -> usize {
    200
}

fn forecast_len() -> usize {
    10_000
}

fn lorenz_len() -> usize {
    1200
}

fn narma_order() -> usize {
    10
}

fn unit_horizon() -> usize {
    1
}

fn lorenz_horizon() -> usize {
    25
}

fn mem_delay() -> usize {
    5
}

fn sin_delay() -> usize {
    10
}

fn csv_delay() -> usize {
    192
}

fn train_frac() -> f64 {
    0.6
}

fn valid_frac() -> f64 {
    0.2
}

fn class_train_frac() -> f64 {
    0.7
}

fn class_valid_frac() -> f64 {
    0.15
}

fn clip() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskSpec {
    Memcap {
        #[serde(default = "memcap_len")]
        length: usize,
        #[serde(default = "memcap_k")]
        max_delay: usize,
        #[serde(default = "washout")]
        washout: usize,
    },
    Ctxor {
        #[serde(default = "mem_delay")]
        delay: usize,
        #[serde(default = "memcap_len")]
        length: usize,
        #[serde(default = "washout")]
        washout: usize,
    },
    Sinmem {
        #[serde(default = "sin_delay")]
        delay: usize,
        #[serde(default = "memcap_len")]
        length: usize,
        #[serde(default = "washout")]
        washout: usize,
    },
    Narma {
        #[serde(default = "narma_order")]
        order: usize,
        #[serde(default = "forecast_len")]
        length: usize,
        #[serde(default = "washout")]
        washout: usize,
    },
    MackeyGlass {
        #[serde(default = "unit_horizon")]
        horizon: usize,
        #[serde(default = "forecast_len")]
        length: usize,
        #[serde(default = "washout")]
        washout: usize,
    },
    Lorenz96 {
        #[serde(default = "lorenz_horizon")]
        horizon: usize,
        #[serde(default = "lorenz_len")]
        length: usize,
        #[serde(default = "washout")]
        washout: usize,
    },
    /// Multivariate CSV forecasting; every feature `delay` steps ahead.
    CsvForecast {
        path: PathBuf,
        #[serde(default = "csv_delay")]
        delay: usize,
        #[serde(default = "train_frac")]
        train_frac: f64,
        #[serde(default = "valid_frac")]
        valid_frac: f64,
        #[serde(default = "clip")]
        clip: f64,
        #[serde(default = "washout")]
        washout: usize,
    },
    /// `sequence_id, label, feature...` rows; sequences are split in file order.
    CsvClassification {
        path: PathBuf,
        #[serde(default = "class_train_frac")]
        train_frac: f64,
        #[serde(default = "class_valid_frac")]
        valid_frac: f64,
    },
}

impl TaskSpec {
    pub fn is_classification(&self) -> bool {
        matches!(self, TaskSpec::CsvClassification { .. })
    }

    /// Primary metric name and whether larger is better.
    pub fn metric(&self) -> (&'static str, bool) {
        match self {
            TaskSpec::Memcap { .. } => ("memory_capacity", true),
            TaskSpec::CsvClassification { .. } => ("accuracy", true),
            _ => ("nrmse", false),
        }
    }

    pub fn csv_options(&self) -> Option<CsvForecastOptions> {
        match *self {
            TaskSpec::CsvForecast { delay, train_frac, valid_frac, clip, washout, .. } => {
                Some(CsvForecastOptions { delay, train_frac, valid_frac, clip, washout })
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Paralesn,
    Esn,
    Scr,
    /// No reservoir: the readout sees the raw inputs.
    Linear,
}

/// Hyperparameters of one layer. ParalESN reads `rho_min ..= kernel_size`,
/// ESN and SCR read `rho` and `omega_in`; `tau` and `omega_b` are shared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayerSpec {
    pub tau: f64,
    pub omega_b: f64,
    pub rho_min: f64,
    pub rho_max: f64,
    pub theta_min: f64,
    pub theta_max: f64,
    pub omega_mix: f64,
    pub omega_mixb: f64,
    pub kernel_size: usize,
    pub rho: f64,
    pub omega_in: f64,
}

impl Default for LayerSpec {
    fn default() -> Self {
        Self {
            tau: 1.0,
            omega_b: 0.1,
            rho_min: 0.0,
            rho_max: 0.9,
            theta_min: 0.0,
            theta_max: 2.0 * PI,
            omega_mix: 1.0,
            omega_mixb: 0.1,
            kernel_size: 3,
            rho: 0.9,
            omega_in: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Total reservoir units, split evenly across layers (remainder to the first).
    #[serde(default = "default_units")]
    pub units: usize,
    #[serde(default = "one")]
    pub layers: usize,
    #[serde(default)]
    pub concat: bool,
    #[serde(default)]
    pub first: LayerSpec,
    /// Layers after the first; defaults to `first`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inter: Option<LayerSpec>,
}

fn default_units() -> usize {
    128
}

impl ModelSpec {
    fn layer_specs(&self) -> Vec<&LayerSpec> {
        (0..self.layers)
            .map(|l| if l == 0 { &self.first } else { self.inter.as_ref().unwrap_or(&self.first) })
            .collect()
    }

    pub fn paralesn_layers(&self) -> anyhow::Result<Vec<LayerHyperparams>> {
        let units = split_units(self.units, self.layers)?;
        Ok(self
            .layer_specs()
            .into_iter()
            .zip(units)
            .map(|(s, n_h)| LayerHyperparams {
                n_h,
                rho_min: s.rho_min,
                rho_max: s.rho_max,
                theta_min: s.theta_min,
                theta_max: s.theta_max,
                tau: s.tau,
                omega_b: s.omega_b,
                omega_mix: s.omega_mix,
                omega_mixb: s.omega_mixb,
                kernel_size: s.kernel_size,
                input: InputKind::Dense,
            })
            .collect())
    }

    pub fn esn_layers(&self) -> anyhow::Result<Vec<EsnHyperparams>> {
        let units = split_units(self.units, self.layers)?;
        Ok(self
            .layer_specs()
            .into_iter()
            .zip(units)
            .map(|(s, n_h)| EsnHyperparams { n_h, rho: s.rho, omega_in: s.omega_in, omega_b: s.omega_b, tau: s.tau })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ReadoutSpec {
    /// Ridge fit on the training rows for every λ; the λ with the best
    /// validation metric is kept.
    Ridge {
        #[serde(default = "ridge_grid")]
        lambdas: Vec<f64>,
    },
    /// Two-layer tanh MLP trained with Adam and early stopping on validation.
    Mlp {
        #[serde(default = "mlp_hidden")]
        hidden: usize,
        #[serde(default = "mlp_lr")]
        learning_rate: f64,
        #[serde(default = "mlp_epochs")]
        epochs: usize,
        #[serde(default = "mlp_patience")]
        patience: usize,
        #[serde(default = "mlp_batch")]
        batch_size: usize,
    },
}

fn ridge_grid() -> Vec<f64> {
    RIDGE_GRID.to_vec()
}

fn mlp_hidden() -> usize {
    MlpConfig::default().hidden
}

fn mlp_lr() -> f64 {
    MlpConfig::default().learning_rate
}

fn mlp_epochs() -> usize {
    MlpConfig::default().epochs
}

fn mlp_patience() -> usize {
    MlpConfig::default().patience
}

fn mlp_batch() -> usize {
    MlpConfig::default().batch_size
}

impl Default for ReadoutSpec {
    fn default() -> Self {
        ReadoutSpec::Ridge { lambdas: ridge_grid() }
    }
}

impl ReadoutSpec {
    pub fn mlp_config(&self, loss: MlpLoss, seed: u64) -> Option<MlpConfig> {
        match *self {
            ReadoutSpec::Mlp { hidden, learning_rate, epochs, patience, batch_size } => Some(MlpConfig {
                hidden,
                learning_rate,
                epochs,
                patience,
                batch_size,
                loss,
                seed,
                ..MlpConfig::default()
            }),
            ReadoutSpec::Ridge { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Every combination of the listed values.
    Grid,
    /// `budget` distinct grid points drawn without replacement.
    Random,
    /// One factor at a time around the base configuration.
    Sensitivity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub strategy: Strategy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<usize>,
    /// Dotted config paths (e.g. `model.first.rho_max`) and their values.
    pub params: std::collections::BTreeMap<String, Vec<serde_json::Value>>,
}

struct Domain {
    name: &'static str,
    values: &'static [f64],
}

const OMEGA_B: Domain = Domain { name: "omega_b", values: &[0.0, 0.01, 0.1, 1.0, 10.0] };
const TAU: Domain = Domain { name: "tau", values: &[0.1, 0.5, 0.9, 1.0] };
const OMEGA_IN: Domain = Domain { name: "omega_in", values: &[0.01, 0.1, 1.0, 10.0] };
const RHO: Domain = Domain { name: "rho", values: &[0.1, 0.5, 0.9] };
const RHO_MAX: Domain = Domain { name: "rho_max", values: &[0.1, 0.5, 0.9] };
const RHO_MIN: Domain = Domain { name: "rho_min", values: &[0.0, 0.1, 0.5, 0.9] };
const THETA_MAX: Domain = Domain { name: "theta_max", values: &[0.5 * PI, PI, 2.0 * PI] };
const THETA_MIN: Domain = Domain { name: "theta_min", values: &[0.0, 0.5 * PI, PI, 2.0 * PI] };
const OMEGA_MIX: Domain = Domain { name: "omega_mix", values: &[0.01, 0.1, 1.0, 10.0] };
const OMEGA_MIXB: Domain = Domain { name: "omega_mixb", values: &[0.0, 0.01, 0.1, 1.0, 10.0] };
const KERNEL: Domain = Domain { name: "kernel_size", values: &[3.0, 5.0, 7.0, 9.0] };
const LAYERS: Domain = Domain { name: "layers", values: &[1.0, 2.0, 3.0, 4.0, 5.0] };
const LAMBDA: Domain = Domain { name: "lambda", values: &RIDGE_GRID };

fn listed(domain: &Domain, value: f64) -> bool {
    domain.values.iter().any(|v| (v - value).abs() <= 1e-9 * v.abs().max(1.0))
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, UsageError> {
        toml::from_str(text).map_err(|e| UsageError(format!("invalid config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    /// Structural checks always; hyperparameter values must also come from
    /// the standard search grid unless `allow_unlisted`.
    pub fn validate(&self, allow_unlisted: bool) -> Result<(), UsageError> {
        let usage = |msg: String| Err(UsageError(msg));
        if self.repeats == 0 {
            return usage("repeats must be at least 1".into());
        }
        let m = &self.model;
        if m.layers == 0 {
            return usage("model.layers must be at least 1".into());
        }
        if m.kind != ModelKind::Linear && m.units < m.layers {
            return usage(format!("{} units cannot fill {} layers", m.units, m.layers));
        }
        if self.task.is_classification() && m.kind == ModelKind::Linear {
            return usage("the linear model needs a reservoir state for classification".into());
        }
        if let ReadoutSpec::Ridge { lambdas } = &self.readout {
            if lambdas.is_empty() || lambdas.iter().any(|l| !l.is_finite() || *l < 0.0) {
                return usage("readout.lambdas must be a non-empty list of non-negative numbers".into());
            }
        }
        let mut off_grid = Vec::new();
        let mut check = |domain: &Domain, where_: &str, value: f64| {
            if !listed(domain, value) {
                off_grid.push(format!("{where_}.{} = {value} (listed: {:?})", domain.name, domain.values));
            }
        };
        if m.kind != ModelKind::Linear {
            check(&LAYERS, "model", m.layers as f64);
            let specs = std::iter::once(("model.first", &m.first)).chain(m.inter.iter().map(|s| ("model.inter", s)));
            for (where_, s) in specs {
                check(&OMEGA_B, where_, s.omega_b);
                check(&TAU, where_, s.tau);
                match m.kind {
                    ModelKind::Paralesn => {
                        check(&RHO_MAX, where_, s.rho_max);
                        check(&RHO_MIN, where_, s.rho_min);
                        check(&THETA_MAX, where_, s.theta_max);
                        check(&THETA_MIN, where_, s.theta_min);
                        check(&OMEGA_MIX, where_, s.omega_mix);
                        check(&OMEGA_MIXB, where_, s.omega_mixb);
                        check(&KERNEL, where_, s.kernel_size as f64);
                    }
                    ModelKind::Esn | ModelKind::Scr => {
                        check(&RHO, where_, s.rho);
                        check(&OMEGA_IN, where_, s.omega_in);
                    }
                    ModelKind::Linear => {}
                }
            }
        }
        if let ReadoutSpec::Ridge { lambdas } = &self.readout {
            for &l in lambdas {
                check(&LAMBDA, "readout", l);
            }
        }
        if !off_grid.is_empty() && !allow_unlisted {
            return usage(format!(
                "values outside the search grid (pass --allow-unlisted to accept): {}",
                off_grid.join("; ")
            ));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form, excluding the seed and the
    /// sweep section.
    pub fn config_hash(&self) -> String {
        let mut bare = self.clone();
        bare.seed = 0;
        bare.sweep = None;
        let json = serde_json::to_string(&bare).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Replaces the value at a dotted path, e.g. `model.first.rho_max`.
    pub fn with_override(&self, path: &str, value: &serde_json::Value) -> Result<Self, UsageError> {
        let mut tree = serde_json::to_value(self).expect("config serializes");
        let mut node = &mut tree;
        let parts: Vec<&str> = path.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let obj = node
                .as_object_mut()
                .ok_or_else(|| UsageError(format!("{path}: {part} is not inside a table")))?;
            if i + 1 == parts.len() {
                obj.insert((*part).to_string(), value.clone());
                break;
            }
            if !obj.contains_key(*part) || obj[*part].is_null() {
                // An absent inter-layer table starts as a copy of the first.
                let seed = if *part == "inter" { obj.get("first").cloned() } else { None };
                obj.insert((*part).to_string(), seed.unwrap_or_else(|| serde_json::json!({})));
            }
            node = obj.get_mut(*part).expect("just inserted");
        }
        serde_json::from_value(tree).map_err(|e| UsageError(format!("override {path} = {value}: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"
seed = 3
mode = "parallel"
repeats = 2

[task]
kind = "narma"
order = 10

[model]
kind = "paralesn"
units = 64

[model.first]
rho_min = 0.5
theta_max = 3.141592653589793
"#;

    #[test]
    fn parses_with_defaults() {
        let c = ExperimentConfig::from_toml(EXAMPLE).unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.mode, Mode::Parallel);
        assert_eq!(c.task, TaskSpec::Narma { order: 10, length: 10_000, washout: 100 });
        assert_eq!(c.model.first.rho_min, 0.5);
        assert_eq!(c.model.first.kernel_size, 3);
        assert_eq!(c.readout, ReadoutSpec::Ridge { lambdas: RIDGE_GRID.to_vec() });
        c.validate(false).unwrap();
    }

    #[test]
    fn toml_round_trip() {
        let c = ExperimentConfig::from_toml(EXAMPLE).unwrap();
        assert_eq!(ExperimentConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = EXAMPLE.replace("units = 64", "units = 64\nwidth = 3");
        assert!(ExperimentConfig::from_toml(&bad).is_err());
    }

    #[test]
    fn off_grid_values_need_opt_in() {
        let c = ExperimentConfig::from_toml(&EXAMPLE.replace("rho_min = 0.5", "rho_min = 0.3")).unwrap();
        let err = c.validate(false).unwrap_err();
        assert!(err.0.contains("rho_min"), "{err}");
        c.validate(true).unwrap();
    }

    #[test]
    fn esn_fields_are_checked_for_esn_only() {
        let text = EXAMPLE.replace("kind = \"paralesn\"", "kind = \"esn\"").replace("rho_min = 0.5", "omega_in = 0.3");
        assert!(ExperimentConfig::from_toml(&text).unwrap().validate(false).is_err());
        let text = EXAMPLE.replace("rho_min = 0.5", "omega_in = 0.3");
        ExperimentConfig::from_toml(&text).unwrap().validate(false).unwrap();
    }

    #[test]
    fn hash_ignores_seed_but_not_hyperparameters() {
        let a = ExperimentConfig::from_toml(EXAMPLE).unwrap();
        let mut b = a.clone();
        b.seed = 99;
        assert_eq!(a.config_hash(), b.config_hash());
        b.model.first.tau = 0.5;
        assert_ne!(a.config_hash(), b.config_hash());
    }

    #[test]
    fn overrides_follow_dotted_paths() {
        let a = ExperimentConfig::from_toml(EXAMPLE).unwrap();
        let b = a.with_override("model.first.rho_max", &serde_json::json!(0.1)).unwrap();
        assert_eq!(b.model.first.rho_max, 0.1);
        let c = a.with_override("model.inter.tau", &serde_json::json!(0.5)).unwrap();
        let inter = c.model.inter.unwrap();
        assert_eq!(inter.tau, 0.5);
        assert_eq!(inter.rho_min, 0.5);
        assert!(a.with_override("model.first.nope", &serde_json::json!(1)).is_err());
    }

    #[test]
    fn units_split_across_layers() {
        let mut c = ExperimentConfig::from_toml(EXAMPLE).unwrap();
        c.model.units = 10;
        c.model.layers = 3;
        let hps = c.model.paralesn_layers().unwrap();
        assert_eq!(hps.iter().map(|h| h.n_h).collect::<Vec<_>>(), vec![4, 3, 3]);
    }
}
