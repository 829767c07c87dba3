//! Benchmark datasets and evaluation metrics.

mod csv_io;
mod dataset;
mod generators;
mod metrics;

pub use csv_io::{
    load_csv_classification, load_csv_forecasting, provenance_path, write_dataset_csv, CsvForecastOptions,
    SequenceDataset,
};
pub use dataset::{Provenance, Split, SplitBounds, TaskDataset};
pub use generators::{
    gen_ctxor, gen_lorenz96, gen_mackey_glass, gen_memcap, gen_narma, gen_sinmem,
    lorenz96_derivative, lorenz96_rk4_step, lorenz96_trajectory, mackey_glass_series,
    narma_series, DEFAULT_WASHOUT,
};
pub use metrics::{
    metric_accuracy, metric_memory_capacity, metric_mse, metric_nrmse, pearson, MetricReport,
};
