//! Synthetic benchmark generators.

use serde_json::json;

use super::dataset::{Provenance, SplitBounds, TaskDataset};
use crate::error::{Error, Result};
use crate::tensor_core::{Matrix, RngSpec, RngStream};

pub const DEFAULT_WASHOUT: usize = 100;

const MG_DT: f64 = 0.1;
const MG_DELAY: f64 = 17.0;
const MG_SUBSAMPLE: usize = 10;
const MG_HISTORY: f64 = 1.2;
const MG_TRANSIENT: usize = 1000;

const L96_DIM: usize = 5;
const L96_FORCING: f64 = 8.0;
const L96_DT: f64 = 0.05;
const L96_TRANSIENT: usize = 500;

const NARMA_MAX_ATTEMPTS: u64 = 10;
const NARMA_BOUND: f64 = 10.0;

fn seeded(generator: &str, params: serde_json::Value, rng: &RngSpec) -> Provenance {
    Provenance {
        generator: generator.into(),
        params,
        seed: Some(rng.seed),
        rng_algorithm: Some(rng.algorithm.clone()),
    }
}

fn deterministic(generator: &str, params: serde_json::Value) -> Provenance {
    Provenance {
        generator: generator.into(),
        params,
        seed: None,
        rng_algorithm: None,
    }
}

fn uniform_series(t_len: usize, lo: f64, hi: f64, rng: &mut RngStream) -> Vec<f64> {
    (0..t_len).map(|_| rng.uniform(lo, hi)).collect()
}

fn column(values: Vec<f64>) -> Matrix<f64> {
    let n = values.len();
    Matrix::from_vec(n, 1, values).expect("column shape")
}

/// 5000 / 1000 / 1000 at the default length of 7000.
fn memory_split(t_len: usize) -> Result<SplitBounds> {
    SplitBounds::fractions(t_len, 5.0 / 7.0, 1.0 / 7.0)
}

/// Delayed-copy targets: column `k - 1` holds `x(t - k)` for `k = 1..=K`.
/// The first `k` rows of column `k - 1` are undefined (zero) and excluded
/// from training.
pub fn gen_memcap(t_len: usize, max_delay: usize, washout: usize, rng: &RngSpec) -> Result<TaskDataset> {
    if max_delay == 0 || t_len <= max_delay + washout {
        return Err(Error::InvalidConfig(format!(
            "MemCap needs T > K + washout, got T={t_len}, K={max_delay}, washout={washout}"
        )));
    }
    let x = uniform_series(t_len, -0.8, 0.8, &mut rng.stream(0));
    let targets = Matrix::from_fn(t_len, max_delay, |t, c| {
        let k = c + 1;
        if t >= k {
            x[t - k]
        } else {
            0.0
        }
    });
    let split = memory_split(t_len)?;
    let mut ds = TaskDataset::new(
        "memcap",
        column(x),
        targets,
        split,
        washout,
        seeded("memcap", json!({"t": t_len, "k": max_delay, "range": [-0.8, 0.8]}), rng),
    )?;
    ds.target_valid_from = (1..=max_delay).collect();
    ds.validate()?;
    Ok(ds)
}

/// `y(t) = r² sign(r)` with `r = x(t - d - 1) x(t - d)`.
pub fn gen_ctxor(delay: usize, t_len: usize, washout: usize, rng: &RngSpec) -> Result<TaskDataset> {
    if t_len <= delay + 1 {
        return Err(Error::InvalidConfig(format!("ctXOR needs T > d + 1, got T={t_len}, d={delay}")));
    }
    let x = uniform_series(t_len, -0.8, 0.8, &mut rng.stream(0));
    let y = (0..t_len)
        .map(|t| {
            if t < delay + 1 {
                return 0.0;
            }
            let r = x[t - delay - 1] * x[t - delay];
            r * r * r.signum() * f64::from(r != 0.0)
        })
        .collect();
    let mut ds = TaskDataset::new(
        format!("ctxor{delay}"),
        column(x),
        column(y),
        memory_split(t_len)?,
        washout,
        seeded("ctxor", json!({"d": delay, "t": t_len}), rng),
    )?;
    ds.target_valid_from = vec![delay + 1];
    ds.validate()?;
    Ok(ds)
}

/// `y(t) = sin(π x(t - d))`.
pub fn gen_sinmem(delay: usize, t_len: usize, washout: usize, rng: &RngSpec) -> Result<TaskDataset> {
    if t_len <= delay {
        return Err(Error::InvalidConfig(format!("SinMem needs T > d, got T={t_len}, d={delay}")));
    }
    let x = uniform_series(t_len, -0.8, 0.8, &mut rng.stream(0));
    let y = (0..t_len)
        .map(|t| if t >= delay { (std::f64::consts::PI * x[t - delay]).sin() } else { 0.0 })
        .collect();
    let mut ds = TaskDataset::new(
        format!("sinmem{delay}"),
        column(x),
        column(y),
        memory_split(t_len)?,
        washout,
        seeded("sinmem", json!({"d": delay, "t": t_len}), rng),
    )?;
    ds.target_valid_from = vec![delay];
    ds.validate()?;
    Ok(ds)
}

/// NARMA recurrence over a given input, with zero history (`x` and `y` are
/// zero before the first step):
/// `y(t) = 0.3 y(t-1) + 0.01 y(t-1) Σ_{i=1}^{d} y(t-i) + 1.5 x(t-d) x(t-1) + 0.1`.
///
/// `inputs[0]` is `x(1)`; the result's entry `t - 1` is `y(t)`.
pub fn narma_series(inputs: &[f64], order: usize) -> Vec<f64> {
    let n = inputs.len();
    let mut y = vec![0.0; n];
    let at = |v: &[f64], t: isize| if t >= 1 { v[(t - 1) as usize] } else { 0.0 };
    let mut window = 0.0; // Σ_{i=1}^{d} y(t - i)
    for t in 1..=n as isize {
        let prev = at(&y, t - 1);
        let next = 0.3 * prev + 0.01 * prev * window + 1.5 * at(inputs, t - order as isize) * at(inputs, t - 1) + 0.1;
        y[(t - 1) as usize] = next;
        window += next - at(&y, t - order as isize);
    }
    y
}

/// NARMA task of order `d` with inputs uniform on `[0, 0.5]`. A diverging
/// draw (`|y| > 10`) is replaced by the next RNG stream, at most 10 times.
pub fn gen_narma(order: usize, t_len: usize, washout: usize, rng: &RngSpec) -> Result<TaskDataset> {
    if order == 0 || t_len <= order {
        return Err(Error::InvalidConfig(format!("NARMA needs T > d, got T={t_len}, d={order}")));
    }
    if washout < order {
        return Err(Error::InvalidConfig(format!(
            "washout {washout} must cover the {order}-step zero-history transient"
        )));
    }
    for attempt in 0..NARMA_MAX_ATTEMPTS {
        let x = uniform_series(t_len, 0.0, 0.5, &mut rng.stream(attempt));
        let y = narma_series(&x, order);
        if y.iter().all(|v| v.is_finite() && v.abs() <= NARMA_BOUND) {
            return TaskDataset::new(
                format!("narma{order}"),
                column(x),
                column(y),
                SplitBounds::fractions(t_len, 0.5, 0.25)?,
                washout,
                seeded("narma", json!({"d": order, "t": t_len, "stream": attempt}), rng),
            );
        }
    }
    Err(Error::Generation(format!(
        "NARMA{order} diverged on {NARMA_MAX_ATTEMPTS} consecutive draws"
    )))
}

/// Mackey-Glass delay equation `dx/dt = 0.2 x(t-17) / (1 + x(t-17)^10) - 0.1 x(t)`
/// integrated by RK4 with `dt = 0.1` and sampled every 10 steps.
///
/// The history before `t = 0` and the initial value equal `history`; the
/// delayed term at half steps is the mean of the two neighbouring grid
/// values. The first `transient` samples are discarded.
pub fn mackey_glass_series(samples: usize, history: f64, transient: usize) -> Vec<f64> {
    let lag = (MG_DELAY / MG_DT).round() as usize;
    let total_steps = (samples + transient) * MG_SUBSAMPLE;
    let f = |x: f64, xd: f64| 0.2 * xd / (1.0 + xd.powi(10)) - 0.1 * x;
    // grid[i] is x at step i - lag; the first `lag` entries are history.
    let mut grid = vec![history; lag + 1];
    grid.reserve(total_steps);
    let mut out = Vec::with_capacity(samples);
    for step in 0..total_steps {
        let n = lag + step;
        let x = grid[n];
        let d0 = grid[n - lag];
        let d1 = grid[n - lag + 1];
        let dh = 0.5 * (d0 + d1);
        let k1 = f(x, d0);
        let k2 = f(x + 0.5 * MG_DT * k1, dh);
        let k3 = f(x + 0.5 * MG_DT * k2, dh);
        let k4 = f(x + MG_DT * k3, d1);
        grid.push(x + MG_DT / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
        if (step + 1) % MG_SUBSAMPLE == 0 && (step + 1) / MG_SUBSAMPLE > transient {
            out.push(grid[n + 1]);
        }
    }
    out
}

/// One-dimensional forecasting of `x(t + horizon)` from `x(t)`.
pub fn gen_mackey_glass(t_len: usize, horizon: usize, washout: usize) -> Result<TaskDataset> {
    if t_len == 0 {
        return Err(Error::InvalidConfig("Mackey-Glass needs T > 0".into()));
    }
    let series = mackey_glass_series(t_len + horizon, MG_HISTORY, MG_TRANSIENT);
    let inputs = column(series[..t_len].to_vec());
    let targets = column(series[horizon..horizon + t_len].to_vec());
    TaskDataset::new(
        if horizon == 1 { "mg".to_string() } else { format!("mg{horizon}") },
        inputs,
        targets,
        SplitBounds::fractions(t_len, 0.5, 0.25)?,
        washout,
        deterministic(
            "mackey_glass",
            json!({"t": t_len, "horizon": horizon, "dt": MG_DT, "subsample": MG_SUBSAMPLE,
                   "history": MG_HISTORY, "transient": MG_TRANSIENT}),
        ),
    )
}

/// `dx_i/dt = x_{i-1} (x_{i+1} - x_{i-2}) - x_i + F`, indices cyclic.
pub fn lorenz96_derivative(x: &[f64], forcing: f64) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|i| x[(i + n - 1) % n] * (x[(i + 1) % n] - x[(i + n - 2) % n]) - x[i] + forcing)
        .collect()
}

pub fn lorenz96_rk4_step(x: &[f64], dt: f64, forcing: f64) -> Vec<f64> {
    let axpy = |a: &[f64], s: f64, b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(p, q)| p + s * q).collect() };
    let k1 = lorenz96_derivative(x, forcing);
    let k2 = lorenz96_derivative(&axpy(x, 0.5 * dt, &k1), forcing);
    let k3 = lorenz96_derivative(&axpy(x, 0.5 * dt, &k2), forcing);
    let k4 = lorenz96_derivative(&axpy(x, dt, &k3), forcing);
    (0..x.len())
        .map(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

/// `steps` RK4 states after `x0` (excluding `x0`).
pub fn lorenz96_trajectory(x0: &[f64], steps: usize, dt: f64, forcing: f64) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(steps);
    let mut x = x0.to_vec();
    for _ in 0..steps {
        x = lorenz96_rk4_step(&x, dt, forcing);
        out.push(x.clone());
    }
    out
}

/// Five-dimensional Lorenz96 forecasting of `x(t + horizon)`, split in
/// thirds (400 / 400 / 400 at the default length).
pub fn gen_lorenz96(t_len: usize, horizon: usize, washout: usize) -> Result<TaskDataset> {
    if t_len < 3 {
        return Err(Error::InvalidConfig("Lorenz96 needs at least 3 rows".into()));
    }
    let mut x0 = vec![L96_FORCING; L96_DIM];
    x0[0] += 0.008;
    let traj = lorenz96_trajectory(&x0, L96_TRANSIENT + t_len + horizon, L96_DT, L96_FORCING);
    let kept = &traj[L96_TRANSIENT..];
    let inputs = Matrix::from_rows(&kept[..t_len])?;
    let targets = Matrix::from_rows(&kept[horizon..horizon + t_len])?;
    TaskDataset::new(
        format!("lorenz{horizon}"),
        inputs,
        targets,
        SplitBounds::fractions(t_len, 1.0 / 3.0, 1.0 / 3.0)?,
        washout,
        deterministic(
            "lorenz96",
            json!({"t": t_len, "horizon": horizon, "dt": L96_DT, "forcing": L96_FORCING,
                   "transient": L96_TRANSIENT, "dim": L96_DIM}),
        ),
    )
}
