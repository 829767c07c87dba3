//! Executable checks of the stability and equivalence results.
//!
//! * Echo state property: a linear diagonal layer contracts the distance
//!   between two trajectories by at least `max|λ̄|` per step, and a diagonal
//!   entry of modulus above one makes it diverge at exactly that rate.
//! * Diagonal equivalence: a dense linear reservoir `W_h = V Λ V⁻¹` and the
//!   diagonal reservoir `Λ` with input map `V⁻¹ W_in` produce states related
//!   by `h_t = V h̃_t`. The pair is built constructively (planted `V` and
//!   `Λ`), so no general eigensolver is involved.

use serde::{Deserialize, Serialize};

use crate::error::{shape, Error, Result};
use crate::reservoir::ParalEsnLayer;
use crate::tensor_core::{scan_sequential, AffineSequence, Matrix, RngStream};
use crate::C64;

/// Pivots below this magnitude abort the inversion.
const PIVOT_FLOOR: f64 = 1e-12;
/// Conditioning above this makes [`build_equivalence_pair`] resample `V`.
pub const MAX_CONDITION: f64 = 1e3;
const MAX_REJECTIONS: usize = 20;

/// Inverse by Gauss-Jordan elimination with partial pivoting.
pub fn invert_complex(m: &Matrix<C64>) -> Result<Matrix<C64>> {
    let n = m.rows();
    if n != m.cols() {
        return Err(shape(format!("{}x{} matrix is not square", n, m.cols())));
    }
    let mut a = m.clone();
    let mut inv = Matrix::identity_c(n);
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| a.get(i, col).norm().total_cmp(&a.get(j, col).norm()))
            .expect("non-empty range");
        let pivot = a.get(pivot_row, col);
        if pivot.norm() < PIVOT_FLOOR {
            return Err(Error::Singular(format!("pivot {:.3e} in column {col}", pivot.norm())));
        }
        if pivot_row != col {
            for j in 0..n {
                let (x, y) = (a.get(col, j), a.get(pivot_row, j));
                a.set(col, j, y);
                a.set(pivot_row, j, x);
                let (x, y) = (inv.get(col, j), inv.get(pivot_row, j));
                inv.set(col, j, y);
                inv.set(pivot_row, j, x);
            }
        }
        let p_inv = C64::new(1.0, 0.0) / pivot;
        for j in 0..n {
            a.set(col, j, a.get(col, j) * p_inv);
            inv.set(col, j, inv.get(col, j) * p_inv);
        }
        for i in 0..n {
            if i == col {
                continue;
            }
            let f = a.get(i, col);
            if f.norm() == 0.0 {
                continue;
            }
            for j in 0..n {
                a.set(i, j, a.get(i, j) - f * a.get(col, j));
                inv.set(i, j, inv.get(i, j) - f * inv.get(col, j));
            }
        }
    }
    Ok(inv)
}

/// Real inverse through [`invert_complex`].
pub fn invert_real(m: &Matrix<f64>) -> Result<Matrix<f64>> {
    let c = Matrix::from_fn(m.rows(), m.cols(), |i, j| C64::new(m.get(i, j), 0.0));
    let inv = invert_complex(&c)?;
    Ok(Matrix::from_fn(m.rows(), m.cols(), |i, j| inv.get(i, j).re))
}

fn l2(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Distances between two trajectories of the same linear layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContractionTrace {
    /// `‖h_t - h'_t‖₂` for `t = 0..=T`.
    pub distances: Vec<f64>,
    /// Rounding allowance per step: a few ulps of the state magnitudes.
    pub slack: Vec<f64>,
    pub max_modulus: f64,
    /// Least-squares slope of `ln d_t` over the steps where `d_t` is well
    /// above the rounding floor.
    pub log_slope: f64,
}

impl ContractionTrace {
    /// Steps where `d_t > max|λ̄| · d_{t-1}` beyond the rounding allowance.
    pub fn violations(&self) -> usize {
        self.distances
            .windows(2)
            .zip(&self.slack[1..])
            .filter(|(d, s)| d[1] > self.max_modulus * d[0] + **s)
            .count()
    }

    /// Steps where `d_t ≤ d_{t-1}`.
    pub fn non_increasing_steps(&self) -> usize {
        self.distances.windows(2).filter(|d| d[1] <= d[0]).count()
    }
}

/// Runs the layer's linear recurrence from `h0` and `h0_prime` under the same
/// inputs and records the distance at every step.
pub fn contraction_trace(
    layer: &ParalEsnLayer,
    inputs: &Matrix<f64>,
    h0: &[C64],
    h0_prime: &[C64],
) -> Result<ContractionTrace> {
    let a = layer.states(inputs, Some(h0), None)?;
    let b = layer.states(inputs, Some(h0_prime), None)?;
    let diff = |x: &[C64], y: &[C64]| -> f64 {
        x.iter().zip(y).map(|(p, q)| (p - q).norm_sqr()).sum::<f64>().sqrt()
    };
    let n = layer.n_h() as f64;
    let ulps = |x: &[C64], y: &[C64]| 4.0 * f64::EPSILON * n.sqrt() * (l2(x) + l2(y));
    let mut distances = vec![diff(h0, h0_prime)];
    let mut slack = vec![0.0];
    for t in 0..a.len() {
        distances.push(diff(a.row(t), b.row(t)));
        slack.push(ulps(a.row(t), b.row(t)));
    }
    let pts: Vec<(f64, f64)> = distances
        .iter()
        .zip(&slack)
        .enumerate()
        .take_while(|(_, (d, s))| **d > 1e6 * **s && **d > 0.0)
        .map(|(t, (d, _))| (t as f64, d.ln()))
        .collect();
    let log_slope = if pts.len() >= 2 {
        let m = pts.len() as f64;
        let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
        let (mx, my) = (sx / m, sy / m);
        let num: f64 = pts.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
        let den: f64 = pts.iter().map(|(x, _)| (x - mx) * (x - mx)).sum();
        num / den
    } else {
        f64::NAN
    };
    Ok(ContractionTrace {
        distances,
        slack,
        max_modulus: layer.spectral_radius(),
        log_slope,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EspReport {
    pub max_modulus: f64,
    pub trials: usize,
    pub steps: usize,
    pub violations: usize,
    /// Largest observed `d_t / d_{t-1}` while `d` is above the rounding floor.
    pub worst_ratio: f64,
    pub traces: Vec<ContractionTrace>,
}

impl EspReport {
    /// Contraction at rate `max|λ̄| < 1` with no violating step.
    pub fn holds(&self) -> bool {
        self.max_modulus < 1.0 && self.violations == 0
    }

    /// Some trial ended farther apart than it started.
    pub fn diverged(&self) -> bool {
        self.traces
            .iter()
            .any(|t| t.distances.last().copied().unwrap_or(0.0) > t.distances[0])
    }
}

/// `trials` pairs of random initial states (entries uniform in the unit box)
/// driven by the same random inputs (uniform on `[-1, 1]`).
pub fn esp_contraction_test(
    layer: &ParalEsnLayer,
    steps: usize,
    trials: usize,
    rng: &mut RngStream,
) -> Result<EspReport> {
    let n = layer.n_h();
    let mut traces = Vec::with_capacity(trials);
    for _ in 0..trials {
        let width = layer.n_in();
        let inputs = Matrix::from_fn(steps, width, |_, _| rng.symmetric(1.0));
        let h0: Vec<C64> = (0..n).map(|_| rng.complex_unit_box()).collect();
        let h1: Vec<C64> = (0..n).map(|_| rng.complex_unit_box()).collect();
        traces.push(contraction_trace(layer, &inputs, &h0, &h1)?);
    }
    let violations = traces.iter().map(ContractionTrace::violations).sum();
    let worst_ratio = traces
        .iter()
        .flat_map(|tr| {
            tr.distances
                .windows(2)
                .zip(&tr.slack[1..])
                .filter(|(d, s)| d[0] > 1e6 * **s)
                .map(|(d, _)| d[1] / d[0])
                .collect::<Vec<_>>()
        })
        .fold(0.0, f64::max);
    Ok(EspReport {
        max_modulus: layer.spectral_radius(),
        trials,
        steps,
        violations,
        worst_ratio,
        traces,
    })
}

/// Dense linear reservoir and its planted diagonalization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EquivalencePair {
    /// `W_h = V Λ V⁻¹`.
    pub w_h: Matrix<C64>,
    pub w_in: Matrix<C64>,
    pub eigenvalues: Vec<C64>,
    pub v: Matrix<C64>,
    pub v_inv: Matrix<C64>,
    /// `V⁻¹ W_in`.
    pub w_in_diag: Matrix<C64>,
    /// `‖V‖₁ ‖V⁻¹‖₁`.
    pub condition: f64,
}

impl EquivalencePair {
    /// Assembles a pair from an explicit basis. Fails if `V` is singular.
    pub fn from_parts(eigenvalues: Vec<C64>, v: Matrix<C64>, w_in: Matrix<C64>) -> Result<Self> {
        let n = eigenvalues.len();
        if v.rows() != n || v.cols() != n || w_in.rows() != n {
            return Err(shape("basis, eigenvalues and input map disagree on width"));
        }
        let v_inv = invert_complex(&v)?;
        let lambda = Matrix::from_fn(n, n, |i, j| if i == j { eigenvalues[i] } else { C64::new(0.0, 0.0) });
        let w_h = v.matmul_c(&lambda)?.matmul_c(&v_inv)?;
        let w_in_diag = v_inv.matmul_c(&w_in)?;
        let condition = v.norm_1() * v_inv.norm_1();
        Ok(Self {
            w_h,
            w_in,
            eigenvalues,
            v,
            v_inv,
            w_in_diag,
            condition,
        })
    }

    pub fn n_h(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `‖V Λ V⁻¹ - W_h‖_F / ‖W_h‖_F`, recomputed by direct multiplication.
    pub fn reconstruction_error(&self) -> f64 {
        let n = self.n_h();
        let mut recon = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let mut acc = C64::new(0.0, 0.0);
                for k in 0..n {
                    acc += self.v.get(i, k) * self.eigenvalues[k] * self.v_inv.get(k, j);
                }
                recon.set(i, j, acc - self.w_h.get(i, j));
            }
        }
        recon.frobenius_norm_c() / self.w_h.frobenius_norm_c().max(f64::MIN_POSITIVE)
    }
}

/// Plants eigenvalues with modulus uniform in `[0, 0.95)` and uniform phase,
/// and a random complex basis `V` (entries in the unit box), resampling `V`
/// until its conditioning is at most [`MAX_CONDITION`].
pub fn build_equivalence_pair(n_h: usize, n_in: usize, rng: &mut RngStream) -> Result<EquivalencePair> {
    if n_h == 0 || n_in == 0 {
        return Err(Error::InvalidWidth(0));
    }
    let eigenvalues: Vec<C64> = (0..n_h)
        .map(|_| C64::from_polar(rng.uniform(0.0, 0.95), rng.uniform(0.0, std::f64::consts::TAU)))
        .collect();
    let w_in = Matrix::from_fn(n_h, n_in, |_, _| rng.complex_unit_box());
    for _ in 0..MAX_REJECTIONS {
        let v = Matrix::from_fn(n_h, n_h, |_, _| rng.complex_unit_box());
        match EquivalencePair::from_parts(eigenvalues.clone(), v, w_in.clone()) {
            Ok(pair) if pair.condition <= MAX_CONDITION => return Ok(pair),
            Ok(_) | Err(Error::Singular(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::Generation(format!(
        "no basis with conditioning ≤ {MAX_CONDITION} after {MAX_REJECTIONS} draws"
    )))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EquivalenceReport {
    /// Largest `‖V h̃_t - h_t‖ / ‖h_t‖` over the run.
    pub max_deviation: f64,
    /// Zero-based step where it occurred.
    pub worst_step: usize,
    pub tolerance: f64,
    pub condition: f64,
}

/// Runs the dense recurrence `h_t = W_h h_{t-1} + W_in x_t` and the diagonal
/// recurrence `h̃_t = Λ h̃_{t-1} + V⁻¹ W_in x_t` (through the affine scan) from
/// zero, and checks `V h̃_t = h_t` to `1e-8 · cond(V)` relative.
pub fn verify_equivalence(pair: &EquivalencePair, inputs: &Matrix<f64>) -> Result<EquivalenceReport> {
    let n = pair.n_h();
    if inputs.cols() != pair.w_in.cols() {
        return Err(shape(format!(
            "pair expects {} inputs, got {}",
            pair.w_in.cols(),
            inputs.cols()
        )));
    }
    let steps = inputs.rows();
    let zero = C64::new(0.0, 0.0);

    let mut drives = Vec::with_capacity(steps * n);
    for t in 0..steps {
        let x = inputs.row(t);
        for i in 0..n {
            drives.push(pair.w_in_diag.row(i).iter().zip(x).map(|(w, v)| w * v).sum::<C64>());
        }
    }
    let diag = scan_sequential(&AffineSequence::shared_gain(pair.eigenvalues.clone(), drives)?, &vec![zero; n])?;

    let tolerance = 1e-8 * pair.condition;
    let mut h = vec![zero; n];
    let mut max_deviation = 0.0f64;
    let mut worst_step = 0;
    for t in 0..steps {
        let x = inputs.row(t);
        h = (0..n)
            .map(|i| {
                let rec: C64 = pair.w_h.row(i).iter().zip(&h).map(|(a, b)| a * b).sum();
                let inp: C64 = pair.w_in.row(i).iter().zip(x).map(|(w, v)| w * v).sum();
                rec + inp
            })
            .collect();
        let mapped = pair.v.matvec_c(diag.row(t))?;
        let err: Vec<C64> = mapped.iter().zip(&h).map(|(a, b)| a - b).collect();
        let scale = l2(&h);
        let dev = if scale == 0.0 { l2(&err) } else { l2(&err) / scale };
        if dev > max_deviation {
            max_deviation = dev;
            worst_step = t;
        }
    }
    let report = EquivalenceReport {
        max_deviation,
        worst_step,
        tolerance,
        condition: pair.condition,
    };
    if max_deviation > tolerance {
        return Err(Error::Verification(format!(
            "mapped diagonal state deviates by {max_deviation:.3e} (> {tolerance:.3e}) at step {worst_step}"
        )));
    }
    Ok(report)
}
