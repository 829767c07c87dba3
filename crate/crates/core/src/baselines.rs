//! Classical comparators: the leaky tanh ESN and the simple cycle reservoir
//! (SCR), plus deep stacks of either.

use serde::{Deserialize, Serialize};

use crate::error::{shape, Error, Result};
use crate::tensor_core::{Matrix, RngSpec, RngStream, StateSequence};
use crate::C64;

pub const BASELINE_FORMAT_VERSION: u32 = 1;

/// Dominant eigenvalue modulus of a square real matrix.
///
/// Power iteration from a random complex start. Every step also fits the
/// monic quadratic annihilating the Krylov triple `(v, Av, A²v)`; its larger
/// root is the estimate, which converges even when the dominant eigenvalues
/// are a complex-conjugate pair of equal modulus.
pub fn estimate_spectral_radius(
    matrix: &Matrix<f64>,
    max_iters: usize,
    tol: f64,
    rng: &mut RngStream,
) -> Result<f64> {
    let n = matrix.rows();
    if n != matrix.cols() {
        return Err(shape(format!("{}x{} matrix is not square", n, matrix.cols())));
    }
    if n == 0 {
        return Err(Error::InvalidWidth(0));
    }
    let apply = |v: &[C64]| -> Vec<C64> {
        (0..n)
            .map(|i| matrix.row(i).iter().zip(v).map(|(a, x)| x * a).sum())
            .collect()
    };
    let dot = |x: &[C64], y: &[C64]| -> C64 { x.iter().zip(y).map(|(a, b)| a.conj() * b).sum() };
    let norm = |x: &[C64]| dot(x, x).re.sqrt();

    let mut v: Vec<C64> = (0..n).map(|_| rng.complex_unit_box()).collect();
    let nv = norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);

    let mut last = f64::NAN;
    for _ in 0..max_iters {
        let w1 = apply(&v);
        let n1 = norm(&w1);
        if n1 == 0.0 {
            return Ok(0.0);
        }
        let w2 = apply(&w1);
        let (g00, g01, g10, g11) = (dot(&w1, &w1), dot(&w1, &v), dot(&v, &w1), dot(&v, &v));
        let det = g00 * g11 - g01 * g10;
        let estimate = if det.norm() <= 1e-12 * g00.norm() * g11.norm() {
            // Av ∥ v: the Rayleigh quotient is already an eigenvalue.
            dot(&v, &w1).norm()
        } else {
            let (r0, r1) = (-dot(&w1, &w2), -dot(&v, &w2));
            let a = (g11 * r0 - g01 * r1) / det;
            let b = (g00 * r1 - g10 * r0) / det;
            let disc = (a * a - 4.0 * b).sqrt();
            let z1 = (-a + disc) / 2.0;
            let z2 = (-a - disc) / 2.0;
            z1.norm().max(z2.norm())
        };
        v = w1.into_iter().map(|x| x / n1).collect();
        if (estimate - last).abs() <= tol * estimate.max(f64::MIN_POSITIVE) {
            return Ok(estimate);
        }
        last = estimate;
    }
    Err(Error::NoConvergence {
        iters: max_iters,
        last_estimate: last,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Esn,
    Scr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EsnHyperparams {
    pub n_h: usize,
    /// Target spectral radius (ESN) or ring scaling (SCR).
    pub rho: f64,
    pub omega_in: f64,
    pub omega_b: f64,
    pub tau: f64,
}

impl Default for EsnHyperparams {
    fn default() -> Self {
        Self {
            n_h: 128,
            rho: 0.9,
            omega_in: 1.0,
            omega_b: 0.1,
            tau: 1.0,
        }
    }
}

impl EsnHyperparams {
    pub fn validate(&self) -> Result<()> {
        if self.n_h == 0 {
            return Err(Error::InvalidConfig("n_h must be positive".into()));
        }
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return Err(Error::InvalidConfig(format!("rho must be non-negative, got {}", self.rho)));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::InvalidConfig(format!("tau must lie in (0, 1], got {}", self.tau)));
        }
        if !(self.omega_in >= 0.0 && self.omega_b >= 0.0) {
            return Err(Error::InvalidConfig("input and bias scalings must be non-negative".into()));
        }
        Ok(())
    }
}

fn uniform_matrix(rows: usize, cols: usize, scale: f64, rng: &mut RngStream) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| rng.symmetric(scale))
}

fn check_inputs(inputs: &Matrix<f64>, n_in: usize, h0: Option<&[f64]>, n_h: usize) -> Result<()> {
    if inputs.cols() != n_in {
        return Err(shape(format!("layer expects {n_in} inputs, got {}", inputs.cols())));
    }
    if let Some(h0) = h0 {
        if h0.len() != n_h {
            return Err(shape(format!("initial state has width {}, expected {n_h}", h0.len())));
        }
    }
    Ok(())
}

fn to_states(rows: usize, cols: usize, data: Vec<f64>) -> Result<StateSequence> {
    let data = data.into_iter().map(|v| C64::new(v, 0.0)).collect();
    Ok(StateSequence::new(Matrix::from_vec(rows, cols, data)?))
}

/// Leaky ESN layer `h_t = (1-τ) h_{t-1} + τ tanh(W_h h_{t-1} + W_in x_t + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EsnLayer {
    pub w_h: Matrix<f64>,
    pub w_in: Matrix<f64>,
    pub bias: Vec<f64>,
    pub tau: f64,
}

impl EsnLayer {
    /// Draws `W_h` (uniform on `[-1, 1]`), `W_in`, the bias and the power
    /// iteration start, then rescales `W_h` to spectral radius `hp.rho`.
    pub fn new(hp: &EsnHyperparams, n_in: usize, rng: &mut RngStream) -> Result<Self> {
        hp.validate()?;
        let mut w_h = uniform_matrix(hp.n_h, hp.n_h, 1.0, rng);
        let w_in = uniform_matrix(hp.n_h, n_in, hp.omega_in, rng);
        let bias = (0..hp.n_h).map(|_| rng.symmetric(hp.omega_b)).collect();
        let radius = estimate_spectral_radius(&w_h, 20_000, 1e-9, rng)?;
        if radius > 0.0 {
            let s = hp.rho / radius;
            w_h.as_mut_slice().iter_mut().for_each(|v| *v *= s);
        }
        Ok(Self { w_h, w_in, bias, tau: hp.tau })
    }

    pub fn n_h(&self) -> usize {
        self.w_h.rows()
    }

    pub fn param_count(&self) -> usize {
        self.n_h() * self.n_h() + self.w_in.rows() * self.w_in.cols() + self.bias.len()
    }

    pub fn forward(&self, inputs: &Matrix<f64>, h0: Option<&[f64]>) -> Result<StateSequence> {
        let n = self.n_h();
        check_inputs(inputs, self.w_in.cols(), h0, n)?;
        let mut h = h0.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
        let mut out = Vec::with_capacity(inputs.rows() * n);
        let mut next = vec![0.0; n];
        for t in 0..inputs.rows() {
            let x = inputs.row(t);
            for (i, nx) in next.iter_mut().enumerate() {
                let rec: f64 = self.w_h.row(i).iter().zip(&h).map(|(a, b)| a * b).sum();
                let inp: f64 = self.w_in.row(i).iter().zip(x).map(|(a, b)| a * b).sum();
                *nx = (1.0 - self.tau) * h[i] + self.tau * (rec + inp + self.bias[i]).tanh();
            }
            std::mem::swap(&mut h, &mut next);
            out.extend_from_slice(&h);
        }
        to_states(inputs.rows(), n, out)
    }
}

/// `shift(v)_i = v_{(i-1) mod N}`.
pub fn ring_shift(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    (0..n).map(|i| v[(i + n - 1) % n]).collect()
}

/// Simple cycle reservoir: the transition is a fixed one-step ring shift
/// scaled by `rho`, so only input weights and bias are stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScrLayer {
    pub rho: f64,
    pub w_in: Matrix<f64>,
    pub bias: Vec<f64>,
    pub tau: f64,
}

impl ScrLayer {
    pub fn new(hp: &EsnHyperparams, n_in: usize, rng: &mut RngStream) -> Result<Self> {
        hp.validate()?;
        let w_in = uniform_matrix(hp.n_h, n_in, hp.omega_in, rng);
        let bias = (0..hp.n_h).map(|_| rng.symmetric(hp.omega_b)).collect();
        Ok(Self {
            rho: hp.rho,
            w_in,
            bias,
            tau: hp.tau,
        })
    }

    pub fn n_h(&self) -> usize {
        self.w_in.rows()
    }

    pub fn param_count(&self) -> usize {
        self.w_in.rows() * self.w_in.cols() + self.bias.len()
    }

    /// Dense transition equivalent to `rho · shift`.
    pub fn ring_matrix(&self) -> Matrix<f64> {
        let n = self.n_h();
        Matrix::from_fn(n, n, |i, j| if j == (i + n - 1) % n { self.rho } else { 0.0 })
    }

    pub fn forward(&self, inputs: &Matrix<f64>, h0: Option<&[f64]>) -> Result<StateSequence> {
        let n = self.n_h();
        check_inputs(inputs, self.w_in.cols(), h0, n)?;
        let mut h = h0.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
        let mut out = Vec::with_capacity(inputs.rows() * n);
        for t in 0..inputs.rows() {
            let x = inputs.row(t);
            let shifted = ring_shift(&h);
            for i in 0..n {
                let inp: f64 = self.w_in.row(i).iter().zip(x).map(|(a, b)| a * b).sum();
                h[i] = (1.0 - self.tau) * h[i] + self.tau * (self.rho * shifted[i] + inp + self.bias[i]).tanh();
            }
            out.extend_from_slice(&h);
        }
        to_states(inputs.rows(), n, out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineLayer {
    Esn(EsnLayer),
    Scr(ScrLayer),
}

impl BaselineLayer {
    pub fn n_h(&self) -> usize {
        match self {
            BaselineLayer::Esn(l) => l.n_h(),
            BaselineLayer::Scr(l) => l.n_h(),
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            BaselineLayer::Esn(l) => l.param_count(),
            BaselineLayer::Scr(l) => l.param_count(),
        }
    }

    pub fn forward(&self, inputs: &Matrix<f64>, h0: Option<&[f64]>) -> Result<StateSequence> {
        match self {
            BaselineLayer::Esn(l) => l.forward(inputs, h0),
            BaselineLayer::Scr(l) => l.forward(inputs, h0),
        }
    }
}

/// Deep ESN or SCR: layer ℓ reads the states of layer ℓ-1; the readout sees
/// the last layer or, with `concat`, every layer side by side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepEsn {
    pub kind: BaselineKind,
    pub hyperparams: Vec<EsnHyperparams>,
    pub layers: Vec<BaselineLayer>,
    pub concat: bool,
    pub rng: RngSpec,
}

impl DeepEsn {
    pub fn new(kind: BaselineKind, hyperparams: Vec<EsnHyperparams>, n_in: usize, concat: bool, rng: RngSpec) -> Result<Self> {
        if hyperparams.is_empty() {
            return Err(Error::InvalidConfig("a model needs at least one layer".into()));
        }
        let mut stream = rng.stream(0);
        let mut layers = Vec::with_capacity(hyperparams.len());
        let mut width = n_in;
        for hp in &hyperparams {
            let layer = match kind {
                BaselineKind::Esn => BaselineLayer::Esn(EsnLayer::new(hp, width, &mut stream)?),
                BaselineKind::Scr => BaselineLayer::Scr(ScrLayer::new(hp, width, &mut stream)?),
            };
            width = layer.n_h();
            layers.push(layer);
        }
        Ok(Self {
            kind,
            hyperparams,
            layers,
            concat,
            rng,
        })
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(BaselineLayer::param_count).sum()
    }

    pub fn feature_width(&self) -> usize {
        if self.concat {
            self.layers.iter().map(BaselineLayer::n_h).sum()
        } else {
            self.layers.last().map_or(0, BaselineLayer::n_h)
        }
    }

    /// Real-valued per-layer states and the readout feature matrix.
    pub fn forward(&self, inputs: &Matrix<f64>) -> Result<(Vec<Matrix<f64>>, Matrix<f64>)> {
        let mut per_layer: Vec<Matrix<f64>> = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let input = if l == 0 { inputs } else { &per_layer[l - 1] };
            let states = layer.forward(input, None)?;
            let m = states.as_matrix();
            let real = Matrix::from_vec(m.rows(), m.cols(), m.as_slice().iter().map(|z| z.re).collect())?;
            per_layer.push(real);
        }
        let features = if self.concat && per_layer.len() > 1 {
            Matrix::hconcat(&per_layer.iter().collect::<Vec<_>>())?
        } else {
            per_layer.last().cloned().expect("at least one layer")
        };
        Ok((per_layer, features))
    }

    pub fn to_json(&self) -> Result<String> {
        let record = BaselineRecord {
            format_version: BASELINE_FORMAT_VERSION,
            library_version: crate::VERSION.to_string(),
            model: self.clone(),
        };
        Ok(serde_json::to_string(&record)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let record: BaselineRecord = serde_json::from_str(text)?;
        if record.format_version != BASELINE_FORMAT_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported baseline format version {}",
                record.format_version
            )));
        }
        Ok(record.model)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineRecord {
    pub format_version: u32,
    pub library_version: String,
    pub model: DeepEsn,
}
