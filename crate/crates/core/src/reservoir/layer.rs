use std::f64::consts::TAU;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{shape, Error, Result};
use crate::tensor_core::{
    sample_uniform_complex, scan_parallel, scan_sequential, AffineSequence, Matrix, RngStream,
    StateSequence,
};
use crate::C64;

/// Largest representable mixer output magnitude. `tanh` rounds to exactly
/// `±1` for arguments beyond ~19; outputs are kept strictly inside `(-1, 1)`.
const MIX_BOUND: f64 = 1.0 - 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputKind {
    Dense,
    Ring,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerHyperparams {
    pub n_h: usize,
    pub rho_min: f64,
    pub rho_max: f64,
    pub theta_min: f64,
    pub theta_max: f64,
    pub tau: f64,
    pub omega_b: f64,
    pub omega_mix: f64,
    pub omega_mixb: f64,
    pub kernel_size: usize,
    pub input: InputKind,
}

impl Default for LayerHyperparams {
    fn default() -> Self {
        Self {
            n_h: 128,
            rho_min: 0.0,
            rho_max: 0.9,
            theta_min: 0.0,
            theta_max: TAU,
            tau: 1.0,
            omega_b: 0.1,
            omega_mix: 1.0,
            omega_mixb: 0.1,
            kernel_size: 3,
            input: InputKind::Dense,
        }
    }
}

impl LayerHyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_h == 0 {
            return bad("n_h must be positive".into());
        }
        if !(0.0..1.0).contains(&self.rho_min) || !(0.0..1.0).contains(&self.rho_max) {
            return bad(format!(
                "rho_min and rho_max must lie in [0, 1), got {} and {}",
                self.rho_min, self.rho_max
            ));
        }
        if self.rho_min > self.rho_max {
            return bad(format!("rho_min {} exceeds rho_max {}", self.rho_min, self.rho_max));
        }
        let phase = 0.0..=TAU;
        if !phase.contains(&self.theta_min) || !phase.contains(&self.theta_max) {
            return bad(format!(
                "phases must lie in [0, 2π], got {} and {}",
                self.theta_min, self.theta_max
            ));
        }
        if self.theta_min > self.theta_max {
            return bad(format!(
                "theta_min {} exceeds theta_max {}",
                self.theta_min, self.theta_max
            ));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad(format!("tau must lie in (0, 1], got {}", self.tau));
        }
        for (name, v) in [
            ("omega_b", self.omega_b),
            ("omega_mix", self.omega_mix),
            ("omega_mixb", self.omega_mixb),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be a finite non-negative number, got {v}"));
            }
        }
        if self.kernel_size.is_multiple_of(2) {
            return bad(format!("kernel size must be odd, got {}", self.kernel_size));
        }
        if self.kernel_size > self.n_h {
            return bad(format!(
                "kernel size {} exceeds hidden width {}",
                self.kernel_size, self.n_h
            ));
        }
        Ok(())
    }
}

/// Input map of a layer. `Ring` stores one weight per unit and reads input
/// `(i - 1) mod n_in` into unit `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputWeights {
    Dense(Matrix<C64>),
    Ring(Vec<C64>),
}

impl InputWeights {
    pub fn param_count(&self) -> usize {
        match self {
            InputWeights::Dense(m) => m.rows() * m.cols(),
            InputWeights::Ring(w) => w.len(),
        }
    }

    /// `W_in x` for one real input vector.
    pub fn apply(&self, x: &[f64], out: &mut [C64]) {
        match self {
            InputWeights::Dense(m) => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = m.row(i).iter().zip(x).map(|(w, v)| w * v).sum();
                }
            }
            InputWeights::Ring(w) => {
                let n = x.len();
                for (i, (o, wi)) in out.iter_mut().zip(w).enumerate() {
                    *o = wi * x[(i + n - 1) % n];
                }
            }
        }
    }
}

/// Frozen parameters of one diagonal-recurrence layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParalEsnLayer {
    n_in: usize,
    tau: f64,
    lambda_bar: Vec<C64>,
    input_weights: InputWeights,
    bias: Vec<C64>,
    mix_kernel: Vec<C64>,
    mix_bias: C64,
}

/// Effective diagonal `λ̄ = (1 - τ) + τ ρ e^{iθ}`, one unit at a time
/// (radius draw, then phase draw).
pub fn init_diag_transition(hp: &LayerHyperparams, rng: &mut RngStream) -> Result<Vec<C64>> {
    hp.validate()?;
    Ok((0..hp.n_h)
        .map(|_| {
            let rho = rng.uniform(hp.rho_min, hp.rho_max);
            let theta = rng.uniform(hp.theta_min, hp.theta_max);
            C64::new(1.0 - hp.tau, 0.0) + hp.tau * C64::from_polar(rho, theta)
        })
        .collect())
}

fn row_scale(lambda: C64) -> Result<f64> {
    let r2 = lambda.norm_sqr();
    if r2 >= 1.0 {
        return Err(Error::Domain(format!(
            "|λ̄| = {} leaves no room for input scaling",
            r2.sqrt()
        )));
    }
    Ok((1.0 - r2).sqrt())
}

/// Uniform complex input weights with row `i` shrunk by `√(1 - |λ̄_i|²)`.
pub fn init_input_weights(
    hp: &LayerHyperparams,
    lambda_bar: &[C64],
    n_in: usize,
    rng: &mut RngStream,
) -> Result<InputWeights> {
    let scales = lambda_bar.iter().map(|&l| row_scale(l)).collect::<Result<Vec<_>>>()?;
    match hp.input {
        InputKind::Dense => {
            let mut w = sample_uniform_complex(lambda_bar.len(), n_in, rng)?;
            for (i, s) in scales.iter().enumerate() {
                for v in w.row_mut(i) {
                    *v *= s;
                }
            }
            Ok(InputWeights::Dense(w))
        }
        InputKind::Ring => {
            let w = sample_uniform_complex(1, lambda_bar.len(), rng)?;
            Ok(InputWeights::Ring(
                w.as_slice().iter().zip(&scales).map(|(v, s)| v * s).collect(),
            ))
        }
    }
}

impl ParalEsnLayer {
    /// Draws, in order: the diagonal, the input weights, the bias, the mixing
    /// kernel and the mixing bias.
    pub fn new(hp: &LayerHyperparams, n_in: usize, rng: &mut RngStream) -> Result<Self> {
        if n_in == 0 {
            return Err(Error::InvalidConfig("layer input width must be positive".into()));
        }
        let lambda_bar = init_diag_transition(hp, rng)?;
        let input_weights = init_input_weights(hp, &lambda_bar, n_in, rng)?;
        let bias = (0..hp.n_h).map(|_| rng.complex_unit_box() * hp.omega_b).collect();
        let mix_kernel = (0..hp.kernel_size)
            .map(|_| rng.complex_unit_box() * hp.omega_mix)
            .collect();
        let mix_bias = rng.complex_unit_box() * hp.omega_mixb;
        Ok(Self {
            n_in,
            tau: hp.tau,
            lambda_bar,
            input_weights,
            bias,
            mix_kernel,
            mix_bias,
        })
    }

    /// Layer from explicit parameters. No stability requirement is imposed on
    /// `lambda_bar`, which makes this the entry point for divergence probes.
    pub fn from_parts(
        tau: f64,
        lambda_bar: Vec<C64>,
        input_weights: InputWeights,
        bias: Vec<C64>,
        mix_kernel: Vec<C64>,
        mix_bias: C64,
    ) -> Result<Self> {
        let n_h = lambda_bar.len();
        if n_h == 0 {
            return Err(Error::InvalidWidth(0));
        }
        let n_in = match &input_weights {
            InputWeights::Dense(m) => {
                if m.rows() != n_h {
                    return Err(shape(format!("dense input has {} rows for {n_h} units", m.rows())));
                }
                m.cols()
            }
            InputWeights::Ring(w) => {
                if w.len() != n_h {
                    return Err(shape(format!("ring input has {} weights for {n_h} units", w.len())));
                }
                n_h
            }
        };
        if bias.len() != n_h {
            return Err(shape(format!("bias has {} entries for {n_h} units", bias.len())));
        }
        if mix_kernel.len().is_multiple_of(2) || mix_kernel.len() > n_h {
            return Err(Error::InvalidConfig(format!(
                "mixing kernel of size {} is not odd or exceeds {n_h}",
                mix_kernel.len()
            )));
        }
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::InvalidConfig(format!("tau must lie in (0, 1], got {tau}")));
        }
        Ok(Self {
            n_in,
            tau,
            lambda_bar,
            input_weights,
            bias,
            mix_kernel,
            mix_bias,
        })
    }

    pub fn n_h(&self) -> usize {
        self.lambda_bar.len()
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn lambda_bar(&self) -> &[C64] {
        &self.lambda_bar
    }

    pub fn input_weights(&self) -> &InputWeights {
        &self.input_weights
    }

    pub fn bias(&self) -> &[C64] {
        &self.bias
    }

    pub fn mix_kernel(&self) -> &[C64] {
        &self.mix_kernel
    }

    pub fn mix_bias(&self) -> C64 {
        self.mix_bias
    }

    /// Largest `|λ̄_i|`.
    pub fn spectral_radius(&self) -> f64 {
        self.lambda_bar.iter().map(|l| l.norm()).fold(0.0, f64::max)
    }

    /// Diagonal + input weights + bias + kernel + mixing bias.
    pub fn param_count(&self) -> usize {
        self.n_h() + self.input_weights.param_count() + self.n_h() + self.mix_kernel.len() + 1
    }

    /// Complex states of the linear recurrence, before mixing.
    pub fn states(
        &self,
        inputs: &Matrix<f64>,
        h0: Option<&[C64]>,
        chunk_size: Option<usize>,
    ) -> Result<StateSequence> {
        let seq = build_drive(self, inputs, chunk_size.is_some())?;
        let zero = vec![C64::new(0.0, 0.0); self.n_h()];
        let h0 = h0.unwrap_or(&zero);
        match chunk_size {
            None => scan_sequential(&seq, h0),
            Some(c) => scan_parallel(&seq, h0, c),
        }
    }
}

/// Scan elements of one layer: constant gain `λ̄`, drive `τ (W_in x_t + b)`.
pub fn layer_drive(layer: &ParalEsnLayer, inputs: &Matrix<f64>) -> Result<AffineSequence> {
    build_drive(layer, inputs, false)
}

fn check_inputs(layer: &ParalEsnLayer, inputs: &Matrix<f64>) -> Result<()> {
    let ring = matches!(layer.input_weights, InputWeights::Ring(_));
    if !ring && inputs.cols() != layer.n_in {
        return Err(shape(format!(
            "layer expects {} inputs, got {}",
            layer.n_in,
            inputs.cols()
        )));
    }
    if ring && inputs.cols() == 0 {
        return Err(shape("ring input needs at least one feature"));
    }
    Ok(())
}

fn build_drive(layer: &ParalEsnLayer, inputs: &Matrix<f64>, parallel: bool) -> Result<AffineSequence> {
    check_inputs(layer, inputs)?;
    let n_h = layer.n_h();
    let mut drives = vec![C64::new(0.0, 0.0); inputs.rows() * n_h];
    let fill = |(t, row): (usize, &mut [C64])| {
        layer.input_weights.apply(inputs.row(t), row);
        for (d, b) in row.iter_mut().zip(&layer.bias) {
            *d = layer.tau * (*d + b);
        }
    };
    if parallel {
        drives.par_chunks_mut(n_h).enumerate().for_each(fill);
    } else {
        drives.chunks_mut(n_h).enumerate().for_each(fill);
    }
    AffineSequence::shared_gain(layer.lambda_bar.clone(), drives)
}

/// Mixer: per time step, cross-correlate the hidden vector with the kernel
/// (kernel centre on the output index, zero padding), add the bias, take the
/// real part and squash with `tanh`.
pub fn mix(layer: &ParalEsnLayer, states: &StateSequence) -> Result<Matrix<f64>> {
    mix_rows(layer, states, false)
}

/// [`mix`], optionally spread over the rayon pool (identical results).
pub(crate) fn mix_rows(layer: &ParalEsnLayer, states: &StateSequence, parallel: bool) -> Result<Matrix<f64>> {
    let n_h = layer.n_h();
    if states.width() != n_h {
        return Err(shape(format!(
            "states have width {}, layer has {n_h} units",
            states.width()
        )));
    }
    check_kernel(layer)?;
    let mut out = Matrix::zeros(states.len(), n_h);
    let fill = |(t, z): (usize, &mut [f64])| mix_row(layer, states.row(t), z);
    if parallel {
        out.as_mut_slice().par_chunks_mut(n_h).enumerate().for_each(fill);
    } else {
        out.as_mut_slice().chunks_mut(n_h).enumerate().for_each(fill);
    }
    Ok(out)
}

fn check_kernel(layer: &ParalEsnLayer) -> Result<()> {
    let (k, n_h) = (layer.mix_kernel.len(), layer.n_h());
    if k > n_h || k.is_multiple_of(2) {
        return Err(Error::InvalidConfig(format!(
            "kernel size {k} is incompatible with {n_h} units"
        )));
    }
    Ok(())
}

fn mix_row(layer: &ParalEsnLayer, h: &[C64], z: &mut [f64]) {
    let n_h = h.len();
    let half = (layer.mix_kernel.len() / 2) as isize;
    for (i, zi) in z.iter_mut().enumerate() {
        let mut acc = layer.mix_bias;
        for (j, w) in layer.mix_kernel.iter().enumerate() {
            let src = i as isize + j as isize - half;
            if (0..n_h as isize).contains(&src) {
                acc += w * h[src as usize];
            }
        }
        *zi = acc.re.tanh().clamp(-MIX_BOUND, MIX_BOUND);
    }
}

/// Drive, recurrence and mixer in a single pass over time. Bit-identical to
/// `mix(states(inputs, h0, None))` but keeps only one hidden vector alive.
pub(crate) fn forward_fused(layer: &ParalEsnLayer, inputs: &Matrix<f64>, h0: Option<&[C64]>) -> Result<Matrix<f64>> {
    check_inputs(layer, inputs)?;
    check_kernel(layer)?;
    let n_h = layer.n_h();
    let mut h = match h0 {
        Some(h0) if h0.len() != n_h => {
            return Err(shape(format!(
                "initial state has width {}, sequence has width {n_h}",
                h0.len()
            )))
        }
        Some(h0) => h0.to_vec(),
        None => vec![C64::new(0.0, 0.0); n_h],
    };
    let mut drive = vec![C64::new(0.0, 0.0); n_h];
    let mut out = Matrix::zeros(inputs.rows(), n_h);
    for t in 0..inputs.rows() {
        layer.input_weights.apply(inputs.row(t), &mut drive);
        for (((hi, d), b), a) in h.iter_mut().zip(&drive).zip(&layer.bias).zip(&layer.lambda_bar) {
            *hi = a * *hi + layer.tau * (d + b);
        }
        mix_row(layer, &h, out.row_mut(t));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor_core::RngSpec;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn hp(n_h: usize) -> LayerHyperparams {
        LayerHyperparams {
            n_h,
            ..LayerHyperparams::default()
        }
    }

    fn layer_with(lambda: Vec<C64>, weights: InputWeights, kernel: Vec<C64>, mix_bias: C64) -> ParalEsnLayer {
        let n = lambda.len();
        ParalEsnLayer::from_parts(1.0, lambda, weights, vec![c(0.0); n], kernel, mix_bias).unwrap()
    }

    #[test]
    fn leak_free_diagonal_is_raw_eigenvalue() {
        let h = LayerHyperparams { tau: 1.0, ..hp(16) };
        let lam = init_diag_transition(&h, &mut RngSpec::new(1).stream(0)).unwrap();
        let mut rng = RngSpec::new(1).stream(0);
        for l in lam {
            let rho = rng.uniform(h.rho_min, h.rho_max);
            let theta = rng.uniform(h.theta_min, h.theta_max);
            assert_eq!(l, C64::from_polar(rho, theta));
        }
    }

    #[test]
    fn zero_radius_gives_pure_leak() {
        let h = LayerHyperparams { rho_min: 0.0, rho_max: 0.0, tau: 0.3, ..hp(8) };
        let lam = init_diag_transition(&h, &mut RngSpec::new(2).stream(0)).unwrap();
        assert!(lam.iter().all(|l| (l - c(0.7)).norm() == 0.0));
    }

    #[test]
    fn effective_radius_bound() {
        let mut rng = RngSpec::new(3).stream(0);
        for tau in [0.1, 0.5, 0.9, 1.0] {
            let h = LayerHyperparams { rho_max: 0.9, tau, n_h: 10_000, ..hp(1) };
            let lam = init_diag_transition(&h, &mut rng).unwrap();
            let bound = (1.0 - tau) + 0.9 * tau;
            assert!(lam.iter().all(|l| l.norm() <= bound + 1e-15));
            assert!(bound < 1.0);
        }
    }

    #[test]
    fn zero_eigenvalues_leave_weights_unscaled() {
        let h = hp(4);
        let lam = vec![c(0.0); 4];
        let w = init_input_weights(&h, &lam, 3, &mut RngSpec::new(4).stream(0)).unwrap();
        let raw = sample_uniform_complex(4, 3, &mut RngSpec::new(4).stream(0)).unwrap();
        assert_eq!(w, InputWeights::Dense(raw));
    }

    #[test]
    fn near_unit_eigenvalue_shrinks_row() {
        let h = hp(2);
        let lam = vec![c(0.99995), c(0.0)];
        let w = init_input_weights(&h, &lam, 1, &mut RngSpec::new(5).stream(0)).unwrap();
        let raw = sample_uniform_complex(2, 1, &mut RngSpec::new(5).stream(0)).unwrap();
        let InputWeights::Dense(w) = w else { panic!() };
        let factor = w.get(0, 0).norm() / raw.get(0, 0).norm();
        assert!((factor - 0.01).abs() < 1e-4, "{factor}");
        assert_eq!(w.get(1, 0), raw.get(1, 0));
    }

    #[test]
    fn unit_modulus_is_domain_error() {
        let h = hp(2);
        let lam = vec![c(1.0), c(0.0)];
        let r = init_input_weights(&h, &lam, 1, &mut RngSpec::new(5).stream(0));
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn ring_shifts_then_scales() {
        let w = [C64::new(1.0, 1.0), c(2.0), C64::new(0.0, -1.0)];
        let ring = InputWeights::Ring(w.to_vec());
        let (p, q, r) = (0.5, -1.5, 3.0);
        let mut out = vec![c(0.0); 3];
        ring.apply(&[p, q, r], &mut out);
        // Explicit matrix [[0,0,w1],[w2,0,0],[0,w3,0]] times (p, q, r).
        let dense = [[c(0.0), c(0.0), w[0]], [w[1], c(0.0), c(0.0)], [c(0.0), w[2], c(0.0)]];
        for i in 0..3 {
            let expect: C64 = dense[i].iter().zip([p, q, r]).map(|(a, b)| a * b).sum();
            assert_eq!(out[i], expect);
        }
        assert_eq!(out, vec![w[0] * r, w[1] * p, w[2] * q]);
    }

    #[test]
    fn zero_input_decays_geometrically() {
        let h = LayerHyperparams { omega_b: 0.0, ..hp(4) };
        let layer = ParalEsnLayer::new(&h, 2, &mut RngSpec::new(6).stream(0)).unwrap();
        let seq = layer_drive(&layer, &Matrix::zeros(12, 2)).unwrap();
        assert!((0..12).all(|t| seq.drive(t).iter().all(|d| d.norm() == 0.0)));
        let h0: Vec<C64> = (0..4).map(|i| C64::new(1.0, i as f64)).collect();
        let states = layer.states(&Matrix::zeros(12, 2), Some(&h0), None).unwrap();
        for t in 0..12 {
            for i in 0..4 {
                let expect = layer.lambda_bar()[i].powu(t as u32 + 1) * h0[i];
                assert!((states.row(t)[i] - expect).norm() <= 1e-14);
            }
        }
    }

    #[test]
    fn drive_matches_step_loop() {
        let h = LayerHyperparams { tau: 0.4, omega_b: 0.5, ..hp(5) };
        let mut rng = RngSpec::new(7).stream(0);
        let layer = ParalEsnLayer::new(&h, 3, &mut rng).unwrap();
        let x = Matrix::from_fn(3, 3, |_, _| rng.symmetric(1.0));
        let states = layer.states(&x, None, None).unwrap();
        let InputWeights::Dense(w) = layer.input_weights() else { panic!() };
        // h_t = (1-τ)h + τ(Λ h + W x + b) with Λ recovered from λ̄.
        let lam: Vec<C64> = layer.lambda_bar().iter().map(|l| (l - c(1.0 - 0.4)) / 0.4).collect();
        let mut hcur = vec![c(0.0); 5];
        for t in 0..3 {
            let next: Vec<C64> = (0..5)
                .map(|i| {
                    let wx: C64 = (0..3).map(|j| w.get(i, j) * x.get(t, j)).sum();
                    (1.0 - 0.4) * hcur[i] + 0.4 * (lam[i] * hcur[i] + wx + layer.bias()[i])
                })
                .collect();
            for i in 0..5 {
                assert!((states.row(t)[i] - next[i]).norm() < 1e-14);
            }
            hcur = next;
        }
    }

    #[test]
    fn memoryless_layer() {
        let h = LayerHyperparams { tau: 1.0, rho_min: 0.0, rho_max: 0.0, ..hp(3) };
        let mut rng = RngSpec::new(8).stream(0);
        let layer = ParalEsnLayer::new(&h, 2, &mut rng).unwrap();
        let x = Matrix::from_fn(4, 2, |_, _| rng.symmetric(1.0));
        let states = layer.states(&x, None, None).unwrap();
        let mut wx = vec![c(0.0); 3];
        for t in 0..4 {
            layer.input_weights().apply(x.row(t), &mut wx);
            for i in 0..3 {
                assert!((states.row(t)[i] - (wx[i] + layer.bias()[i])).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn drive_width_mismatch() {
        let layer = ParalEsnLayer::new(&hp(4), 2, &mut RngSpec::new(9).stream(0)).unwrap();
        assert!(matches!(layer_drive(&layer, &Matrix::zeros(3, 5)), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_kernel_gives_constant_output() {
        let mb = C64::new(0.3, -2.0);
        let layer = layer_with(vec![c(0.5); 5], InputWeights::Ring(vec![c(1.0); 5]), vec![c(0.0); 3], mb);
        let states = StateSequence::new(Matrix::from_fn(2, 5, |i, j| C64::new(i as f64, j as f64)));
        let z = mix(&layer, &states).unwrap();
        assert!(z.as_slice().iter().all(|&v| v == 0.3f64.tanh()));
    }

    #[test]
    fn unit_kernel_is_pointwise() {
        let layer = layer_with(vec![c(0.5); 3], InputWeights::Ring(vec![c(1.0); 3]), vec![c(1.0)], c(0.0));
        let states = StateSequence::new(Matrix::from_fn(2, 3, |i, j| C64::new(i as f64 - j as f64, 7.0)));
        let z = mix(&layer, &states).unwrap();
        for t in 0..2 {
            for i in 0..3 {
                assert_eq!(z.get(t, i), states.row(t)[i].re.tanh());
            }
        }
    }

    #[test]
    fn fused_pass_matches_states_then_mix() {
        let mut rng = RngSpec::new(5).stream(0);
        for (input, n_in) in [(InputKind::Ring, 3), (InputKind::Dense, 2)] {
            let hp = LayerHyperparams { n_h: 10, input, omega_b: 0.3, omega_mixb: 0.2, ..hp(10) };
            let layer = ParalEsnLayer::new(&hp, n_in, &mut rng).unwrap();
            let x = Matrix::from_fn(50, n_in, |_, _| rng.uniform(-1.0, 1.0));
            let h0: Vec<C64> = (0..10).map(|i| C64::new(0.1 * i as f64, -0.2)).collect();
            for init in [None, Some(h0.as_slice())] {
                let reference = mix(&layer, &layer.states(&x, init, None).unwrap()).unwrap();
                assert_eq!(forward_fused(&layer, &x, init).unwrap(), reference);
            }
        }
    }

    #[test]
    fn mixer_matches_sliding_window() {
        // Pre-activation for kernel (1, 2, 3) over h = (1, 0, 0, 0) with zero
        // padding: position 0 sees (pad, 1, 0) -> 2, position 1 sees (1, 0, 0) -> 1.
        let kernel = vec![c(1.0), c(2.0), c(3.0)];
        let layer = layer_with(vec![c(0.5); 4], InputWeights::Ring(vec![c(1.0); 4]), kernel.clone(), c(0.0));
        let h = vec![c(1.0), c(0.0), c(0.0), c(0.0)];
        let states = StateSequence::new(Matrix::from_vec(1, 4, h.clone()).unwrap());
        let z = mix(&layer, &states).unwrap();
        let expected_pre = [2.0, 1.0, 0.0, 0.0];
        for i in 0..4 {
            let mut window = 0.0;
            for j in 0..3 {
                let src = i as isize + j as isize - 1;
                if (0..4).contains(&src) {
                    window += kernel[j].re * h[src as usize].re;
                }
            }
            assert_eq!(window, expected_pre[i]);
            assert_eq!(z.get(0, i), expected_pre[i].tanh());
        }
    }

    #[test]
    fn mixer_saturation_stays_inside_open_interval() {
        let layer = layer_with(vec![c(0.5); 3], InputWeights::Ring(vec![c(1.0); 3]), vec![c(1.0)], c(0.0));
        let states = StateSequence::new(Matrix::from_vec(1, 3, vec![c(1e6), c(-1e6), c(40.0)]).unwrap());
        let z = mix(&layer, &states).unwrap();
        assert!(z.as_slice().iter().all(|v| v.abs() <= 1.0 - 1e-12));
    }

    #[test]
    fn oversized_kernel_rejected() {
        assert!(LayerHyperparams { kernel_size: 5, ..hp(3) }.validate().is_err());
        assert!(LayerHyperparams { kernel_size: 4, ..hp(8) }.validate().is_err());
        assert!(ParalEsnLayer::from_parts(
            1.0,
            vec![c(0.1); 2],
            InputWeights::Ring(vec![c(1.0); 2]),
            vec![c(0.0); 2],
            vec![c(1.0); 3],
            c(0.0)
        )
        .is_err());
    }

    #[test]
    fn hyperparameter_validation() {
        assert!(LayerHyperparams { rho_min: 0.5, rho_max: 0.1, ..hp(8) }.validate().is_err());
        assert!(LayerHyperparams { rho_max: 1.0, ..hp(8) }.validate().is_err());
        assert!(LayerHyperparams { theta_min: 3.0, theta_max: 1.0, ..hp(8) }.validate().is_err());
        assert!(LayerHyperparams { tau: 0.0, ..hp(8) }.validate().is_err());
        assert!(LayerHyperparams { omega_b: -1.0, ..hp(8) }.validate().is_err());
        assert!(hp(8).validate().is_ok());
    }

    #[test]
    fn parameter_count_formula() {
        let dense = ParalEsnLayer::new(&LayerHyperparams { kernel_size: 5, ..hp(128) }, 1, &mut RngSpec::new(1).stream(0)).unwrap();
        assert_eq!(dense.param_count(), 128 + 128 + 128 + 6);
        let ring = ParalEsnLayer::new(
            &LayerHyperparams { kernel_size: 3, input: InputKind::Ring, ..hp(64) },
            64,
            &mut RngSpec::new(1).stream(0),
        )
        .unwrap();
        assert_eq!(ring.param_count(), 64 + 64 + 64 + 4);
    }
}
