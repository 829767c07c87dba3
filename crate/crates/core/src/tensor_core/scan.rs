//! Element-wise affine scan.
//!
//! A step `h ↦ a ⊙ h + b` is an [`AffineElement`]. Composition of steps is
//! associative, so the states of a whole sequence can be computed either by a
//! plain loop ([`scan_sequential`]) or by a chunked two-pass schedule
//! ([`scan_parallel`]): local scans per chunk, a short scan over the chunk
//! summaries, then a fix-up that folds each chunk's incoming state back in.

use rayon::prelude::*;

use super::Matrix;
use crate::error::{shape, Error, Result};
use crate::C64;

const ONE: C64 = C64::new(1.0, 0.0);
const ZERO: C64 = C64::new(0.0, 0.0);

/// One step `h ↦ gain ⊙ h + drive`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineElement {
    gain: Vec<C64>,
    drive: Vec<C64>,
}

impl AffineElement {
    pub fn new(gain: Vec<C64>, drive: Vec<C64>) -> Result<Self> {
        if gain.len() != drive.len() {
            return Err(shape(format!(
                "gain has width {}, drive has width {}",
                gain.len(),
                drive.len()
            )));
        }
        Ok(Self { gain, drive })
    }

    pub fn width(&self) -> usize {
        self.gain.len()
    }

    pub fn gain(&self) -> &[C64] {
        &self.gain
    }

    pub fn drive(&self) -> &[C64] {
        &self.drive
    }

    pub fn apply(&self, h: &[C64]) -> Vec<C64> {
        self.gain
            .iter()
            .zip(&self.drive)
            .zip(h)
            .map(|((a, b), x)| a * x + b)
            .collect()
    }
}

/// Neutral element of [`scan_combine`]: unit gain, zero drive.
pub fn scan_identity(width: usize) -> Result<AffineElement> {
    if width == 0 {
        return Err(Error::InvalidWidth(width));
    }
    Ok(AffineElement {
        gain: vec![ONE; width],
        drive: vec![ZERO; width],
    })
}

/// Composition `second ∘ first`; `first` is the earlier step.
pub fn scan_combine(first: &AffineElement, second: &AffineElement) -> Result<AffineElement> {
    if first.width() != second.width() {
        return Err(shape(format!(
            "cannot combine widths {} and {}",
            first.width(),
            second.width()
        )));
    }
    let gain = second.gain.iter().zip(&first.gain).map(|(a2, a1)| a2 * a1).collect();
    let drive = second
        .gain
        .iter()
        .zip(&first.drive)
        .zip(&second.drive)
        .map(|((a2, b1), b2)| a2 * b1 + b2)
        .collect();
    Ok(AffineElement { gain, drive })
}

#[derive(Debug, Clone, PartialEq)]
enum Gains {
    /// One gain vector reused at every step (time-invariant recurrence).
    Shared(Vec<C64>),
    /// `len x width`, row-major.
    PerStep(Vec<C64>),
}

/// Compact sequence of [`AffineElement`]s sharing one width.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineSequence {
    width: usize,
    len: usize,
    gains: Gains,
    drives: Vec<C64>,
}

impl AffineSequence {
    /// Sequence whose every element uses `gain`; `drives` is `len x width`
    /// row-major.
    pub fn shared_gain(gain: Vec<C64>, drives: Vec<C64>) -> Result<Self> {
        let width = gain.len();
        if width == 0 {
            return Err(Error::InvalidWidth(0));
        }
        if !drives.len().is_multiple_of(width) {
            return Err(shape(format!(
                "{} drive values do not split into rows of width {width}",
                drives.len()
            )));
        }
        Ok(Self {
            width,
            len: drives.len() / width,
            gains: Gains::Shared(gain),
            drives,
        })
    }

    pub fn from_elements(elements: &[AffineElement], width: usize) -> Result<Self> {
        if width == 0 {
            return Err(Error::InvalidWidth(0));
        }
        let mut gains = Vec::with_capacity(elements.len() * width);
        let mut drives = Vec::with_capacity(elements.len() * width);
        for (t, e) in elements.iter().enumerate() {
            if e.width() != width {
                return Err(shape(format!(
                    "element {t} has width {}, expected {width}",
                    e.width()
                )));
            }
            gains.extend_from_slice(&e.gain);
            drives.extend_from_slice(&e.drive);
        }
        Ok(Self {
            width,
            len: elements.len(),
            gains: Gains::PerStep(gains),
            drives,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn gain(&self, t: usize) -> &[C64] {
        match &self.gains {
            Gains::Shared(g) => g,
            Gains::PerStep(g) => &g[t * self.width..(t + 1) * self.width],
        }
    }

    #[inline]
    pub fn drive(&self, t: usize) -> &[C64] {
        &self.drives[t * self.width..(t + 1) * self.width]
    }

    pub fn element(&self, t: usize) -> AffineElement {
        AffineElement {
            gain: self.gain(t).to_vec(),
            drive: self.drive(t).to_vec(),
        }
    }
}

/// `T x N` complex states; row `t` holds the state after step `t + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSequence {
    states: Matrix<C64>,
}

impl StateSequence {
    pub fn new(states: Matrix<C64>) -> Self {
        Self { states }
    }

    pub fn empty(width: usize) -> Self {
        Self {
            states: Matrix::zeros(0, width),
        }
    }

    pub fn len(&self) -> usize {
        self.states.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.states.rows() == 0
    }

    pub fn width(&self) -> usize {
        self.states.cols()
    }

    pub fn row(&self, t: usize) -> &[C64] {
        self.states.row(t)
    }

    pub fn last(&self) -> Option<&[C64]> {
        (!self.is_empty()).then(|| self.row(self.len() - 1))
    }

    pub fn as_matrix(&self) -> &Matrix<C64> {
        &self.states
    }

    pub fn into_matrix(self) -> Matrix<C64> {
        self.states
    }

    pub fn as_slice(&self) -> &[C64] {
        self.states.as_slice()
    }

    pub fn is_finite(&self) -> bool {
        self.as_slice().iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

fn check_h0(seq: &AffineSequence, h0: &[C64]) -> Result<()> {
    if h0.len() != seq.width {
        return Err(shape(format!(
            "initial state has width {}, sequence has width {}",
            h0.len(),
            seq.width
        )));
    }
    Ok(())
}

/// Runs steps `start..start + out.len() / width` from `h`, writing each state.
fn scan_block(seq: &AffineSequence, start: usize, h: &[C64], out: &mut [C64]) {
    let w = seq.width;
    for (s, (a_row, b_row)) in (start..start + out.len() / w)
        .map(|t| (seq.gain(t), seq.drive(t)))
        .enumerate()
    {
        let (done, rest) = out.split_at_mut(s * w);
        let prev = if s == 0 { h } else { &done[(s - 1) * w..] };
        for (((o, a), b), p) in rest[..w].iter_mut().zip(a_row).zip(b_row).zip(prev) {
            *o = a * p + b;
        }
    }
}

/// States `h_t = gain_t ⊙ h_{t-1} + drive_t` for `t = 1..=T`, starting at `h0`.
/// `h0` itself is not part of the output.
pub fn scan_sequential(seq: &AffineSequence, h0: &[C64]) -> Result<StateSequence> {
    check_h0(seq, h0)?;
    let mut out = vec![ZERO; seq.len * seq.width];
    scan_block(seq, 0, h0, &mut out);
    Ok(StateSequence::new(Matrix::from_vec(seq.len, seq.width, out)?))
}

/// Same states as [`scan_sequential`], computed over `⌈T / chunk_size⌉`
/// chunks on the current rayon pool.
///
/// Pass one scans every chunk locally (chunk 0 from `h0`, the rest from
/// zero). Pass two walks the chunk summaries to find the state entering each
/// chunk. Pass three adds `(Π gains) ⊙ incoming` to every local state.
pub fn scan_parallel(seq: &AffineSequence, h0: &[C64], chunk_size: usize) -> Result<StateSequence> {
    if chunk_size == 0 {
        return Err(Error::InvalidArgument("chunk size must be positive".into()));
    }
    check_h0(seq, h0)?;
    if chunk_size >= seq.len {
        return scan_sequential(seq, h0);
    }
    let w = seq.width;
    let zeros = vec![ZERO; w];
    let mut out = vec![ZERO; seq.len * w];

    // Pass 1: local scans and per-chunk gain products.
    let products: Vec<Vec<C64>> = out
        .par_chunks_mut(chunk_size * w)
        .enumerate()
        .map(|(c, block)| {
            let start = c * chunk_size;
            let init = if c == 0 { h0 } else { &zeros[..] };
            scan_block(seq, start, init, block);
            let mut prod = vec![ONE; w];
            for t in start..start + block.len() / w {
                for (p, a) in prod.iter_mut().zip(seq.gain(t)) {
                    *p *= a;
                }
            }
            prod
        })
        .collect();

    // Pass 2: state entering each chunk.
    let n_chunks = products.len();
    let mut incoming = Vec::with_capacity(n_chunks);
    incoming.push(h0.to_vec());
    let mut end_state = out[(chunk_size - 1) * w..chunk_size * w].to_vec();
    for (c, product) in products.iter().enumerate().skip(1) {
        incoming.push(end_state.clone());
        let last = ((c + 1) * chunk_size).min(seq.len) - 1;
        let local_last = &out[last * w..(last + 1) * w];
        end_state = product
            .iter()
            .zip(&end_state)
            .zip(local_last)
            .map(|((a, h), b)| a * h + b)
            .collect();
    }

    // Pass 3: fold the incoming state into chunks 1.. .
    out.par_chunks_mut(chunk_size * w)
        .enumerate()
        .skip(1)
        .for_each(|(c, block)| {
            let start = c * chunk_size;
            let carry = &incoming[c];
            let mut prod = vec![ONE; w];
            for (s, row) in block.chunks_mut(w).enumerate() {
                for ((p, a), (o, h)) in prod
                    .iter_mut()
                    .zip(seq.gain(start + s))
                    .zip(row.iter_mut().zip(carry))
                {
                    *p *= a;
                    *o += *p * h;
                }
            }
        });

    Ok(StateSequence::new(Matrix::from_vec(seq.len, w, out)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor_core::{max_relative_deviation, RngSpec};

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn random_element(w: usize, rng: &mut crate::RngStream) -> AffineElement {
        AffineElement::new(
            (0..w).map(|_| rng.complex_unit_box()).collect(),
            (0..w).map(|_| rng.complex_unit_box()).collect(),
        )
        .unwrap()
    }

    fn random_sequence(t: usize, w: usize, seed: u64) -> (AffineSequence, Vec<C64>) {
        let mut rng = RngSpec::new(seed).stream(0);
        let gain = (0..w).map(|_| rng.complex_unit_box() * 0.7).collect();
        let drives = (0..t * w).map(|_| rng.complex_unit_box()).collect();
        let h0 = (0..w).map(|_| rng.complex_unit_box()).collect();
        (AffineSequence::shared_gain(gain, drives).unwrap(), h0)
    }

    #[test]
    fn identity_values() {
        let id = scan_identity(2).unwrap();
        assert_eq!(id.gain(), &[c(1.0), c(1.0)]);
        assert_eq!(id.drive(), &[c(0.0), c(0.0)]);
        assert!(matches!(scan_identity(0), Err(Error::InvalidWidth(0))));
    }

    #[test]
    fn identity_is_neutral_on_both_sides() {
        let mut rng = RngSpec::new(1).stream(0);
        let e = random_element(3, &mut rng);
        let id = scan_identity(3).unwrap();
        assert_eq!(scan_combine(&id, &e).unwrap(), e);
        assert_eq!(scan_combine(&e, &id).unwrap(), e);
    }

    #[test]
    fn combine_scalar_by_hand() {
        // h2 = 5(2h0 + 3) + 7 = 10h0 + 22
        let first = AffineElement::new(vec![c(2.0)], vec![c(3.0)]).unwrap();
        let second = AffineElement::new(vec![c(5.0)], vec![c(7.0)]).unwrap();
        let r = scan_combine(&first, &second).unwrap();
        assert_eq!(r.gain(), &[c(10.0)]);
        assert_eq!(r.drive(), &[c(22.0)]);
    }

    #[test]
    fn combine_matches_three_step_unroll() {
        let mut rng = RngSpec::new(2).stream(0);
        for _ in 0..50 {
            let (e1, e2, e3) = (
                random_element(4, &mut rng),
                random_element(4, &mut rng),
                random_element(4, &mut rng),
            );
            let h0: Vec<C64> = (0..4).map(|_| rng.complex_unit_box()).collect();
            let unrolled = e3.apply(&e2.apply(&e1.apply(&h0)));
            let left = scan_combine(&scan_combine(&e1, &e2).unwrap(), &e3).unwrap();
            let right = scan_combine(&e1, &scan_combine(&e2, &e3).unwrap()).unwrap();
            assert!(max_relative_deviation(&left.apply(&h0), &unrolled) < 1e-12);
            assert!(max_relative_deviation(&right.apply(&h0), &unrolled) < 1e-12);
        }
    }

    #[test]
    fn combine_rejects_width_mismatch() {
        let a = scan_identity(2).unwrap();
        let b = scan_identity(3).unwrap();
        assert!(matches!(scan_combine(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn memoryless_when_gains_vanish() {
        let mut rng = RngSpec::new(4).stream(0);
        let drives: Vec<C64> = (0..10 * 3).map(|_| rng.complex_unit_box()).collect();
        let seq = AffineSequence::shared_gain(vec![c(0.0); 3], drives.clone()).unwrap();
        let out = scan_sequential(&seq, &[c(5.0); 3]).unwrap();
        assert_eq!(out.as_slice(), &drives[..]);
    }

    #[test]
    fn unit_gain_accumulates() {
        let k = C64::new(0.25, -0.5);
        let seq = AffineSequence::shared_gain(vec![c(1.0); 2], vec![k; 8 * 2]).unwrap();
        let h0 = [c(1.0), C64::new(0.0, 2.0)];
        let out = scan_sequential(&seq, &h0).unwrap();
        for t in 0..8 {
            for i in 0..2 {
                assert_eq!(out.row(t)[i], h0[i] + k * (t as f64 + 1.0));
            }
        }
    }

    #[test]
    fn matches_closed_form_power_sum() {
        // h_T = a^T h0 + Σ_{j=1}^{T} a^{T-j} b_j
        let (seq, h0) = random_sequence(16, 4, 9);
        let out = scan_sequential(&seq, &h0).unwrap();
        let a = seq.gain(0).to_vec();
        for t in 1..=16usize {
            for i in 0..4 {
                let mut v = a[i].powu(t as u32) * h0[i];
                for j in 1..=t {
                    v += a[i].powu((t - j) as u32) * seq.drive(j - 1)[i];
                }
                assert!((out.row(t - 1)[i] - v).norm() <= 1e-10 * v.norm().max(1.0));
            }
        }
    }

    #[test]
    fn empty_sequence_gives_empty_states() {
        let seq = AffineSequence::shared_gain(vec![c(0.5); 3], vec![]).unwrap();
        let out = scan_sequential(&seq, &[c(0.0); 3]).unwrap();
        assert!(out.is_empty());
        assert_eq!(out.width(), 3);
        assert!(scan_parallel(&seq, &[c(0.0); 3], 4).unwrap().is_empty());
    }

    #[test]
    fn parallel_degenerate_cases_are_exact() {
        let (seq, h0) = random_sequence(1, 5, 1);
        assert_eq!(scan_parallel(&seq, &h0, 1).unwrap(), scan_sequential(&seq, &h0).unwrap());
        let (seq, h0) = random_sequence(40, 5, 2);
        assert_eq!(scan_parallel(&seq, &h0, 40).unwrap(), scan_sequential(&seq, &h0).unwrap());
        assert_eq!(scan_parallel(&seq, &h0, 1000).unwrap(), scan_sequential(&seq, &h0).unwrap());
    }

    #[test]
    fn parallel_matches_sequential_on_large_instance() {
        let (seq, h0) = random_sequence(4096, 64, 3);
        let reference = scan_sequential(&seq, &h0).unwrap();
        for chunk in [1, 7, 64, 1000] {
            let par = scan_parallel(&seq, &h0, chunk).unwrap();
            let dev = max_relative_deviation(par.as_slice(), reference.as_slice());
            assert!(dev <= 1e-10, "chunk {chunk}: {dev}");
        }
    }

    #[test]
    fn parallel_handles_per_step_gains() {
        let mut rng = RngSpec::new(8).stream(0);
        let elements: Vec<AffineElement> = (0..100).map(|_| random_element(3, &mut rng)).collect();
        let seq = AffineSequence::from_elements(&elements, 3).unwrap();
        let h0 = vec![c(0.1); 3];
        let reference = scan_sequential(&seq, &h0).unwrap();
        let par = scan_parallel(&seq, &h0, 9).unwrap();
        assert!(max_relative_deviation(par.as_slice(), reference.as_slice()) <= 1e-10);
    }

    #[test]
    fn parallel_rejects_zero_chunk() {
        let (seq, h0) = random_sequence(4, 2, 1);
        assert!(matches!(scan_parallel(&seq, &h0, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn width_mismatch_rejected() {
        let (seq, _) = random_sequence(4, 2, 1);
        assert!(scan_sequential(&seq, &[c(0.0); 3]).is_err());
        let e = vec![scan_identity(2).unwrap(), scan_identity(3).unwrap()];
        assert!(AffineSequence::from_elements(&e, 2).is_err());
    }
}
