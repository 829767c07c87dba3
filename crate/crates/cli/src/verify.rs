//! Self-checks of the numerical core, including negative controls that must
//! be detected.

use paralesn::readout::{fit_ridge, MlpConfig, MlpLoss, MlpReadout, RidgeProblem};
use paralesn::reservoir::{InputWeights, LayerHyperparams, ParalEsnLayer};
use paralesn::tasks::{lorenz96_trajectory, mackey_glass_series, narma_series};
use paralesn::tensor_core::{
    max_relative_deviation, scan_combine, scan_parallel, scan_sequential, AffineElement, AffineSequence, Matrix,
    RngStream,
};
use paralesn::theory_checks::{build_equivalence_pair, contraction_trace, esp_contraction_test, verify_equivalence};
use paralesn::{RngSpec, C64};
use serde::{Deserialize, Serialize};

use crate::bench::param_audit;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self { name: name.into(), passed, detail }
    }

    fn from_result(name: &str, r: anyhow::Result<(bool, String)>) -> Self {
        match r {
            Ok((passed, detail)) => Self::new(name, passed, detail),
            Err(e) => Self::new(name, false, format!("error: {e:#}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub seed: u64,
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn random_sequence(len: usize, width: usize, rng: &mut RngStream) -> (AffineSequence, Vec<C64>) {
    let gain: Vec<C64> = (0..width).map(|_| C64::from_polar(rng.uniform(0.0, 1.0), rng.uniform(0.0, 6.3))).collect();
    let drives: Vec<C64> = (0..len * width).map(|_| rng.complex_unit_box()).collect();
    let h0: Vec<C64> = (0..width).map(|_| rng.complex_unit_box()).collect();
    (AffineSequence::shared_gain(gain, drives).expect("consistent shapes"), h0)
}

/// `pairs` random `(T, N_h)` draws with `T ≤ max_len`, `N_h ≤ max_width`;
/// chunk sizes 1, 7, 64 and T. Returns the worst relative deviation.
pub fn check_scan_oracle(pairs: usize, max_len: usize, max_width: usize, seed: u64) -> Check {
    let run = || -> anyhow::Result<(bool, String)> {
        let mut rng = RngSpec::new(seed).stream(10);
        let mut worst = 0.0f64;
        for _ in 0..pairs {
            let len = 1 + rng.index(max_len);
            let width = 1 + rng.index(max_width);
            let (seq, h0) = random_sequence(len, width, &mut rng);
            let reference = scan_sequential(&seq, &h0)?;
            for chunk in [1, 7, 64, len] {
                let p = scan_parallel(&seq, &h0, chunk)?;
                worst = worst.max(max_relative_deviation(reference.as_slice(), p.as_slice()));
            }
        }
        Ok((worst <= 1e-10, format!("{pairs} (T, N_h) pairs, worst relative deviation {worst:.3e} (limit 1e-10)")))
    };
    Check::from_result("scan_parallel_vs_sequential", run())
}

fn combine_deviation(
    combine: impl Fn(&AffineElement, &AffineElement) -> AffineElement,
    trials: usize,
    rng: &mut RngStream,
) -> f64 {
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let width = 1 + rng.index(8);
        let mut el = || {
            let gain = (0..width).map(|_| rng.complex_unit_box()).collect();
            let drive = (0..width).map(|_| rng.complex_unit_box()).collect();
            AffineElement::new(gain, drive).expect("equal widths")
        };
        let (a, b, c) = (el(), el(), el());
        let left = combine(&combine(&a, &b), &c);
        let right = combine(&a, &combine(&b, &c));
        // Both must also equal applying a, b, c in order to a probe state.
        let probe: Vec<C64> = (0..width).map(|i| C64::new(0.3 + i as f64, -0.2)).collect();
        let unrolled = c.apply(&b.apply(&a.apply(&probe)));
        worst = worst
            .max(max_relative_deviation(left.gain(), right.gain()))
            .max(max_relative_deviation(left.drive(), right.drive()))
            .max(max_relative_deviation(&left.apply(&probe), &unrolled));
    }
    worst
}

pub fn check_associativity(trials: usize, seed: u64) -> Check {
    let mut rng = RngSpec::new(seed).stream(11);
    let worst = combine_deviation(|a, b| scan_combine(a, b).expect("equal widths"), trials, &mut rng);
    Check::new(
        "scan_combine_associative",
        worst <= 1e-12,
        format!("{trials} random triples, worst relative deviation {worst:.3e} (limit 1e-12)"),
    )
}

/// Mutation control: a combine with swapped operands must be caught by the
/// same comparison.
pub fn check_swapped_combine_detected(seed: u64) -> Check {
    let mut rng = RngSpec::new(seed).stream(12);
    let swapped = |a: &AffineElement, b: &AffineElement| scan_combine(b, a).expect("equal widths");
    let worst = combine_deviation(swapped, 20, &mut rng);
    Check::new(
        "negative_control_swapped_combine",
        worst > 1e-6,
        format!("swapped operands deviate by {worst:.3e}; detected = {}", worst > 1e-6),
    )
}

/// `layers` random layers with `max|λ̄|` in `[0.3, 0.99]`; two trials each
/// over `steps` steps. Passes with zero violations of `d_t ≤ max|λ̄| d_{t-1}`.
pub fn check_esp_sufficiency(layers: usize, steps: usize, seed: u64) -> Check {
    let run = || -> anyhow::Result<(bool, String)> {
        let mut rng = RngSpec::new(seed).stream(13);
        let mut violations = 0;
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for _ in 0..layers {
            let rho_max = rng.uniform(0.3, 0.99);
            let hp = LayerHyperparams {
                n_h: 4 + rng.index(60),
                rho_min: 0.0,
                rho_max,
                tau: 1.0,
                ..Default::default()
            };
            let layer = ParalEsnLayer::new(&hp, 1 + rng.index(3), &mut rng)?;
            let report = esp_contraction_test(&layer, steps, 2, &mut rng)?;
            lo = lo.min(report.max_modulus);
            hi = hi.max(report.max_modulus);
            violations += report.violations;
        }
        Ok((
            violations == 0,
            format!("{layers} layers, max|λ̄| in [{lo:.3}, {hi:.3}], T = {steps}, {violations} violating steps"),
        ))
    };
    Check::from_result("esp_sufficiency", run())
}

/// Negative control: one planted eigenvalue of modulus 1.05 excited alone
/// must separate the trajectories as `1.05^t`.
pub fn check_esp_necessity(steps: usize) -> Check {
    let run = || -> anyhow::Result<(bool, String)> {
        let lambda = vec![C64::from_polar(1.05, 0.4), C64::new(0.5, 0.0), C64::new(0.0, 0.7)];
        let n = lambda.len();
        let zero = C64::new(0.0, 0.0);
        let layer = ParalEsnLayer::from_parts(
            1.0,
            lambda,
            InputWeights::Dense(Matrix::from_fn(n, 1, |i, _| C64::new(0.2 * (i + 1) as f64, 0.0))),
            vec![zero; n],
            vec![C64::new(1.0, 0.0)],
            zero,
        )?;
        let inputs = Matrix::from_fn(steps, 1, |t, _| (t as f64 * 0.37).sin());
        let h0 = vec![zero; n];
        let mut h1 = h0.clone();
        h1[0] = C64::new(1.0, 0.0);
        let trace = contraction_trace(&layer, &inputs, &h0, &h1)?;
        let worst = trace
            .distances
            .iter()
            .enumerate()
            .map(|(t, d)| {
                let expect = 1.05f64.powi(t as i32);
                (d - expect).abs() / expect
            })
            .fold(0.0, f64::max);
        let report = esp_contraction_test(&layer, steps, 2, &mut RngSpec::new(1).stream(0))?;
        let detected = !report.holds() && report.diverged();
        Ok((
            worst <= 1e-9 && detected,
            format!("d_t vs 1.05^t worst relative error {worst:.3e} (limit 1e-9); divergence detected = {detected}"),
        ))
    };
    Check::from_result("esp_necessity_negative_control", run())
}

/// `pairs` planted diagonalizations with `N_h ≤ max_width`, `steps` random inputs.
pub fn check_equivalence(pairs: usize, max_width: usize, steps: usize, seed: u64) -> Check {
    let run = || -> anyhow::Result<(bool, String)> {
        let mut rng = RngSpec::new(seed).stream(14);
        let mut worst_ratio = 0.0f64;
        let mut worst_cond = 0.0f64;
        for _ in 0..pairs {
            let n_h = 2 + rng.index(max_width - 1);
            let n_in = 1 + rng.index(3);
            let pair = build_equivalence_pair(n_h, n_in, &mut rng)?;
            let inputs = Matrix::from_fn(steps, n_in, |_, _| rng.symmetric(1.0));
            let report = verify_equivalence(&pair, &inputs)?;
            worst_ratio = worst_ratio.max(report.max_deviation / report.tolerance);
            worst_cond = worst_cond.max(report.condition);
        }
        Ok((
            worst_ratio <= 1.0,
            format!(
                "{pairs} pairs, cond(V) ≤ {worst_cond:.1}, worst deviation at {:.3e} of the 1e-8·cond(V) budget",
                worst_ratio
            ),
        ))
    };
    Check::from_result("basis_change_equivalence", run())
}

/// Exact recovery on noiseless linear data, and monotone shrinkage.
pub fn check_ridge(seed: u64) -> Check {
    let run = || -> anyhow::Result<(bool, String)> {
        let mut rng = RngSpec::new(seed).stream(15);
        let x = Matrix::from_fn(200, 6, |_, _| rng.symmetric(1.0));
        let w: Vec<f64> = (0..6).map(|_| rng.symmetric(2.0)).collect();
        let y = Matrix::from_fn(200, 1, |i, _| x.row(i).iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + 0.7);
        let r = fit_ridge(&x, &y, 0.0)?;
        let pred = r.predict(&x)?;
        let residual = pred.as_slice().iter().zip(y.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let noisy = Matrix::from_fn(200, 2, |_, _| rng.symmetric(1.0));
        let problem = RidgeProblem::new(&x, &noisy)?;
        let norms = crate::config::RIDGE_GRID
            .iter()
            .map(|&l| problem.solve(l).map(|r| r.weight_norm()))
            .collect::<Result<Vec<_>, _>>()?;
        let monotone = norms.windows(2).all(|p| p[1] <= p[0] * (1.0 + 1e-12));
        Ok((
            residual <= 1e-10 && monotone,
            format!("max residual {residual:.3e} (limit 1e-10); weight norm non-increasing over λ grid = {monotone}"),
        ))
    };
    Check::from_result("ridge_readout", run())
}

/// Central finite differences against backprop on a small random network,
/// for both losses. Passes when every relative error is ≤ 1e-5.
pub fn check_mlp_gradients(seed: u64) -> Check {
    let run = || -> anyhow::Result<(bool, String)> {
        let mut worst = 0.0f64;
        for loss in [MlpLoss::CrossEntropy, MlpLoss::MeanSquared] {
            let config = MlpConfig { hidden: 6, loss, seed, ..MlpConfig::default() };
            let mut rng = RngSpec::new(seed).stream(16);
            let x = Matrix::from_fn(9, 4, |_, _| rng.symmetric(1.0));
            let y = Matrix::from_fn(9, 3, |i, j| match loss {
                MlpLoss::CrossEntropy => f64::from(i % 3 == j),
                MlpLoss::MeanSquared => rng.symmetric(1.0),
            });
            let model = MlpReadout::init(4, 3, &config)?;
            let (_, grad) = model.loss_and_grad(&x, &y)?;
            let h = 1e-5;
            for tensor in 0..4 {
                for k in 0..grad.tensors()[tensor].len() {
                    let loss_at = |delta: f64| -> anyhow::Result<f64> {
                        let mut m = model.clone();
                        let slot: &mut [f64] = match tensor {
                            0 => m.w1.as_mut_slice(),
                            1 => &mut m.b1,
                            2 => m.w2.as_mut_slice(),
                            _ => &mut m.b2,
                        };
                        slot[k] += delta;
                        Ok(m.loss(&x, &y)?)
                    };
                    let numeric = (loss_at(h)? - loss_at(-h)?) / (2.0 * h);
                    let analytic = grad.tensors()[tensor][k];
                    let rel = (numeric - analytic).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
                    worst = worst.max(rel);
                }
            }
        }
        Ok((worst <= 1e-5, format!("worst relative error {worst:.3e} (limit 1e-5)")))
    };
    Check::from_result("mlp_gradients", run())
}

pub fn check_generator_fixtures() -> Check {
    let mg = mackey_glass_series(1000, 1.0, 0);
    let mg_dev = mg.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max);
    let l96 = lorenz96_trajectory(&[8.0; 5], 10_000, 0.05, 8.0);
    let l96_dev = l96.iter().flatten().map(|v| (v - 8.0).abs()).fold(0.0, f64::max);
    let narma = narma_series(&[0.0; 2], 10);
    let narma_ok = narma[0] == 0.1 && narma[1] == 0.3 * 0.1 + 0.01 * 0.1 * 0.1 + 0.1 && (narma[1] - 0.1301).abs() < 1e-15;
    Check::new(
        "generator_fixtures",
        mg_dev <= 1e-12 && l96_dev <= 1e-12 && narma_ok,
        format!(
            "Mackey-Glass fixed point deviation {mg_dev:.1e} over 10^4 steps; Lorenz96 equilibrium deviation {l96_dev:.1e} over 10^4 steps; NARMA y(1), y(2) = {}, {}",
            narma[0], narma[1]
        ),
    )
}

pub fn check_param_audit(widths: &[usize], seed: u64) -> Check {
    let run = || -> anyhow::Result<(bool, String)> {
        let mut ok = true;
        let mut parts = Vec::new();
        for &n_h in widths {
            let a = param_audit(n_h, 1, 5, seed)?;
            ok &= a.exact();
            parts.push(format!(
                "N_h={n_h}: ParalESN {} (formula {}), ESN {} (formula {}), ratio {:.5}",
                a.paralesn_stored, a.paralesn_formula, a.esn_stored, a.esn_formula, a.ratio
            ));
        }
        Ok((ok, parts.join("; ")))
    };
    Check::from_result("parameter_audit", run())
}

/// The default suite run by `paralesn verify`.
pub fn cmd_verify(seed: u64) -> VerifyReport {
    let checks = vec![
        check_scan_oracle(20, 4096, 64, seed),
        check_associativity(200, seed),
        check_swapped_combine_detected(seed),
        check_esp_sufficiency(20, 200, seed),
        check_esp_necessity(200),
        check_equivalence(10, 16, 100, seed),
        check_ridge(seed),
        check_mlp_gradients(seed),
        check_generator_fixtures(),
        check_param_audit(&[128], seed),
    ];
    VerifyReport { seed, checks }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_suite_passes() {
        let report = cmd_verify(0);
        for c in &report.checks {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
