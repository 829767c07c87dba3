use serde::{Deserialize, Serialize};

use crate::error::{shape, Error, Result};
use crate::tensor_core::{Matrix, RngSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MlpLoss {
    /// Softmax cross-entropy against one-hot (or soft) target rows.
    CrossEntropy,
    MeanSquared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub loss: MlpLoss,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            learning_rate: 5e-4,
            epochs: 100,
            patience: 10,
            batch_size: 32,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            loss: MlpLoss::CrossEntropy,
            seed: 0,
        }
    }
}

/// Gradients (or any other per-parameter quantity) in the MLP's layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpGradients {
    pub w1: Matrix<f64>,
    pub b1: Vec<f64>,
    pub w2: Matrix<f64>,
    pub b2: Vec<f64>,
}

impl MlpGradients {
    fn zeros_like(m: &MlpReadout) -> Self {
        Self {
            w1: Matrix::zeros(m.w1.rows(), m.w1.cols()),
            b1: vec![0.0; m.b1.len()],
            w2: Matrix::zeros(m.w2.rows(), m.w2.cols()),
            b2: vec![0.0; m.b2.len()],
        }
    }

    fn tensors_mut(&mut self) -> [&mut [f64]; 4] {
        [self.w1.as_mut_slice(), &mut self.b1, self.w2.as_mut_slice(), &mut self.b2]
    }

    /// `W1`, `b1`, `W2`, `b2` as flat slices (matrices row-major).
    pub fn tensors(&self) -> [&[f64]; 4] {
        [self.w1.as_slice(), &self.b1, self.w2.as_slice(), &self.b2]
    }
}

/// `y = W2 tanh(W1 x + b1) + b2`, with the Adam moments it was trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpReadout {
    pub w1: Matrix<f64>,
    pub b1: Vec<f64>,
    pub w2: Matrix<f64>,
    pub b2: Vec<f64>,
    pub loss: MlpLoss,
    first_moment: MlpGradients,
    second_moment: MlpGradients,
    step: u64,
}

impl MlpReadout {
    /// Weights and biases uniform on `±1/√fan_in`, drawn from stream 0 of
    /// `seed` in the order W1, b1, W2, b2.
    pub fn init(n_features: usize, n_outputs: usize, config: &MlpConfig) -> Result<Self> {
        if n_features == 0 || n_outputs == 0 || config.hidden == 0 {
            return Err(Error::InvalidConfig("MLP dimensions must be positive".into()));
        }
        let mut rng = RngSpec::new(config.seed).stream(0);
        let s1 = 1.0 / (n_features as f64).sqrt();
        let s2 = 1.0 / (config.hidden as f64).sqrt();
        let w1 = Matrix::from_fn(config.hidden, n_features, |_, _| rng.symmetric(s1));
        let b1 = (0..config.hidden).map(|_| rng.symmetric(s1)).collect();
        let w2 = Matrix::from_fn(n_outputs, config.hidden, |_, _| rng.symmetric(s2));
        let b2 = (0..n_outputs).map(|_| rng.symmetric(s2)).collect();
        let mut m = Self {
            w1,
            b1,
            w2,
            b2,
            loss: config.loss,
            first_moment: MlpGradients {
                w1: Matrix::zeros(0, 0),
                b1: vec![],
                w2: Matrix::zeros(0, 0),
                b2: vec![],
            },
            second_moment: MlpGradients {
                w1: Matrix::zeros(0, 0),
                b1: vec![],
                w2: Matrix::zeros(0, 0),
                b2: vec![],
            },
            step: 0,
        };
        m.first_moment = MlpGradients::zeros_like(&m);
        m.second_moment = MlpGradients::zeros_like(&m);
        Ok(m)
    }

    pub fn n_features(&self) -> usize {
        self.w1.cols()
    }

    pub fn n_outputs(&self) -> usize {
        self.w2.rows()
    }

    pub fn hidden(&self) -> usize {
        self.w1.rows()
    }

    pub fn param_count(&self) -> usize {
        (self.n_features() + 1) * self.hidden() + (self.hidden() + 1) * self.n_outputs()
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    fn hidden_activation(&self, x: &[f64]) -> Vec<f64> {
        (0..self.hidden())
            .map(|h| (self.w1.row(h).iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.b1[h]).tanh())
            .collect()
    }

    fn output(&self, a: &[f64]) -> Vec<f64> {
        (0..self.n_outputs())
            .map(|o| self.w2.row(o).iter().zip(a).map(|(w, v)| w * v).sum::<f64>() + self.b2[o])
            .collect()
    }

    /// Raw outputs (logits for cross-entropy).
    pub fn predict(&self, features: &Matrix<f64>) -> Result<Matrix<f64>> {
        if features.cols() != self.n_features() {
            return Err(shape(format!(
                "MLP expects {} features, got {}",
                self.n_features(),
                features.cols()
            )));
        }
        let mut out = Matrix::zeros(features.rows(), self.n_outputs());
        for i in 0..features.rows() {
            let y = self.output(&self.hidden_activation(features.row(i)));
            out.row_mut(i).copy_from_slice(&y);
        }
        Ok(out)
    }

    /// Mean loss over `rows` of the data and its gradient.
    fn loss_and_grad_rows(&self, x: &Matrix<f64>, y: &Matrix<f64>, rows: &[usize]) -> (f64, MlpGradients) {
        let mut g = MlpGradients::zeros_like(self);
        let mut total = 0.0;
        let inv = 1.0 / rows.len().max(1) as f64;
        for &i in rows {
            let a = self.hidden_activation(x.row(i));
            let out = self.output(&a);
            let target = y.row(i);
            let delta: Vec<f64> = match self.loss {
                MlpLoss::CrossEntropy => {
                    let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let lse = max + out.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                    total += target.iter().zip(&out).map(|(t, o)| -t * (o - lse)).sum::<f64>();
                    let tsum: f64 = target.iter().sum();
                    out.iter().zip(target).map(|(o, t)| tsum * (o - lse).exp() - t).collect()
                }
                MlpLoss::MeanSquared => {
                    let k = out.len() as f64;
                    total += out.iter().zip(target).map(|(o, t)| (o - t).powi(2)).sum::<f64>() / k;
                    out.iter().zip(target).map(|(o, t)| 2.0 * (o - t) / k).collect()
                }
            };
            let mut back = vec![0.0; self.hidden()];
            for (o, d) in delta.iter().enumerate() {
                g.b2[o] += d * inv;
                for ((gw, av), (bk, w)) in g.w2.row_mut(o).iter_mut().zip(&a).zip(back.iter_mut().zip(self.w2.row(o))) {
                    *gw += d * av * inv;
                    *bk += d * w;
                }
            }
            for (h, (bk, av)) in back.iter().zip(&a).enumerate() {
                let dz = bk * (1.0 - av * av) * inv;
                g.b1[h] += dz;
                for (gw, xv) in g.w1.row_mut(h).iter_mut().zip(x.row(i)) {
                    *gw += dz * xv;
                }
            }
        }
        (total * inv, g)
    }

    /// Mean loss over all rows and its analytic gradient.
    pub fn loss_and_grad(&self, x: &Matrix<f64>, y: &Matrix<f64>) -> Result<(f64, MlpGradients)> {
        self.check(x, y)?;
        let rows: Vec<usize> = (0..x.rows()).collect();
        Ok(self.loss_and_grad_rows(x, y, &rows))
    }

    pub fn loss(&self, x: &Matrix<f64>, y: &Matrix<f64>) -> Result<f64> {
        Ok(self.loss_and_grad(x, y)?.0)
    }

    fn check(&self, x: &Matrix<f64>, y: &Matrix<f64>) -> Result<()> {
        if x.cols() != self.n_features() || y.cols() != self.n_outputs() || x.rows() != y.rows() {
            return Err(shape(format!(
                "MLP {}→{} cannot take {}x{} features with {}x{} targets",
                self.n_features(),
                self.n_outputs(),
                x.rows(),
                x.cols(),
                y.rows(),
                y.cols()
            )));
        }
        Ok(())
    }

    fn adam_step(&mut self, grad: &MlpGradients, config: &MlpConfig) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - config.beta1.powi(t);
        let c2 = 1.0 - config.beta2.powi(t);
        let params: [&mut [f64]; 4] = [self.w1.as_mut_slice(), &mut self.b1, self.w2.as_mut_slice(), &mut self.b2];
        let ms = self.first_moment.tensors_mut();
        let vs = self.second_moment.tensors_mut();
        for (((p, g), m), v) in params.into_iter().zip(grad.tensors()).zip(ms).zip(vs) {
            for (((pi, gi), mi), vi) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = config.beta1 * *mi + (1.0 - config.beta1) * gi;
                *vi = config.beta2 * *vi + (1.0 - config.beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *pi -= config.learning_rate * m_hat / (v_hat.sqrt() + config.eps);
            }
        }
    }
}

/// Mini-batch Adam with early stopping. The monitored loss is the
/// validation loss when `valid` is given, the training loss otherwise; the
/// parameters with the lowest monitored loss are returned.
pub fn fit_mlp(
    x: &Matrix<f64>,
    y: &Matrix<f64>,
    valid: Option<(&Matrix<f64>, &Matrix<f64>)>,
    config: &MlpConfig,
) -> Result<MlpReadout> {
    if config.batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be positive".into()));
    }
    let mut model = MlpReadout::init(x.cols(), y.cols(), config)?;
    model.check(x, y)?;
    if let Some((vx, vy)) = valid {
        model.check(vx, vy)?;
    }
    if config.epochs == 0 {
        return Ok(model);
    }
    let monitor = |m: &MlpReadout| -> Result<f64> {
        match valid {
            Some((vx, vy)) => m.loss(vx, vy),
            None => m.loss(x, y),
        }
    };
    let mut shuffle_rng = RngSpec::new(config.seed).stream(1);
    let mut order: Vec<usize> = (0..x.rows()).collect();
    let mut best = model.clone();
    let mut best_loss = monitor(&model)?;
    let mut stale = 0;
    for epoch in 0..config.epochs {
        shuffle_rng.shuffle(&mut order);
        for batch in order.chunks(config.batch_size) {
            let (loss, grad) = model.loss_and_grad_rows(x, y, batch);
            if !loss.is_finite() {
                return Err(Error::TrainingFailed(format!(
                    "loss became {loss} in epoch {epoch} after {} steps",
                    model.step
                )));
            }
            model.adam_step(&grad, config);
        }
        let current = monitor(&model)?;
        if !current.is_finite() {
            return Err(Error::TrainingFailed(format!("monitored loss became {current} in epoch {epoch}")));
        }
        if current < best_loss {
            best_loss = current;
            best = model.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    Ok(best)
}
