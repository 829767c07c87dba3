use serde::{Deserialize, Serialize};

use super::layer::{forward_fused, mix_rows, InputKind, LayerHyperparams, ParalEsnLayer};
use crate::error::{shape, Error, Result};
use crate::tensor_core::{Matrix, RngSpec};
use crate::C64;

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Chunks per layer when the parallel chunk size is left to the library.
const DEFAULT_PIECES: usize = 64;

/// How the linear recurrence is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode")]
pub enum ScanMode {
    Sequential,
    /// Chunked scan on the current rayon pool. `chunk_size: None` picks
    /// `⌈T / 64⌉`, at least 256, independent of the thread count so results
    /// do not depend on the pool size.
    Parallel { chunk_size: Option<usize> },
}

impl ScanMode {
    fn chunk_for(&self, len: usize) -> Option<usize> {
        match *self {
            ScanMode::Sequential => None,
            ScanMode::Parallel { chunk_size: Some(c) } => Some(c),
            ScanMode::Parallel { chunk_size: None } => Some(len.div_ceil(DEFAULT_PIECES).max(256)),
        }
    }
}

/// Splits `total` units across `layers`, giving the remainder to layer 1.
pub fn split_units(total: usize, layers: usize) -> Result<Vec<usize>> {
    if layers == 0 || total < layers {
        return Err(Error::InvalidConfig(format!(
            "cannot split {total} units across {layers} layers"
        )));
    }
    let base = total / layers;
    let mut sizes = vec![base; layers];
    sizes[0] += total % layers;
    Ok(sizes)
}

/// Stack of ParalESN layers. Layer 1 reads the external input through a
/// dense map; later layers read the previous layer's mixed output through a
/// ring map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepParalEsn {
    hyperparams: Vec<LayerHyperparams>,
    layers: Vec<ParalEsnLayer>,
    concat: bool,
    rng: RngSpec,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Mixed states `z^{(ℓ)}`, one `T x N_h^{(ℓ)}` matrix per layer.
    pub mixed: Vec<Matrix<f64>>,
    /// What the readout sees: the last layer's `z`, or all of them side by side.
    pub features: Matrix<f64>,
}

impl DeepParalEsn {
    /// Builds every layer from stream 0 of `rng`, first to last. The input
    /// kind in each entry of `hyperparams` is overridden: dense for the first
    /// layer, ring afterwards.
    pub fn new(hyperparams: Vec<LayerHyperparams>, n_in: usize, concat: bool, rng: RngSpec) -> Result<Self> {
        if hyperparams.is_empty() {
            return Err(Error::InvalidConfig("a model needs at least one layer".into()));
        }
        let mut stream = rng.stream(0);
        let mut hps = hyperparams;
        let mut layers = Vec::with_capacity(hps.len());
        let mut width = n_in;
        for (l, hp) in hps.iter_mut().enumerate() {
            hp.input = if l == 0 { InputKind::Dense } else { InputKind::Ring };
            let layer = ParalEsnLayer::new(hp, width, &mut stream)?;
            width = layer.n_h();
            layers.push(layer);
        }
        Ok(Self {
            hyperparams: hps,
            layers,
            concat,
            rng,
        })
    }

    pub fn from_layers(layers: Vec<ParalEsnLayer>, concat: bool) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig("a model needs at least one layer".into()));
        }
        Ok(Self {
            hyperparams: Vec::new(),
            layers,
            concat,
            rng: RngSpec::new(0),
        })
    }

    pub fn layers(&self) -> &[ParalEsnLayer] {
        &self.layers
    }

    pub fn hyperparams(&self) -> &[LayerHyperparams] {
        &self.hyperparams
    }

    pub fn concat(&self) -> bool {
        self.concat
    }

    pub fn rng(&self) -> &RngSpec {
        &self.rng
    }

    pub fn feature_width(&self) -> usize {
        if self.concat {
            self.layers.iter().map(ParalEsnLayer::n_h).sum()
        } else {
            self.layers.last().map_or(0, ParalEsnLayer::n_h)
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(ParalEsnLayer::param_count).sum()
    }

    /// Runs every layer over `inputs`. `h0` holds one initial state per layer
    /// and defaults to zeros.
    pub fn forward(&self, inputs: &Matrix<f64>, h0: Option<&[Vec<C64>]>, mode: ScanMode) -> Result<ForwardOutput> {
        if let Some(h0) = h0 {
            if h0.len() != self.layers.len() {
                return Err(shape(format!(
                    "{} initial states for {} layers",
                    h0.len(),
                    self.layers.len()
                )));
            }
        }
        let chunk = mode.chunk_for(inputs.rows());
        let mut mixed: Vec<Matrix<f64>> = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let input = if l == 0 { inputs } else { &mixed[l - 1] };
            let init = h0.map(|h| h[l].as_slice());
            mixed.push(match chunk {
                None => forward_fused(layer, input, init)?,
                Some(c) => mix_rows(layer, &layer.states(input, init, Some(c))?, true)?,
            });
        }
        let features = if self.concat && mixed.len() > 1 {
            Matrix::hconcat(&mixed.iter().collect::<Vec<_>>())?
        } else {
            mixed.last().cloned().expect("at least one layer")
        };
        Ok(ForwardOutput { mixed, features })
    }

    pub fn to_record(&self) -> ModelRecord {
        ModelRecord {
            format_version: MODEL_FORMAT_VERSION,
            library_version: crate::VERSION.to_string(),
            model: self.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_record())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let record: ModelRecord = serde_json::from_str(text)?;
        if record.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported model format version {}",
                record.format_version
            )));
        }
        Ok(record.model)
    }
}

/// Versioned, self-describing serialized model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelRecord {
    pub format_version: u32,
    pub library_version: String,
    pub model: DeepParalEsn,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reservoir::InputWeights;

    fn hp(n_h: usize) -> LayerHyperparams {
        LayerHyperparams {
            n_h,
            tau: 0.7,
            rho_min: 0.2,
            omega_b: 0.3,
            ..LayerHyperparams::default()
        }
    }

    fn inputs(t: usize, n: usize, seed: u64) -> Matrix<f64> {
        let mut rng = RngSpec::new(seed).stream(1);
        Matrix::from_fn(t, n, |_, _| rng.symmetric(0.8))
    }

    #[test]
    fn splits_remainder_to_first_layer() {
        assert_eq!(split_units(10, 3).unwrap(), vec![4, 3, 3]);
        assert_eq!(split_units(128, 1).unwrap(), vec![128]);
        assert!(split_units(2, 3).is_err());
    }

    #[test]
    fn parallel_forward_matches_sequential() {
        let model = DeepParalEsn::new(vec![hp(32), hp(32)], 2, true, RngSpec::new(1)).unwrap();
        let x = inputs(3000, 2, 1);
        let seq = model.forward(&x, None, ScanMode::Sequential).unwrap();
        // Features lie in (-1, 1) and can cancel to near zero, so they are
        // compared in absolute terms; the scan itself is checked elementwise.
        for chunk in [Some(1), Some(100), None] {
            let par = model.forward(&x, None, ScanMode::Parallel { chunk_size: chunk }).unwrap();
            let dev = seq
                .features
                .as_slice()
                .iter()
                .zip(par.features.as_slice())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(dev <= 1e-12, "chunk {chunk:?}: {dev:e}");
        }
    }

    #[test]
    fn single_layer_concat_is_noop() {
        let x = inputs(50, 3, 2);
        let a = DeepParalEsn::new(vec![hp(16)], 3, true, RngSpec::new(5)).unwrap();
        let b = DeepParalEsn::new(vec![hp(16)], 3, false, RngSpec::new(5)).unwrap();
        let fa = a.forward(&x, None, ScanMode::Sequential).unwrap().features;
        let fb = b.forward(&x, None, ScanMode::Sequential).unwrap().features;
        assert_eq!(fa, fb);
    }

    #[test]
    fn concat_width_is_sum_of_layers() {
        let sizes = split_units(50, 3).unwrap();
        let model = DeepParalEsn::new(sizes.iter().map(|&n| hp(n)).collect(), 1, true, RngSpec::new(2)).unwrap();
        assert_eq!(model.feature_width(), 50);
        let out = model.forward(&inputs(20, 1, 3), None, ScanMode::Sequential).unwrap();
        assert_eq!(out.features.cols(), 50);
        assert_eq!(out.mixed.iter().map(Matrix::cols).collect::<Vec<_>>(), sizes);
        let last_only = DeepParalEsn::new(sizes.iter().map(|&n| hp(n)).collect(), 1, false, RngSpec::new(2)).unwrap();
        assert_eq!(last_only.feature_width(), 16);
    }

    #[test]
    fn two_layer_forward_matches_nested_loop() {
        let (t_len, n) = (8, 4);
        let hps = vec![
            LayerHyperparams { kernel_size: 3, ..hp(n) },
            LayerHyperparams { kernel_size: 3, ..hp(n) },
        ];
        let model = DeepParalEsn::new(hps, 2, true, RngSpec::new(9)).unwrap();
        let x = inputs(t_len, 2, 4);
        let out = model.forward(&x, None, ScanMode::Sequential).unwrap();

        let mut layer_input: Vec<Vec<f64>> = (0..t_len).map(|t| x.row(t).to_vec()).collect();
        for (l, layer) in model.layers().iter().enumerate() {
            let lam = layer.lambda_bar();
            let mut h = vec![C64::new(0.0, 0.0); n];
            let mut z_all = Vec::new();
            for t in 0..t_len {
                let u = &layer_input[t];
                for i in 0..n {
                    let wx = match layer.input_weights() {
                        InputWeights::Dense(w) => (0..u.len()).map(|j| w.get(i, j) * u[j]).sum::<C64>(),
                        InputWeights::Ring(w) => w[i] * u[(i + n - 1) % n],
                    };
                    h[i] = lam[i] * h[i] + layer.tau() * (wx + layer.bias()[i]);
                }
                let k = layer.mix_kernel();
                let z: Vec<f64> = (0..n)
                    .map(|i| {
                        let mut acc = layer.mix_bias();
                        for j in 0..k.len() {
                            let src = i as isize + j as isize - (k.len() / 2) as isize;
                            if src >= 0 && (src as usize) < n {
                                acc += k[j] * h[src as usize];
                            }
                        }
                        acc.re.tanh()
                    })
                    .collect();
                for i in 0..n {
                    assert!((out.mixed[l].get(t, i) - z[i]).abs() < 1e-13);
                }
                z_all.push(z);
            }
            layer_input = z_all;
        }
    }

    #[test]
    fn initial_state_count_checked() {
        let model = DeepParalEsn::new(vec![hp(8), hp(8)], 1, false, RngSpec::new(1)).unwrap();
        let h0 = vec![vec![C64::new(0.0, 0.0); 8]];
        assert!(model.forward(&inputs(5, 1, 1), Some(&h0), ScanMode::Sequential).is_err());
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let model = DeepParalEsn::new(vec![hp(12), hp(10)], 3, true, RngSpec::new(77)).unwrap();
        let text = model.to_json().unwrap();
        let back = DeepParalEsn::from_json(&text).unwrap();
        assert_eq!(back, model);
        let bits = |m: &DeepParalEsn| -> Vec<u64> {
            m.layers()
                .iter()
                .flat_map(|l| l.lambda_bar().iter().flat_map(|z| [z.re.to_bits(), z.im.to_bits()]))
                .collect()
        };
        assert_eq!(bits(&back), bits(&model));
    }

    #[test]
    fn construction_is_deterministic() {
        let a = DeepParalEsn::new(vec![hp(16), hp(16)], 2, false, RngSpec::new(3)).unwrap();
        let b = DeepParalEsn::new(vec![hp(16), hp(16)], 2, false, RngSpec::new(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.layers()[1].input_weights().param_count(), 16);
    }
}
