//! ParalESN reservoirs.
//!
//! Each layer runs the linear recurrence
//! `h_t = λ̄ ⊙ h_{t-1} + τ (W_in z_t + b)` with a complex diagonal `λ̄`,
//! followed by a fixed nonlinear mixer `z_t = tanh(Re(w_mix ⋆ h_t + b_mix))`.
//! Because the recurrence is diagonal and linear it is evaluated with the
//! affine scan in [`crate::tensor_core`], sequentially or in parallel.

mod layer;
mod model;

pub use layer::{
    init_diag_transition, init_input_weights, layer_drive, mix, InputKind, InputWeights,
    LayerHyperparams, ParalEsnLayer,
};
pub use model::{split_units, DeepParalEsn, ForwardOutput, ModelRecord, ScanMode, MODEL_FORMAT_VERSION};
