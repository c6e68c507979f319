//! Deterministic 64-bit neural-network kernel: layers with explicit forward and
//! backward passes, packed variable-length sequences, and finite-difference checks.

pub mod activation;
pub mod affine;
pub mod attention;
pub mod dropout;
mod gemm;
pub mod gradcheck;
pub mod loss;
pub mod lstm;
pub mod norm;
pub mod packed;
pub mod rng;
pub mod tensor;

pub use activation::{gelu, gelu_grad, masked_softmax, relu, sigmoid, softmax};
pub use affine::{affine_backward, affine_forward, Affine, AffineGrads};
pub use attention::{attention_pool, AttentionParams, AttentionPool};
pub use dropout::dropout;
pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use loss::weighted_cross_entropy;
pub use lstm::{bilstm_forward, lstm_cell_step, BiLstmLayer, BiLstmWeights, LstmDirection, LstmState, LstmWeights};
pub use norm::{batch_norm, layer_norm, BatchNorm, BatchNormState, LayerNorm};
pub use packed::PackedLayout;
pub use rng::RngStream;
pub use tensor::{Matrix, NamedTensor, ParamId, ParamStore};

/// Whether a forward pass trains (dropout, batch statistics) or evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}
