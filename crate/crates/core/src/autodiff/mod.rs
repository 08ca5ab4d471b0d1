//! Minimal reverse-mode differentiation: tensors, a recording tape, dense and
//! LSTM layers, Adam with global-norm clipping, and a checkpoint format.

pub mod checkpoint;
pub mod layers;
pub mod optim;
pub mod tape;
pub mod tensor;

pub use checkpoint::{Checkpoint, CheckpointError, ParamGroup};
pub use layers::{dense, init_lstm_bias, init_weight, lstm_cell, lstm_sequence, LstmVars};
pub use optim::{clip_grad_norm, global_norm, Adam};
pub use tape::{bce_scalar, Gradients, Tape, Var, BCE_EPS};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("graph error: {0}")]
    Graph(String),
}
