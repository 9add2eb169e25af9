//! A small f64 neural-network kernel with hand-written backward passes.
//!
//! Every layer stores its weights as named [`ParamTensor`]s and exposes a
//! `forward` that returns the activations needed by `backward`. Gradients are
//! accumulated into a zeroed copy of the layer (see [`Params::zeros_like`]),
//! so a layer and its gradient share one type.

mod char_encoder;
mod conv;
mod dense;
mod dropout;
mod gradcheck;
mod lstm;
mod nadam;
mod tensor;

pub use char_encoder::{CharEncoder, CharEncoderCache, CharEncoderConfig};
pub use conv::{conv1d_valid, conv1d_valid_backward, ConvBranch};
pub use dense::Dense;
pub use dropout::{dropout_mask, Mode};
pub use gradcheck::{finite_diff_grad, max_relative_error, relative_error, GRADCHECK_FLOOR};
pub use lstm::{lstm_step, BiLstm, BiLstmCache, Lstm, LstmCache, LstmStepCache};
pub use nadam::{nadam_step, NadamConfig, OptimizerState};
pub use tensor::{ParamTensor, Params};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NeuralError {
    #[error("{context}: expected {expected}, found {found}")]
    Shape {
        context: String,
        expected: usize,
        found: usize,
    },
    #[error("input of length {len} is shorter than kernel width {kernel}")]
    TooShort { len: usize, kernel: usize },
    #[error("non-finite gradient in `{tensor}` at component {index}")]
    NonFiniteGradient { tensor: String, index: usize },
    #[error("parameter `{0}` does not match the optimizer state")]
    StateMismatch(String),
}

pub(crate) fn check_len(context: &str, expected: usize, found: usize) -> Result<(), NeuralError> {
    if expected == found {
        Ok(())
    } else {
        Err(NeuralError::Shape {
            context: context.to_string(),
            expected,
            found,
        })
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
