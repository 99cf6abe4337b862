//! Neural building blocks: parameter storage, LSTM cells, the shared
//! bidirectional encoder and attention decoder, and optimizers.

mod lstm;
mod optim;
mod params;
mod seq2seq;

pub use lstm::{init_lstm, lstm_step, LstmVars};
pub use optim::{clip_grad_norm, Adam, RmsProp};
pub use params::{Bound, ParamError, ParamStore};
pub use seq2seq::{
    attention_context, strip_eos, ConcatMode, DecodeOutput, EncodedBatch, ModelDims, Seq2Seq,
};

use crate::tensor::Tensor;

/// Half-width of the uniform weight initialisation.
pub const INIT_RANGE: f64 = 0.08;
/// Initial forget-gate bias.
pub const FORGET_BIAS: f64 = 1.0;

/// Encoder output for one sentence: `T x depth`, row `t` being the forward
/// and backward states at step `t` concatenated depthwise.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeMatrix {
    pub values: Tensor,
}

impl CodeMatrix {
    pub fn len(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn depth(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn row(&self, t: usize) -> &[f64] {
        self.values.row(t)
    }

    /// Pad with zero rows up to `len` timesteps.
    pub fn padded(&self, len: usize) -> Option<CodeMatrix> {
        if self.len() > len {
            return None;
        }
        let mut data = self.values.to_vec();
        data.resize(len * self.depth(), 0.0);
        Some(CodeMatrix {
            values: Tensor::new(vec![len, self.depth()], data).ok()?,
        })
    }
}
