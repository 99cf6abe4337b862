//! Shared-latent bilingual translation and latent-code text generation.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] and [`autodiff`]: dense tensors and a dynamic graph with
//!   reverse-mode gradients, including the second-order support needed by
//!   the WGAN gradient penalty.
//! * [`nn`]: LSTM, bidirectional encoder, attention decoder with per-language
//!   output heads, initialisation, Adam and RMSProp.
//! * [`corpus`], [`xlingual`], [`synth`]: text handling, cross-lingual
//!   embeddings and word-by-word dictionaries, synthetic cipher languages.
//! * [`nmt`]: the denoising / back-translation trainer.
//! * [`gan`]: generator and critic over encoder code matrices.
//! * [`eval`]: BLEU variants and RNN language-model perplexity.
//! * [`config`] and [`checkpoint`]: run configuration and the binary
//!   tensor container shared by every stage.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod eval;
pub mod gan;
pub mod nmt;
pub mod nn;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod xlingual;

pub use autodiff::{Graph, Var};
pub use checkpoint::Checkpoint;
pub use config::RunConfig;
pub use corpus::{NoiseConfig, TokenSeq, Vocabulary};
pub use gan::{GanConfig, GanModel};
pub use nmt::{NmtConfig, NmtModel, TranslatorFn};
pub use nn::{CodeMatrix, ParamStore};
pub use tensor::{Tensor, TensorError};
