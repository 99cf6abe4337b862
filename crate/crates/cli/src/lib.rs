//! Pipeline commands behind the `bitext` binary: data preparation,
//! translator and GAN training, translation, sampling and evaluation.

pub mod commands;
pub mod data;
pub mod error;

pub use commands::{
    evaluate, gan_checkpoint_path, generate, grad_check, load_gan, load_nmt, nmt_checkpoint_path, parse_direction,
    train_gan, train_nmt, translate, EvalMode, GanReport, LangSel, NmtReport,
};
pub use data::{load_prepared, prepare_data, PrepareReport, Prepared};
pub use error::{CliError, Result};
