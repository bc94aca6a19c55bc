//! A small pre-LN Transformer encoder-decoder in double precision with
//! hand-derived gradients, greedy decoding, vocabulary expansion and
//! checkpoint interpolation.

mod checkpoint;
mod decode;
mod error;
mod expand;
mod interp;
mod linalg;
mod params;
mod train;
mod transformer;

pub use checkpoint::{
    checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION, MAGIC,
};
pub use decode::{argmax, greedy_decode, DecoderState};
pub use error::{ModelError, Result};
pub use expand::{expand_embeddings, pca_top_k};
pub use interp::{interpolate, search_alpha, AlphaSearch, InterpolationSpec};
pub use params::{init_model, ModelConfig, ModelParams, Tensor};
pub use train::{grad_norm, train, TrainConfig, TrainTrace};
pub use transformer::{forward_loss, loss, softmax, teacher_forced_logits, Example};
