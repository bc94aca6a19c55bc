//! Data side of the instruction-finetuning recipe for translation models:
//! bitext filtering, rule-based task synthesis, byte-level BPE with atomic
//! instruction tokens, parallel/task mixing and the evaluation protocol
//! (ChrF, response rate, success rate, zero-shot composition).

pub mod corpus;
pub mod error;
pub mod eval;
pub mod mixer;
pub mod seed;
pub mod tasks;
pub mod text;
pub mod tokenizer;

pub use error::{Error, Result};

/// Opening instruction tag.
pub const INSTRUCTION_OPEN: &str = "<instruction>";
/// Closing instruction tag.
pub const INSTRUCTION_CLOSE: &str = "</instruction>";
