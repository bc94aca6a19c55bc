#![allow(dead_code)]

use instruct_nmt_model::{init_model, Example, ModelConfig, ModelParams};

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        d_model: 16,
        heads: 2,
        d_ff: 32,
        enc_layers: 2,
        dec_layers: 2,
        max_len: 12,
        segment_token: None,
    }
}

pub fn tiny_model(vocab: usize, seed: u64) -> ModelParams {
    init_model(&tiny_config(), vocab, seed).unwrap()
}

/// Sources over ids 3.. with BOS=1 / EOS=2 framed targets.
pub fn tiny_batch() -> Vec<Example> {
    vec![
        (vec![5, 6, 7, 2], vec![1, 7, 6, 5, 2]),
        (vec![8, 3, 2], vec![1, 3, 8, 2]),
        (vec![9, 2], vec![1, 9, 9, 2]),
    ]
}
