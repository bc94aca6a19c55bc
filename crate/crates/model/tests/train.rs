mod common;

use common::tiny_model;
use instruct_nmt_core::seed;
use instruct_nmt_model::{greedy_decode, init_model, train, Example, ModelConfig, TrainConfig};
use rand::Rng;

fn copy_data(n: usize, vocab: u32, s: u64) -> Vec<Example> {
    let mut rng = seed::rng(s);
    (0..n)
        .map(|_| {
            let len = rng.random_range(2..6);
            let toks: Vec<u32> = (0..len).map(|_| rng.random_range(3..vocab)).collect();
            let mut src = toks.clone();
            src.push(2);
            let mut tgt = vec![1];
            tgt.extend(&toks);
            tgt.push(2);
            (src, tgt)
        })
        .collect()
}

#[test]
fn copy_task_loss_decreases() {
    let cfg = ModelConfig {
        d_model: 32,
        heads: 4,
        d_ff: 64,
        enc_layers: 1,
        dec_layers: 1,
        max_len: 16,
        segment_token: None,
    };
    let p = init_model(&cfg, 12, 0).unwrap();
    let data = copy_data(2000, 12, 1);
    let tc = TrainConfig {
        epochs: 4,
        learning_rate: 3e-3,
        warmup_steps: 50,
        ..Default::default()
    };
    let (q, trace) = train(p, &mut |_| data.clone(), &tc).unwrap();
    println!("copy-task loss per epoch: {:?}", trace.epoch_loss);
    assert!(trace.epoch_loss.last().unwrap() < &(0.5 * trace.epoch_loss[0]));
    let (src, tgt) = &copy_data(1, 12, 99)[0];
    assert_eq!(greedy_decode(&q, src, 10).unwrap(), tgt[1..tgt.len() - 1].to_vec());
}

#[test]
fn zero_learning_rate_leaves_params_unchanged() {
    let p = tiny_model(12, 3);
    let data = copy_data(40, 12, 2);
    let tc = TrainConfig { epochs: 2, learning_rate: 0.0, ..Default::default() };
    let (q, trace) = train(p.clone(), &mut |_| data.clone(), &tc).unwrap();
    assert_eq!(q, p);
    assert_eq!(trace.steps, 4);
}

#[test]
fn training_is_deterministic() {
    let data = copy_data(64, 12, 2);
    let tc = TrainConfig { epochs: 2, batch_size: 16, ..Default::default() };
    let run = || train(tiny_model(12, 3), &mut |_| data.clone(), &tc).unwrap();
    assert_eq!(run(), run());
}

#[test]
fn invalid_config_and_empty_data() {
    let bad = TrainConfig { epochs: 0, ..Default::default() };
    assert!(train(tiny_model(12, 3), &mut |_| copy_data(4, 12, 1), &bad).is_err());
    assert!(train(tiny_model(12, 3), &mut |_| Vec::new(), &TrainConfig::default()).is_err());
}

#[test]
fn divergence_is_reported_with_step() {
    let tc = TrainConfig { learning_rate: 1e300, warmup_steps: 0, clip_norm: 0.0, ..Default::default() };
    let data = copy_data(64, 12, 2);
    match train(tiny_model(12, 3), &mut |_| data.clone(), &tc) {
        Err(instruct_nmt_model::ModelError::Divergence { step, .. }) => assert!(step >= 2),
        other => panic!("expected divergence, got {:?}", other.map(|r| r.1)),
    }
}
