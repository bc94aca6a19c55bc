mod common;

use common::{tiny_config, tiny_model};
use instruct_nmt_model::{
    expand_embeddings, init_model, interpolate, search_alpha, InterpolationSpec, ModelError, ModelParams,
};
use proptest::prelude::*;

#[test]
fn endpoints_are_exact() {
    let (a, b) = (tiny_model(10, 1), tiny_model(10, 2));
    assert_eq!(interpolate(&a, &b, 0.0).unwrap(), a);
    assert_eq!(interpolate(&a, &b, 1.0).unwrap(), b);
    assert!(interpolate(&a, &b, 1.5).is_err());
}

#[test]
fn scalar_blend() {
    let (a, b) = (tiny_model(10, 1), tiny_model(10, 2));
    let m = interpolate(&a, &b, 0.25).unwrap();
    let (x, y) = (a.get_flat(0), b.get_flat(0));
    assert_eq!(m.get_flat(0), 0.75 * x + 0.25 * y);
}

#[test]
fn expanded_rows_copied_from_finetuned() {
    let a = tiny_model(10, 1);
    let b = expand_embeddings(&tiny_model(10, 2), 2, 4, 0).unwrap();
    for alpha in [0.0, 0.3, 1.0] {
        let m = interpolate(&a, &b, alpha).unwrap();
        assert_eq!(m.vocab_size(), 12);
        assert_eq!(m.embedding().row(10), b.embedding().row(10));
        assert_eq!(m.embedding().row(11), b.embedding().row(11));
    }
    assert_eq!(&interpolate(&a, &b, 0.0).unwrap().embedding().data[..160], &a.embedding().data[..]);
    assert!(matches!(interpolate(&b, &a, 0.5), Err(ModelError::Param { .. })), "base-only rows");
    let other = init_model(&instruct_nmt_model::ModelConfig { d_ff: 8, ..tiny_config() }, 10, 1).unwrap();
    assert!(interpolate(&a, &other, 0.5).is_err());
    let seg = b.clone().with_segment_token(Some(11)).unwrap();
    assert_eq!(interpolate(&a, &seg, 0.5).unwrap().config().segment_token, Some(11));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn interpolation_is_linear(alpha in 0.0f64..=1.0, s in 0u64..100) {
        let (a, b) = (tiny_model(10, s), tiny_model(10, s + 1000));
        let x = interpolate(&a, &b, alpha).unwrap().flat();
        let y = interpolate(&a, &b, 1.0 - alpha).unwrap().flat();
        for (((x, y), p), q) in x.iter().zip(&y).zip(a.flat()).zip(b.flat()) {
            prop_assert!((x + y - (p + q)).abs() <= 1e-12);
        }
    }
}

fn alpha_of(m: &ModelParams, a: &ModelParams, b: &ModelParams) -> f64 {
    let (x, y, z) = (a.get_flat(0), b.get_flat(0), m.get_flat(0));
    (z - x) / (y - x)
}

#[test]
fn alpha_search() {
    let (a, b) = (tiny_model(10, 1), tiny_model(10, 2));
    let grid = InterpolationSpec::default().grid;
    let peak = |m: &ModelParams| -> Result<f64, ModelError> {
        let t = alpha_of(m, &a, &b);
        Ok(-(t - 0.5) * (t - 0.5))
    };
    let s = search_alpha(&a, &b, peak, &grid).unwrap();
    assert!((s.best_alpha - 0.5).abs() < 1e-12);
    assert_eq!(s.trace.len(), 11);
    let flat = |_: &ModelParams| -> Result<f64, ModelError> { Ok(1.0) };
    assert_eq!(search_alpha(&a, &b, flat, &grid).unwrap().best_alpha, 0.0);
    assert_eq!(search_alpha(&a, &b, flat, &[0.3]).unwrap().best_alpha, 0.3);
    let nan = |_: &ModelParams| -> Result<f64, ModelError> { Ok(f64::NAN) };
    assert!(search_alpha(&a, &b, nan, &grid).is_err());
    assert!(search_alpha(&a, &b, flat, &[]).is_err());
    assert!(search_alpha(&a, &b, flat, &[0.5, 0.1]).is_err());
}
