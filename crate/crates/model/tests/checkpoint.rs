mod common;

use common::tiny_model;
use instruct_nmt_model::{
    checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint, ModelError, CHECKPOINT_VERSION,
};
use std::path::Path;

#[test]
fn roundtrip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let p = tiny_model(13, 7);
    save_checkpoint(&p, Some("abc"), &path).unwrap();
    let c = load_checkpoint(&path).unwrap();
    assert_eq!(c.params, p);
    assert_eq!(c.vocab_hash.as_deref(), Some("abc"));
    let bits = |v: Vec<f64>| v.into_iter().map(f64::to_bits).collect::<Vec<_>>();
    assert_eq!(bits(c.params.flat()), bits(p.flat()));
    assert_eq!(std::fs::read(&path).unwrap(), checkpoint_bytes(&p, Some("abc")).unwrap());
}

#[test]
fn truncated_file_reports_offset() {
    let bytes = checkpoint_bytes(&tiny_model(13, 7), None).unwrap();
    let cut = &bytes[..bytes.len() - 5];
    match parse_checkpoint(cut, Path::new("m")) {
        Err(ModelError::Corrupt { offset, .. }) => assert_eq!(offset, cut.len() as u64),
        other => panic!("unexpected {other:?}"),
    }
    assert!(matches!(parse_checkpoint(&bytes[..3], Path::new("m")), Err(ModelError::Corrupt { offset: 0, .. })));
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(matches!(parse_checkpoint(&extra, Path::new("m")), Err(ModelError::Corrupt { .. })));
}

#[test]
fn version_bump_rejected() {
    let mut bytes = checkpoint_bytes(&tiny_model(13, 7), None).unwrap();
    bytes[8..12].copy_from_slice(&(CHECKPOINT_VERSION + 1).to_le_bytes());
    assert!(matches!(
        parse_checkpoint(&bytes, Path::new("m")),
        Err(ModelError::Version { found, .. }) if found == CHECKPOINT_VERSION + 1
    ));
}

#[test]
fn missing_file_is_io_error() {
    assert!(matches!(load_checkpoint(Path::new("/nonexistent/x.ckpt")), Err(ModelError::Io { .. })));
}
