use instruct_nmt_core::corpus::{ToyConfig, ToyLanguage};
use instruct_nmt_core::text::words;
use proptest::prelude::*;

fn lang(names: usize) -> ToyLanguage {
    ToyLanguage::generate(32, 5, ToyConfig { names, ..ToyConfig::default() }).unwrap()
}

#[test]
fn names_are_their_own_translation() {
    let lex = lang(8).lexicon();
    let fixed: Vec<_> = lex.entries.iter().filter(|(s, t)| s == t).collect();
    assert_eq!(fixed.len(), 8);
    assert_eq!(lex.entries.len(), 32);
}

#[test]
fn no_names_means_disjoint_vocabularies() {
    let lex = lang(0).lexicon();
    assert!(lex.entries.iter().all(|(s, t)| s != t));
}

#[test]
fn names_must_leave_translated_words() {
    assert!(ToyLanguage::generate(32, 5, ToyConfig { names: 32, ..ToyConfig::default() }).is_err());
}

#[test]
fn names_keep_their_corpus_share() {
    let l = lang(8);
    let names: Vec<String> = l.lexicon().entries.into_iter().filter(|(s, t)| s == t).map(|(s, _)| s).collect();
    let corpus = l.corpus(400, 9, 0);
    let (mut hits, mut total) = (0usize, 0usize);
    for p in &corpus.pairs {
        for w in words(&p.src.to_lowercase()) {
            let w = w.trim_end_matches(['.', '?', '!']);
            total += 1;
            hits += names.iter().any(|n| n == w) as usize;
        }
    }
    let share = hits as f64 / total as f64;
    assert!((share - 0.25).abs() < 0.05, "{share}");
}

proptest! {
    #[test]
    fn round_trip_with_names(seed in 0u64..500, id in 0u64..500) {
        let l = ToyLanguage::generate(32, seed, ToyConfig { names: 8, ..ToyConfig::default() }).unwrap();
        let p = &l.corpus(1, seed, id).pairs[0];
        prop_assert_eq!(l.back_translate(&p.tgt).unwrap(), p.src.clone());
        prop_assert_eq!(words(&p.src).len(), words(&p.tgt).len());
    }
}
