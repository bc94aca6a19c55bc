//! Synthetic language pair for desk-scale experiments.
//!
//! Source words are drawn from a generated vocabulary; the target is the
//! word-by-word image under a bijective lexicon with every adjacent word
//! pair swapped ("a b c d e" -> "B A D C E"). Sentences optionally carry a
//! capitalized first word and a final punctuation mark, which the
//! translation preserves. Optionally some words are names that the lexicon
//! maps to themselves, as untranslated tokens in real bitext.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::{ParallelCorpus, SentencePair};
use crate::error::{Error, Result};
use crate::seed;
use crate::tasks::{Lexicon, LexiconKind};
use crate::text::capitalize_first;

const SRC_CONSONANTS: &str = "bdgkmnprt";
const TGT_CONSONANTS: &str = "fhjlsvwz";
const VOWELS: &str = "aeiou";
const FINAL_PUNCT: [(char, u32); 3] = [('.', 12), ('?', 5), ('!', 3)];

#[derive(Debug, Clone, PartialEq)]
pub struct ToyConfig {
    pub min_words: usize,
    pub max_words: usize,
    /// Capitalize the first word and end with punctuation.
    pub decorate: bool,
    /// Lexicon entries that translate to themselves.
    pub names: usize,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            min_words: 3,
            max_words: 12,
            decorate: true,
            names: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyLanguage {
    src_words: Vec<String>,
    forward: BTreeMap<String, String>,
    backward: BTreeMap<String, String>,
    cfg: ToyConfig,
}

fn word_inventory(consonants: &str, count: usize, rng: &mut seed::Rng) -> Vec<String> {
    let syllables: Vec<String> = consonants
        .chars()
        .flat_map(|c| VOWELS.chars().map(move |v| format!("{c}{v}")))
        .collect();
    let mut len = 2;
    while syllables.len().pow(len as u32) < count {
        len += 1;
    }
    let mut words: Vec<String> = vec![String::new()];
    for _ in 0..len {
        words = words
            .iter()
            .flat_map(|w| syllables.iter().map(move |s| format!("{w}{s}")))
            .collect();
    }
    words.shuffle(rng);
    words.truncate(count);
    words
}

fn split_decoration(sentence: &str) -> (bool, Option<char>, String) {
    let trimmed = sentence.trim();
    let punct = trimmed
        .chars()
        .last()
        .filter(|c| FINAL_PUNCT.iter().any(|(p, _)| p == c));
    let body = match punct {
        Some(p) => trimmed.strip_suffix(p).unwrap().trim_end(),
        None => trimmed,
    };
    let capitalized = body.chars().next().is_some_and(char::is_uppercase);
    (capitalized, punct, body.to_lowercase())
}

fn swap_adjacent<T>(items: &mut [T]) {
    for chunk in items.chunks_mut(2) {
        if chunk.len() == 2 {
            chunk.swap(0, 1);
        }
    }
}

fn map_sentence(sentence: &str, table: &BTreeMap<String, String>) -> Option<String> {
    let (capitalized, punct, body) = split_decoration(sentence);
    let mut out = body
        .split_whitespace()
        .map(|w| table.get(w).cloned())
        .collect::<Option<Vec<String>>>()?;
    if out.is_empty() {
        return None;
    }
    // swapping adjacent pairs is an involution, so the same rule inverts it
    swap_adjacent(&mut out);
    let mut s = out.join(" ");
    if capitalized {
        s = capitalize_first(&s);
    }
    if let Some(p) = punct {
        s.push(p);
    }
    Some(s)
}

impl ToyLanguage {
    pub fn generate(lexicon_size: usize, seed: u64, cfg: ToyConfig) -> Result<Self> {
        if lexicon_size < 10 {
            return Err(Error::InvalidArgument(format!(
                "lexicon_size must be >= 10, got {lexicon_size}"
            )));
        }
        if cfg.min_words < 1 || cfg.min_words > cfg.max_words {
            return Err(Error::InvalidArgument(format!(
                "invalid sentence length range {}..={}",
                cfg.min_words, cfg.max_words
            )));
        }
        if cfg.names >= lexicon_size {
            return Err(Error::InvalidArgument(format!(
                "names ({}) must be fewer than lexicon_size ({lexicon_size})",
                cfg.names
            )));
        }
        let mut rng = seed::stream(seed, "toy:lexicon", 0);
        let src_words = word_inventory(SRC_CONSONANTS, lexicon_size, &mut rng);
        let tgt_words = word_inventory(TGT_CONSONANTS, lexicon_size - cfg.names, &mut rng);
        let (names, translated) = src_words.split_at(cfg.names);
        let forward: BTreeMap<String, String> = names
            .iter()
            .map(|n| (n.clone(), n.clone()))
            .chain(translated.iter().cloned().zip(tgt_words))
            .collect();
        let backward = forward.iter().map(|(s, t)| (t.clone(), s.clone())).collect();
        Ok(Self {
            src_words,
            forward,
            backward,
            cfg,
        })
    }

    pub fn from_lexicon(lexicon: &Lexicon, cfg: ToyConfig) -> Result<Self> {
        let forward = lexicon.entries.clone();
        let backward: BTreeMap<String, String> =
            forward.iter().map(|(s, t)| (t.clone(), s.clone())).collect();
        if backward.len() != forward.len() {
            return Err(Error::InvalidArgument("toy lexicon is not injective".into()));
        }
        Ok(Self {
            src_words: forward.keys().cloned().collect(),
            forward,
            backward,
            cfg,
        })
    }

    pub fn lexicon(&self) -> Lexicon {
        Lexicon {
            kind: LexiconKind::Translation,
            entries: self.forward.clone(),
        }
    }

    /// Translate a sentence; `None` if it contains a word outside the lexicon.
    pub fn translate(&self, src: &str) -> Option<String> {
        map_sentence(src, &self.forward)
    }

    pub fn back_translate(&self, tgt: &str) -> Option<String> {
        map_sentence(tgt, &self.backward)
    }

    pub fn sample_sentence(&self, rng: &mut seed::Rng) -> String {
        let n = rng.random_range(self.cfg.min_words..=self.cfg.max_words);
        let words: Vec<&str> = (0..n)
            .map(|_| self.src_words[rng.random_range(0..self.src_words.len())].as_str())
            .collect();
        let mut s = words.join(" ");
        if self.cfg.decorate {
            s = capitalize_first(&s);
            let total: u32 = FINAL_PUNCT.iter().map(|(_, w)| w).sum();
            let mut pick = rng.random_range(0..total);
            for (p, w) in FINAL_PUNCT {
                if pick < w {
                    s.push(p);
                    break;
                }
                pick -= w;
            }
        }
        s
    }

    /// `n` pairs with ids `first_id..first_id + n`; each sentence is drawn
    /// from its own stream so the corpus does not depend on `n`.
    pub fn corpus(&self, n: usize, seed: u64, first_id: u64) -> ParallelCorpus {
        let pairs = (first_id..first_id + n as u64)
            .map(|id| {
                let src = self.sample_sentence(&mut seed::stream(seed, "toy:sentence", id));
                let tgt = self.translate(&src).expect("generated from lexicon");
                SentencePair::new(id, src, tgt)
            })
            .collect();
        ParallelCorpus::new(pairs, format!("toy(seed={seed})"))
    }
}

pub fn synthesize_toy_parallel(
    n: usize,
    seed: u64,
    lexicon_size: usize,
) -> Result<(ParallelCorpus, Lexicon)> {
    if n < 1 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    let lang = ToyLanguage::generate(lexicon_size, seed, ToyConfig::default())?;
    Ok((lang.corpus(n, seed, 0), lang.lexicon()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn plain_lang() -> ToyLanguage {
        let lex = Lexicon {
            kind: LexiconKind::Translation,
            entries: (1..=10).map(|i| (format!("w{i}"), format!("v{i}"))).collect(),
        };
        ToyLanguage::from_lexicon(&lex, ToyConfig::default()).unwrap()
    }

    #[test]
    fn swap_rule() {
        let l = plain_lang();
        assert_eq!(l.translate("w1 w2 w3").unwrap(), "v2 v1 v3");
        assert_eq!(l.translate("w1 w2 w3 w4").unwrap(), "v2 v1 v4 v3");
        assert_eq!(l.translate("W1 w2 w3?").unwrap(), "V2 v1 v3?");
        assert!(l.translate("w1 zz").is_none());
    }

    #[test]
    fn same_seed_same_corpus() {
        let a = synthesize_toy_parallel(50, 9, 20).unwrap();
        let b = synthesize_toy_parallel(50, 9, 20).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        let c = synthesize_toy_parallel(50, 10, 20).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn lengths_and_targets_in_lexicon() {
        let (c, lex) = synthesize_toy_parallel(200, 1, 12).unwrap();
        let images: std::collections::BTreeSet<&String> = lex.entries.values().collect();
        for p in &c.pairs {
            let n = p.src.split_whitespace().count();
            assert!((3..=12).contains(&n));
            for w in p.tgt.split_whitespace() {
                let core = w.trim_end_matches(['.', '?', '!']).to_lowercase();
                assert!(images.contains(&core), "{core}");
            }
        }
    }

    #[test]
    fn rejects_tiny_lexicon() {
        assert!(synthesize_toy_parallel(5, 1, 9).is_err());
        assert!(synthesize_toy_parallel(0, 1, 10).is_err());
    }

    proptest! {
        #[test]
        fn translation_is_invertible(seed in 0u64..1000, id in 0u64..1000) {
            let lang = ToyLanguage::generate(16, seed, ToyConfig::default()).unwrap();
            let src = lang.sample_sentence(&mut seed::stream(seed, "p", id));
            let tgt = lang.translate(&src).unwrap();
            prop_assert_eq!(lang.back_translate(&tgt).unwrap(), src);
        }
    }
}
