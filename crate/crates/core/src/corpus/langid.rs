//! Character n-gram (orders 1..=3) language identifier with additive
//! smoothing. Each order contributes `log P(c | previous n-1 chars)`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAX_ORDER: usize = 3;
const DEFAULT_SMOOTHING: f64 = 0.5;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct LangTable {
    /// n-gram (context + char) -> count, all orders together
    ngrams: BTreeMap<String, u64>,
    /// context -> number of times it was followed by a character
    contexts: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LangIdModel {
    languages: Vec<String>,
    tables: Vec<LangTable>,
    smoothing: f64,
    /// Distinct training characters plus one bucket for unseen ones.
    alphabet_size: usize,
}

fn normalize(text: &str) -> Vec<char> {
    text.trim().chars().flat_map(char::to_lowercase).collect()
}

pub fn train_langid(samples: &[(String, String)]) -> Result<LangIdModel> {
    train_langid_with(samples, DEFAULT_SMOOTHING)
}

pub fn train_langid_with(samples: &[(String, String)], smoothing: f64) -> Result<LangIdModel> {
    if !(smoothing > 0.0) {
        return Err(Error::InvalidArgument("smoothing must be positive".into()));
    }
    let languages: BTreeSet<&str> = samples.iter().map(|(_, l)| l.as_str()).collect();
    if languages.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "language-id training needs at least 2 languages, got {}",
            languages.len()
        )));
    }
    let languages: Vec<String> = languages.into_iter().map(String::from).collect();
    let mut tables = vec![LangTable::default(); languages.len()];
    let mut alphabet = BTreeSet::new();
    for (text, lang) in samples {
        let li = languages.binary_search(lang).unwrap();
        let chars = normalize(text);
        alphabet.extend(chars.iter().copied());
        let table = &mut tables[li];
        for i in 0..chars.len() {
            for n in 1..=MAX_ORDER.min(i + 1) {
                let ctx: String = chars[i + 1 - n..i].iter().collect();
                let gram: String = chars[i + 1 - n..=i].iter().collect();
                *table.ngrams.entry(gram).or_default() += 1;
                *table.contexts.entry(ctx).or_default() += 1;
            }
        }
    }
    Ok(LangIdModel {
        languages,
        tables,
        smoothing,
        alphabet_size: alphabet.len() + 1,
    })
}

impl LangIdModel {
    pub fn languages(&self) -> &[String] {
        &self.languages
    }

    /// Log-probability of `text` under each language, in `languages()` order.
    pub fn scores(&self, text: &str) -> Result<Vec<f64>> {
        let chars = normalize(text);
        if chars.is_empty() {
            return Err(Error::Empty("empty input".into()));
        }
        let k = self.smoothing;
        let a = self.alphabet_size as f64;
        Ok(self
            .tables
            .iter()
            .map(|t| {
                let mut lp = 0.0;
                for i in 0..chars.len() {
                    for n in 1..=MAX_ORDER.min(i + 1) {
                        let ctx: String = chars[i + 1 - n..i].iter().collect();
                        let gram: String = chars[i + 1 - n..=i].iter().collect();
                        let c = t.ngrams.get(&gram).copied().unwrap_or(0) as f64;
                        let cc = t.contexts.get(&ctx).copied().unwrap_or(0) as f64;
                        lp += ((c + k) / (cc + k * a)).ln();
                    }
                }
                lp
            })
            .collect())
    }

    /// Most probable language; ties go to the lexicographically first code.
    pub fn classify(&self, text: &str) -> Result<&str> {
        let scores = self.scores(text)?;
        let mut best = 0;
        for (i, s) in scores.iter().enumerate() {
            if *s > scores[best] {
                best = i;
            }
        }
        Ok(&self.languages[best])
    }

    /// Sum over the alphabet of P(c | ctx); 1 for every context by construction.
    #[cfg(test)]
    fn context_mass(&self, lang: usize, ctx: &str, alphabet: &BTreeSet<char>) -> f64 {
        let t = &self.tables[lang];
        let k = self.smoothing;
        let a = self.alphabet_size as f64;
        let cc = t.contexts.get(ctx).copied().unwrap_or(0) as f64;
        let seen: f64 = alphabet
            .iter()
            .map(|c| {
                let g = format!("{ctx}{c}");
                (t.ngrams.get(&g).copied().unwrap_or(0) as f64 + k) / (cc + k * a)
            })
            .sum();
        seen + k / (cc + k * a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> LangIdModel {
        train_langid(&[
            ("the and of".into(), "eng".into()),
            ("der die und".into(), "deu".into()),
        ])
        .unwrap()
    }

    #[test]
    fn classifies_by_hand_computed_scores() {
        // Log-probabilities of "of the" computed independently with a
        // hand-written scorer over the two training strings (k = 0.5,
        // alphabet of 12 seen chars + 1).
        let m = tiny();
        let s = m.scores("of the").unwrap();
        assert_eq!(m.languages(), ["deu", "eng"]);
        assert!((s[0] - -41.46602074781679).abs() < 1e-9, "{}", s[0]);
        assert!((s[1] - -33.407308436662994).abs() < 1e-9, "{}", s[1]);
        assert_eq!(m.classify("of the").unwrap(), "eng");
    }

    #[test]
    fn training_samples_classify_to_own_label() {
        let m = tiny();
        assert_eq!(m.classify("the and of").unwrap(), "eng");
        assert_eq!(m.classify("der die und").unwrap(), "deu");
    }

    #[test]
    fn empty_input_errors() {
        let err = tiny().classify("   ").unwrap_err();
        assert!(err.to_string().contains("empty input"));
    }

    #[test]
    fn single_language_rejected() {
        assert!(train_langid(&[("a".into(), "x".into()), ("b".into(), "x".into())]).is_err());
    }

    #[test]
    fn conditionals_normalize() {
        let m = tiny();
        let alphabet: BTreeSet<char> = "the and ofrdiu".chars().collect();
        for lang in 0..2 {
            for ctx in ["", "t", "th", "d", "zz"] {
                assert!((m.context_mass(lang, ctx, &alphabet) - 1.0).abs() < 1e-12);
            }
        }
    }
}
