use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LexiconKind {
    Translation,
    Antonym,
    Profanity,
}

/// Word-to-word table. Keys are matched case-insensitively against the
/// alphanumeric core of whitespace tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    pub kind: LexiconKind,
    pub entries: BTreeMap<String, String>,
}

impl Lexicon {
    pub fn new(kind: LexiconKind, entries: BTreeMap<String, String>) -> Result<Self> {
        let lex = Self { kind, entries };
        lex.validate()?;
        Ok(lex)
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.keys().any(|k| k.trim().is_empty()) {
            return Err(Error::InvalidArgument("lexicon keys must be non-empty".into()));
        }
        if self.kind == LexiconKind::Translation {
            let images: BTreeSet<&String> = self.entries.values().collect();
            if images.len() != self.entries.len() {
                return Err(Error::InvalidArgument(
                    "translation lexicon must be injective".into(),
                ));
            }
        }
        Ok(())
    }

    /// Two-column TSV: `word<TAB>replacement`. A profanity line may omit the
    /// replacement, meaning the word is deleted.
    pub fn load(path: &Path, kind: LexiconKind) -> Result<Self> {
        let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut entries = BTreeMap::new();
        for (i, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let (key, value) = match (fields.as_slice(), kind) {
                ([k, v], _) => (*k, *v),
                ([k], LexiconKind::Profanity) => (*k, ""),
                _ => {
                    return Err(Error::Malformed {
                        path: path.to_path_buf(),
                        line: i + 1,
                        msg: "expected `word<TAB>replacement`".into(),
                    })
                }
            };
            entries.insert(key.trim().to_lowercase(), value.trim().to_string());
        }
        if entries.is_empty() {
            return Err(Error::Empty(format!("lexicon {}", path.display())));
        }
        Self::new(kind, entries)
    }

    pub fn get(&self, word: &str) -> Option<&str> {
        self.entries.get(&word.to_lowercase()).map(String::as_str)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.entries.contains_key(&word.to_lowercase())
    }

    pub fn values(&self) -> impl Iterator<Item = &str> {
        self.entries.values().map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn load_tsv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.tsv");
        fs::write(&p, "Damn\tdarn\nheck\n").unwrap();
        let lex = Lexicon::load(&p, LexiconKind::Profanity).unwrap();
        assert_eq!(lex.get("DAMN"), Some("darn"));
        assert_eq!(lex.get("heck"), Some(""));
        assert!(Lexicon::load(&p, LexiconKind::Antonym).is_err());
    }

    #[test]
    fn translation_must_be_injective() {
        let entries = [("a", "x"), ("b", "x")]
            .into_iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect();
        assert!(Lexicon::new(LexiconKind::Translation, entries).is_err());
    }
}
