//! Small text helpers shared by filters, tasks and metrics.

use std::sync::LazyLock;

use regex::Regex;

static PUNCT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\p{P}").unwrap());

pub fn words(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

pub fn word_count(s: &str) -> usize {
    s.split_whitespace().count()
}

pub fn is_punctuation(c: char) -> bool {
    let mut buf = [0u8; 4];
    PUNCT.is_match(c.encode_utf8(&mut buf))
}

pub fn has_punctuation(s: &str) -> bool {
    PUNCT.is_match(s)
}

pub fn strip_punctuation(s: &str) -> String {
    PUNCT.replace_all(s, "").into_owned()
}

/// The alphanumeric core of a whitespace token: leading and trailing
/// non-alphanumeric characters removed.
pub fn alnum_core(token: &str) -> &str {
    token.trim_matches(|c: char| !c.is_alphanumeric())
}

/// Alphanumeric cores of all tokens, skipping tokens with none.
pub fn alnum_words(s: &str) -> Vec<&str> {
    s.split_whitespace()
        .map(alnum_core)
        .filter(|w| !w.is_empty())
        .collect()
}

pub fn has_letter(s: &str) -> bool {
    s.chars().any(char::is_alphabetic)
}

pub fn capitalize_first(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Remove whitespace characters entirely.
pub fn without_whitespace(s: &str) -> String {
    s.chars().filter(|c| !c.is_whitespace()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cores() {
        assert_eq!(alnum_core("nails?"), "nails");
        assert_eq!(alnum_core("\"mela\""), "mela");
        assert_eq!(alnum_words("Do you like Legos?"), ["Do", "you", "like", "Legos"]);
        assert!(is_punctuation('#'));
        assert!(!is_punctuation('a'));
        assert_eq!(strip_punctuation("Hi, you!"), "Hi you");
    }
}
