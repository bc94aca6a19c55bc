//! Native rule-based tasks. Each construction is either invertible or
//! checkable by a predicate, so success rate is well defined.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

use super::registry::{CheckInput, Params, TaskTransform, TransformInput, Transformed};
use super::{contrastive_length_label_with, LengthThresholds, Lexicon, LexiconKind, TaskKind};
use crate::seed::Rng;
use crate::text::{
    alnum_core, alnum_words, has_letter, has_punctuation, strip_punctuation, without_whitespace,
    words,
};

pub(super) fn all() -> Vec<Box<dyn TaskTransform>> {
    vec![
        Box::new(Uppercase),
        Box::new(Lowercase),
        Box::new(Titlecase),
        Box::new(RemovePunctuation),
        Box::new(Leetify),
        Box::new(RemoveAccents),
        Box::new(ShuffleWords),
        Box::new(AddHashtag),
        Box::new(InsertX { at_end: false }),
        Box::new(InsertX { at_end: true }),
        Box::new(SpacingError),
        Box::new(CoverageError),
        Box::new(RepetitionError),
        Box::new(FixMisspelling),
        Box::new(TranslateXToY),
        Box::new(LexiconSubstitution {
            kind: TaskKind::RemoveProfanity,
        }),
        Box::new(LexiconSubstitution {
            kind: TaskKind::AddAntonyms,
        }),
        Box::new(Length {
            kind: TaskKind::LengthSame,
        }),
        Box::new(Length {
            kind: TaskKind::LengthShorter,
        }),
        Box::new(Length {
            kind: TaskKind::LengthLonger,
        }),
        Box::new(EmptyInstruction),
    ]
}

struct Uppercase;

impl TaskTransform for Uppercase {
    fn kind(&self) -> TaskKind {
        TaskKind::Uppercase
    }
    fn template(&self) -> &'static str {
        "uppercase"
    }
    fn transform(&self, input: &TransformInput<'_>, _: &mut Rng) -> Option<Transformed> {
        let tgt = &input.pair.tgt;
        has_letter(tgt).then(|| Transformed::target(input.pair, tgt.to_uppercase()))
    }
    fn check(&self, c: &CheckInput<'_>) -> bool {
        has_letter(c.output) && !c.output.chars().any(char::is_lowercase)
    }
}

struct Lowercase;

impl TaskTransform for Lowercase {
    fn kind(&self) -> TaskKind {
        TaskKind::Lowercase
    }
    fn template(&self) -> &'static str {
        "lowercase"
    }
    fn transform(&self, input: &TransformInput<'_>, _: &mut Rng) -> Option<Transformed> {
        let tgt = &input.pair.tgt;
        has_letter(tgt).then(|| Transformed::target(input.pair, tgt.to_lowercase()))
    }
    fn check(&self, c: &CheckInput<'_>) -> bool {
        has_letter(c.output) && !c.output.chars().any(char::is_uppercase)
    }
}

/// Uppercase the first letter of every whitespace-delimited word.
pub fn titlecase(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut need_cap = true;
    for c in s.chars() {
        if c.is_whitespace() {
            need_cap = true;
            out.push(c);
        } else if need_cap && c.is_alphabetic() {
            out.extend(c.to_uppercase());
            need_cap = false;
        } else {
            out.push(c);
        }
    }
    out
}

struct Titlecase;

impl TaskTransform for Titlecase {
    fn kind(&self) -> TaskKind {
        TaskKind::Titlecase
    }
    fn template(&self) -> &'static str {
        "titlecase"
    }
    fn transform(&self, input: &TransformInput<'_>, _: &mut Rng) -> Option<Transformed> {
        let tgt = &input.pair.tgt;
        has_letter(tgt).then(|| Transformed::target(input.pair, titlecase(tgt)))
    }
    fn check(&self, c: &CheckInput<'_>) -> bool {
        has_letter(c.output)
            && c
                .output
                .split_whitespace()
                .filter_map(|w| w.chars().find(|ch| ch.is_alphabetic()))
                .all(char::is_uppercase)
    }
}

struct RemovePunctuation;

impl TaskTransform for RemovePunctuation {
    fn kind(&self) -> TaskKind {
        TaskKind::RemovePunctuation
    }
    fn template(&self) -> &'static str {
        "remove punctuation"
    }
    fn transform(&self, input: &TransformInput<'_>, _: &mut Rng) -> Option<Transformed> {
        let tgt = &input.pair.tgt;
        if !has_punctuation(tgt) {
            return None;
        }
        let stripped = words(&strip_punctuation(tgt)).join(" ");
        (!stripped.is_empty()).then(|| Transformed::target(input.pair, stripped))
    }
    fn check(&self, c: &CheckInput<'_>) -> bool {
        !c.output.trim().is_empty() && !has_punctuation(c.output)
    }
}

const LEET: [(char, char); 6] = [('a', '4'), ('e', '3'), ('i', '1'), ('o', '0'), ('s', '5'), ('t', '7')];

fn leet(c: char) -> Option<char> {
    let lower = c.to_ascii_lowercase();
    LEET.iter().find(|(l, _)| *l == lower).map(|(_, d)| *d)
}

struct Leetify;

impl TaskTransform for Leetify {
    fn kind(&self) -> TaskKind {
        TaskKind::Leetify
    }
    fn template(&self) -> &'static str {
        "leetify"
    }
    fn transform(&self, input: &TransformInput<'_>, _: &mut Rng) -> Option<Transformed> {
        let tgt = &input.pair.tgt;
        if !tgt.chars().any(|c| leet(c).is_some()) {
            return None;
        }
        let out = tgt.chars().map(|c| leet(c).unwrap_or(c)).collect();
        Some(Transformed::target(input.pair, out))
    }
    fn check(&self, c: &CheckInput<'_>) -> bool {
        !c.output.trim().is_empty() && !c.output.chars().any(|ch| leet(ch).is_some())
    }
}

pub fn remove_accents(s: &str) -> String {
    s.nfd().filter(|c| !is_combining_mark(*c)).nfc().collect()
}

struct RemoveAccents;

impl TaskTransform for RemoveAccents {
    fn kind(&self) -> TaskKind {
        TaskKind::RemoveAccents
    }
    fn template(&self) -> &'static str {
        "remove accents"
    }
    fn transform(&self, input: &TransformInput<'_>, _: &mut Rng) -> Option<Transformed> {
        let tgt = &input.pair.tgt;
        let out = remove_accents(tgt);
        (out != *tgt).then(|| Transformed::target(input.pair, out))
    }
    fn check(&self, c: &CheckInput<'_>) -> bool {
        !c.output.trim().is_empty() && !c.output.nfd().any(is_combining_mark)
    }
}

fn sorted_words(s: &str) -> Vec<&str> {
    let mut w = words(s);
    w.sort_unstable();
    w
}

struct ShuffleWords;

impl TaskTransform for ShuffleWords {
    fn kind(&self) -> TaskKind {
        TaskKind::ShuffleWords
    }
    fn template(&self) -> &'static str {
        "shuffle words"
    }
    fn transform(&self, input: &TransformInput<'_>, rng: &mut Rng) -> Option<Transformed> {
        let mut w = words(&input.pair.tgt);
        if w.len() < 2 {
            return None;
        }
        w.shuffle(rng);
        Some(Transformed::target(input.pair, w.join(" ")))
    }
    fn check(&self, c: &CheckInput<'_>) -> bool {
        !c.output.trim().is_empty() && sorted_words(c.output) == sorted_words(c.general_output)
    }
}

struct AddHashtag;

impl TaskTransform for AddHashtag {
    fn kind(&self) -> TaskKind {
        TaskKind::AddHashtag
    }
    fn template(&self) -> &'static str {
        "add hashtag"
    }
    fn transform(&self, input: &TransformInput<'_>, _: &mut Rng) -> Option<Transformed> {
        let last = *alnum_words(&input.pair.src).last()?;
        let tgt = format!("{} #{last}", input.pair.tgt.trim_end());
        Some(Transformed::target(input.pair, tgt).with("hashtag", last))
    }
    fn check(&self, c: &CheckInput<'_>) -> bool {
        match alnum_words(c.src).last() {
            Some(last) => c.output.trim_end().ends_with(&format!("#{last}")),
            None => false,
        }
    }
}

struct InsertX {
    at_end: bool,
}

impl TaskTransform for InsertX {
    fn kind(&self) -> TaskKind {
        if self.at_end {
            TaskKind::InsertXEnd
        } else {
            TaskKind::InsertXBegin
        }
    }
    fn template(&self) -> &'static str {
        if self.at_end {
            "insert \"{X}\" at the end"
        } else {
            "insert \"{X}\" at the beginning"
        }
    }
    fn transform(&self, input: &TransformInput<'_>, rng: &mut Rng) -> Option<Transformed> {
        let x = match input.params.get("X") {
            Some(x) => x.as_str(),
            None => *alnum_words(&input.pair.src).choose(rng)?,
        };
        let tgt = input.pair.tgt.trim();
        let out = if self.at_end {
            format!("{tgt} {x}")
        } else {
            format!("{x} {tgt}")
        };
        Some(Transformed::target(input.pair, out).with("X", x))
    }
    fn check(&self, c: &CheckInput<'_>) -> bool {
        let Some(x) = c.params.get("X") else {
            return false;
        };
        // Case-blind so that a composed case task cannot veto the insertion.
        let (out, x) = (c.output.trim().to_lowercase(), x.to_lowercase());
        if self.at_end {
            out.ends_with(&x)
        } else {
            out.starts_with(&x)
        }
    }
}

struct SpacingError;

impl TaskTransform for SpacingError {
    fn kind(&self) -> TaskKind {
        TaskKind::SpacingError
    }
    fn template(&self) -> &'static str {
        "spacing error"
    }
    fn transform(&self, input: &TransformInput<'_>, rng: &mut Rng) -> Option<Transformed> {
        let w = words(&input.pair.tgt);
        if w.len() < 2 {
            return None;
        }
        let gap = rng.random_range(0..w.len() - 1);
        let sep = if rng.random_bool(0.5) { "" } else { "  " };
        let mut out = String::new();
        for (i, word) in w.iter().enumerate() {
            out.push_str(word);
            if i + 1 < w.len() {
                out.push_str(if i == gap { sep } else { " " });
            }
        }
        Some(Transformed::target(input.pair, out))
    }
    fn check(&self, c: &CheckInput<'_>) -> bool {
        c.output.trim() != c.general_output.trim()
            && without_whitespace(c.output) == without_whitespace(c.general_output)
    }
}

struct CoverageError;

impl TaskTransform for CoverageError {
    fn kind(&self) -> TaskKind {
        TaskKind::CoverageError
    }
    fn template(&self) -> &'static str {
        "coverage error"
    }
    fn transform(&self, input: &TransformInput<'_>, rng: &mut Rng) -> Option<Transformed> {
        let mut w = words(&input.pair.tgt);
        let candidates: Vec<usize> = (0..w.len())
            .filter(|&i| alnum_core(w[i]).chars().count() >= 4)
            .collect();
        if w.len() < 2 {
            return None;
        }
        let drop = *candidates.choose(rng)?;
        w.remove(drop);
        Some(Transformed::target(input.pair, w.join(" ")))
    }
    fn check(&self, c: &CheckInput<'_>) -> bool {
        let out = sorted_words(c.output);
        let mut general = sorted_words(c.general_output);
        if out.len() + 1 != general.len() {
            return false;
        }
        for w in out {
            match general.iter().position(|g| *g == w) {
                Some(i) => {
                    general.remove(i);
                }
                None => return false,
            }
        }
        true
    }
}

struct RepetitionError;

impl TaskTransform for RepetitionError {
    fn kind(&self) -> TaskKind {
        TaskKind::RepetitionError
    }
    fn template(&self) -> &'static str {
        "introduce repetition error"
    }
    fn transform(&self, input: &TransformInput<'_>, rng: &mut Rng) -> Option<Transformed> {
        let mut w = words(&input.pair.tgt);
        if w.is_empty() {
            return None;
        }
        let i = rng.random_range(0..w.len());
        w.insert(i, w[i]);
        Some(Transformed::target(input.pair, w.join(" ")))
    }
    fn check(&self, c: &CheckInput<'_>) -> bool {
        words(c.output).windows(2).any(|p| p[0] == p[1])
    }
}

fn misspell(word: &str, rng: &mut Rng) -> String {
    let chars: Vec<char> = word.chars().collect();
    loop {
        let mut out = chars.clone();
        match rng.random_range(0..3) {
            0 => {
                let i = rng.random_range(0..out.len() - 1);
                out.swap(i, i + 1);
            }
            1 => {
                out.remove(rng.random_range(0..out.len()));
            }
            _ => {
                let i = rng.random_range(0..out.len());
                let c = (b'a' + rng.random_range(0..26u8)) as char;
                out[i] = c;
            }
        }
        if out != chars {
            return out.into_iter().collect();
        }
    }
}

struct FixMisspelling;

impl TaskTransform for FixMisspelling {
    fn kind(&self) -> TaskKind {
        TaskKind::FixMisspelling
    }
    fn template(&self) -> &'static str {
        "fix misspelling"
    }
    fn transform(&self, input: &TransformInput<'_>, rng: &mut Rng) -> Option<Transformed> {
        let w = words(&input.pair.src);
        let candidates: Vec<usize> = (0..w.len())
            .filter(|&i| alnum_core(w[i]).chars().count() >= 3)
            .collect();
        let pick = *candidates.choose(rng)?;
        let original = alnum_core(w[pick]);
        let corrupted = misspell(original, rng);
        if alnum_words(&input.pair.tgt).contains(&corrupted.as_str()) {
            return None;
        }
        let src: Vec<String> = w
            .iter()
            .enumerate()
            .map(|(i, tok)| {
                if i == pick {
                    tok.replacen(original, &corrupted, 1)
                } else {
                    tok.to_string()
                }
            })
            .collect();
        Some(Transformed {
            src: src.join(" "),
            tgt: input.pair.tgt.clone(),
            params: Params::new(),
        }
        .with("original", original)
        .with("corrupted", corrupted))
    }
    // Weak by construction: only verifies the corrupted token is not copied.
    fn check(&self, c: &CheckInput<'_>) -> bool {
        let Some(bad) = c.params.get("corrupted") else {
            return false;
        };
        !c.output.trim().is_empty() && !alnum_words(c.output).iter().any(|w| w == bad)
    }
}

struct TranslateXToY;

impl TaskTransform for TranslateXToY {
    fn kind(&self) -> TaskKind {
        TaskKind::TranslateXToY
    }
    fn template(&self) -> &'static str {
        "translate \"{X}\" to \"{Y}\""
    }
    fn lexicon_kind(&self) -> Option<LexiconKind> {
        Some(LexiconKind::Translation)
    }
    fn transform(&self, input: &TransformInput<'_>, rng: &mut Rng) -> Option<Transformed> {
        let lex = input.lexicon?;
        let tgt_words: Vec<String> = alnum_words(&input.pair.tgt)
            .iter()
            .map(|w| w.to_lowercase())
            .collect();
        let mut candidates: Vec<(&str, &str)> = Vec::new();
        for w in alnum_words(&input.pair.src) {
            if let Some(y) = lex.get(w) {
                if tgt_words.iter().any(|t| t == &y.to_lowercase())
                    && !candidates.iter().any(|(x, _)| x.eq_ignore_ascii_case(w))
                {
                    candidates.push((w, y));
                }
            }
        }
        let (x, y) = *candidates.choose(rng)?;
        Some(
            Transformed::target(input.pair, input.pair.tgt.clone())
                .with("X", x)
                .with("Y", y),
        )
    }
    fn check(&self, c: &CheckInput<'_>) -> bool {
        match c.params.get("Y") {
            Some(y) => c.output.to_lowercase().contains(&y.to_lowercase()),
            None => false,
        }
    }
}

fn match_case(replacement: &str, original: &str) -> String {
    if original.chars().next().is_some_and(char::is_uppercase) {
        crate::text::capitalize_first(replacement)
    } else {
        replacement.to_string()
    }
}

/// Substitute lexicon words in `text`; returns the new text and the
/// replacement words used, or `None` if nothing matched.
fn substitute(text: &str, lex: &Lexicon) -> Option<(String, Vec<String>)> {
    let mut out: Vec<String> = Vec::new();
    let mut used = Vec::new();
    for tok in text.split_whitespace() {
        let core = alnum_core(tok);
        match (!core.is_empty()).then(|| lex.get(core)).flatten() {
            Some(rep) => {
                used.push(rep.to_string());
                let replaced = tok.replacen(core, &match_case(rep, core), 1);
                if replaced.chars().any(char::is_alphanumeric) {
                    out.push(replaced);
                } else if let Some(prev) = out.last_mut() {
                    // orphaned punctuation sticks to the previous word
                    prev.push_str(&replaced);
                } else if !replaced.is_empty() {
                    out.push(replaced);
                }
            }
            None => out.push(tok.to_string()),
        }
    }
    let joined = out.join(" ");
    (!used.is_empty() && !joined.trim().is_empty()).then_some((joined, used))
}

struct LexiconSubstitution {
    kind: TaskKind,
}

impl TaskTransform for LexiconSubstitution {
    fn kind(&self) -> TaskKind {
        self.kind
    }
    fn template(&self) -> &'static str {
        match self.kind {
            TaskKind::RemoveProfanity => "remove profanity",
            _ => "add antonyms",
        }
    }
    fn lexicon_kind(&self) -> Option<LexiconKind> {
        Some(match self.kind {
            TaskKind::RemoveProfanity => LexiconKind::Profanity,
            _ => LexiconKind::Antonym,
        })
    }
    fn transform(&self, input: &TransformInput<'_>, _: &mut Rng) -> Option<Transformed> {
        let (tgt, used) = substitute(&input.pair.tgt, input.lexicon?)?;
        let t = Transformed::target(input.pair, tgt);
        Some(if self.kind == TaskKind::AddAntonyms {
            t.with("antonyms", used.join(","))
        } else {
            t
        })
    }
    fn check(&self, c: &CheckInput<'_>) -> bool {
        let Some(lex) = c.lexicon else {
            return false;
        };
        let out: Vec<String> = alnum_words(c.output)
            .iter()
            .map(|w| w.to_lowercase())
            .collect();
        match self.kind {
            TaskKind::RemoveProfanity => {
                !c.output.trim().is_empty() && !out.iter().any(|w| lex.contains(w))
            }
            _ => {
                let expected: Vec<String> = match c.params.get("antonyms") {
                    Some(list) => list.split(',').map(|s| s.to_lowercase()).collect(),
                    None => lex.values().map(str::to_lowercase).collect(),
                };
                out.iter().any(|w| expected.contains(w))
            }
        }
    }
}

struct Length {
    kind: TaskKind,
}

impl TaskTransform for Length {
    fn kind(&self) -> TaskKind {
        self.kind
    }
    fn template(&self) -> &'static str {
        match self.kind {
            TaskKind::LengthSame => "same length",
            TaskKind::LengthShorter => "shorter length",
            _ => "longer length",
        }
    }
    fn transform(&self, input: &TransformInput<'_>, _: &mut Rng) -> Option<Transformed> {
        let th = LengthThresholds::from_params(input.params).ok()?;
        (contrastive_length_label_with(input.pair, &th) == Some(self.kind))
            .then(|| Transformed::target(input.pair, input.pair.tgt.clone()))
    }
    fn check(&self, c: &CheckInput<'_>) -> bool {
        let Ok(th) = LengthThresholds::from_params(c.params) else {
            return false;
        };
        th.label(words(c.src).len(), words(c.output).len()) == Some(self.kind)
    }
}

struct EmptyInstruction;

impl TaskTransform for EmptyInstruction {
    fn kind(&self) -> TaskKind {
        TaskKind::EmptyInstruction
    }
    fn template(&self) -> &'static str {
        ""
    }
    fn transform(&self, input: &TransformInput<'_>, _: &mut Rng) -> Option<Transformed> {
        Some(Transformed::target(input.pair, input.pair.tgt.clone()))
    }
    fn check(&self, c: &CheckInput<'_>) -> bool {
        c.output.trim_end() == c.general_output.trim_end()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn titlecase_words() {
        assert_eq!(titlecase("guten tag, 4you"), "Guten Tag, 4You");
    }

    #[test]
    fn accents_removed() {
        assert_eq!(remove_accents("Grüße, café"), "Gruße, cafe");
        assert_eq!(remove_accents(&remove_accents("Ångström")), remove_accents("Ångström"));
    }

    #[test]
    fn substitution_keeps_punctuation() {
        let lex = Lexicon::new(
            LexiconKind::Profanity,
            [("damn".to_string(), String::new())].into_iter().collect(),
        )
        .unwrap();
        let (out, used) = substitute("oh no, damn!", &lex).unwrap();
        assert_eq!(out, "oh no,!");
        assert_eq!(used, [""]);
        assert!(substitute("fine", &lex).is_none());
    }
}
