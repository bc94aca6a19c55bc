//! Bitext filter rules. Each rule is a [`PairFilter`]; a pair is removed by
//! the first rule in [`FILTER_ORDER`] that rejects it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{LangIdModel, ParallelCorpus, SentencePair};
use crate::error::{Error, Result};
use crate::text::word_count;

/// Rule names in application order.
pub const FILTER_ORDER: [&str; 3] = ["len_ratio", "max_words", "langid"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterConfig {
    pub max_len_ratio: f64,
    pub max_words: usize,
    pub langid_enabled: bool,
    pub expected_src_lang: String,
    pub expected_tgt_lang: String,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            max_len_ratio: 1.3,
            max_words: 150,
            langid_enabled: false,
            expected_src_lang: "src".into(),
            expected_tgt_lang: "tgt".into(),
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_len_ratio > 1.0) || !self.max_len_ratio.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "max_len_ratio must be > 1, got {}",
                self.max_len_ratio
            )));
        }
        if self.max_words < 1 {
            return Err(Error::InvalidArgument("max_words must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterReport {
    pub kept: usize,
    pub removed_by_rule: BTreeMap<String, usize>,
    pub removed_ids: Vec<u64>,
}

impl FilterReport {
    pub fn total_removed(&self) -> usize {
        self.removed_by_rule.values().sum()
    }
}

pub trait PairFilter: Send + Sync {
    fn name(&self) -> &'static str;
    fn accepts(&self, pair: &SentencePair) -> bool;
}

/// Rejects pairs whose longer side exceeds `max_ratio` times the shorter one,
/// in whitespace-delimited words. Covers both directions.
#[derive(Debug, Clone)]
pub struct LengthRatioFilter {
    pub max_ratio: f64,
}

impl PairFilter for LengthRatioFilter {
    fn name(&self) -> &'static str {
        "len_ratio"
    }

    fn accepts(&self, pair: &SentencePair) -> bool {
        let (s, t) = (word_count(&pair.src), word_count(&pair.tgt));
        let (lo, hi) = (s.min(t), s.max(t));
        if lo == 0 {
            return false;
        }
        hi as f64 / lo as f64 <= self.max_ratio
    }
}

#[derive(Debug, Clone)]
pub struct MaxWordsFilter {
    pub max_words: usize,
}

impl PairFilter for MaxWordsFilter {
    fn name(&self) -> &'static str {
        "max_words"
    }

    fn accepts(&self, pair: &SentencePair) -> bool {
        word_count(&pair.src) <= self.max_words && word_count(&pair.tgt) <= self.max_words
    }
}

pub struct LangIdFilter<'a> {
    pub model: &'a LangIdModel,
    pub src_lang: String,
    pub tgt_lang: String,
}

impl PairFilter for LangIdFilter<'_> {
    fn name(&self) -> &'static str {
        "langid"
    }

    fn accepts(&self, pair: &SentencePair) -> bool {
        let is = |text: &str, lang: &str| {
            self.model
                .classify(text)
                .map(|l| l == lang)
                .unwrap_or(false)
        };
        is(&pair.src, &self.src_lang) && is(&pair.tgt, &self.tgt_lang)
    }
}

/// Build the rule chain for `cfg`, in [`FILTER_ORDER`].
pub fn filter_chain<'a>(
    cfg: &FilterConfig,
    langid: Option<&'a LangIdModel>,
) -> Result<Vec<Box<dyn PairFilter + 'a>>> {
    cfg.validate()?;
    let mut chain: Vec<Box<dyn PairFilter + 'a>> = vec![
        Box::new(LengthRatioFilter {
            max_ratio: cfg.max_len_ratio,
        }),
        Box::new(MaxWordsFilter {
            max_words: cfg.max_words,
        }),
    ];
    if cfg.langid_enabled {
        let model = langid.ok_or_else(|| {
            Error::InvalidArgument("langid filter enabled but no language-id model given".into())
        })?;
        for lang in [&cfg.expected_src_lang, &cfg.expected_tgt_lang] {
            if !model.languages().iter().any(|l| l == lang) {
                return Err(Error::InvalidArgument(format!(
                    "language-id model does not know `{lang}`"
                )));
            }
        }
        chain.push(Box::new(LangIdFilter {
            model,
            src_lang: cfg.expected_src_lang.clone(),
            tgt_lang: cfg.expected_tgt_lang.clone(),
        }));
    }
    Ok(chain)
}

pub fn apply_filters(
    corpus: &ParallelCorpus,
    cfg: &FilterConfig,
    langid: Option<&LangIdModel>,
) -> Result<(ParallelCorpus, FilterReport)> {
    let chain = filter_chain(cfg, langid)?;
    let mut report = FilterReport {
        removed_by_rule: FILTER_ORDER.iter().map(|r| (r.to_string(), 0)).collect(),
        ..Default::default()
    };
    let mut kept = Vec::with_capacity(corpus.len());
    for pair in &corpus.pairs {
        match chain.iter().find(|f| !f.accepts(pair)) {
            Some(rule) => {
                *report.removed_by_rule.get_mut(rule.name()).unwrap() += 1;
                report.removed_ids.push(pair.id);
            }
            None => kept.push(pair.clone()),
        }
    }
    report.kept = kept.len();
    Ok((
        ParallelCorpus::new(kept, format!("{} (filtered)", corpus.provenance)),
        report,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn n_words(n: usize, w: &str) -> String {
        vec![w; n].join(" ")
    }

    fn one(src: String, tgt: String) -> ParallelCorpus {
        ParallelCorpus::new(vec![SentencePair::new(0, src, tgt)], "t")
    }

    #[test]
    fn ratio_violation_removed() {
        let c = one(n_words(10, "a"), n_words(14, "b"));
        let (kept, rep) = apply_filters(&c, &FilterConfig::default(), None).unwrap();
        assert!(kept.is_empty());
        assert_eq!(rep.removed_by_rule["len_ratio"], 1);
        // reverse direction too
        let c = one(n_words(14, "a"), n_words(10, "b"));
        let (_, rep) = apply_filters(&c, &FilterConfig::default(), None).unwrap();
        assert_eq!(rep.removed_by_rule["len_ratio"], 1);
    }

    #[test]
    fn ratio_boundary_kept() {
        let c = one(n_words(10, "a"), n_words(13, "b"));
        let (kept, _) = apply_filters(&c, &FilterConfig::default(), None).unwrap();
        assert_eq!(kept.len(), 1);
    }

    #[test]
    fn overlong_removed() {
        let c = one(n_words(151, "a"), n_words(151, "b"));
        let (_, rep) = apply_filters(&c, &FilterConfig::default(), None).unwrap();
        assert_eq!(rep.removed_by_rule["max_words"], 1);
        assert_eq!(rep.removed_by_rule["len_ratio"], 0);
        let c = one(n_words(150, "a"), n_words(150, "b"));
        assert_eq!(apply_filters(&c, &FilterConfig::default(), None).unwrap().1.kept, 1);
    }

    #[test]
    fn plain_pair_kept() {
        let c = one("hello world".into(), "hallo welt".into());
        let (kept, rep) = apply_filters(&c, &FilterConfig::default(), None).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(rep.kept, 1);
        assert!(rep.removed_ids.is_empty());
        assert_eq!(rep.removed_by_rule.len(), 3);
    }

    #[test]
    fn langid_required_when_enabled() {
        let cfg = FilterConfig {
            langid_enabled: true,
            ..Default::default()
        };
        let c = one("a".into(), "b".into());
        assert!(apply_filters(&c, &cfg, None).is_err());
    }

    #[test]
    fn invalid_config() {
        let cfg = FilterConfig {
            max_len_ratio: 1.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = FilterConfig {
            max_words: 0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn report_serializes_rule_keys() {
        let c = one("a".into(), "b".into());
        let (_, rep) = apply_filters(&c, &FilterConfig::default(), None).unwrap();
        let v = serde_json::to_value(&rep).unwrap();
        for k in FILTER_ORDER {
            assert!(v["removed_by_rule"].get(k).is_some());
        }
    }
}
