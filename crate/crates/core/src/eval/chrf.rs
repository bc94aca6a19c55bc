use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChrfConfig {
    pub char_order: usize,
    pub beta: f64,
}

impl Default for ChrfConfig {
    fn default() -> Self {
        Self {
            char_order: 6,
            beta: 2.0,
        }
    }
}

impl ChrfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.char_order == 0 {
            return Err(Error::InvalidArgument("char_order must be at least 1".into()));
        }
        if !(self.beta > 0.0) {
            return Err(Error::InvalidArgument(format!("beta must be positive, got {}", self.beta)));
        }
        Ok(())
    }
}

/// Summed n-gram counts for one order: (hypothesis, reference, matched).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OrderStats {
    pub hyp: u64,
    pub reference: u64,
    pub matched: u64,
}

fn ngram_counts(chars: &[char], n: usize) -> HashMap<&[char], u64> {
    let mut m = HashMap::new();
    if chars.len() >= n {
        for g in chars.windows(n) {
            *m.entry(g).or_insert(0) += 1;
        }
    }
    m
}

fn stripped(s: &str) -> Vec<char> {
    s.chars().filter(|c| !c.is_whitespace()).collect()
}

pub fn chrf_stats(hyps: &[String], refs: &[String], order: usize) -> Result<Vec<OrderStats>> {
    if hyps.len() != refs.len() {
        return Err(Error::LengthMismatch {
            left: hyps.len(),
            right: refs.len(),
        });
    }
    if hyps.is_empty() {
        return Err(Error::Empty("chrf needs at least one segment".into()));
    }
    let mut stats = vec![OrderStats::default(); order];
    for (h, r) in hyps.iter().zip(refs) {
        let (h, r) = (stripped(h), stripped(r));
        for (n, st) in (1..=order).zip(stats.iter_mut()) {
            let hc = ngram_counts(&h, n);
            let rc = ngram_counts(&r, n);
            st.hyp += hc.values().sum::<u64>();
            st.reference += rc.values().sum::<u64>();
            st.matched += hc
                .iter()
                .map(|(g, c)| (*c).min(rc.get(g).copied().unwrap_or(0)))
                .sum::<u64>();
        }
    }
    Ok(stats)
}

/// F-score in percent from summed statistics. Precision and recall are
/// averaged over the orders with n-grams on both sides, then combined. If
/// no order has n-grams on either side (all texts empty) the texts agree
/// and the score is 100.
pub fn chrf_from_stats(stats: &[OrderStats], cfg: &ChrfConfig) -> f64 {
    if stats.iter().all(|st| st.hyp == 0 && st.reference == 0) {
        return 100.0;
    }
    let (mut p, mut r, mut orders) = (0.0, 0.0, 0usize);
    for st in stats.iter().filter(|st| st.hyp > 0 && st.reference > 0) {
        p += st.matched as f64 / st.hyp as f64;
        r += st.matched as f64 / st.reference as f64;
        orders += 1;
    }
    if orders == 0 || p + r == 0.0 {
        return 0.0;
    }
    let (p, r) = (p / orders as f64, r / orders as f64);
    let b2 = cfg.beta * cfg.beta;
    100.0 * (1.0 + b2) * p * r / (b2 * p + r)
}

pub fn chrf_corpus(hyps: &[String], refs: &[String], cfg: &ChrfConfig) -> Result<f64> {
    cfg.validate()?;
    Ok(chrf_from_stats(&chrf_stats(hyps, refs, cfg.char_order)?, cfg))
}
