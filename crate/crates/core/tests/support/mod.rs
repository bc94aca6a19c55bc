#![allow(dead_code)]

use std::collections::BTreeSet;

use instruct_nmt_core::corpus::{
    train_langid, FilterConfig, LangIdModel, ParallelCorpus, SentencePair, ToyConfig, ToyLanguage,
};
use instruct_nmt_core::seed;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

/// ChrF2 over orders 1..=6 in the sacrebleu default form: precision and
/// recall are averaged over orders present on both sides, then combined.
/// N-grams are kept as sorted string lists instead of hash maps.
pub fn chrf_oracle(hyps: &[String], refs: &[String]) -> f64 {
    let grams = |s: &str, n: usize| -> Vec<String> {
        let c: Vec<char> = s.chars().filter(|c| !c.is_whitespace()).collect();
        let mut g: Vec<String> = (0..(c.len() + 1).saturating_sub(n)).map(|i| c[i..i + n].iter().collect()).collect();
        g.sort();
        g
    };
    let (mut p, mut r, mut orders, mut any) = (0.0, 0.0, 0, false);
    for n in 1..=6 {
        let (mut th, mut tr, mut tm) = (0usize, 0usize, 0usize);
        for (h, rf) in hyps.iter().zip(refs) {
            let (a, b) = (grams(h, n), grams(rf, n));
            // merge walk over two sorted lists counts the multiset intersection
            let (mut i, mut j) = (0, 0);
            while i < a.len() && j < b.len() {
                match a[i].cmp(&b[j]) {
                    std::cmp::Ordering::Less => i += 1,
                    std::cmp::Ordering::Greater => j += 1,
                    std::cmp::Ordering::Equal => {
                        tm += 1;
                        i += 1;
                        j += 1;
                    }
                }
            }
            th += a.len();
            tr += b.len();
        }
        any |= th + tr > 0;
        if th > 0 && tr > 0 {
            p += tm as f64 / th as f64;
            r += tm as f64 / tr as f64;
            orders += 1;
        }
    }
    if !any {
        return 100.0;
    }
    if orders == 0 || p + r == 0.0 {
        return 0.0;
    }
    let (p, r) = (p / orders as f64, r / orders as f64);
    100.0 * 5.0 * p * r / (4.0 * p + r)
}

/// `count` single-segment pairs over a small alphabet so that n-grams collide.
pub fn random_pairs(count: usize, seed: u64) -> Vec<(String, String)> {
    let mut rng = seed::stream(seed, "chrf-fixture", 0);
    let alphabet: Vec<char> = "abcde fgAé.".chars().collect();
    let text = |rng: &mut seed::Rng| -> String {
        let len = rng.random_range(0..30);
        (0..len).map(|_| *alphabet.choose(rng).unwrap()).collect()
    };
    (0..count).map(|_| (text(&mut rng), text(&mut rng))).collect()
}

pub struct FilterFixture {
    pub corpus: ParallelCorpus,
    pub langid: LangIdModel,
    pub config: FilterConfig,
    pub ratio: BTreeSet<u64>,
    pub overlong: BTreeSet<u64>,
    pub wrong_language: BTreeSet<u64>,
}

impl FilterFixture {
    pub fn planted(&self) -> BTreeSet<u64> {
        self.ratio.iter().chain(&self.overlong).chain(&self.wrong_language).copied().collect()
    }
}

/// 200 toy pairs with 20 length-ratio violations, 5 overlong pairs and 10
/// pairs whose sides are in the wrong language. Untouched pairs have equal
/// word counts, so none of them trips a rule.
pub fn filter_fixture() -> FilterFixture {
    let toy = ToyLanguage::generate(40, 11, ToyConfig::default()).unwrap();
    let mut pairs = toy.corpus(200, 12, 0).pairs;
    let mut ids: Vec<u64> = pairs.iter().map(|p| p.id).collect();
    ids.shuffle(&mut seed::stream(13, "filter-fixture", 0));
    let ratio: BTreeSet<u64> = ids[..20].iter().copied().collect();
    let overlong: BTreeSet<u64> = ids[20..25].iter().copied().collect();
    let wrong_language: BTreeSet<u64> = ids[25..35].iter().copied().collect();
    for p in &mut pairs {
        if ratio.contains(&p.id) {
            p.tgt = format!("{} {}", p.tgt, p.tgt);
        } else if overlong.contains(&p.id) {
            p.src = vec![p.src.as_str(); 60].join(" ");
            p.tgt = vec![p.tgt.as_str(); 60].join(" ");
        } else if wrong_language.contains(&p.id) {
            std::mem::swap(&mut p.src, &mut p.tgt);
        }
    }
    let samples: Vec<(String, String)> = toy
        .corpus(300, 14, 10_000)
        .pairs
        .into_iter()
        .flat_map(|SentencePair { src, tgt, .. }| [(src, "src".to_string()), (tgt, "tgt".to_string())])
        .collect();
    FilterFixture {
        corpus: ParallelCorpus::new(pairs, "filter fixture"),
        langid: train_langid(&samples).unwrap(),
        config: FilterConfig {
            langid_enabled: true,
            ..FilterConfig::default()
        },
        ratio,
        overlong,
        wrong_language,
    }
}
