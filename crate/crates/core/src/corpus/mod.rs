//! Parallel corpora: loading, filtering, sampling and the synthetic toy pair.

mod filter;
mod langid;
mod toy;

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub use filter::{
    apply_filters, filter_chain, FilterConfig, FilterReport, LangIdFilter, LengthRatioFilter,
    MaxWordsFilter, PairFilter, FILTER_ORDER,
};
pub use langid::{train_langid, LangIdModel};
pub use toy::{synthesize_toy_parallel, ToyConfig, ToyLanguage};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentencePair {
    pub id: u64,
    pub src: String,
    pub tgt: String,
}

impl SentencePair {
    pub fn new(id: u64, src: impl Into<String>, tgt: impl Into<String>) -> Self {
        Self {
            id,
            src: src.into(),
            tgt: tgt.into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelCorpus {
    pub pairs: Vec<SentencePair>,
    pub provenance: String,
}

impl ParallelCorpus {
    pub fn new(pairs: Vec<SentencePair>, provenance: impl Into<String>) -> Self {
        Self {
            pairs,
            provenance: provenance.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Tsv,
    Jsonl,
}

impl CorpusFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => CorpusFormat::Jsonl,
            _ => CorpusFormat::Tsv,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonPair {
    src: String,
    tgt: String,
}

#[derive(Serialize)]
struct JsonPairRef<'a> {
    src: &'a str,
    tgt: &'a str,
}

/// Load a corpus, assigning ids sequentially from 0 in file order.
pub fn load_parallel(path: &Path, format: CorpusFormat) -> Result<ParallelCorpus> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_parallel(&content, format, path)
}

pub(crate) fn parse_parallel(
    content: &str,
    format: CorpusFormat,
    path: &Path,
) -> Result<ParallelCorpus> {
    let malformed = |line: usize, msg: String| Error::Malformed {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines: Vec<&str> = content.split('\n').collect();
    if lines.last() == Some(&"") {
        lines.pop();
    }
    if lines.is_empty() {
        return Err(Error::Empty(format!("{} contains no records", path.display())));
    }
    let mut pairs = Vec::with_capacity(lines.len());
    for (i, raw) in lines.iter().enumerate() {
        let line_no = i + 1;
        let raw = raw.strip_suffix('\r').unwrap_or(raw);
        let (src, tgt) = match format {
            CorpusFormat::Tsv => {
                let fields: Vec<&str> = raw.split('\t').collect();
                if fields.len() != 2 {
                    return Err(malformed(
                        line_no,
                        format!("expected 2 tab-separated fields, found {}", fields.len()),
                    ));
                }
                (fields[0].to_string(), fields[1].to_string())
            }
            CorpusFormat::Jsonl => {
                let rec: JsonPair =
                    serde_json::from_str(raw).map_err(|e| malformed(line_no, e.to_string()))?;
                (rec.src, rec.tgt)
            }
        };
        if src.trim().is_empty() || tgt.trim().is_empty() {
            return Err(malformed(line_no, "empty source or target".into()));
        }
        pairs.push(SentencePair::new(i as u64, src, tgt));
    }
    Ok(ParallelCorpus::new(pairs, path.display().to_string()))
}

pub fn write_parallel(corpus: &ParallelCorpus, path: &Path, format: CorpusFormat) -> Result<()> {
    let mut out = Vec::new();
    for p in &corpus.pairs {
        match format {
            CorpusFormat::Tsv => {
                if p.src.contains(['\t', '\n']) || p.tgt.contains(['\t', '\n']) {
                    return Err(Error::InvalidArgument(format!(
                        "pair {} contains a tab or newline and cannot be written as TSV",
                        p.id
                    )));
                }
                writeln!(out, "{}\t{}", p.src, p.tgt).unwrap();
            }
            CorpusFormat::Jsonl => {
                serde_json::to_writer(
                    &mut out,
                    &JsonPairRef {
                        src: &p.src,
                        tgt: &p.tgt,
                    },
                )?;
                out.push(b'\n');
            }
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Uniform sample of `n` pairs without replacement; the sampled pairs keep
/// their relative corpus order and ids.
pub fn sample_high_quality(corpus: &ParallelCorpus, n: usize, seed: u64) -> Result<ParallelCorpus> {
    if n > corpus.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot sample {n} pairs from a corpus of {}",
            corpus.len()
        )));
    }
    let mut idx: Vec<usize> = (0..corpus.len()).collect();
    idx.shuffle(&mut seed::stream(seed, "sample_high_quality", 0));
    let mut chosen = idx[..n].to_vec();
    chosen.sort_unstable();
    Ok(ParallelCorpus::new(
        chosen.into_iter().map(|i| corpus.pairs[i].clone()).collect(),
        format!("{} (sample n={n})", corpus.provenance),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str, f: CorpusFormat) -> Result<ParallelCorpus> {
        parse_parallel(s, f, Path::new("mem"))
    }

    #[test]
    fn tsv_two_lines() {
        let c = parse("a\tb\nc\td", CorpusFormat::Tsv).unwrap();
        assert_eq!(c.pairs, vec![SentencePair::new(0, "a", "b"), SentencePair::new(1, "c", "d")]);
    }

    #[test]
    fn jsonl_line() {
        let c = parse("{\"src\":\"x\",\"tgt\":\"y\"}\n", CorpusFormat::Jsonl).unwrap();
        assert_eq!(c.pairs, vec![SentencePair::new(0, "x", "y")]);
    }

    #[test]
    fn jsonl_missing_tgt_names_line() {
        let err = parse("{\"src\":\"x\"}", CorpusFormat::Jsonl).unwrap_err();
        match err {
            Error::Malformed { line, .. } => assert_eq!(line, 1),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn tsv_bad_field_count_names_line() {
        let err = parse("a\tb\nc\n", CorpusFormat::Tsv).unwrap_err();
        assert!(matches!(err, Error::Malformed { line: 2, .. }));
    }

    #[test]
    fn empty_file_rejected() {
        assert!(matches!(parse("", CorpusFormat::Tsv), Err(Error::Empty(_))));
    }

    #[test]
    fn blank_side_rejected() {
        assert!(matches!(
            parse("a\t  \n", CorpusFormat::Tsv),
            Err(Error::Malformed { line: 1, .. })
        ));
    }

    fn corpus(n: usize) -> ParallelCorpus {
        ParallelCorpus::new(
            (0..n)
                .map(|i| SentencePair::new(i as u64, format!("s{i}"), format!("t{i}")))
                .collect(),
            "test",
        )
    }

    #[test]
    fn sample_full_is_same_multiset() {
        let c = corpus(20);
        let s = sample_high_quality(&c, 20, 3).unwrap();
        let mut a: Vec<_> = s.pairs.iter().map(|p| p.id).collect();
        a.sort();
        assert_eq!(a, (0..20).collect::<Vec<u64>>());
    }

    #[test]
    fn sample_is_seeded() {
        let c = corpus(100);
        assert_eq!(
            sample_high_quality(&c, 10, 5).unwrap(),
            sample_high_quality(&c, 10, 5).unwrap()
        );
        assert_ne!(
            sample_high_quality(&c, 10, 5).unwrap(),
            sample_high_quality(&c, 10, 6).unwrap()
        );
        assert!(sample_high_quality(&c, 0, 5).unwrap().is_empty());
        assert!(sample_high_quality(&c, 101, 5).is_err());
    }

    #[test]
    fn write_then_load_preserves_order() {
        let dir = tempfile::tempdir().unwrap();
        let c = corpus(5);
        for fmt in [CorpusFormat::Tsv, CorpusFormat::Jsonl] {
            let p = dir.path().join("c.txt");
            write_parallel(&c, &p, fmt).unwrap();
            let back = load_parallel(&p, fmt).unwrap();
            assert_eq!(back.pairs, c.pairs);
        }
    }
}
