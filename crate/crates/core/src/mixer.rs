//! Training-example assembly: instruction formatting, the stratified
//! finetune/held-out split and per-epoch mixing of parallel and task data.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::corpus::{ParallelCorpus, SentencePair};
use crate::error::{Error, Result};
use crate::seed;
use crate::tasks::{contains_tag, Instruction, TaskDataset, TaskRecord};
use crate::tokenizer::{Tokenizer, EOS, BOS};
use crate::{INSTRUCTION_CLOSE, INSTRUCTION_OPEN};

/// Stands in for an opaque token-id instruction inside `input_text`; the
/// ids are spliced in by [`encode_example`].
pub const OPAQUE_MARKER: char = '\u{FFFC}';

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Parallel,
    Task,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub input: String,
    pub target: String,
    pub origin: Origin,
    pub task: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction_tokens: Option<Vec<u32>>,
}

/// Build the model input for an instruction case.
///
/// With tags: `"<instruction> " + instruction + " </instruction> " + src`.
/// Without tags: `instruction + " " + src` (just `src` for an empty instruction).
pub fn format_input(instruction: &Instruction, src: &str, tags_enabled: bool) -> String {
    let text = match instruction {
        Instruction::Text(t) => t.clone(),
        Instruction::Tokens(_) => OPAQUE_MARKER.to_string(),
    };
    if tags_enabled {
        format!("{INSTRUCTION_OPEN} {text} {INSTRUCTION_CLOSE} {src}")
    } else if text.is_empty() {
        src.to_string()
    } else {
        format!("{text} {src}")
    }
}

pub fn format_with_instruction(record: &TaskRecord, tags_enabled: bool) -> TrainingExample {
    TrainingExample {
        input: format_input(&record.instruction, &record.src, tags_enabled),
        target: record.tgt.clone(),
        origin: Origin::Task,
        task: record.name.clone(),
        instruction_tokens: match &record.instruction {
            Instruction::Tokens(ids) => Some(ids.clone()),
            Instruction::Text(_) => None,
        },
    }
}

/// Parallel data passes through untagged: the general case.
pub fn parallel_example(pair: &SentencePair) -> TrainingExample {
    TrainingExample {
        input: pair.src.clone(),
        target: pair.tgt.clone(),
        origin: Origin::Parallel,
        task: "general".into(),
        instruction_tokens: None,
    }
}

/// Source ids (terminated by EOS) and target ids framed by BOS/EOS.
pub fn encode_example(tok: &Tokenizer, ex: &TrainingExample) -> Result<(Vec<u32>, Vec<u32>)> {
    let src = encode_input(tok, &ex.input, ex.instruction_tokens.as_deref())?;
    let mut tgt = vec![BOS];
    tgt.extend(tok.encode(&ex.target));
    tgt.push(EOS);
    Ok((src, tgt))
}

pub fn encode_input(tok: &Tokenizer, input: &str, opaque: Option<&[u32]>) -> Result<Vec<u32>> {
    let mut ids = Vec::new();
    match opaque {
        Some(extra) => {
            let (before, after) = input.split_once(OPAQUE_MARKER).ok_or_else(|| {
                Error::InvalidArgument("opaque instruction without its marker".into())
            })?;
            if let Some(bad) = extra.iter().find(|&&i| i as usize >= tok.vocab_size()) {
                return Err(Error::InvalidArgument(format!(
                    "instruction token {bad} outside vocabulary of {}",
                    tok.vocab_size()
                )));
            }
            ids.extend(tok.encode(before.trim_end()));
            ids.extend_from_slice(extra);
            ids.extend(tok.encode(after.trim_start()));
        }
        None => ids.extend(tok.encode(input)),
    }
    ids.push(EOS);
    Ok(ids)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.9,
            seed: 0,
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "train_fraction must be in (0, 1), got {}",
                self.train_fraction
            )));
        }
        Ok(())
    }
}

/// Per-task split; each task contributes `floor(n * train_fraction)`
/// records (at least one, leaving at least one) to the training side.
pub fn split_task_data(data: &TaskDataset, cfg: &SplitConfig) -> Result<(TaskDataset, TaskDataset)> {
    cfg.validate()?;
    let mut train_idx = BTreeSet::new();
    let groups = data.groups();
    let mut offsets = std::collections::BTreeMap::new();
    for (i, r) in data.records.iter().enumerate() {
        offsets.entry(r.name.as_str()).or_insert_with(Vec::new).push(i);
    }
    for (name, group) in &groups {
        let n = group.len();
        if n < 2 {
            return Err(Error::task(name, format!("needs at least 2 records to split, has {n}")));
        }
        let n_train = ((n as f64 * cfg.train_fraction + 1e-9).floor() as usize).clamp(1, n - 1);
        let mut idx = offsets[name.as_str()].clone();
        idx.shuffle(&mut seed::stream(cfg.seed, &format!("split:{name}"), 0));
        train_idx.extend(idx.into_iter().take(n_train));
    }
    let (mut train, mut held) = (Vec::new(), Vec::new());
    for (i, r) in data.records.iter().enumerate() {
        if train_idx.contains(&i) {
            train.push(r.clone());
        } else {
            held.push(r.clone());
        }
    }
    Ok((TaskDataset::new(train), TaskDataset::new(held)))
}

/// Parallel-to-task mixing ratio in sentence counts, e.g. `2:1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ratio {
    pub parallel: u32,
    pub task: u32,
}

impl Default for Ratio {
    fn default() -> Self {
        Self { parallel: 2, task: 1 }
    }
}

impl FromStr for Ratio {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("ratio `{s}` must look like P:T with P, T > 0"));
        let (p, t) = s.split_once(':').ok_or_else(bad)?;
        let parallel: u32 = p.trim().parse().map_err(|_| bad())?;
        let task: u32 = t.trim().parse().map_err(|_| bad())?;
        if parallel == 0 || task == 0 {
            return Err(bad());
        }
        Ok(Self { parallel, task })
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.parallel, self.task)
    }
}

impl Serialize for Ratio {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Ratio {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixConfig {
    pub parallel_to_task_ratio: Ratio,
    pub seed: u64,
    /// Ablation: task examples only.
    pub no_parallel: bool,
    /// Ablation: instructions prepended without tags.
    pub no_instruction_tokens: bool,
}

impl Default for MixConfig {
    fn default() -> Self {
        Self {
            parallel_to_task_ratio: Ratio::default(),
            seed: 0,
            no_parallel: false,
            no_instruction_tokens: false,
        }
    }
}

/// Per-epoch mixtures of every task example plus a fresh parallel sample.
#[derive(Debug, Clone)]
pub struct MixedStream {
    task: Vec<TrainingExample>,
    parallel: Vec<TrainingExample>,
    cfg: MixConfig,
}

pub fn mix_datasets(
    parallel: &ParallelCorpus,
    task: Vec<TrainingExample>,
    cfg: &MixConfig,
) -> Result<MixedStream> {
    if task.is_empty() {
        return Err(Error::Empty("no task examples to mix".into()));
    }
    if let Some(bad) = task.iter().find(|e| contains_tag(&e.target)) {
        return Err(Error::task(&bad.task, "target contains an instruction tag"));
    }
    let stream = MixedStream {
        task,
        parallel: parallel.pairs.iter().map(parallel_example).collect(),
        cfg: cfg.clone(),
    };
    if !cfg.no_parallel {
        let need = stream.parallel_per_epoch();
        if stream.parallel.len() < need {
            return Err(Error::InvalidArgument(format!(
                "parallel pool has {} pairs but {} are needed per epoch at ratio {}",
                stream.parallel.len(),
                need,
                cfg.parallel_to_task_ratio
            )));
        }
    }
    Ok(stream)
}

impl MixedStream {
    pub fn parallel_per_epoch(&self) -> usize {
        if self.cfg.no_parallel {
            return 0;
        }
        let r = self.cfg.parallel_to_task_ratio;
        self.task.len() * r.parallel as usize / r.task as usize
    }

    pub fn epoch_len(&self) -> usize {
        self.task.len() + self.parallel_per_epoch()
    }

    pub fn epoch(&self, epoch: usize) -> Vec<TrainingExample> {
        let mut rng = seed::stream(self.cfg.seed, "mix:epoch", epoch as u64);
        let mut out = self.task.clone();
        let need = self.parallel_per_epoch();
        if need > 0 {
            let mut idx: Vec<usize> = (0..self.parallel.len()).collect();
            idx.shuffle(&mut rng);
            out.extend(idx[..need].iter().map(|&i| self.parallel[i].clone()));
        }
        out.shuffle(&mut rng);
        out
    }
}

/// One JSON object per line: `{input, target, origin, task}`.
pub fn export_jsonl(examples: &[TrainingExample], path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for e in examples {
        serde_json::to_writer(&mut out, e)?;
        out.push(b'\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::{Params, TaskKind};
    use proptest::prelude::*;

    fn record(name: &str, id: u64, instruction: &str, src: &str) -> TaskRecord {
        TaskRecord {
            id,
            task: name.parse().unwrap_or(TaskKind::External),
            name: name.into(),
            instruction: Instruction::Text(instruction.into()),
            src: src.into(),
            tgt: format!("t{id}"),
            params: Params::new(),
        }
    }

    #[test]
    fn tag_format() {
        let r = record("informal", 0, "informal", "Do you like Legos?");
        assert_eq!(
            format_with_instruction(&r, true).input,
            "<instruction> informal </instruction> Do you like Legos?"
        );
        let e = record("empty_instruction", 0, "", "src");
        assert_eq!(format_with_instruction(&e, true).input, "<instruction>  </instruction> src");
        let u = record("uppercase", 0, "uppercase", "hi");
        assert_eq!(format_with_instruction(&u, false).input, "uppercase hi");
        assert_eq!(format_with_instruction(&u, false).target, u.tgt);
    }

    #[test]
    fn opaque_instruction_spliced_between_tags() {
        let tok = Tokenizer::train(["hello world"], 270).unwrap();
        let (tok, tags) = tok.expand(&[INSTRUCTION_OPEN, INSTRUCTION_CLOSE]).unwrap();
        let mut r = record("image", 0, "", "hello");
        r.instruction = Instruction::Tokens(vec![7, 9, 11]);
        let ex = format_with_instruction(&r, true);
        let (src, tgt) = encode_example(&tok, &ex).unwrap();
        assert_eq!(src[0], tags[0]);
        assert_eq!(&src[1..4], &[7, 9, 11]);
        assert_eq!(src[4], tags[1]);
        assert_eq!(*src.last().unwrap(), EOS);
        assert_eq!((tgt[0], *tgt.last().unwrap()), (BOS, EOS));
        r.instruction = Instruction::Tokens(vec![100_000]);
        assert!(encode_example(&tok, &format_with_instruction(&r, true)).is_err());
    }

    fn dataset(sizes: &[(&str, usize)]) -> TaskDataset {
        let mut recs = Vec::new();
        for (name, n) in sizes {
            for i in 0..*n {
                recs.push(record(name, i as u64, name, "s"));
            }
        }
        TaskDataset::new(recs)
    }

    #[test]
    fn split_sizes() {
        let cfg = SplitConfig::default();
        let (tr, ho) = split_task_data(&dataset(&[("a", 1000)]), &cfg).unwrap();
        assert_eq!((tr.len(), ho.len()), (900, 100));
        let (tr, ho) = split_task_data(&dataset(&[("a", 10), ("b", 10)]), &cfg).unwrap();
        assert_eq!(tr.counts().values().copied().collect::<Vec<_>>(), [9, 9]);
        assert_eq!(ho.counts().values().copied().collect::<Vec<_>>(), [1, 1]);
        assert!(split_task_data(&dataset(&[("a", 10), ("b", 1)]), &cfg).is_err());
    }

    #[test]
    fn split_is_seeded() {
        let d = dataset(&[("a", 50), ("b", 30)]);
        let cfg = SplitConfig { seed: 4, ..Default::default() };
        assert_eq!(split_task_data(&d, &cfg).unwrap(), split_task_data(&d, &cfg).unwrap());
    }

    #[test]
    fn ratio_parse() {
        assert_eq!("2:1".parse::<Ratio>().unwrap(), Ratio::default());
        assert!("0:1".parse::<Ratio>().is_err());
        assert!("2".parse::<Ratio>().is_err());
    }

    fn parallel(n: usize) -> ParallelCorpus {
        ParallelCorpus::new(
            (0..n)
                .map(|i| SentencePair::new(i as u64, format!("p{i}"), format!("q{i}")))
                .collect(),
            "p",
        )
    }

    fn task_examples(n: usize) -> Vec<TrainingExample> {
        (0..n)
            .map(|i| format_with_instruction(&record("uppercase", i as u64, "uppercase", "s"), true))
            .collect()
    }

    #[test]
    fn mix_counts() {
        let cfg = MixConfig::default();
        let s = mix_datasets(&parallel(1000), task_examples(300), &cfg).unwrap();
        let e = s.epoch(0);
        assert_eq!(e.len(), 900);
        assert_eq!(e.iter().filter(|x| x.origin == Origin::Parallel).count(), 600);
        let np = MixConfig { no_parallel: true, ..Default::default() };
        let s = mix_datasets(&parallel(10), task_examples(300), &np).unwrap();
        assert_eq!(s.epoch(0).len(), 300);
        assert!(mix_datasets(&parallel(10), task_examples(300), &cfg).is_err());
    }

    #[test]
    fn mix_is_seeded_per_epoch() {
        let s = mix_datasets(&parallel(1000), task_examples(100), &MixConfig::default()).unwrap();
        assert_eq!(s.epoch(1), s.epoch(1));
        assert_ne!(s.epoch(1), s.epoch(2));
    }

    proptest! {
        #[test]
        fn every_task_example_once_per_epoch(n_task in 1usize..60, p in 1u32..4, t in 1u32..4, epoch in 0usize..5) {
            let cfg = MixConfig {
                parallel_to_task_ratio: Ratio { parallel: p, task: t },
                ..Default::default()
            };
            let tasks: Vec<TrainingExample> = (0..n_task)
                .map(|i| format_with_instruction(&record("uppercase", i as u64, "uppercase", &format!("s{i}")), true))
                .collect();
            let s = mix_datasets(&parallel(500), tasks.clone(), &cfg).unwrap();
            let e = s.epoch(epoch);
            let mut got: Vec<&TrainingExample> = e.iter().filter(|x| x.origin == Origin::Task).collect();
            got.sort_by(|a, b| a.input.cmp(&b.input));
            let mut want: Vec<&TrainingExample> = tasks.iter().collect();
            want.sort_by(|a, b| a.input.cmp(&b.input));
            prop_assert_eq!(got, want);
            let n_par = e.iter().filter(|x| x.origin == Origin::Parallel).count() as f64;
            let exact = n_task as f64 * p as f64 / t as f64;
            prop_assert!((n_par - exact).abs() < 1.0);
            for x in e.iter().filter(|x| x.origin == Origin::Parallel) {
                prop_assert!(!x.input.contains(INSTRUCTION_OPEN));
            }
        }

        #[test]
        fn split_is_stratified(sizes in prop::collection::vec(2usize..40, 1..5), frac in 0.1f64..0.95) {
            let names = ["a", "b", "c", "d", "e"];
            let spec: Vec<(&str, usize)> = sizes.iter().enumerate().map(|(i, n)| (names[i], *n)).collect();
            let d = dataset(&spec);
            let (tr, ho) = split_task_data(&d, &SplitConfig { train_fraction: frac, seed: 1 }).unwrap();
            for (name, n) in spec {
                let want = ((n as f64 * frac + 1e-9).floor() as usize).clamp(1, n - 1);
                prop_assert_eq!(tr.counts()[name], want);
                prop_assert_eq!(ho.counts()[name], n - want);
            }
        }
    }
}
