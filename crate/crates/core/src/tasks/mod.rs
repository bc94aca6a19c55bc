//! Instruction-annotated task data: native rule-based synthesis, success
//! checkers and ingestion of externally generated task data.

mod kinds;
mod lexicon;
mod registry;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::LazyLock;

use rand::seq::SliceRandom;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{ParallelCorpus, SentencePair};
use crate::error::{Error, Result};
use crate::seed;
use crate::text::word_count;
use crate::{INSTRUCTION_CLOSE, INSTRUCTION_OPEN};

pub use kinds::{remove_accents, titlecase};
pub use lexicon::{Lexicon, LexiconKind};
pub use registry::{
    registry, CheckInput, Params, TaskRegistry, TaskTransform, TransformInput, Transformed,
};

macro_rules! task_kinds {
    ($($variant:ident => $name:literal),* $(,)?) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum TaskKind {
            $($variant),*
        }

        impl TaskKind {
            pub const ALL: [TaskKind; [$($name),*].len()] = [$(TaskKind::$variant),*];

            pub fn name(self) -> &'static str {
                match self {
                    $(TaskKind::$variant => $name),*
                }
            }
        }

        impl FromStr for TaskKind {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok(TaskKind::$variant),)*
                    _ => Err(Error::task(s, "unknown task kind")),
                }
            }
        }
    };
}

task_kinds! {
    Uppercase => "uppercase",
    Lowercase => "lowercase",
    Titlecase => "titlecase",
    RemovePunctuation => "remove_punctuation",
    Leetify => "leetify",
    RemoveAccents => "remove_accents",
    ShuffleWords => "shuffle_words",
    AddHashtag => "add_hashtag",
    InsertXBegin => "insert_x_begin",
    InsertXEnd => "insert_x_end",
    SpacingError => "spacing_error",
    CoverageError => "coverage_error",
    RepetitionError => "repetition_error",
    FixMisspelling => "fix_misspelling",
    TranslateXToY => "translate_x_to_y",
    RemoveProfanity => "remove_profanity",
    AddAntonyms => "add_antonyms",
    LengthSame => "length_same",
    LengthShorter => "length_shorter",
    LengthLonger => "length_longer",
    EmptyInstruction => "empty_instruction",
    External => "external",
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Natural-language instruction text, or an opaque token-id sequence
/// (e.g. image tokens) spliced in at encoding time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Instruction {
    Text(String),
    Tokens(Vec<u32>),
}

impl Instruction {
    pub fn is_empty(&self) -> bool {
        match self {
            Instruction::Text(t) => t.is_empty(),
            Instruction::Tokens(t) => t.is_empty(),
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Instruction::Text(t) => Some(t),
            Instruction::Tokens(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskRecord {
    pub id: u64,
    pub task: TaskKind,
    /// Task label; the kind name for native tasks, free text for external ones.
    pub name: String,
    pub instruction: Instruction,
    pub src: String,
    pub tgt: String,
    /// Values the success checker needs (e.g. the inserted word).
    pub params: Params,
}

pub fn contains_tag(s: &str) -> bool {
    s.contains(INSTRUCTION_OPEN) || s.contains(INSTRUCTION_CLOSE)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TaskDataset {
    pub records: Vec<TaskRecord>,
}

impl TaskDataset {
    pub fn new(records: Vec<TaskRecord>) -> Self {
        Self { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for r in &self.records {
            *counts.entry(r.name.clone()).or_default() += 1;
        }
        counts
    }

    /// Records grouped by task name, in first-appearance order of the names.
    pub fn groups(&self) -> Vec<(String, Vec<&TaskRecord>)> {
        let mut order: Vec<String> = Vec::new();
        let mut groups: BTreeMap<&str, Vec<&TaskRecord>> = BTreeMap::new();
        for r in &self.records {
            if !groups.contains_key(r.name.as_str()) {
                order.push(r.name.clone());
            }
            groups.entry(&r.name).or_default().push(r);
        }
        order
            .into_iter()
            .map(|n| {
                let g = groups.remove(n.as_str()).unwrap();
                (n, g)
            })
            .collect()
    }

    pub fn extend(&mut self, other: TaskDataset) {
        self.records.extend(other.records);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub kind: TaskKind,
    #[serde(default)]
    pub instruction_template: Option<String>,
    #[serde(default)]
    pub params: Params,
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
}

impl TaskSpec {
    pub fn new(kind: TaskKind, samples: usize, seed: u64) -> Self {
        Self {
            kind,
            instruction_template: None,
            params: Params::new(),
            samples,
            seed,
        }
    }
}

static PLACEHOLDER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\{(\w+)\}").unwrap());

fn resolve_template(kind: TaskKind, template: &str, sources: [&Params; 2]) -> Result<String> {
    let mut missing = None;
    let out = PLACEHOLDER.replace_all(template, |caps: &regex::Captures<'_>| {
        let key = &caps[1];
        match sources.iter().find_map(|p| p.get(key)) {
            Some(v) => v.clone(),
            None => {
                missing.get_or_insert_with(|| key.to_string());
                String::new()
            }
        }
    });
    match missing {
        Some(key) => Err(Error::task(
            kind.name(),
            format!("template placeholder {{{key}}} has no value"),
        )),
        None => Ok(out.into_owned()),
    }
}

fn transform_record(
    kind: TaskKind,
    pair: &SentencePair,
    seed: u64,
    params: &Params,
    lexicon: Option<&Lexicon>,
    template: Option<&str>,
) -> Result<Option<TaskRecord>> {
    let task = registry().get(kind)?;
    if let Some(need) = task.lexicon_kind() {
        match lexicon {
            Some(l) if l.kind == need => {}
            Some(l) => {
                return Err(Error::task(
                    kind.name(),
                    format!("needs a {need:?} lexicon, got {:?}", l.kind),
                ))
            }
            None => return Err(Error::task(kind.name(), format!("needs a {need:?} lexicon"))),
        }
    }
    let mut rng = seed::stream(seed, kind.name(), pair.id);
    let input = TransformInput {
        pair,
        params,
        lexicon,
    };
    let Some(t) = task.transform(&input, &mut rng) else {
        return Ok(None);
    };
    if contains_tag(&t.tgt) {
        return Ok(None);
    }
    let instruction = resolve_template(kind, template.unwrap_or(task.template()), [&t.params, params])?;
    if kind != TaskKind::EmptyInstruction && instruction.is_empty() {
        return Err(Error::task(kind.name(), "instruction template resolves to empty text"));
    }
    let mut record_params = params.clone();
    record_params.extend(t.params);
    Ok(Some(TaskRecord {
        id: pair.id,
        task: kind,
        name: kind.name().to_string(),
        instruction: Instruction::Text(instruction),
        src: t.src,
        tgt: t.tgt,
        params: record_params,
    }))
}

/// Apply one native task to a pair. `Ok(None)` means the pair is ineligible.
/// Randomized choices derive from `(seed, kind, pair.id)`.
pub fn apply_transform(
    kind: TaskKind,
    pair: &SentencePair,
    seed: u64,
    params: &Params,
    lexicon: Option<&Lexicon>,
) -> Result<Option<TaskRecord>> {
    transform_record(kind, pair, seed, params, lexicon, None)
}

/// Walk the corpus in seeded random order, transforming pairs until
/// `spec.samples` records exist or the corpus runs out.
pub fn synthesize_task_dataset(
    corpus: &ParallelCorpus,
    spec: &TaskSpec,
    lexicon: Option<&Lexicon>,
) -> Result<TaskDataset> {
    if corpus.is_empty() {
        return Err(Error::Empty("cannot synthesize tasks from an empty corpus".into()));
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut seed::stream(
        spec.seed,
        &format!("synthesize:{}", spec.kind),
        0,
    ));
    let mut records = Vec::with_capacity(spec.samples);
    for i in order {
        if records.len() >= spec.samples {
            break;
        }
        if let Some(r) = transform_record(
            spec.kind,
            &corpus.pairs[i],
            spec.seed,
            &spec.params,
            lexicon,
            spec.instruction_template.as_deref(),
        )? {
            records.push(r);
        }
    }
    if records.is_empty() && spec.samples > 0 {
        return Err(Error::task(spec.kind.name(), "no eligible pairs in corpus"));
    }
    if records.len() < spec.samples {
        log::warn!(
            "task {}: only {} of {} requested samples are eligible",
            spec.kind,
            records.len(),
            spec.samples
        );
    }
    Ok(TaskDataset::new(records))
}

pub fn check_success(
    kind: TaskKind,
    src: &str,
    output: &str,
    general_output: &str,
    params: &Params,
    lexicon: Option<&Lexicon>,
) -> Result<bool> {
    let task = registry().get(kind)?;
    if let Some(need) = task.lexicon_kind() {
        if kind != TaskKind::TranslateXToY && lexicon.map(|l| l.kind) != Some(need) {
            return Err(Error::task(kind.name(), format!("checker needs a {need:?} lexicon")));
        }
    }
    Ok(task.check(&CheckInput {
        src,
        output,
        general_output,
        params,
        lexicon,
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthThresholds {
    pub shorter_below: f64,
    pub same_low: f64,
    pub same_high: f64,
    pub longer_above: f64,
}

impl Default for LengthThresholds {
    fn default() -> Self {
        Self {
            shorter_below: 0.8,
            same_low: 0.95,
            same_high: 1.05,
            longer_above: 1.25,
        }
    }
}

impl LengthThresholds {
    /// Overrides from params keys of the same names.
    pub fn from_params(params: &Params) -> Result<Self> {
        let mut th = Self::default();
        for (key, slot) in [
            ("shorter_below", &mut th.shorter_below),
            ("same_low", &mut th.same_low),
            ("same_high", &mut th.same_high),
            ("longer_above", &mut th.longer_above),
        ] {
            if let Some(v) = params.get(key) {
                *slot = v
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("{key}: not a number: {v}")))?;
            }
        }
        if !(th.shorter_below <= th.same_low
            && th.same_low <= th.same_high
            && th.same_high <= th.longer_above)
        {
            return Err(Error::InvalidArgument("length thresholds must be ordered".into()));
        }
        Ok(th)
    }

    pub fn label(&self, src_words: usize, tgt_words: usize) -> Option<TaskKind> {
        if src_words == 0 {
            return None;
        }
        let r = tgt_words as f64 / src_words as f64;
        if r < self.shorter_below {
            Some(TaskKind::LengthShorter)
        } else if (self.same_low..=self.same_high).contains(&r) {
            Some(TaskKind::LengthSame)
        } else if r > self.longer_above {
            Some(TaskKind::LengthLonger)
        } else {
            None
        }
    }
}

pub fn contrastive_length_label(pair: &SentencePair) -> Option<TaskKind> {
    contrastive_length_label_with(pair, &LengthThresholds::default())
}

pub fn contrastive_length_label_with(pair: &SentencePair, th: &LengthThresholds) -> Option<TaskKind> {
    th.label(word_count(&pair.src), word_count(&pair.tgt))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskLine {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    id: Option<u64>,
    task: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    instruction: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    instruction_tokens: Option<Vec<u32>>,
    src: String,
    tgt: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    params: Params,
}

fn read_task_lines(path: &Path, external: bool) -> Result<TaskDataset> {
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, raw) in content.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let malformed = |msg: String| Error::Malformed {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let rec: TaskLine = serde_json::from_str(raw).map_err(|e| malformed(e.to_string()))?;
        let instruction = match (rec.instruction, rec.instruction_tokens) {
            (Some(t), None) => Instruction::Text(t),
            (None, Some(ids)) => Instruction::Tokens(ids),
            _ => {
                return Err(malformed(
                    "exactly one of `instruction` or `instruction_tokens` is required".into(),
                ))
            }
        };
        if contains_tag(&rec.tgt) {
            return Err(malformed("target contains an instruction tag".into()));
        }
        if rec.src.trim().is_empty() || rec.tgt.trim().is_empty() {
            return Err(malformed("empty source or target".into()));
        }
        let task = if external {
            TaskKind::External
        } else {
            rec.task.parse().unwrap_or(TaskKind::External)
        };
        records.push(TaskRecord {
            id: rec.id.unwrap_or(i as u64),
            task,
            name: rec.task,
            instruction,
            src: rec.src,
            tgt: rec.tgt,
            params: rec.params,
        });
    }
    if records.is_empty() {
        return Err(Error::Empty(format!("{} contains no task records", path.display())));
    }
    Ok(TaskDataset::new(records))
}

/// Load externally generated task data (LLM-generated styles, image-token
/// instructions). Every record gets kind [`TaskKind::External`].
pub fn ingest_external(path: &Path) -> Result<TaskDataset> {
    read_task_lines(path, true)
}

/// Load a task file written by [`write_task_dataset`]; known task names map
/// back to their native kinds.
pub fn read_task_dataset(path: &Path) -> Result<TaskDataset> {
    read_task_lines(path, false)
}

pub fn write_task_dataset(data: &TaskDataset, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    for r in &data.records {
        let (instruction, instruction_tokens) = match &r.instruction {
            Instruction::Text(t) => (Some(t.clone()), None),
            Instruction::Tokens(ids) => (None, Some(ids.clone())),
        };
        serde_json::to_writer(
            &mut out,
            &TaskLine {
                id: Some(r.id),
                task: r.name.clone(),
                instruction,
                instruction_tokens,
                src: r.src.clone(),
                tgt: r.tgt.clone(),
                params: r.params.clone(),
            },
        )?;
        out.push(b'\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
