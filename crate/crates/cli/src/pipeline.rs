//! Stage orchestration over one run directory. Every stage hashes its
//! configuration slice and input artifacts; an unchanged stage with intact
//! outputs is skipped, a changed one needs `--force`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use instruct_nmt_core::corpus::{
    apply_filters, load_parallel, train_langid, write_parallel, CorpusFormat, LangIdModel, ParallelCorpus,
    ToyConfig, ToyLanguage,
};
use instruct_nmt_core::eval::{
    build_composition_set, chrf_corpus, evaluate_composition, evaluate_tasks, render_composition_report,
    render_task_report, CompositionRow, DecodeRequest, EvalConfig, Lexicons, TaskReport, Translator,
};
use instruct_nmt_core::mixer::{
    encode_example, encode_input, format_input, format_with_instruction, mix_datasets, parallel_example,
    split_task_data, SplitConfig, TrainingExample,
};
use instruct_nmt_core::tasks::{
    ingest_external, read_task_dataset, registry, synthesize_task_dataset, write_task_dataset, Instruction,
    Lexicon, LexiconKind, TaskDataset,
};
use instruct_nmt_core::tokenizer::{Tokenizer, EOS};
use instruct_nmt_core::{seed, INSTRUCTION_CLOSE, INSTRUCTION_OPEN};
use instruct_nmt_model::{
    expand_embeddings, greedy_decode, init_model, interpolate, load_checkpoint, save_checkpoint, search_alpha,
    train, AlphaSearch, Example, ModelParams, TrainTrace,
};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;
use crate::error::{CliError, Result};
use crate::manifest::{file_sha256, hex, write_atomic, RunManifest, StageRecord};

/// Test-set ids start here so they never collide with corpus ids.
pub const TEST_ID_OFFSET: u64 = 1_000_000;

pub const FILTERED: &str = "data/filtered.tsv";
pub const TEST: &str = "data/test.tsv";
pub const TOY_LEXICON: &str = "data/toy_lexicon.tsv";
pub const FILTER_REPORT: &str = "reports/filter.json";
pub const TASKS: &str = "data/tasks.jsonl";
pub const TASKS_TRAIN: &str = "data/tasks_train.jsonl";
pub const TASKS_HELDOUT: &str = "data/tasks_heldout.jsonl";
pub const TASKS_REPORT: &str = "reports/tasks.json";
pub const TOKENIZER: &str = "model/tokenizer.json";
pub const TOKENIZER_TAGS: &str = "model/tokenizer_tags.json";
pub const BASE_CKPT: &str = "model/base.ckpt";
pub const TRAIN_BASE_REPORT: &str = "reports/train_base.json";
pub const ABLATION_REPORT: &str = "reports/ablation.json";
pub const ABLATION_TEXT: &str = "reports/ablation.txt";

/// Finetuning configuration: the full recipe or one of the ablations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    pub no_parallel: bool,
    pub no_tags: bool,
}

impl Variant {
    pub const MIXED: Variant = Variant {
        no_parallel: false,
        no_tags: false,
    };
    pub const NO_PARALLEL: Variant = Variant {
        no_parallel: true,
        no_tags: false,
    };
    pub const NO_TAGS: Variant = Variant {
        no_parallel: false,
        no_tags: true,
    };

    /// Artifact-name suffix; empty for the full recipe.
    pub fn suffix(self) -> String {
        let mut s = String::new();
        if self.no_parallel {
            s.push_str("-no-parallel-mix");
        }
        if self.no_tags {
            s.push_str("-no-instruction-tokens");
        }
        s
    }

    pub fn label(self) -> String {
        match self.suffix().strip_prefix('-') {
            Some(s) => s.to_string(),
            None => "mixed".into(),
        }
    }

    pub fn tags(self) -> bool {
        !self.no_tags
    }

    pub fn finetuned(self) -> String {
        format!("model/finetuned{}.ckpt", self.suffix())
    }

    pub fn interpolated(self) -> String {
        format!("model/interpolated{}.ckpt", self.suffix())
    }

    pub fn tokenizer(self) -> &'static str {
        if self.tags() {
            TOKENIZER_TAGS
        } else {
            TOKENIZER
        }
    }

    pub fn report(self, stem: &str, ext: &str) -> String {
        format!("reports/{stem}{}.{ext}", self.suffix())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ModelChoice {
    Base,
    Finetuned,
    Interpolated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralScores {
    pub base_chrf: f64,
    pub finetuned_chrf: f64,
    /// Base minus finetuned.
    pub drop: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCheck {
    pub name: String,
    /// `None` when the measured task has no evaluated rows; such a check fails.
    pub value: Option<f64>,
    /// `>=` or `<=`.
    pub op: String,
    pub limit: f64,
    pub passed: bool,
}

impl ThresholdCheck {
    fn at_least(name: String, value: Option<f64>, limit: f64) -> Self {
        Self {
            name,
            value,
            op: ">=".into(),
            limit,
            passed: value.is_some_and(|v| v >= limit),
        }
    }

    fn at_most(name: String, value: Option<f64>, limit: f64) -> Self {
        Self {
            name,
            value,
            op: "<=".into(),
            limit,
            passed: value.is_some_and(|v| v <= limit),
        }
    }

    fn describe(&self) -> String {
        let value = self.value.map_or("n/a".to_string(), |v| format!("{v:.2}"));
        format!("{} = {} (needs {} {:.2})", self.name, value, self.op, self.limit)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: String,
    pub tasks: TaskReport,
    pub general: GeneralScores,
    pub checks: Vec<ThresholdCheck>,
    pub passed: bool,
}

impl EvalReport {
    pub fn failures(&self) -> Vec<String> {
        self.checks.iter().filter(|c| !c.passed).map(ThresholdCheck::describe).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionReport {
    pub variant: String,
    pub rows: Vec<CompositionRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionCheck {
    pub claim: String,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    /// Variant label to its general-case scores.
    pub general: BTreeMap<String, GeneralScores>,
    pub checks: Vec<DirectionCheck>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolationReport {
    pub variant: String,
    pub search: AlphaSearch,
}

/// Greedy decoding with a checkpoint behind the evaluation interface.
pub struct ModelTranslator<'a> {
    pub params: &'a ModelParams,
    pub tok: &'a Tokenizer,
    pub max_decode_len: usize,
}

impl Translator for ModelTranslator<'_> {
    fn translate(&mut self, batch: &[DecodeRequest]) -> instruct_nmt_core::Result<Vec<String>> {
        let max_len = self.params.config().max_len;
        let max_out = self.max_decode_len.min(max_len);
        batch
            .iter()
            .map(|r| {
                let mut ids = encode_input(self.tok, &r.input, r.instruction_tokens.as_deref())?;
                if ids.len() > max_len {
                    ids.truncate(max_len - 1);
                    ids.push(EOS);
                }
                let out = greedy_decode(self.params, &ids, max_out)
                    .map_err(|e| instruct_nmt_core::Error::InvalidArgument(e.to_string()))?;
                self.tok.decode(&out)
            })
            .collect()
    }
}

/// Encode examples, dropping those that do not fit the model's positions.
pub fn encode_examples(tok: &Tokenizer, examples: &[TrainingExample], max_len: usize) -> Result<(Vec<Example>, usize)> {
    let mut out = Vec::with_capacity(examples.len());
    let mut dropped = 0;
    for ex in examples {
        let (src, tgt) = encode_example(tok, ex)?;
        if src.len() <= max_len && tgt.len() <= max_len {
            out.push((src, tgt));
        } else {
            dropped += 1;
        }
    }
    Ok((out, dropped))
}

struct StageSpec {
    name: String,
    config: serde_json::Value,
    /// Run-relative artifact and the stage producing it.
    inputs: Vec<(String, &'static str)>,
    external: Vec<PathBuf>,
    outputs: Vec<String>,
}

impl StageSpec {
    fn new(name: impl Into<String>, config: serde_json::Value) -> Self {
        Self {
            name: name.into(),
            config,
            inputs: Vec::new(),
            external: Vec::new(),
            outputs: Vec::new(),
        }
    }

    fn input(mut self, rel: impl Into<String>, stage: &'static str) -> Self {
        self.inputs.push((rel.into(), stage));
        self
    }

    fn outputs<S: Into<String>>(mut self, rels: impl IntoIterator<Item = S>) -> Self {
        self.outputs.extend(rels.into_iter().map(Into::into));
        self
    }
}

pub struct Pipeline {
    pub cfg: PipelineConfig,
    pub dir: PathBuf,
    force: bool,
    manifest: RunManifest,
}

fn seconds_since(t: Instant) -> f64 {
    (t.elapsed().as_secs_f64() * 1000.0).round() / 1000.0
}

impl Pipeline {
    /// Open (creating if needed) `<out_root>/<run name>`.
    pub fn open(cfg: PipelineConfig, out_root: &Path, force: bool) -> Result<Self> {
        let dir = out_root.join(cfg.run_name());
        fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        let mut manifest = RunManifest::load_or_new(&dir)?;
        manifest.tool_version = env!("CARGO_PKG_VERSION").into();
        manifest.config_hash = hex(&Sha256::digest(serde_json::to_vec(&cfg)?));
        Ok(Self {
            cfg,
            dir,
            force,
            manifest,
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    fn input_hash(&self, spec: &StageSpec) -> Result<String> {
        let mut h = Sha256::new();
        h.update(spec.name.as_bytes());
        h.update([0]);
        h.update(spec.config.to_string().as_bytes());
        for (rel, _) in &spec.inputs {
            h.update([0]);
            h.update(rel.as_bytes());
            h.update(file_sha256(&self.path(rel))?.as_bytes());
        }
        for p in &spec.external {
            h.update([0]);
            h.update(file_sha256(p)?.as_bytes());
        }
        Ok(hex(&h.finalize()))
    }

    fn outputs_intact(&self, rec: &StageRecord, spec: &StageSpec) -> bool {
        spec.outputs.iter().all(|rel| {
            let p = self.path(rel);
            p.exists() && rec.outputs.get(rel).is_some_and(|h| file_sha256(&p).ok().as_ref() == Some(h))
        })
    }

    fn run_stage(&mut self, spec: StageSpec, body: impl FnOnce(&Pipeline) -> Result<()>) -> Result<()> {
        for (rel, stage) in &spec.inputs {
            if !self.path(rel).exists() {
                return Err(CliError::Prerequisite {
                    stage: (*stage).to_string(),
                    artifact: rel.clone(),
                });
            }
        }
        let input_hash = self.input_hash(&spec)?;
        if let Some(rec) = self.manifest.stages.get(&spec.name) {
            if rec.input_hash == input_hash {
                if self.outputs_intact(rec, &spec) {
                    log::info!("{}: up to date", spec.name);
                    return Ok(());
                }
            } else if !self.force {
                return Err(CliError::ResumeMismatch(spec.name));
            }
        }
        log::info!("{}: running", spec.name);
        let started = Instant::now();
        body(self)?;
        let mut outputs = BTreeMap::new();
        for rel in &spec.outputs {
            outputs.insert(rel.clone(), file_sha256(&self.path(rel))?);
        }
        let rec = StageRecord {
            input_hash,
            outputs,
            seconds: seconds_since(started),
        };
        log::info!("{}: done in {:.1}s", spec.name, rec.seconds);
        self.manifest.stages.insert(spec.name, rec);
        self.manifest.save(&self.dir)
    }

    fn ensure_parent(&self, rel: &str) -> Result<PathBuf> {
        let p = self.path(rel);
        if let Some(d) = p.parent() {
            fs::create_dir_all(d).map_err(|e| CliError::io(d, e))?;
        }
        Ok(p)
    }

    fn write_json<T: Serialize>(&self, rel: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        write_atomic(&self.path(rel), &bytes)
    }

    fn write_text(&self, rel: &str, text: &str) -> Result<()> {
        write_atomic(&self.path(rel), text.as_bytes())
    }

    pub fn read_json<T: for<'de> Deserialize<'de>>(&self, rel: &str) -> Result<T> {
        let p = self.path(rel);
        let text = fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    fn tokenizer(&self, rel: &str) -> Result<Tokenizer> {
        Ok(Tokenizer::load(&self.path(rel))?)
    }

    fn checkpoint(&self, rel: &str) -> Result<ModelParams> {
        Ok(load_checkpoint(&self.path(rel))?.params)
    }

    fn corpus(&self, rel: &str) -> Result<ParallelCorpus> {
        Ok(load_parallel(&self.path(rel), CorpusFormat::Tsv)?)
    }

    fn uses_toy(&self) -> bool {
        self.cfg.paths.corpus.is_none() || self.cfg.paths.test_corpus.is_none()
    }

    fn toy_translation_lexicon(&self) -> bool {
        self.uses_toy() && self.cfg.paths.lexicons.translation.is_none()
    }

    fn stream_seed(&self, name: &str, id: u64) -> u64 {
        seed::derive(self.cfg.seed, name, id)
    }

    fn lexicons(&self) -> Result<Lexicons> {
        let l = &self.cfg.paths.lexicons;
        let mut out = Lexicons::new();
        for (kind, path) in [
            (LexiconKind::Translation, &l.translation),
            (LexiconKind::Antonym, &l.antonym),
            (LexiconKind::Profanity, &l.profanity),
        ] {
            if let Some(p) = path {
                out.insert(kind, Lexicon::load(p, kind)?);
            }
        }
        if self.toy_translation_lexicon() && self.path(TOY_LEXICON).exists() {
            out.insert(
                LexiconKind::Translation,
                Lexicon::load(&self.path(TOY_LEXICON), LexiconKind::Translation)?,
            );
        }
        Ok(out)
    }

    fn with_lexicon_inputs(&self, mut spec: StageSpec) -> StageSpec {
        let l = &self.cfg.paths.lexicons;
        spec.external
            .extend([&l.translation, &l.antonym, &l.profanity].into_iter().flatten().cloned());
        if self.toy_translation_lexicon() {
            spec = spec.input(TOY_LEXICON, "filter");
        }
        spec
    }

    pub fn filter(&mut self) -> Result<()> {
        let c = &self.cfg;
        let toy = self.uses_toy();
        let mut spec = StageSpec::new(
            "filter",
            json!({
                "seed": c.seed,
                "toy": if toy { Some(&c.toy) } else { None },
                "filter": c.filter,
                "corpus": c.paths.corpus.is_some(),
                "test_corpus": c.paths.test_corpus.is_some(),
                "langid": c.paths.langid_samples.keys().collect::<Vec<_>>(),
            }),
        )
        .outputs([FILTERED, TEST, FILTER_REPORT]);
        if toy {
            spec = spec.outputs([TOY_LEXICON]);
        }
        spec.external.extend(c.paths.corpus.iter().chain(&c.paths.test_corpus).cloned());
        if c.filter.langid_enabled {
            spec.external.extend(c.paths.langid_samples.values().cloned());
        }
        self.run_stage(spec, |p| p.filter_body())
    }

    fn filter_body(&self) -> Result<()> {
        let c = &self.cfg;
        let toy_seed = self.stream_seed("toy", 0);
        let lang = if self.uses_toy() {
            let tc = ToyConfig {
                min_words: c.toy.min_words,
                max_words: c.toy.max_words,
                decorate: true,
                names: c.toy.names,
            };
            Some(ToyLanguage::generate(c.toy.lexicon_size, toy_seed, tc)?)
        } else {
            None
        };
        let corpus = match (&c.paths.corpus, &lang) {
            (Some(p), _) => load_parallel(p, CorpusFormat::from_path(p))?,
            (None, Some(l)) => l.corpus(c.toy.pairs, toy_seed, 0),
            (None, None) => unreachable!("toy language exists without a corpus path"),
        };
        let test = match (&c.paths.test_corpus, &lang) {
            (Some(p), _) => load_parallel(p, CorpusFormat::from_path(p))?,
            (None, Some(l)) => l.corpus(c.toy.test_pairs, self.stream_seed("toy:test", 0), TEST_ID_OFFSET),
            (None, None) => unreachable!("toy language exists without a test path"),
        };
        let langid = if c.filter.langid_enabled {
            Some(self.langid_model()?)
        } else {
            None
        };
        let (filtered, report) = apply_filters(&corpus, &c.filter, langid.as_ref())?;
        write_parallel(&filtered, &self.ensure_parent(FILTERED)?, CorpusFormat::Tsv)?;
        write_parallel(&test, &self.ensure_parent(TEST)?, CorpusFormat::Tsv)?;
        if let Some(l) = &lang {
            let mut tsv = String::new();
            for (k, v) in &l.lexicon().entries {
                tsv.push_str(&format!("{k}\t{v}\n"));
            }
            self.write_text(TOY_LEXICON, &tsv)?;
        }
        self.write_json(
            FILTER_REPORT,
            &json!({
                "input_pairs": corpus.len(),
                "test_pairs": test.len(),
                "report": report,
            }),
        )
    }

    fn langid_model(&self) -> Result<LangIdModel> {
        let mut samples = Vec::new();
        for (lang, path) in &self.cfg.paths.langid_samples {
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            samples.extend(
                text.lines()
                    .filter(|l| !l.trim().is_empty())
                    .map(|l| (lang.clone(), l.to_string())),
            );
        }
        Ok(train_langid(&samples)?)
    }

    pub fn synthesize(&mut self) -> Result<()> {
        let c = &self.cfg;
        let mut spec = StageSpec::new(
            "synthesize",
            json!({ "seed": c.seed, "tasks": c.tasks, "split": c.split }),
        )
        .input(FILTERED, "filter")
        .outputs([TASKS, TASKS_TRAIN, TASKS_HELDOUT, TASKS_REPORT]);
        spec.external.extend(c.paths.external_tasks.iter().cloned());
        let spec = self.with_lexicon_inputs(spec);
        self.run_stage(spec, |p| p.synthesize_body())
    }

    fn synthesize_body(&self) -> Result<()> {
        let c = &self.cfg;
        let corpus = self.corpus(FILTERED)?;
        let lexicons = self.lexicons()?;
        let mut data = TaskDataset::new(Vec::new());
        for (i, spec) in c.tasks.iter().enumerate() {
            let mut s = spec.clone();
            s.seed = seed::derive(self.stream_seed("synthesize", i as u64), "task", spec.seed);
            let lex = registry()
                .get(s.kind)?
                .lexicon_kind()
                .and_then(|k| lexicons.get(&k));
            let d = synthesize_task_dataset(&corpus, &s, lex)?;
            if d.len() < spec.samples {
                log::warn!("{}: only {} of {} samples eligible", s.kind, d.len(), spec.samples);
            }
            data.extend(d);
        }
        for path in &c.paths.external_tasks {
            data.extend(ingest_external(path)?);
        }
        let split = SplitConfig {
            seed: self.stream_seed("split", c.split.seed),
            ..c.split.clone()
        };
        let (train_set, heldout) = split_task_data(&data, &split)?;
        write_task_dataset(&data, &self.ensure_parent(TASKS)?)?;
        write_task_dataset(&train_set, &self.path(TASKS_TRAIN))?;
        write_task_dataset(&heldout, &self.path(TASKS_HELDOUT))?;
        let (tr, ho) = (train_set.counts(), heldout.counts());
        let per_task: BTreeMap<_, _> = data
            .counts()
            .into_iter()
            .map(|(k, n)| {
                let v = json!({
                    "total": n,
                    "train": tr.get(&k).copied().unwrap_or(0),
                    "heldout": ho.get(&k).copied().unwrap_or(0),
                });
                (k, v)
            })
            .collect();
        self.write_json(TASKS_REPORT, &per_task)
    }

    pub fn tokenize(&mut self) -> Result<()> {
        let spec = StageSpec::new("tokenize", json!({ "tokenizer": self.cfg.tokenizer }))
            .input(FILTERED, "filter")
            .input(TASKS_TRAIN, "synthesize")
            .outputs([TOKENIZER, TOKENIZER_TAGS]);
        self.run_stage(spec, |p| {
            let corpus = p.corpus(FILTERED)?;
            let tasks = read_task_dataset(&p.path(TASKS_TRAIN))?;
            let mut texts: Vec<&str> = Vec::new();
            for pair in &corpus.pairs {
                texts.extend([pair.src.as_str(), pair.tgt.as_str()]);
            }
            for r in &tasks.records {
                texts.extend([r.src.as_str(), r.tgt.as_str()]);
                texts.extend(r.instruction.as_text());
            }
            let tok = Tokenizer::train(texts, p.cfg.tokenizer.vocab_size)?;
            let (tagged, _) = tok.expand(&[INSTRUCTION_OPEN, INSTRUCTION_CLOSE])?;
            tok.save(&p.ensure_parent(TOKENIZER)?)?;
            tagged.save(&p.path(TOKENIZER_TAGS))?;
            Ok(())
        })
    }

    pub fn train_base(&mut self) -> Result<()> {
        let c = &self.cfg;
        let spec = StageSpec::new(
            "train-base",
            json!({ "seed": c.seed, "model": c.model, "train": c.base_train }),
        )
        .input(FILTERED, "filter")
        .input(TOKENIZER, "tokenize")
        .outputs([BASE_CKPT, TRAIN_BASE_REPORT]);
        self.run_stage(spec, |p| p.train_base_body())
    }

    fn train_base_body(&self) -> Result<()> {
        let c = &self.cfg;
        let corpus = self.corpus(FILTERED)?;
        let tok = self.tokenizer(TOKENIZER)?;
        let exs: Vec<_> = corpus.pairs.iter().map(parallel_example).collect();
        let (examples, dropped) = encode_examples(&tok, &exs, c.model.max_len)?;
        let params = init_model(&c.model, tok.vocab_size(), self.stream_seed("init", 0))?;
        let tc = instruct_nmt_model::TrainConfig {
            seed: self.stream_seed("train-base", c.base_train.seed),
            ..c.base_train.clone()
        };
        let (params, trace) = train(params, &mut |_| examples.clone(), &tc)?;
        save_checkpoint(&params, Some(&fingerprint(&tok)), &self.ensure_parent(BASE_CKPT)?)?;
        self.write_train_report(TRAIN_BASE_REPORT, examples.len(), dropped, &params, &trace)
    }

    fn write_train_report(
        &self,
        rel: &str,
        examples: usize,
        dropped: usize,
        params: &ModelParams,
        trace: &TrainTrace,
    ) -> Result<()> {
        self.write_json(
            rel,
            &json!({
                "examples": examples,
                "dropped_overlong": dropped,
                "parameters": params.num_params(),
                "vocab_size": params.vocab_size(),
                "trace": trace,
            }),
        )
    }

    pub fn finetune(&mut self, v: Variant) -> Result<()> {
        let c = &self.cfg;
        let spec = StageSpec::new(
            format!("finetune{}", v.suffix()),
            json!({
                "seed": c.seed,
                "train": c.finetune,
                "mix": c.mix,
                "expansion": c.expansion,
                "variant": v,
            }),
        )
        .input(FILTERED, "filter")
        .input(TASKS_TRAIN, "synthesize")
        .input(v.tokenizer(), "tokenize")
        .input(BASE_CKPT, "train-base")
        .outputs([v.finetuned(), v.report("train_finetune", "json")]);
        self.run_stage(spec, |p| p.finetune_body(v))
    }

    fn finetune_body(&self, v: Variant) -> Result<()> {
        let c = &self.cfg;
        let base = self.checkpoint(BASE_CKPT)?;
        let tok = self.tokenizer(v.tokenizer())?;
        let params = if tok.vocab_size() > base.vocab_size() {
            let n_new = tok.vocab_size() - base.vocab_size();
            expand_embeddings(&base, n_new, c.expansion.pca_rank, self.stream_seed("expand", 0))?
        } else {
            base
        };
        let params = params.with_segment_token(tok.vocab.special_id(INSTRUCTION_CLOSE))?;
        if params.vocab_size() != tok.vocab_size() {
            return Err(CliError::Validation(format!(
                "base checkpoint has {} embedding rows but the tokenizer has {} tokens; rerun train-base",
                params.vocab_size(),
                tok.vocab_size()
            )));
        }
        let corpus = self.corpus(FILTERED)?;
        let tasks = read_task_dataset(&self.path(TASKS_TRAIN))?;
        let exs: Vec<_> = tasks.records.iter().map(|r| format_with_instruction(r, v.tags())).collect();
        let mix = instruct_nmt_core::mixer::MixConfig {
            seed: self.stream_seed("mix", c.mix.seed),
            no_parallel: c.mix.no_parallel || v.no_parallel,
            no_instruction_tokens: c.mix.no_instruction_tokens || v.no_tags,
            ..c.mix.clone()
        };
        let stream = mix_datasets(&corpus, exs, &mix)?;
        let tc = instruct_nmt_model::TrainConfig {
            seed: self.stream_seed("finetune", c.finetune.seed),
            shuffle: false,
            ..c.finetune.clone()
        };
        let max_len = c.model.max_len;
        let mut failure = None;
        let mut dropped = 0;
        let mut per_epoch = 0;
        let mut data = |e: usize| match encode_examples(&tok, &stream.epoch(e), max_len) {
            Ok((ex, d)) => {
                dropped = d;
                per_epoch = ex.len();
                ex
            }
            Err(err) => {
                failure = Some(err);
                Vec::new()
            }
        };
        let result = train(params, &mut data, &tc);
        if let Some(err) = failure {
            return Err(err);
        }
        let (params, trace) = result?;
        save_checkpoint(&params, Some(&fingerprint(&tok)), &self.ensure_parent(&v.finetuned())?)?;
        self.write_train_report(&v.report("train_finetune", "json"), per_epoch, dropped, &params, &trace)
    }

    fn translator<'a>(&self, params: &'a ModelParams, tok: &'a Tokenizer) -> ModelTranslator<'a> {
        ModelTranslator {
            params,
            tok,
            max_decode_len: self.cfg.eval.max_decode_len,
        }
    }

    fn eval_config(&self, v: Variant) -> EvalConfig {
        EvalConfig {
            chrf: self.cfg.chrf.clone(),
            tags_enabled: v.tags(),
        }
    }

    /// General-case ChrF of `params` on the first `n` test pairs.
    fn general_chrf(&self, params: &ModelParams, tok: &Tokenizer, test: &ParallelCorpus, n: usize) -> Result<f64> {
        let pairs = &test.pairs[..n.min(test.len())];
        let reqs: Vec<_> = pairs.iter().map(|p| DecodeRequest::text(p.src.clone())).collect();
        let hyps = self.translator(params, tok).translate(&reqs)?;
        let refs: Vec<_> = pairs.iter().map(|p| p.tgt.clone()).collect();
        Ok(chrf_corpus(&hyps, &refs, &self.cfg.chrf)?)
    }

    pub fn eval(&mut self, v: Variant) -> Result<EvalReport> {
        let c = &self.cfg;
        let spec = StageSpec::new(
            format!("eval{}", v.suffix()),
            json!({
                "chrf": c.chrf,
                "eval": c.eval,
                "variant": v,
            }),
        )
        .input(TEST, "filter")
        .input(TASKS_HELDOUT, "synthesize")
        .input(TOKENIZER, "tokenize")
        .input(v.tokenizer(), "tokenize")
        .input(BASE_CKPT, "train-base")
        .input(v.finetuned(), "finetune");
        let spec = self.with_lexicon_inputs(spec).outputs([v.report("eval", "json"), v.report("eval", "txt")]);
        self.run_stage(spec, |p| p.eval_body(v))?;
        self.read_json(&v.report("eval", "json"))
    }

    fn eval_body(&self, v: Variant) -> Result<()> {
        let c = &self.cfg;
        let heldout = read_task_dataset(&self.path(TASKS_HELDOUT))?;
        let test = self.corpus(TEST)?;
        let lexicons = self.lexicons()?;
        let base_tok = self.tokenizer(TOKENIZER)?;
        let tok = self.tokenizer(v.tokenizer())?;
        let base = self.checkpoint(BASE_CKPT)?;
        let ft = self.checkpoint(&v.finetuned())?;
        let tasks = evaluate_tasks(&mut self.translator(&ft, &tok), &heldout, &self.eval_config(v), &lexicons)?;
        let base_chrf = self.general_chrf(&base, &base_tok, &test, test.len())?;
        let ft_chrf = self.general_chrf(&ft, &tok, &test, test.len())?;
        let general = GeneralScores {
            base_chrf,
            finetuned_chrf: ft_chrf,
            drop: base_chrf - ft_chrf,
            count: test.len(),
        };
        let th = &c.eval.thresholds;
        let mut checks = Vec::new();
        for (task, &min) in &th.min_sr {
            let sr = tasks.row(task).and_then(|r| r.sr);
            checks.push(ThresholdCheck::at_least(format!("{task} SR"), sr, min));
        }
        if let Some(max) = th.max_empty_instruction_rr {
            let rr = tasks.row("empty_instruction").map(|r| r.rr);
            checks.push(ThresholdCheck::at_most("empty_instruction RR".into(), rr, max));
        }
        if let Some(max) = th.max_general_chrf_drop {
            checks.push(ThresholdCheck::at_most("general ChrF drop".into(), Some(general.drop), max));
        }
        let passed = checks.iter().all(|c| c.passed);
        let report = EvalReport {
            variant: v.label(),
            tasks,
            general,
            checks,
            passed,
        };
        self.write_json(&v.report("eval", "json"), &report)?;
        self.write_text(&v.report("eval", "txt"), &render_eval(&report))
    }

    pub fn compose_eval(&mut self, v: Variant) -> Result<CompositionReport> {
        let c = &self.cfg;
        let spec = StageSpec::new(
            format!("compose-eval{}", v.suffix()),
            json!({
                "seed": c.seed,
                "composition": c.composition,
                "chrf": c.chrf,
                "max_decode_len": c.eval.max_decode_len,
                "variant": v,
            }),
        )
        .input(TEST, "filter")
        .input(v.tokenizer(), "tokenize")
        .input(v.finetuned(), "finetune");
        let spec = self
            .with_lexicon_inputs(spec)
            .outputs([v.report("composition", "json"), v.report("composition", "txt")]);
        self.run_stage(spec, |p| p.compose_body(v))?;
        self.read_json(&v.report("composition", "json"))
    }

    fn compose_body(&self, v: Variant) -> Result<()> {
        let c = &self.cfg;
        let test = self.corpus(TEST)?;
        let lexicons = self.lexicons()?;
        let tok = self.tokenizer(v.tokenizer())?;
        let ft = self.checkpoint(&v.finetuned())?;
        let pairs = &test.pairs[..c.composition.items.min(test.len())];
        let sets = c
            .composition
            .pairs
            .iter()
            .enumerate()
            .map(|(i, &pair)| build_composition_set(pair, pairs, self.stream_seed("compose", i as u64), &lexicons))
            .collect::<instruct_nmt_core::Result<Vec<_>>>()?;
        let rows = evaluate_composition(
            &mut self.translator(&ft, &tok),
            &sets,
            &c.composition.joins,
            &self.eval_config(v),
            &lexicons,
        )?;
        let text = render_composition_report(&rows);
        self.write_json(
            &v.report("composition", "json"),
            &CompositionReport {
                variant: v.label(),
                rows,
            },
        )?;
        self.write_text(&v.report("composition", "txt"), &text)
    }

    pub fn interpolate(&mut self, v: Variant) -> Result<InterpolationReport> {
        let c = &self.cfg;
        let spec = StageSpec::new(
            format!("interpolate{}", v.suffix()),
            json!({
                "interpolation": c.interpolation,
                "chrf": c.chrf,
                "max_decode_len": c.eval.max_decode_len,
                "variant": v,
            }),
        )
        .input(TEST, "filter")
        .input(TASKS_HELDOUT, "synthesize")
        .input(v.tokenizer(), "tokenize")
        .input(BASE_CKPT, "train-base")
        .input(v.finetuned(), "finetune");
        let spec = self
            .with_lexicon_inputs(spec)
            .outputs([v.interpolated(), v.report("interpolation", "json")]);
        self.run_stage(spec, |p| p.interpolate_body(v))?;
        self.read_json(&v.report("interpolation", "json"))
    }

    fn interpolate_body(&self, v: Variant) -> Result<()> {
        let c = &self.cfg;
        let spec = c.interpolation.spec();
        let heldout = read_task_dataset(&self.path(TASKS_HELDOUT))?;
        let test = self.corpus(TEST)?;
        let lexicons = self.lexicons()?;
        let tok = self.tokenizer(v.tokenizer())?;
        let base = self.checkpoint(BASE_CKPT)?;
        let ft = self.checkpoint(&v.finetuned())?;
        let eval_cfg = self.eval_config(v);
        let perf = |m: &ModelParams| -> Result<f64> {
            let tasks = evaluate_tasks(&mut self.translator(m, &tok), &heldout, &eval_cfg, &lexicons)?;
            let general = self.general_chrf(m, &tok, &test, c.interpolation.eval_pairs)?;
            let srs: Vec<f64> = tasks.rows.iter().filter_map(|r| r.sr).collect();
            let mean_sr = if srs.is_empty() {
                0.0
            } else {
                srs.iter().sum::<f64>() / srs.len() as f64
            };
            Ok(spec.objective(general, mean_sr))
        };
        let search = search_alpha(&base, &ft, perf, &spec.grid)?;
        let model = interpolate(&base, &ft, search.best_alpha)?;
        save_checkpoint(&model, Some(&fingerprint(&tok)), &self.ensure_parent(&v.interpolated())?)?;
        self.write_json(
            &v.report("interpolation", "json"),
            &InterpolationReport {
                variant: v.label(),
                search,
            },
        )
    }

    /// Direction checks comparing the ablations with the full recipe.
    pub fn ablation_report(&self) -> Result<AblationReport> {
        let mut general = BTreeMap::new();
        for v in [Variant::MIXED, Variant::NO_PARALLEL, Variant::NO_TAGS] {
            let rel = v.report("eval", "json");
            if !self.path(&rel).exists() {
                return Err(CliError::Prerequisite {
                    stage: "eval".into(),
                    artifact: rel,
                });
            }
            let r: EvalReport = self.read_json(&rel)?;
            general.insert(v.label(), r.general);
        }
        let g = |v: Variant| &general[&v.label()];
        let (mixed, no_par, no_tags) = (g(Variant::MIXED), g(Variant::NO_PARALLEL), g(Variant::NO_TAGS));
        let checks = vec![
            DirectionCheck {
                claim: "general ChrF drop without parallel data >= drop with the mix".into(),
                lhs: no_par.drop,
                rhs: mixed.drop,
                holds: no_par.drop >= mixed.drop,
            },
            DirectionCheck {
                claim: "general ChrF without instruction tokens <= with them".into(),
                lhs: no_tags.finetuned_chrf,
                rhs: mixed.finetuned_chrf,
                holds: no_tags.finetuned_chrf <= mixed.finetuned_chrf,
            },
        ];
        let report = AblationReport { general, checks };
        self.write_json(ABLATION_REPORT, &report)?;
        self.write_text(ABLATION_TEXT, &render_ablation(&report))?;
        Ok(report)
    }

    /// Decode each non-empty line of `input`, optionally under one instruction.
    pub fn decode(
        &self,
        which: ModelChoice,
        v: Variant,
        instruction: Option<&str>,
        input: &Path,
        output: Option<&Path>,
    ) -> Result<()> {
        let (ckpt, tok_rel, stage) = match which {
            ModelChoice::Base => (BASE_CKPT.to_string(), TOKENIZER, "train-base"),
            ModelChoice::Finetuned => (v.finetuned(), v.tokenizer(), "finetune"),
            ModelChoice::Interpolated => (v.interpolated(), v.tokenizer(), "interpolate"),
        };
        for (rel, st) in [(ckpt.as_str(), stage), (tok_rel, "tokenize")] {
            if !self.path(rel).exists() {
                return Err(CliError::Prerequisite {
                    stage: st.into(),
                    artifact: rel.into(),
                });
            }
        }
        let params = self.checkpoint(&ckpt)?;
        let tok = self.tokenizer(tok_rel)?;
        let text = fs::read_to_string(input).map_err(|e| CliError::io(input, e))?;
        let tags = which != ModelChoice::Base && v.tags();
        let reqs: Vec<_> = text
            .lines()
            .map(|line| match instruction {
                Some(i) => DecodeRequest::text(format_input(&Instruction::Text(i.to_string()), line, tags)),
                None => DecodeRequest::text(line),
            })
            .collect();
        let outs = self.translator(&params, &tok).translate(&reqs)?;
        let mut buf = Vec::new();
        for o in outs {
            writeln!(buf, "{o}").expect("write to memory");
        }
        match output {
            Some(p) => write_atomic(p, &buf),
            None => std::io::stdout().write_all(&buf).map_err(|e| CliError::io(Path::new("<stdout>"), e)),
        }
    }

    /// Every stage for one variant, in order.
    pub fn run_variant(&mut self, v: Variant, interpolation: bool) -> Result<EvalReport> {
        self.finetune(v)?;
        let report = self.eval(v)?;
        self.compose_eval(v)?;
        if interpolation {
            self.interpolate(v)?;
        }
        Ok(report)
    }

    /// The whole recipe; the returned report belongs to `main`.
    pub fn reproduce(&mut self, main: Variant, ablations: bool, interpolation: bool) -> Result<EvalReport> {
        self.filter()?;
        self.synthesize()?;
        self.tokenize()?;
        self.train_base()?;
        let report = self.run_variant(main, interpolation)?;
        if ablations {
            for v in [Variant::MIXED, Variant::NO_PARALLEL, Variant::NO_TAGS] {
                if v != main {
                    self.run_variant(v, false)?;
                }
            }
            self.ablation_report()?;
        }
        Ok(report)
    }
}

fn fingerprint(tok: &Tokenizer) -> String {
    format!("{:016x}", tok.fingerprint())
}

pub fn render_eval(r: &EvalReport) -> String {
    let mut s = format!("variant: {}\n\n", r.variant);
    s.push_str(&render_task_report(&r.tasks));
    let g = &r.general;
    s.push_str(&format!(
        "\ngeneral ChrF on {} test pairs: base {:.2}, finetuned {:.2}, drop {:.2}\n\n",
        g.count, g.base_chrf, g.finetuned_chrf, g.drop
    ));
    for c in &r.checks {
        s.push_str(&format!("[{}] {}\n", if c.passed { "pass" } else { "FAIL" }, c.describe()));
    }
    s
}

fn render_ablation(r: &AblationReport) -> String {
    let mut s = String::from("variant                  base ChrF  finetuned ChrF   drop\n");
    for (k, g) in &r.general {
        s.push_str(&format!(
            "{k:<24} {:>9.2} {:>15.2} {:>6.2}\n",
            g.base_chrf, g.finetuned_chrf, g.drop
        ));
    }
    s.push('\n');
    for c in &r.checks {
        s.push_str(&format!(
            "[{}] {} ({:.2} vs {:.2})\n",
            if c.holds { "holds" } else { "violated" },
            c.claim,
            c.lhs,
            c.rhs
        ));
    }
    s
}
