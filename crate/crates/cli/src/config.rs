//! Pipeline configuration: one TOML file with a section per stage, dotted
//! `--set key=value` overrides, defaults for the toy recipe.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use instruct_nmt_core::corpus::FilterConfig;
use instruct_nmt_core::eval::{ChrfConfig, JoinStyle};
use instruct_nmt_core::mixer::{MixConfig, SplitConfig};
use instruct_nmt_core::tasks::{TaskKind, TaskSpec};
use instruct_nmt_model::{InterpolationSpec, ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Tasks of the toy reproduction with their sample counts. Tasks that copy
/// source words or must leave the output alone get the larger shares.
pub const TOY_TASKS: [(TaskKind, usize); 8] = [
    (TaskKind::Uppercase, 300),
    (TaskKind::Lowercase, 200),
    (TaskKind::RemovePunctuation, 200),
    (TaskKind::Leetify, 250),
    (TaskKind::ShuffleWords, 200),
    (TaskKind::AddHashtag, 450),
    (TaskKind::InsertXBegin, 400),
    (TaskKind::EmptyInstruction, 400),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Run directory name under the output directory; `seed<seed>` if unset.
    pub run_name: Option<String>,
    pub paths: PathsConfig,
    pub toy: ToyCorpusConfig,
    pub filter: FilterConfig,
    pub tasks: Vec<TaskSpec>,
    pub tokenizer: TokenizerConfig,
    pub model: ModelConfig,
    pub base_train: TrainConfig,
    pub finetune: TrainConfig,
    pub expansion: ExpansionConfig,
    pub mix: MixConfig,
    pub split: SplitConfig,
    pub chrf: ChrfConfig,
    pub interpolation: InterpolationConfig,
    pub eval: EvalSettings,
    pub composition: CompositionConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            run_name: None,
            paths: PathsConfig::default(),
            toy: ToyCorpusConfig::default(),
            filter: FilterConfig::default(),
            tasks: TOY_TASKS.iter().map(|&(k, n)| TaskSpec::new(k, n, 0)).collect(),
            tokenizer: TokenizerConfig::default(),
            model: ModelConfig {
                max_len: 64,
                ..ModelConfig::default()
            },
            base_train: TrainConfig {
                epochs: 12,
                learning_rate: 2e-3,
                ..TrainConfig::default()
            },
            finetune: TrainConfig {
                epochs: 3,
                batch_size: 4,
                learning_rate: 1e-3,
                ..TrainConfig::default()
            },
            expansion: ExpansionConfig::default(),
            mix: MixConfig::default(),
            split: SplitConfig::default(),
            chrf: ChrfConfig::default(),
            interpolation: InterpolationConfig::default(),
            eval: EvalSettings::default(),
            composition: CompositionConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    /// Parallel corpus (TSV or JSONL); the synthetic toy corpus when unset.
    pub corpus: Option<PathBuf>,
    /// General-case test pairs; toy pairs disjoint from the corpus when unset.
    pub test_corpus: Option<PathBuf>,
    pub lexicons: LexiconPaths,
    /// JSONL task files merged into the synthesized task data.
    pub external_tasks: Vec<PathBuf>,
    /// Language code to a file of sample sentences, for language-id filtering.
    pub langid_samples: BTreeMap<String, PathBuf>,
    /// Overridden by `--out` and the output-directory environment variable.
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LexiconPaths {
    pub translation: Option<PathBuf>,
    pub antonym: Option<PathBuf>,
    pub profanity: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyCorpusConfig {
    pub pairs: usize,
    pub test_pairs: usize,
    pub lexicon_size: usize,
    /// Lexicon words left untranslated.
    pub names: usize,
    pub min_words: usize,
    pub max_words: usize,
}

impl Default for ToyCorpusConfig {
    fn default() -> Self {
        Self {
            pairs: 5000,
            test_pairs: 200,
            lexicon_size: 32,
            names: 8,
            min_words: 3,
            max_words: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TokenizerConfig {
    /// Size before the instruction tags are appended.
    pub vocab_size: usize,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self { vocab_size: 1024 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExpansionConfig {
    pub pca_rank: usize,
}

impl Default for ExpansionConfig {
    fn default() -> Self {
        Self { pca_rank: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InterpolationConfig {
    /// Ascending alphas tried by the search.
    pub grid: Vec<f64>,
    /// Weight of general-case ChrF in the objective; mean task success rate
    /// gets the remainder.
    pub general_weight: f64,
    /// General test pairs scored per grid point.
    pub eval_pairs: usize,
}

impl Default for InterpolationConfig {
    fn default() -> Self {
        let spec = InterpolationSpec::default();
        Self {
            grid: spec.grid,
            general_weight: spec.general_weight,
            eval_pairs: 100,
        }
    }
}

impl InterpolationConfig {
    pub fn spec(&self) -> InterpolationSpec {
        InterpolationSpec {
            alpha: 1.0,
            grid: self.grid.clone(),
            general_weight: self.general_weight,
        }
    }
}

/// Acceptance thresholds checked by `eval`; a violation exits with code 3.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    /// Minimum success rate (percent) per task name.
    pub min_sr: BTreeMap<String, f64>,
    /// Maximum response rate (percent) of the empty instruction.
    pub max_empty_instruction_rr: Option<f64>,
    /// Maximum drop of general-case ChrF relative to the base model.
    pub max_general_chrf_drop: Option<f64>,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            min_sr: [("uppercase", 90.0), ("lowercase", 90.0), ("add_hashtag", 80.0)]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
            max_empty_instruction_rr: Some(5.0),
            max_general_chrf_drop: Some(2.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    /// Longest decoded output, in tokens.
    pub max_decode_len: usize,
    pub thresholds: Thresholds,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            max_decode_len: 48,
            thresholds: Thresholds::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompositionConfig {
    pub pairs: Vec<(TaskKind, TaskKind)>,
    pub joins: Vec<JoinStyle>,
    /// General test pairs used as composition sources.
    pub items: usize,
}

impl Default for CompositionConfig {
    fn default() -> Self {
        Self {
            pairs: vec![
                (TaskKind::Uppercase, TaskKind::InsertXBegin),
                (TaskKind::InsertXBegin, TaskKind::Uppercase),
            ],
            joins: JoinStyle::ALL.to_vec(),
            items: 100,
        }
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

impl PipelineConfig {
    /// Range checks across sections, and existence of every referenced path.
    pub fn validate(&self) -> Result<(), CliError> {
        let v = |r: Result<(), String>| r.map_err(invalid);
        v(self.filter.validate().map_err(|e| e.to_string()))?;
        v(self.model.validate().map_err(|e| format!("model: {e}")))?;
        v(self.base_train.validate().map_err(|e| format!("base_train: {e}")))?;
        v(self.finetune.validate().map_err(|e| format!("finetune: {e}")))?;
        v(self.split.validate().map_err(|e| e.to_string()))?;
        v(self.chrf.validate().map_err(|e| format!("chrf: {e}")))?;
        v(self.interpolation.spec().validate().map_err(|e| format!("interpolation: {e}")))?;
        if self.model.segment_token.is_some() {
            return Err(invalid("model.segment_token is derived from the tokenizer and cannot be set"));
        }
        if self.tasks.is_empty() && self.paths.external_tasks.is_empty() {
            return Err(invalid("no tasks configured"));
        }
        for t in &self.tasks {
            if t.kind == TaskKind::External {
                return Err(invalid("task kind `external` is only produced by ingestion"));
            }
            if t.samples < 2 {
                return Err(invalid(format!("task {}: samples must be at least 2", t.kind)));
            }
        }
        if self.tokenizer.vocab_size < instruct_nmt_core::tokenizer::BASE_SIZE as usize {
            return Err(invalid(format!(
                "tokenizer.vocab_size must be at least {}",
                instruct_nmt_core::tokenizer::BASE_SIZE
            )));
        }
        if self.expansion.pca_rank > self.model.d_model {
            return Err(invalid("expansion.pca_rank exceeds model.d_model"));
        }
        let toy = &self.toy;
        if toy.pairs == 0 || toy.test_pairs == 0 || toy.lexicon_size < 2 {
            return Err(invalid("toy corpus needs pairs, test_pairs >= 1 and lexicon_size >= 2"));
        }
        if toy.names >= toy.lexicon_size {
            return Err(invalid("toy.names must be below toy.lexicon_size"));
        }
        if toy.min_words == 0 || toy.min_words > toy.max_words {
            return Err(invalid("toy.min_words must be in 1..=toy.max_words"));
        }
        if self.eval.max_decode_len == 0 {
            return Err(invalid("eval.max_decode_len must be positive"));
        }
        if self.composition.pairs.iter().any(|(a, b)| a == b) {
            return Err(invalid("composition pairs need two different tasks"));
        }
        if self.filter.langid_enabled {
            for lang in [&self.filter.expected_src_lang, &self.filter.expected_tgt_lang] {
                if !self.paths.langid_samples.contains_key(lang) {
                    return Err(invalid(format!("langid filtering needs paths.langid_samples.{lang}")));
                }
            }
        }
        for p in self.referenced_paths() {
            if !p.exists() {
                return Err(invalid(format!("path {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    fn referenced_paths(&self) -> Vec<&Path> {
        let p = &self.paths;
        let lex = [&p.lexicons.translation, &p.lexicons.antonym, &p.lexicons.profanity];
        [&p.corpus, &p.test_corpus]
            .into_iter()
            .chain(lex)
            .flatten()
            .map(PathBuf::as_path)
            .chain(p.external_tasks.iter().map(PathBuf::as_path))
            .chain(p.langid_samples.values().map(PathBuf::as_path))
            .collect()
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let p = &mut self.paths;
        for slot in [
            &mut p.corpus,
            &mut p.test_corpus,
            &mut p.lexicons.translation,
            &mut p.lexicons.antonym,
            &mut p.lexicons.profanity,
            &mut p.output_dir,
        ] {
            if let Some(x) = slot.as_mut() {
                fix(x);
            }
        }
        p.external_tasks.iter_mut().for_each(fix);
        p.langid_samples.values_mut().for_each(fix);
    }

    pub fn run_name(&self) -> String {
        self.run_name.clone().unwrap_or_else(|| format!("seed{}", self.seed))
    }
}

/// Parse `value` as a TOML literal, falling back to a plain string.
fn override_value(value: &str) -> toml::Value {
    let doc = format!("v = {value}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(value.to_string()),
    }
}

fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (path, value) = assignment
        .split_once('=')
        .ok_or_else(|| invalid(format!("override `{assignment}` must look like key.path=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(invalid(format!("override key `{path}` is malformed")));
    }
    let mut table = root;
    for k in &keys[..keys.len() - 1] {
        let entry = table
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| invalid(format!("override `{path}`: `{k}` is not a section")))?;
    }
    table.insert(keys[keys.len() - 1].to_string(), override_value(value.trim()));
    Ok(())
}

/// Parse, override, default-fill and validate a configuration. Relative
/// paths resolve against `base_dir`.
/// Maps whose user value replaces the default instead of extending it.
const REPLACED_MAPS: [&str; 1] = ["eval.thresholds.min_sr"];

/// Recursive table merge; `over` wins, arrays and scalars are replaced whole.
fn merge_tables(base: &mut toml::Table, over: toml::Table, prefix: &str) {
    for (key, value) in over {
        let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) if !REPLACED_MAPS.contains(&path.as_str()) => {
                merge_tables(b, o, &path)
            }
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

/// Parse, override and validate. A partial section keeps the recipe
/// defaults for the fields it leaves out.
pub fn validate_config(text: &str, overrides: &[String], base_dir: &Path) -> Result<PipelineConfig, CliError> {
    let mut table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| invalid(format!("config does not parse: {e}")))?;
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let mut merged = toml::Table::try_from(PipelineConfig::default())
        .map_err(|e| invalid(format!("default config does not serialize: {e}")))?;
    merge_tables(&mut merged, table, "");
    let mut cfg: PipelineConfig = toml::Value::Table(merged)
        .try_into()
        .map_err(|e: toml::de::Error| invalid(format!("config: {}", e.message())))?;
    cfg.resolve_paths(base_dir);
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<PipelineConfig, CliError> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| invalid(format!("{}: {e}", p.display())))?;
            let dir = p.parent().unwrap_or(Path::new("."));
            validate_config(&text, overrides, dir)
        }
        None => validate_config("", overrides, Path::new(".")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<PipelineConfig, CliError> {
        validate_config(text, &[], Path::new("."))
    }

    #[test]
    fn empty_config_is_the_default_recipe() {
        let c = parse("").unwrap();
        assert_eq!(c, PipelineConfig::default());
        assert_eq!(c.mix.parallel_to_task_ratio.to_string(), "2:1");
        assert_eq!(c.split.train_fraction, 0.9);
        assert_eq!(c.finetune.epochs, 3);
        assert_eq!((c.chrf.char_order, c.chrf.beta), (6, 2.0));
        assert_eq!(c.tasks.len(), 8);
    }

    #[test]
    fn partial_sections_keep_recipe_defaults() {
        let c = parse("[base_train]\nbatch_size = 16\n[finetune]\nlearning_rate = 0.01\n").unwrap();
        assert_eq!((c.base_train.epochs, c.base_train.batch_size), (12, 16));
        assert_eq!(c.base_train.learning_rate, 2e-3);
        assert_eq!((c.finetune.warmup_steps, c.finetune.batch_size), (200, 4));
        assert_eq!(c.finetune.learning_rate, 0.01);
        let c = validate_config("", &["model.d_ff=128".into()], Path::new(".")).unwrap();
        assert_eq!((c.model.d_ff, c.model.max_len), (128, 64));
    }

    #[test]
    fn threshold_map_is_replaced() {
        let c = parse("[eval.thresholds]\nmin_sr = { leetify = 50.0 }\n").unwrap();
        assert_eq!(c.eval.thresholds.min_sr.len(), 1);
        assert!(parse("[eval.thresholds]\nmin_sr = {}\n").unwrap().eval.thresholds.min_sr.is_empty());
    }

    #[test]
    fn unknown_key_is_named() {
        let err = parse("[eval]\nbeem_size = 4\n").unwrap_err().to_string();
        assert!(err.contains("beem_size"), "{err}");
        let err = parse("beem_size = 4\n").unwrap_err().to_string();
        assert!(err.contains("beem_size"), "{err}");
    }

    #[test]
    fn zero_ratio_is_rejected() {
        let err = parse("[mix]\nparallel_to_task_ratio = \"0:1\"\n").unwrap_err();
        assert!(matches!(err, CliError::Validation(_)));
    }

    #[test]
    fn out_of_range_values() {
        assert!(parse("[split]\ntrain_fraction = 1.0\n").is_err());
        assert!(parse("[model]\nheads = 3\n").is_err());
        assert!(parse("[paths]\ncorpus = \"/no/such/file.tsv\"\n").is_err());
    }

    #[test]
    fn overrides_by_dotted_path() {
        let o = vec![
            "seed=9".to_string(),
            "base_train.epochs=2".to_string(),
            "run_name=abc".to_string(),
            "mix.parallel_to_task_ratio=3:1".to_string(),
        ];
        let c = validate_config("", &o, Path::new(".")).unwrap();
        assert_eq!((c.seed, c.base_train.epochs), (9, 2));
        assert_eq!(c.run_name(), "abc");
        assert_eq!(c.mix.parallel_to_task_ratio.to_string(), "3:1");
        assert!(validate_config("", &["nonsense".into()], Path::new(".")).is_err());
        assert!(validate_config("", &["seed.x=1".into()], Path::new(".")).is_err());
    }

    #[test]
    fn tasks_as_array_of_tables() {
        let c = parse("[[tasks]]\nkind = \"uppercase\"\nsamples = 10\n").unwrap();
        assert_eq!(c.tasks.len(), 1);
        assert_eq!(c.tasks[0].kind, TaskKind::Uppercase);
    }
}
