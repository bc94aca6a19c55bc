//! Evaluation protocol: ChrF, response rate, success rate, the per-task
//! general-vs-instruction table and zero-shot composition.

mod chrf;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::SentencePair;
use crate::error::{Error, Result};
use crate::mixer::format_input;
use crate::tasks::{
    apply_transform, check_success, registry, Instruction, Lexicon, LexiconKind, Params,
    TaskDataset, TaskKind,
};

pub use chrf::{chrf_corpus, chrf_from_stats, chrf_stats, ChrfConfig, OrderStats};

pub type Lexicons = BTreeMap<LexiconKind, Lexicon>;

/// One model input: formatted text plus, for opaque instructions, the ids
/// standing behind the marker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodeRequest {
    pub input: String,
    pub instruction_tokens: Option<Vec<u32>>,
}

impl DecodeRequest {
    pub fn text(input: impl Into<String>) -> Self {
        Self {
            input: input.into(),
            instruction_tokens: None,
        }
    }
}

/// Batch translation; outputs are in request order.
pub trait Translator {
    fn translate(&mut self, batch: &[DecodeRequest]) -> Result<Vec<String>>;
}

impl<F> Translator for F
where
    F: FnMut(&[DecodeRequest]) -> Result<Vec<String>>,
{
    fn translate(&mut self, batch: &[DecodeRequest]) -> Result<Vec<String>> {
        self(batch)
    }
}

fn translate_checked(tr: &mut dyn Translator, batch: &[DecodeRequest]) -> Result<Vec<String>> {
    let out = tr.translate(batch)?;
    if out.len() != batch.len() {
        return Err(Error::LengthMismatch {
            left: batch.len(),
            right: out.len(),
        });
    }
    Ok(out)
}

/// Percentage of items whose outputs differ after trimming trailing whitespace.
pub fn response_rate(general: &[String], instruction: &[String]) -> Result<f64> {
    if general.len() != instruction.len() {
        return Err(Error::LengthMismatch {
            left: general.len(),
            right: instruction.len(),
        });
    }
    if general.is_empty() {
        return Err(Error::Empty("response rate needs at least one item".into()));
    }
    let differ = general
        .iter()
        .zip(instruction)
        .filter(|(g, i)| g.trim_end() != i.trim_end())
        .count();
    Ok(100.0 * differ as f64 / general.len() as f64)
}

/// Checker inputs for one item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuccessItem<'a> {
    pub src: &'a str,
    pub output: &'a str,
    pub general_output: &'a str,
    pub params: &'a Params,
}

pub fn success_rate(kind: TaskKind, items: &[SuccessItem<'_>], lexicon: Option<&Lexicon>) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::Empty("success rate needs at least one item".into()));
    }
    let mut ok = 0usize;
    for it in items {
        if check_success(kind, it.src, it.output, it.general_output, it.params, lexicon)? {
            ok += 1;
        }
    }
    Ok(100.0 * ok as f64 / items.len() as f64)
}

fn lexicon_for(kind: TaskKind, lexicons: &Lexicons) -> Result<Option<&Lexicon>> {
    Ok(registry().get(kind)?.lexicon_kind().and_then(|k| lexicons.get(&k)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub chrf: ChrfConfig,
    /// Wrap instructions in the instruction tags, as in training.
    pub tags_enabled: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            chrf: ChrfConfig::default(),
            tags_enabled: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEvalRow {
    pub task: String,
    pub count: usize,
    pub rr: f64,
    pub chrf_general: f64,
    pub chrf_instruction: f64,
    pub improvement: f64,
    /// Absent for tasks without a checker.
    pub sr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub rows: Vec<TaskEvalRow>,
    /// Count-weighted over `rows`.
    pub average: TaskEvalRow,
}

impl TaskReport {
    pub fn row(&self, task: &str) -> Option<&TaskEvalRow> {
        self.rows.iter().find(|r| r.task == task)
    }
}

/// Decode every held-out source without and with its instruction, then
/// score each task group against the task references.
pub fn evaluate_tasks(
    tr: &mut dyn Translator,
    heldout: &TaskDataset,
    cfg: &EvalConfig,
    lexicons: &Lexicons,
) -> Result<TaskReport> {
    cfg.chrf.validate()?;
    let recs = &heldout.records;
    if recs.is_empty() {
        return Err(Error::Empty("held-out task data is empty".into()));
    }
    let general_req: Vec<DecodeRequest> = recs.iter().map(|r| DecodeRequest::text(&r.src)).collect();
    let instr_req: Vec<DecodeRequest> = recs
        .iter()
        .map(|r| DecodeRequest {
            input: format_input(&r.instruction, &r.src, cfg.tags_enabled),
            instruction_tokens: match &r.instruction {
                Instruction::Tokens(t) => Some(t.clone()),
                Instruction::Text(_) => None,
            },
        })
        .collect();
    let general = translate_checked(tr, &general_req)?;
    let instructed = translate_checked(tr, &instr_req)?;

    let mut index: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in recs.iter().enumerate() {
        index.entry(r.name.as_str()).or_default().push(i);
    }
    let mut rows = Vec::new();
    for (name, _) in heldout.groups() {
        let idx = &index[name.as_str()];
        if idx.is_empty() {
            log::warn!("task {name}: no held-out records, skipped");
            continue;
        }
        let pick = |v: &[String]| idx.iter().map(|&i| v[i].clone()).collect::<Vec<_>>();
        let (g, ins) = (pick(&general), pick(&instructed));
        let refs: Vec<String> = idx.iter().map(|&i| recs[i].tgt.clone()).collect();
        let chrf_general = chrf_corpus(&g, &refs, &cfg.chrf)?;
        let chrf_instruction = chrf_corpus(&ins, &refs, &cfg.chrf)?;
        let kind = recs[idx[0]].task;
        let sr = if kind == TaskKind::External {
            None
        } else {
            let items: Vec<SuccessItem<'_>> = idx
                .iter()
                .map(|&i| SuccessItem {
                    src: &recs[i].src,
                    output: &instructed[i],
                    general_output: &general[i],
                    params: &recs[i].params,
                })
                .collect();
            Some(success_rate(kind, &items, lexicon_for(kind, lexicons)?)?)
        };
        rows.push(TaskEvalRow {
            task: name,
            count: idx.len(),
            rr: response_rate(&g, &ins)?,
            chrf_general,
            chrf_instruction,
            improvement: chrf_instruction - chrf_general,
            sr,
        });
    }
    let average = average_row(&rows);
    Ok(TaskReport { rows, average })
}

fn average_row(rows: &[TaskEvalRow]) -> TaskEvalRow {
    let n: usize = rows.iter().map(|r| r.count).sum();
    let mean = |f: &dyn Fn(&TaskEvalRow) -> f64| {
        rows.iter().map(|r| f(r) * r.count as f64).sum::<f64>() / n as f64
    };
    let chrf_general = mean(&|r| r.chrf_general);
    let chrf_instruction = mean(&|r| r.chrf_instruction);
    let scored: Vec<&TaskEvalRow> = rows.iter().filter(|r| r.sr.is_some()).collect();
    let sr_n: usize = scored.iter().map(|r| r.count).sum();
    let sr = (sr_n > 0).then(|| {
        scored.iter().map(|r| r.sr.unwrap() * r.count as f64).sum::<f64>() / sr_n as f64
    });
    TaskEvalRow {
        task: "average".into(),
        count: n,
        rr: mean(&|r| r.rr),
        chrf_general,
        chrf_instruction,
        improvement: chrf_instruction - chrf_general,
        sr,
    }
}

/// How two instructions are joined into one prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JoinStyle {
    /// `"first second"`
    Space,
    /// `"first and second"`
    And,
}

impl JoinStyle {
    pub const ALL: [JoinStyle; 2] = [JoinStyle::Space, JoinStyle::And];

    pub fn join(self, a: &str, b: &str) -> String {
        match self {
            JoinStyle::Space => format!("{a} {b}"),
            JoinStyle::And => format!("{a} and {b}"),
        }
    }
}

/// One source with both task instructions resolved for it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompositionItem {
    pub src: String,
    pub tgt: String,
    pub instructions: [String; 2],
    pub params: [Params; 2],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompositionSet {
    pub tasks: (TaskKind, TaskKind),
    pub items: Vec<CompositionItem>,
}

/// Resolve both tasks' instructions on each pair; pairs ineligible for
/// either task are dropped.
pub fn build_composition_set(
    tasks: (TaskKind, TaskKind),
    pairs: &[SentencePair],
    seed: u64,
    lexicons: &Lexicons,
) -> Result<CompositionSet> {
    if tasks.0 == tasks.1 {
        return Err(Error::task(tasks.0.name(), "cannot be composed with itself"));
    }
    let (l0, l1) = (lexicon_for(tasks.0, lexicons)?, lexicon_for(tasks.1, lexicons)?);
    let mut items = Vec::new();
    for p in pairs {
        let a = apply_transform(tasks.0, p, seed, &Params::new(), l0)?;
        let b = apply_transform(tasks.1, p, seed, &Params::new(), l1)?;
        if let (Some(a), Some(b)) = (a, b) {
            let text = |i: &Instruction| i.as_text().unwrap_or_default().to_string();
            items.push(CompositionItem {
                src: p.src.clone(),
                tgt: p.tgt.clone(),
                instructions: [text(&a.instruction), text(&b.instruction)],
                params: [a.params, b.params],
            });
        }
    }
    if items.is_empty() {
        return Err(Error::task(
            tasks.0.name(),
            format!("no pair is eligible for composition with {}", tasks.1),
        ));
    }
    Ok(CompositionSet { tasks, items })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositionRow {
    /// Task names joined in the row's style, e.g. `"uppercase and insert_x_begin"`.
    pub prompt: String,
    pub join: JoinStyle,
    pub count: usize,
    pub rr: f64,
    pub chrf_general: f64,
    pub chrf_instruction: f64,
    pub t1_sr: f64,
    pub t2_sr: f64,
}

/// Both success rates are computed on the same composed outputs.
pub fn evaluate_composition(
    tr: &mut dyn Translator,
    sets: &[CompositionSet],
    joins: &[JoinStyle],
    cfg: &EvalConfig,
    lexicons: &Lexicons,
) -> Result<Vec<CompositionRow>> {
    cfg.chrf.validate()?;
    let mut rows = Vec::new();
    for set in sets {
        let (t1, t2) = set.tasks;
        if t1 == t2 {
            return Err(Error::task(t1.name(), "cannot be composed with itself"));
        }
        if set.items.is_empty() {
            log::warn!("composition {t1}+{t2}: no items, skipped");
            continue;
        }
        let general_req: Vec<DecodeRequest> =
            set.items.iter().map(|it| DecodeRequest::text(&it.src)).collect();
        let general = translate_checked(tr, &general_req)?;
        let refs: Vec<String> = set.items.iter().map(|it| it.tgt.clone()).collect();
        let chrf_general = chrf_corpus(&general, &refs, &cfg.chrf)?;
        for &join in joins {
            let req: Vec<DecodeRequest> = set
                .items
                .iter()
                .map(|it| {
                    let instr = join.join(&it.instructions[0], &it.instructions[1]);
                    DecodeRequest::text(format_input(&Instruction::Text(instr), &it.src, cfg.tags_enabled))
                })
                .collect();
            let out = translate_checked(tr, &req)?;
            let sr = |slot: usize, kind: TaskKind| -> Result<f64> {
                let items: Vec<SuccessItem<'_>> = set
                    .items
                    .iter()
                    .enumerate()
                    .map(|(i, it)| SuccessItem {
                        src: &it.src,
                        output: &out[i],
                        general_output: &general[i],
                        params: &it.params[slot],
                    })
                    .collect();
                success_rate(kind, &items, lexicon_for(kind, lexicons)?)
            };
            rows.push(CompositionRow {
                prompt: join.join(t1.name(), t2.name()),
                join,
                count: set.items.len(),
                rr: response_rate(&general, &out)?,
                chrf_general,
                chrf_instruction: chrf_corpus(&out, &refs, &cfg.chrf)?,
                t1_sr: sr(0, t1)?,
                t2_sr: sr(1, t2)?,
            });
        }
    }
    Ok(rows)
}

fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut width: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &mut dyn Iterator<Item = &str>| {
        let parts: Vec<String> = cells
            .zip(&width)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&mut out, &mut header.iter().copied());
    let _ = writeln!(out, "{}", "-".repeat(width.iter().sum::<usize>() + 2 * (width.len() - 1)));
    for r in rows {
        line(&mut out, &mut r.iter().map(String::as_str));
    }
    out
}

fn f2(x: f64) -> String {
    format!("{x:.2}")
}

pub fn render_task_report(report: &TaskReport) -> String {
    let header = ["Task", "N", "RR (%)", "ChrF_general", "ChrF_instruction", "Improvement", "SR (%)"];
    let cells = |r: &TaskEvalRow| {
        vec![
            r.task.clone(),
            r.count.to_string(),
            f2(r.rr),
            f2(r.chrf_general),
            f2(r.chrf_instruction),
            format!("{:+.2}", r.improvement),
            r.sr.map(f2).unwrap_or_else(|| "-".into()),
        ]
    };
    let mut rows: Vec<Vec<String>> = report.rows.iter().map(cells).collect();
    rows.push(cells(&report.average));
    table(&header, &rows)
}

pub fn render_composition_report(rows: &[CompositionRow]) -> String {
    let header = ["Prompt", "N", "RR (%)", "ChrF_general", "ChrF_instruction", "T1 SR (%)", "T2 SR (%)"];
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.prompt.clone(),
                r.count.to_string(),
                f2(r.rr),
                f2(r.chrf_general),
                f2(r.chrf_instruction),
                f2(r.t1_sr),
                f2(r.t2_sr),
            ]
        })
        .collect();
    table(&header, &rows)
}
