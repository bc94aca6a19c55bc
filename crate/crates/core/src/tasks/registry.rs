//! Task strategies: one [`TaskTransform`] per native [`TaskKind`], looked
//! up by kind or name at runtime.

use std::collections::BTreeMap;
use std::sync::LazyLock;

use super::kinds;
use super::{Lexicon, LexiconKind, TaskKind};
use crate::corpus::SentencePair;
use crate::error::{Error, Result};
use crate::seed::Rng;

pub type Params = BTreeMap<String, String>;

pub struct TransformInput<'a> {
    pub pair: &'a SentencePair,
    pub params: &'a Params,
    pub lexicon: Option<&'a Lexicon>,
}

/// Output of a transform before the instruction template is resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct Transformed {
    pub src: String,
    pub tgt: String,
    /// Values for template placeholders and for the success checker.
    pub params: Params,
}

impl Transformed {
    pub(crate) fn target(pair: &SentencePair, tgt: String) -> Self {
        Self {
            src: pair.src.clone(),
            tgt,
            params: Params::new(),
        }
    }

    pub(crate) fn with(mut self, key: &str, value: impl Into<String>) -> Self {
        self.params.insert(key.to_string(), value.into());
        self
    }
}

pub struct CheckInput<'a> {
    pub src: &'a str,
    pub output: &'a str,
    /// The same model's translation of `src` without an instruction.
    pub general_output: &'a str,
    pub params: &'a Params,
    pub lexicon: Option<&'a Lexicon>,
}

pub trait TaskTransform: Send + Sync {
    fn kind(&self) -> TaskKind;

    /// Default instruction text; `{NAME}` placeholders are filled from the
    /// transform's params.
    fn template(&self) -> &'static str;

    fn lexicon_kind(&self) -> Option<LexiconKind> {
        None
    }

    /// `None` when the pair is ineligible for this task.
    fn transform(&self, input: &TransformInput<'_>, rng: &mut Rng) -> Option<Transformed>;

    fn check(&self, input: &CheckInput<'_>) -> bool;
}

pub struct TaskRegistry {
    tasks: BTreeMap<TaskKind, Box<dyn TaskTransform>>,
}

impl TaskRegistry {
    pub fn empty() -> Self {
        Self {
            tasks: BTreeMap::new(),
        }
    }

    pub fn builtin() -> Self {
        let mut reg = Self::empty();
        for t in kinds::all() {
            reg.register(t);
        }
        reg
    }

    pub fn register(&mut self, task: Box<dyn TaskTransform>) {
        self.tasks.insert(task.kind(), task);
    }

    pub fn get(&self, kind: TaskKind) -> Result<&dyn TaskTransform> {
        if kind == TaskKind::External {
            return Err(Error::task(
                kind.name(),
                "external tasks have no native transform; use ingest_external",
            ));
        }
        self.tasks
            .get(&kind)
            .map(|b| b.as_ref())
            .ok_or_else(|| Error::task(kind.name(), "no registered transform"))
    }

    pub fn by_name(&self, name: &str) -> Result<&dyn TaskTransform> {
        let kind: TaskKind = name.parse()?;
        self.get(kind)
    }

    pub fn kinds(&self) -> impl Iterator<Item = TaskKind> + '_ {
        self.tasks.keys().copied()
    }
}

static BUILTIN: LazyLock<TaskRegistry> = LazyLock::new(TaskRegistry::builtin);

pub fn registry() -> &'static TaskRegistry {
    &BUILTIN
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_native_kind_registered() {
        let reg = registry();
        for kind in TaskKind::ALL {
            if kind == TaskKind::External {
                assert!(reg.get(kind).is_err());
            } else {
                assert_eq!(reg.get(kind).unwrap().kind(), kind);
            }
        }
        assert!(reg.by_name("uppercase").is_ok());
        assert!(reg.by_name("sing_a_song").is_err());
    }
}
