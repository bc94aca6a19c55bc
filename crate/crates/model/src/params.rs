use std::collections::HashMap;

use instruct_nmt_core::seed;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub heads: usize,
    pub d_ff: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    /// Longest source, and longest BOS/EOS-framed target, in tokens.
    pub max_len: usize,
    /// Source text after the last occurrence of this id is numbered from
    /// position 0, and the tokens up to it take the top of the position
    /// range, so a delimited prefix does not shift the text it precedes.
    pub segment_token: Option<u32>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            heads: 4,
            d_ff: 256,
            enc_layers: 2,
            dec_layers: 2,
            max_len: 96,
            segment_token: None,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.d_model == 0 || self.heads == 0 || self.d_ff == 0 {
            return bad("d_model, heads and d_ff must be positive".into());
        }
        if self.d_model % self.heads != 0 {
            return bad(format!("d_model {} is not divisible by {} heads", self.d_model, self.heads));
        }
        if self.enc_layers == 0 || self.dec_layers == 0 {
            return bad("at least one encoder and one decoder layer are required".into());
        }
        if self.max_len < 2 {
            return bad("max_len must be at least 2".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    /// Encoder positions for `src`; distinct whenever `src.len() <= max_len`.
    pub fn source_positions(&self, src: &[u32]) -> Vec<usize> {
        let cut = self
            .segment_token
            .and_then(|t| src.iter().rposition(|&x| x == t))
            .map_or(0, |i| i + 1);
        let top = self.max_len.max(src.len());
        (top - cut..top).chain(0..src.len() - cut).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Length of the trailing axis.
    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct LnIdx {
    pub g: usize,
    pub b: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct AttnIdx {
    pub q: usize,
    pub k: usize,
    pub v: usize,
    pub o: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct FfnIdx {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct EncIdx {
    pub ln1: LnIdx,
    pub attn: AttnIdx,
    pub ln2: LnIdx,
    pub ffn: FfnIdx,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct DecIdx {
    pub ln1: LnIdx,
    pub self_attn: AttnIdx,
    pub ln2: LnIdx,
    pub cross: AttnIdx,
    pub ln3: LnIdx,
    pub ffn: FfnIdx,
}

/// Tensor indices by role.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Layout {
    pub emb: usize,
    pub enc: Vec<EncIdx>,
    pub enc_ln: LnIdx,
    pub dec: Vec<DecIdx>,
    pub dec_ln: LnIdx,
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Normal(f64),
    Ones,
    Zeros,
}

struct Spec {
    name: String,
    shape: Vec<usize>,
    init: Init,
}

#[derive(Default)]
struct Builder {
    specs: Vec<Spec>,
}

impl Builder {
    fn add(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        self.specs.push(Spec { name, shape, init });
        self.specs.len() - 1
    }

    fn ln(&mut self, prefix: &str, d: usize) -> LnIdx {
        LnIdx {
            g: self.add(format!("{prefix}.g"), vec![d], Init::Ones),
            b: self.add(format!("{prefix}.b"), vec![d], Init::Zeros),
        }
    }

    fn attn(&mut self, prefix: &str, d: usize) -> AttnIdx {
        let std = (1.0 / d as f64).sqrt();
        let mut w = |n: &str| self.add(format!("{prefix}.{n}"), vec![d, d], Init::Normal(std));
        AttnIdx {
            q: w("q"),
            k: w("k"),
            v: w("v"),
            o: w("o"),
        }
    }

    fn ffn(&mut self, prefix: &str, d: usize, f: usize) -> FfnIdx {
        let std = (2.0 / (d + f) as f64).sqrt();
        FfnIdx {
            w1: self.add(format!("{prefix}.w1"), vec![d, f], Init::Normal(std)),
            b1: self.add(format!("{prefix}.b1"), vec![f], Init::Zeros),
            w2: self.add(format!("{prefix}.w2"), vec![f, d], Init::Normal(std)),
            b2: self.add(format!("{prefix}.b2"), vec![d], Init::Zeros),
        }
    }
}

fn layout(cfg: &ModelConfig, vocab: usize) -> (Vec<Spec>, Layout) {
    let (d, f) = (cfg.d_model, cfg.d_ff);
    let mut b = Builder::default();
    let emb = b.add("embedding".into(), vec![vocab, d], Init::Normal((1.0 / d as f64).sqrt()));
    let enc = (0..cfg.enc_layers)
        .map(|i| EncIdx {
            ln1: b.ln(&format!("enc.{i}.ln1"), d),
            attn: b.attn(&format!("enc.{i}.self"), d),
            ln2: b.ln(&format!("enc.{i}.ln2"), d),
            ffn: b.ffn(&format!("enc.{i}.ffn"), d, f),
        })
        .collect();
    let enc_ln = b.ln("enc.ln", d);
    let dec = (0..cfg.dec_layers)
        .map(|i| DecIdx {
            ln1: b.ln(&format!("dec.{i}.ln1"), d),
            self_attn: b.attn(&format!("dec.{i}.self"), d),
            ln2: b.ln(&format!("dec.{i}.ln2"), d),
            cross: b.attn(&format!("dec.{i}.cross"), d),
            ln3: b.ln(&format!("dec.{i}.ln3"), d),
            ffn: b.ffn(&format!("dec.{i}.ffn"), d, f),
        })
        .collect();
    let dec_ln = b.ln("dec.ln", d);
    (b.specs, Layout { emb, enc, enc_ln, dec, dec_ln })
}

/// Named tensors of the encoder-decoder in a fixed order, plus the
/// architecture they instantiate. The output projection is tied to
/// `embedding`, so the vocabulary size is its row count.
#[derive(Debug, Clone)]
pub struct ModelParams {
    config: ModelConfig,
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
    pub(crate) layout: Layout,
}

impl PartialEq for ModelParams {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.names == other.names && self.tensors == other.tensors
    }
}

fn check_segment_token(config: &ModelConfig, vocab: usize) -> Result<()> {
    match config.segment_token {
        Some(t) if t as usize >= vocab => Err(ModelError::Config(format!(
            "segment token {t} outside vocabulary of {vocab}"
        ))),
        _ => Ok(()),
    }
}

pub fn init_model(config: &ModelConfig, vocab_size: usize, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    if vocab_size == 0 {
        return Err(ModelError::Config("vocabulary is empty".into()));
    }
    check_segment_token(config, vocab_size)?;
    let (specs, layout) = layout(config, vocab_size);
    let tensors = specs
        .iter()
        .map(|s| {
            let mut t = Tensor::zeros(&s.shape);
            match s.init {
                Init::Zeros => {}
                Init::Ones => t.data.fill(1.0),
                Init::Normal(std) => {
                    let dist = Normal::new(0.0, std).expect("positive std");
                    let mut rng = seed::stream(seed, &format!("init:{}", s.name), 0);
                    t.data.iter_mut().for_each(|x| *x = dist.sample(&mut rng));
                }
            }
            t
        })
        .collect();
    let names = specs.into_iter().map(|s| s.name).collect();
    Ok(ModelParams::assemble(config.clone(), names, tensors, layout))
}

impl ModelParams {
    fn assemble(config: ModelConfig, names: Vec<String>, tensors: Vec<Tensor>, layout: Layout) -> Self {
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Self {
            config,
            names,
            tensors,
            index,
            layout,
        }
    }

    /// Rebuild from named tensors, which must match the architecture's
    /// names and shapes exactly (in order) and be finite.
    pub fn from_tensors(config: ModelConfig, tensors: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        let vocab = tensors
            .iter()
            .find(|(n, _)| n == "embedding")
            .map(|(_, t)| t.shape.first().copied().unwrap_or(0))
            .ok_or_else(|| ModelError::Param {
                name: "embedding".into(),
                msg: "missing".into(),
            })?;
        check_segment_token(&config, vocab)?;
        let (specs, layout) = layout(&config, vocab);
        if specs.len() != tensors.len() {
            return Err(ModelError::Config(format!(
                "expected {} tensors, found {}",
                specs.len(),
                tensors.len()
            )));
        }
        for (s, (name, t)) in specs.iter().zip(&tensors) {
            if &s.name != name {
                return Err(ModelError::Param {
                    name: name.clone(),
                    msg: format!("expected `{}` at this position", s.name),
                });
            }
            if s.shape != t.shape || t.data.len() != s.shape.iter().product::<usize>() {
                return Err(ModelError::Param {
                    name: name.clone(),
                    msg: format!("shape {:?} does not match {:?}", t.shape, s.shape),
                });
            }
            if t.data.iter().any(|x| !x.is_finite()) {
                return Err(ModelError::Param {
                    name: name.clone(),
                    msg: "non-finite value".into(),
                });
            }
        }
        let (names, tensors) = tensors.into_iter().unzip();
        Ok(Self::assemble(config, names, tensors, layout))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab_size(&self) -> usize {
        self.tensors[self.layout.emb].shape[0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn embedding(&self) -> &Tensor {
        &self.tensors[self.layout.emb]
    }

    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|x| x.is_finite()))
    }

    /// Same names and shapes, all zeros; the gradient container.
    pub fn zeros_like(&self) -> Self {
        let tensors = self.tensors.iter().map(|t| Tensor::zeros(&t.shape)).collect();
        Self::assemble(self.config.clone(), self.names.clone(), tensors, self.layout.clone())
    }

    /// Element-wise map over corresponding tensors of `self` and `other`.
    pub(crate) fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub(crate) fn t(&self, i: usize) -> &[f64] {
        &self.tensors[i].data
    }

    pub(crate) fn t_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.tensors[i].data
    }

    /// Replace the embedding, which may change the vocabulary size.
    pub fn with_segment_token(mut self, token: Option<u32>) -> Result<Self> {
        let mut config = self.config.clone();
        config.segment_token = token;
        check_segment_token(&config, self.vocab_size())?;
        self.config = config;
        Ok(self)
    }

    pub(crate) fn with_embedding(&self, emb: Tensor) -> Self {
        let mut out = self.clone();
        out.tensors[self.layout.emb] = emb;
        out
    }

    /// Flat view of all parameter values, in tensor order.
    pub fn flat(&self) -> Vec<f64> {
        self.tensors.iter().flat_map(|t| t.data.iter().copied()).collect()
    }

    pub fn get_flat(&self, i: usize) -> f64 {
        let mut i = i;
        for t in &self.tensors {
            if i < t.len() {
                return t.data[i];
            }
            i -= t.len();
        }
        panic!("flat index out of range")
    }

    pub fn set_flat(&mut self, i: usize, v: f64) {
        let mut i = i;
        for t in &mut self.tensors {
            if i < t.len() {
                t.data[i] = v;
                return;
            }
            i -= t.len();
        }
        panic!("flat index out of range")
    }
}
