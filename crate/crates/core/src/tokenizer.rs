//! Byte-level BPE with a joint source/target vocabulary and atomic special
//! tokens (the instruction tags).
//!
//! Id layout: 0..4 reserved (`<pad>`, `<s>`, `</s>`, `<unk>`), 4..260 the 256
//! bytes, then merged tokens in merge order, then special tokens in the
//! order they were added.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::fingerprint;

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];
const BYTE_BASE: u32 = RESERVED.len() as u32;
/// Reserved ids plus the byte inventory.
pub const BASE_SIZE: usize = RESERVED.len() + 256;
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
enum Token {
    Reserved(&'static str),
    Bytes(Vec<u8>),
    Special(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<Token>,
    by_bytes: HashMap<Vec<u8>, u32>,
    /// Special tokens, longest first for greedy matching.
    specials: Vec<(String, u32)>,
}

impl Vocab {
    fn base() -> Self {
        let mut tokens: Vec<Token> = RESERVED.iter().map(|r| Token::Reserved(r)).collect();
        let mut by_bytes = HashMap::new();
        for b in 0..=255u8 {
            by_bytes.insert(vec![b], tokens.len() as u32);
            tokens.push(Token::Bytes(vec![b]));
        }
        Self {
            tokens,
            by_bytes,
            specials: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn byte_id(b: u8) -> u32 {
        BYTE_BASE + u32::from(b)
    }

    pub fn special_id(&self, token: &str) -> Option<u32> {
        self.specials.iter().find(|(s, _)| s == token).map(|(_, id)| *id)
    }

    pub fn special_tokens(&self) -> Vec<(String, u32)> {
        let mut v = self.specials.clone();
        v.sort_by_key(|(_, id)| *id);
        v
    }

    pub fn is_special(&self, id: u32) -> bool {
        matches!(self.tokens.get(id as usize), Some(Token::Special(_)))
    }

    /// Byte rendering of a token; reserved and special tokens render as
    /// their literal names.
    pub fn token_bytes(&self, id: u32) -> Option<&[u8]> {
        self.tokens.get(id as usize).map(|t| match t {
            Token::Reserved(r) => r.as_bytes(),
            Token::Bytes(b) => b.as_slice(),
            Token::Special(s) => s.as_bytes(),
        })
    }

    fn push_bytes(&mut self, bytes: Vec<u8>) -> u32 {
        if let Some(&id) = self.by_bytes.get(&bytes) {
            return id;
        }
        let id = self.tokens.len() as u32;
        self.by_bytes.insert(bytes.clone(), id);
        self.tokens.push(Token::Bytes(bytes));
        id
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BpeModel {
    merges: Vec<(u32, u32)>,
    /// pair -> (rank, merged id)
    ranks: HashMap<(u32, u32), (usize, u32)>,
}

impl BpeModel {
    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }
}

/// Split text into pre-tokenization chunks: maximal runs of alphanumerics,
/// of whitespace, or of other characters. Words carry no space marker, so a
/// word is the same token wherever it appears. Chunks concatenate back to
/// the input.
pub fn pre_tokenize(text: &str) -> Vec<&str> {
    #[derive(PartialEq, Clone, Copy)]
    enum Class {
        Alnum,
        Other,
        Space,
    }
    let class = |c: char| {
        if c.is_alphanumeric() {
            Class::Alnum
        } else if c.is_whitespace() {
            Class::Space
        } else {
            Class::Other
        }
    };
    let mut out = Vec::new();
    let mut start = 0;
    let mut prev = None;
    for (i, c) in text.char_indices() {
        let k = class(c);
        if prev.is_some_and(|p| p != k) {
            out.push(&text[start..i]);
            start = i;
        }
        prev = Some(k);
    }
    if start < text.len() {
        out.push(&text[start..]);
    }
    out
}

fn count_pairs(words: &[(Vec<u32>, u64)]) -> HashMap<(u32, u32), u64> {
    let mut counts: HashMap<(u32, u32), u64> = HashMap::new();
    for (syms, freq) in words {
        for w in syms.windows(2) {
            *counts.entry((w[0], w[1])).or_default() += freq;
        }
    }
    counts
}

fn merge_symbols(syms: &mut Vec<u32>, pair: (u32, u32), new_id: u32) {
    let mut out = Vec::with_capacity(syms.len());
    let mut i = 0;
    while i < syms.len() {
        if i + 1 < syms.len() && (syms[i], syms[i + 1]) == pair {
            out.push(new_id);
            i += 2;
        } else {
            out.push(syms[i]);
            i += 1;
        }
    }
    *syms = out;
}

/// Greedy BPE: repeatedly merge the most frequent adjacent pair (ties by
/// the pair's byte strings, lexicographically) until the vocabulary has
/// `vocab_size` entries or no pair occurs twice.
pub fn train_bpe<'a>(
    corpus: impl IntoIterator<Item = &'a str>,
    vocab_size: usize,
) -> Result<(BpeModel, Vocab)> {
    if vocab_size <= BASE_SIZE {
        return Err(Error::Tokenizer(format!(
            "vocab_size must exceed the {BASE_SIZE} reserved and byte tokens, got {vocab_size}"
        )));
    }
    let mut chunk_counts: BTreeMap<&str, u64> = BTreeMap::new();
    for text in corpus {
        for chunk in pre_tokenize(text) {
            *chunk_counts.entry(chunk).or_default() += 1;
        }
    }
    if chunk_counts.is_empty() {
        return Err(Error::Empty("tokenizer training corpus".into()));
    }
    let mut words: Vec<(Vec<u32>, u64)> = chunk_counts
        .into_iter()
        .map(|(c, n)| (c.bytes().map(Vocab::byte_id).collect(), n))
        .collect();
    let mut vocab = Vocab::base();
    let mut model = BpeModel::default();
    while vocab.len() < vocab_size {
        let counts = count_pairs(&words);
        let best = counts
            .iter()
            .filter(|(_, &n)| n >= 2)
            .max_by(|(pa, na), (pb, nb)| {
                na.cmp(nb).then_with(|| {
                    let key = |p: &(u32, u32)| {
                        (
                            vocab.token_bytes(p.0).unwrap().to_vec(),
                            vocab.token_bytes(p.1).unwrap().to_vec(),
                        )
                    };
                    // smaller byte pair wins the tie
                    key(pb).cmp(&key(pa))
                })
            })
            .map(|(p, _)| *p);
        let Some(pair) = best else { break };
        let mut bytes = vocab.token_bytes(pair.0).unwrap().to_vec();
        bytes.extend_from_slice(vocab.token_bytes(pair.1).unwrap());
        let new_id = vocab.push_bytes(bytes);
        model.ranks.insert(pair, (model.merges.len(), new_id));
        model.merges.push(pair);
        for (syms, _) in words.iter_mut() {
            merge_symbols(syms, pair, new_id);
        }
    }
    Ok((model, vocab))
}

fn encode_chunk(model: &BpeModel, chunk: &str, out: &mut Vec<u32>) {
    let mut syms: Vec<u32> = chunk.bytes().map(Vocab::byte_id).collect();
    loop {
        let best = syms
            .windows(2)
            .filter_map(|w| model.ranks.get(&(w[0], w[1])).map(|r| ((w[0], w[1]), *r)))
            .min_by_key(|(_, (rank, _))| *rank);
        match best {
            Some((pair, (_, id))) => merge_symbols(&mut syms, pair, id),
            None => break,
        }
    }
    out.extend(syms);
}

/// Encode text. Special tokens are matched greedily (longest first) as
/// atomic units before subword segmentation of the remaining text.
pub fn encode(model: &BpeModel, vocab: &Vocab, text: &str) -> Vec<u32> {
    let mut out = Vec::new();
    let mut rest = text;
    let mut plain_start = 0;
    let mut pos = 0;
    while pos < rest.len() {
        let hit = vocab
            .specials
            .iter()
            .find(|(s, _)| rest[pos..].starts_with(s.as_str()));
        match hit {
            Some((s, id)) => {
                for chunk in pre_tokenize(&rest[plain_start..pos]) {
                    encode_chunk(model, chunk, &mut out);
                }
                out.push(*id);
                rest = &rest[pos + s.len()..];
                pos = 0;
                plain_start = 0;
            }
            None => {
                pos += rest[pos..].chars().next().unwrap().len_utf8();
            }
        }
    }
    for chunk in pre_tokenize(&rest[plain_start..]) {
        encode_chunk(model, chunk, &mut out);
    }
    out
}

pub fn decode_bytes(vocab: &Vocab, ids: &[u32]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for &id in ids {
        let bytes = vocab.token_bytes(id).ok_or_else(|| {
            Error::Tokenizer(format!("token id {id} out of range (vocab size {})", vocab.len()))
        })?;
        out.extend_from_slice(bytes);
    }
    Ok(out)
}

/// Decode ids to text; byte sequences that are not valid UTF-8 (possible
/// only for model-generated ids) are replaced lossily.
pub fn decode(_model: &BpeModel, vocab: &Vocab, ids: &[u32]) -> Result<String> {
    let bytes = decode_bytes(vocab, ids)?;
    Ok(match String::from_utf8(bytes) {
        Ok(s) => s,
        Err(e) => String::from_utf8_lossy(e.as_bytes()).into_owned(),
    })
}

/// Append atomic tokens; their ids are contiguous at the end of the vocab.
pub fn expand_vocab(vocab: &Vocab, new_tokens: &[&str]) -> Result<(Vocab, Vec<u32>)> {
    let mut v = vocab.clone();
    let mut ids = Vec::with_capacity(new_tokens.len());
    for &tok in new_tokens {
        if tok.is_empty() {
            return Err(Error::Tokenizer("cannot add an empty token".into()));
        }
        let exists = v.specials.iter().any(|(s, _)| s == tok)
            || RESERVED.contains(&tok)
            || v.by_bytes.contains_key(tok.as_bytes());
        if exists {
            return Err(Error::Tokenizer(format!("token `{tok}` already in vocabulary")));
        }
        let id = v.tokens.len() as u32;
        v.tokens.push(Token::Special(tok.to_string()));
        v.specials.push((tok.to_string(), id));
        ids.push(id);
    }
    v.specials.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then(a.1.cmp(&b.1)));
    Ok((v, ids))
}

/// The byte <-> printable-char table used by GPT-2 style vocab files.
fn byte_to_char_table() -> [char; 256] {
    let mut table = ['\0'; 256];
    let mut extra = 0u32;
    for b in 0..=255u8 {
        let printable = (b'!'..=b'~').contains(&b) || (0xA1..=0xAC).contains(&b) || b >= 0xAE;
        table[b as usize] = if printable {
            char::from(b)
        } else {
            extra += 1;
            char::from_u32(255 + extra).unwrap()
        };
    }
    table
}

fn bytes_to_printable(bytes: &[u8], table: &[char; 256]) -> String {
    bytes.iter().map(|b| table[*b as usize]).collect()
}

fn printable_to_bytes(s: &str, inverse: &HashMap<char, u8>) -> Result<Vec<u8>> {
    s.chars()
        .map(|c| {
            inverse
                .get(&c)
                .copied()
                .ok_or_else(|| Error::Tokenizer(format!("invalid byte character {c:?}")))
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VocabFile {
    version: u32,
    tokens: Vec<String>,
    merges: Vec<[String; 2]>,
    special_tokens: Vec<String>,
}

/// A trained model and its vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenizer {
    pub model: BpeModel,
    pub vocab: Vocab,
}

impl Tokenizer {
    pub fn train<'a>(corpus: impl IntoIterator<Item = &'a str>, vocab_size: usize) -> Result<Self> {
        let (model, vocab) = train_bpe(corpus, vocab_size)?;
        Ok(Self { model, vocab })
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        encode(&self.model, &self.vocab, text)
    }

    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        decode(&self.model, &self.vocab, ids)
    }

    pub fn expand(&self, new_tokens: &[&str]) -> Result<(Self, Vec<u32>)> {
        let (vocab, ids) = expand_vocab(&self.vocab, new_tokens)?;
        Ok((
            Self {
                model: self.model.clone(),
                vocab,
            },
            ids,
        ))
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn to_json(&self) -> String {
        let table = byte_to_char_table();
        let render = |id: u32| -> String {
            match &self.vocab.tokens[id as usize] {
                Token::Reserved(r) => r.to_string(),
                Token::Bytes(b) => bytes_to_printable(b, &table),
                Token::Special(s) => s.clone(),
            }
        };
        let file = VocabFile {
            version: FORMAT_VERSION,
            tokens: (0..self.vocab.len() as u32).map(render).collect(),
            merges: self
                .model
                .merges
                .iter()
                .map(|(a, b)| [render(*a), render(*b)])
                .collect(),
            special_tokens: self.vocab.special_tokens().into_iter().map(|(s, _)| s).collect(),
        };
        serde_json::to_string_pretty(&file).unwrap()
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let file: VocabFile = serde_json::from_str(json)?;
        if file.version != FORMAT_VERSION {
            return Err(Error::Tokenizer(format!(
                "unsupported vocab format version {}",
                file.version
            )));
        }
        let table = byte_to_char_table();
        let inverse: HashMap<char, u8> = table.iter().enumerate().map(|(b, c)| (*c, b as u8)).collect();
        let mut vocab = Vocab::base();
        let mut model = BpeModel::default();
        let mut lookup: HashMap<String, u32> = HashMap::new();
        for id in BYTE_BASE..BASE_SIZE as u32 {
            lookup.insert(file.tokens[id as usize].clone(), id);
        }
        for [a, b] in &file.merges {
            let resolve = |s: &String| {
                lookup
                    .get(s)
                    .copied()
                    .ok_or_else(|| Error::Tokenizer(format!("merge references unknown token {s:?}")))
            };
            let pair = (resolve(a)?, resolve(b)?);
            let mut bytes = printable_to_bytes(a, &inverse)?;
            bytes.extend(printable_to_bytes(b, &inverse)?);
            let id = vocab.push_bytes(bytes);
            lookup.insert(format!("{a}{b}"), id);
            model.ranks.insert(pair, (model.merges.len(), id));
            model.merges.push(pair);
        }
        let specials: Vec<&str> = file.special_tokens.iter().map(String::as_str).collect();
        let (vocab, _) = expand_vocab(&vocab, &specials)?;
        let tok = Self { model, vocab };
        let rebuilt: VocabFile = serde_json::from_str(&tok.to_json())?;
        if rebuilt.tokens != file.tokens {
            return Err(Error::Tokenizer(
                "token list is inconsistent with the merge list".into(),
            ));
        }
        Ok(tok)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let json = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&json)
    }

    /// Stable fingerprint of the serialized vocabulary.
    pub fn fingerprint(&self) -> u64 {
        fingerprint(self.to_json().as_bytes())
    }
}
