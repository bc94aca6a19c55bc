use instruct_nmt_core::tokenizer::{BOS, EOS};

use crate::error::{ModelError, Result};
use crate::linalg::{matmul, matmul_wt};
use crate::params::ModelParams;
use crate::transformer::{attend, embed, enc_layer, ffn_apply, layer_norm_row, Seg};

/// Incremental decoder: encoder memory, projected cross-attention keys and
/// values, and per-layer self-attention key/value caches.
pub struct DecoderState<'a> {
    p: &'a ModelParams,
    src_len: usize,
    cross_kv: Vec<(Vec<f64>, Vec<f64>)>,
    self_kv: Vec<(Vec<f64>, Vec<f64>)>,
    pos: usize,
}

impl<'a> DecoderState<'a> {
    pub fn new(p: &'a ModelParams, src: &[u32]) -> Result<Self> {
        let vocab = p.vocab_size() as u32;
        if src.is_empty() || src.len() > p.config().max_len {
            return Err(ModelError::Input(format!(
                "source length {} outside 1..={}",
                src.len(),
                p.config().max_len
            )));
        }
        if let Some(bad) = src.iter().find(|&&t| t >= vocab) {
            return Err(ModelError::Input(format!("token {bad} outside vocabulary of {vocab}")));
        }
        let d = p.config().d_model;
        let lay = &p.layout;
        let pos = p.config().source_positions(src);
        let mut x = embed(p, src, &pos);
        let seg = [Seg { q0: 0, ql: src.len(), k0: 0, kl: src.len() }];
        for l in &lay.enc {
            x = enc_layer(p, l, &x, &seg).0;
        }
        let mem = layer_norm_row(p, lay.enc_ln, &x);
        let n = src.len();
        let cross_kv = lay
            .dec
            .iter()
            .map(|l| (matmul(&mem, n, d, p.t(l.cross.k), d), matmul(&mem, n, d, p.t(l.cross.v), d)))
            .collect();
        Ok(Self {
            p,
            src_len: n,
            cross_kv,
            self_kv: vec![(Vec::new(), Vec::new()); lay.dec.len()],
            pos: 0,
        })
    }

    /// Feed the next target token; returns next-token logits.
    pub fn step(&mut self, token: u32) -> Vec<f64> {
        let p = self.p;
        let (d, heads) = (p.config().d_model, p.config().heads);
        let lay = &p.layout;
        let mut x = embed(p, &[token], &[self.pos]);
        let t = self.pos + 1;
        for (i, l) in lay.dec.iter().enumerate() {
            let n1 = layer_norm_row(p, l.ln1, &x);
            let q = matmul(&n1, 1, d, p.t(l.self_attn.q), d);
            let (kc, vc) = &mut self.self_kv[i];
            kc.extend(matmul(&n1, 1, d, p.t(l.self_attn.k), d));
            vc.extend(matmul(&n1, 1, d, p.t(l.self_attn.v), d));
            let (o, _) = attend(&q, kc, vc, d, heads, &[Seg { q0: 0, ql: 1, k0: 0, kl: t }], false);
            let a = matmul(&o, 1, d, p.t(l.self_attn.o), d);
            let h1: Vec<f64> = x.iter().zip(&a).map(|(u, v)| u + v).collect();

            let n2 = layer_norm_row(p, l.ln2, &h1);
            let q2 = matmul(&n2, 1, d, p.t(l.cross.q), d);
            let (ck, cv) = &self.cross_kv[i];
            let seg = [Seg { q0: 0, ql: 1, k0: 0, kl: self.src_len }];
            let (o2, _) = attend(&q2, ck, cv, d, heads, &seg, false);
            let b = matmul(&o2, 1, d, p.t(l.cross.o), d);
            let h2: Vec<f64> = h1.iter().zip(&b).map(|(u, v)| u + v).collect();

            let n3 = layer_norm_row(p, l.ln3, &h2);
            let f = ffn_apply(p, l.ffn, &n3);
            x = h2.iter().zip(&f).map(|(u, v)| u + v).collect();
        }
        self.pos += 1;
        let y = layer_norm_row(p, lay.dec_ln, &x);
        matmul_wt(&y, 1, d, p.t(lay.emb), p.vocab_size())
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Argmax decoding from BOS until EOS or `max_len` tokens. The returned ids
/// exclude BOS and EOS.
pub fn greedy_decode(p: &ModelParams, src: &[u32], max_len: usize) -> Result<Vec<u32>> {
    let mut st = DecoderState::new(p, src)?;
    let mut out = Vec::new();
    let mut tok = BOS;
    while out.len() < max_len {
        let next = argmax(&st.step(tok)) as u32;
        if next == EOS {
            break;
        }
        out.push(next);
        tok = next;
    }
    Ok(out)
}
