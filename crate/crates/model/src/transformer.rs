//! Pre-LN Transformer encoder-decoder over ragged batches.
//!
//! Token rows of all sequences in a batch are concatenated, so projections
//! are single GEMMs; attention runs per sequence segment and head.

use crate::error::{ModelError, Result};
use crate::linalg::{acc_xt_dy, gemm, matmul, matmul_wt, View};
use crate::params::{AttnIdx, DecIdx, EncIdx, FfnIdx, LnIdx, ModelParams};

/// Source ids and BOS/EOS-framed target ids.
pub type Example = (Vec<u32>, Vec<u32>);

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4;

pub(crate) fn positional(pos: usize, out: &mut [f64]) {
    let d = out.len() as f64;
    for (i, o) in out.iter_mut().enumerate() {
        let angle = pos as f64 / 10000f64.powf((i / 2 * 2) as f64 / d);
        *o = if i % 2 == 0 { angle.sin() } else { angle.cos() };
    }
}

pub(crate) fn embed(p: &ModelParams, ids: &[u32], pos: &[usize]) -> Vec<f64> {
    let d = p.config().d_model;
    let scale = (d as f64).sqrt();
    let e = p.t(p.layout.emb);
    let mut x = vec![0.0; ids.len() * d];
    for (r, (&id, &ps)) in ids.iter().zip(pos).enumerate() {
        let row = &mut x[r * d..(r + 1) * d];
        positional(ps, row);
        let w = &e[id as usize * d..(id as usize + 1) * d];
        row.iter_mut().zip(w).for_each(|(o, w)| *o += scale * w);
    }
    x
}

fn embed_backward(g: &mut ModelParams, ids: &[u32], dx: &[f64]) {
    let d = g.config().d_model;
    let scale = (d as f64).sqrt();
    let emb = g.layout.emb;
    let de = g.t_mut(emb);
    for (r, &id) in ids.iter().enumerate() {
        let row = &mut de[id as usize * d..(id as usize + 1) * d];
        row.iter_mut().zip(&dx[r * d..(r + 1) * d]).for_each(|(o, v)| *o += scale * v);
    }
}

pub(crate) struct LnCache {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
}

pub(crate) fn ln_forward(p: &ModelParams, idx: LnIdx, x: &[f64]) -> (Vec<f64>, LnCache) {
    let d = p.config().d_model;
    let (g, b) = (p.t(idx.g), p.t(idx.b));
    let n = x.len() / d;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; n];
    for r in 0..n {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = rs;
        for j in 0..d {
            let h = (row[j] - mean) * rs;
            xhat[r * d + j] = h;
            y[r * d + j] = h * g[j] + b[j];
        }
    }
    (y, LnCache { xhat, rstd })
}

fn ln_backward(p: &ModelParams, gr: &mut ModelParams, idx: LnIdx, c: &LnCache, dy: &[f64]) -> Vec<f64> {
    let d = p.config().d_model;
    let n = c.rstd.len();
    {
        let dg = gr.t_mut(idx.g);
        for r in 0..n {
            for j in 0..d {
                dg[j] += dy[r * d + j] * c.xhat[r * d + j];
            }
        }
    }
    {
        let db = gr.t_mut(idx.b);
        for r in 0..n {
            for j in 0..d {
                db[j] += dy[r * d + j];
            }
        }
    }
    let g = p.t(idx.g);
    let mut dx = vec![0.0; dy.len()];
    let mut dxhat = vec![0.0; d];
    for r in 0..n {
        let xh = &c.xhat[r * d..(r + 1) * d];
        for j in 0..d {
            dxhat[j] = dy[r * d + j] * g[j];
        }
        let m1 = dxhat.iter().sum::<f64>() / d as f64;
        let m2 = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        for j in 0..d {
            dx[r * d + j] = c.rstd[r] * (dxhat[j] - m1 - xh[j] * m2);
        }
    }
    dx
}

/// Query rows `q0..q0+ql` attend to key rows `k0..k0+kl`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Seg {
    pub q0: usize,
    pub ql: usize,
    pub k0: usize,
    pub kl: usize,
}

/// Softmax of `row[..=last]`; later entries are masked to zero.
pub(crate) fn softmax_prefix(row: &mut [f64], last: usize) {
    let max = row[..=last].iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in &mut row[..=last] {
        *x = (*x - max).exp();
        sum += *x;
    }
    row[..=last].iter_mut().for_each(|x| *x /= sum);
    row[last + 1..].iter_mut().for_each(|x| *x = 0.0);
}

/// Numerically stable softmax over the whole slice.
pub fn softmax(row: &mut [f64]) {
    if !row.is_empty() {
        let last = row.len() - 1;
        softmax_prefix(row, last);
    }
}

/// Multi-head scaled dot-product attention on projected rows. Returns the
/// concatenated head outputs and the attention probabilities, stored per
/// segment then per head as `ql x kl` blocks.
pub(crate) fn attend(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    d: usize,
    heads: usize,
    segs: &[Seg],
    causal: bool,
) -> (Vec<f64>, Vec<f64>) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let nq = q.len() / d;
    let mut o = vec![0.0; nq * d];
    let total: usize = segs.iter().map(|s| s.ql * s.kl).sum::<usize>() * heads;
    let mut prob = vec![0.0; total];
    let mut off = 0;
    for s in segs {
        for h in 0..heads {
            let blk = &mut prob[off..off + s.ql * s.kl];
            gemm(
                s.ql,
                dh,
                s.kl,
                scale,
                View::at(q, s.q0 * d + h * dh, d),
                View::at(k, s.k0 * d + h * dh, d).t(),
                0.0,
                blk,
                0,
                s.kl,
            );
            for i in 0..s.ql {
                let last = if causal { i.min(s.kl - 1) } else { s.kl - 1 };
                softmax_prefix(&mut blk[i * s.kl..(i + 1) * s.kl], last);
            }
            gemm(
                s.ql,
                s.kl,
                dh,
                1.0,
                View::rows(blk, s.kl),
                View::at(v, s.k0 * d + h * dh, d),
                0.0,
                &mut o,
                s.q0 * d + h * dh,
                d,
            );
            off += s.ql * s.kl;
        }
    }
    (o, prob)
}

#[allow(clippy::too_many_arguments)]
fn attend_backward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    prob: &[f64],
    d_o: &[f64],
    d: usize,
    heads: usize,
    segs: &[Seg],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let (mut dq, mut dk, mut dv) = (vec![0.0; q.len()], vec![0.0; k.len()], vec![0.0; v.len()]);
    let mut off = 0;
    let mut ds = Vec::new();
    for s in segs {
        for h in 0..heads {
            let p = &prob[off..off + s.ql * s.kl];
            ds.clear();
            ds.resize(s.ql * s.kl, 0.0);
            gemm(
                s.ql,
                dh,
                s.kl,
                1.0,
                View::at(d_o, s.q0 * d + h * dh, d),
                View::at(v, s.k0 * d + h * dh, d).t(),
                0.0,
                &mut ds,
                0,
                s.kl,
            );
            gemm(
                s.kl,
                s.ql,
                dh,
                1.0,
                View::rows(p, s.kl).t(),
                View::at(d_o, s.q0 * d + h * dh, d),
                1.0,
                &mut dv,
                s.k0 * d + h * dh,
                d,
            );
            for i in 0..s.ql {
                let pr = &p[i * s.kl..(i + 1) * s.kl];
                let dr = &mut ds[i * s.kl..(i + 1) * s.kl];
                let dotp: f64 = pr.iter().zip(dr.iter()).map(|(a, b)| a * b).sum();
                dr.iter_mut().zip(pr).for_each(|(g, p)| *g = p * (*g - dotp) * scale);
            }
            gemm(
                s.ql,
                s.kl,
                dh,
                1.0,
                View::rows(&ds, s.kl),
                View::at(k, s.k0 * d + h * dh, d),
                1.0,
                &mut dq,
                s.q0 * d + h * dh,
                d,
            );
            gemm(
                s.kl,
                s.ql,
                dh,
                1.0,
                View::rows(&ds, s.kl).t(),
                View::at(q, s.q0 * d + h * dh, d),
                1.0,
                &mut dk,
                s.k0 * d + h * dh,
                d,
            );
            off += s.ql * s.kl;
        }
    }
    (dq, dk, dv)
}

struct AttnCache {
    xq: Vec<f64>,
    /// `None` for self-attention, where keys come from `xq`.
    xkv: Option<Vec<f64>>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    prob: Vec<f64>,
    o: Vec<f64>,
}

fn attn_forward(
    p: &ModelParams,
    idx: AttnIdx,
    xq: Vec<f64>,
    xkv: Option<&[f64]>,
    segs: &[Seg],
    causal: bool,
) -> (Vec<f64>, AttnCache) {
    let (d, heads) = (p.config().d_model, p.config().heads);
    let src = xkv.unwrap_or(&xq);
    let (nq, nk) = (xq.len() / d, src.len() / d);
    let q = matmul(&xq, nq, d, p.t(idx.q), d);
    let k = matmul(src, nk, d, p.t(idx.k), d);
    let v = matmul(src, nk, d, p.t(idx.v), d);
    let (o, prob) = attend(&q, &k, &v, d, heads, segs, causal);
    let out = matmul(&o, nq, d, p.t(idx.o), d);
    let xkv = xkv.map(<[f64]>::to_vec);
    (out, AttnCache { xq, xkv, q, k, v, prob, o })
}

/// Returns the query-side gradient and, for cross-attention, the key/value-side one.
fn attn_backward(
    p: &ModelParams,
    gr: &mut ModelParams,
    idx: AttnIdx,
    c: &AttnCache,
    dout: &[f64],
    segs: &[Seg],
) -> (Vec<f64>, Option<Vec<f64>>) {
    let (d, heads) = (p.config().d_model, p.config().heads);
    let xkv = c.xkv.as_deref().unwrap_or(&c.xq);
    let (nq, nk) = (c.xq.len() / d, xkv.len() / d);
    acc_xt_dy(&c.o, dout, nq, d, d, gr.t_mut(idx.o));
    let d_o = matmul_wt(dout, nq, d, p.t(idx.o), d);
    let (dq, dk, dv) = attend_backward(&c.q, &c.k, &c.v, &c.prob, &d_o, d, heads, segs);
    acc_xt_dy(&c.xq, &dq, nq, d, d, gr.t_mut(idx.q));
    acc_xt_dy(xkv, &dk, nk, d, d, gr.t_mut(idx.k));
    acc_xt_dy(xkv, &dv, nk, d, d, gr.t_mut(idx.v));
    let mut dxq = matmul_wt(&dq, nq, d, p.t(idx.q), d);
    let mut dxkv = matmul_wt(&dk, nk, d, p.t(idx.k), d);
    let dxv = matmul_wt(&dv, nk, d, p.t(idx.v), d);
    dxkv.iter_mut().zip(&dxv).for_each(|(a, b)| *a += b);
    if c.xkv.is_none() {
        dxq.iter_mut().zip(&dxkv).for_each(|(a, b)| *a += b);
        (dxq, None)
    } else {
        (dxq, Some(dxkv))
    }
}

pub(crate) fn gelu(a: f64) -> f64 {
    0.5 * a * (1.0 + (GELU_C * (a + 0.044715 * a * a * a)).tanh())
}

fn gelu_grad(a: f64) -> f64 {
    let t = (GELU_C * (a + 0.044715 * a * a * a)).tanh();
    0.5 * (1.0 + t) + 0.5 * a * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * a * a)
}

struct FfnCache {
    x: Vec<f64>,
    a: Vec<f64>,
    h: Vec<f64>,
}

pub(crate) fn ffn_apply(p: &ModelParams, idx: FfnIdx, x: &[f64]) -> Vec<f64> {
    ffn_forward(p, idx, x.to_vec()).0
}

fn ffn_forward(p: &ModelParams, idx: FfnIdx, x: Vec<f64>) -> (Vec<f64>, FfnCache) {
    let (d, f) = (p.config().d_model, p.config().d_ff);
    let n = x.len() / d;
    let mut a = matmul(&x, n, d, p.t(idx.w1), f);
    let b1 = p.t(idx.b1);
    a.chunks_mut(f).for_each(|r| r.iter_mut().zip(b1).for_each(|(x, b)| *x += b));
    let h: Vec<f64> = a.iter().map(|&v| gelu(v)).collect();
    let mut out = matmul(&h, n, f, p.t(idx.w2), d);
    let b2 = p.t(idx.b2);
    out.chunks_mut(d).for_each(|r| r.iter_mut().zip(b2).for_each(|(x, b)| *x += b));
    (out, FfnCache { x, a, h })
}

fn ffn_backward(p: &ModelParams, gr: &mut ModelParams, idx: FfnIdx, c: &FfnCache, dout: &[f64]) -> Vec<f64> {
    let (d, f) = (p.config().d_model, p.config().d_ff);
    let n = c.x.len() / d;
    acc_xt_dy(&c.h, dout, n, f, d, gr.t_mut(idx.w2));
    {
        let db2 = gr.t_mut(idx.b2);
        dout.chunks(d).for_each(|r| db2.iter_mut().zip(r).for_each(|(g, v)| *g += v));
    }
    let mut da = matmul_wt(dout, n, d, p.t(idx.w2), f);
    da.iter_mut().zip(&c.a).for_each(|(g, &a)| *g *= gelu_grad(a));
    acc_xt_dy(&c.x, &da, n, d, f, gr.t_mut(idx.w1));
    {
        let db1 = gr.t_mut(idx.b1);
        da.chunks(f).for_each(|r| db1.iter_mut().zip(r).for_each(|(g, v)| *g += v));
    }
    matmul_wt(&da, n, f, p.t(idx.w1), d)
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub(crate) struct EncCache {
    ln1: LnCache,
    attn: AttnCache,
    ln2: LnCache,
    ffn: FfnCache,
}

pub(crate) fn enc_layer(p: &ModelParams, l: &EncIdx, x: &[f64], segs: &[Seg]) -> (Vec<f64>, EncCache) {
    let (n1, ln1) = ln_forward(p, l.ln1, x);
    let (a, attn) = attn_forward(p, l.attn, n1, None, segs, false);
    let h = add(x, &a);
    let (n2, ln2) = ln_forward(p, l.ln2, &h);
    let (f, ffn) = ffn_forward(p, l.ffn, n2);
    (add(&h, &f), EncCache { ln1, attn, ln2, ffn })
}

fn enc_layer_backward(
    p: &ModelParams,
    gr: &mut ModelParams,
    l: &EncIdx,
    c: &EncCache,
    dout: &[f64],
    segs: &[Seg],
) -> Vec<f64> {
    let dn2 = ffn_backward(p, gr, l.ffn, &c.ffn, dout);
    let dh = add(dout, &ln_backward(p, gr, l.ln2, &c.ln2, &dn2));
    let (dn1, _) = attn_backward(p, gr, l.attn, &c.attn, &dh, segs);
    add(&dh, &ln_backward(p, gr, l.ln1, &c.ln1, &dn1))
}

struct DecCache {
    ln1: LnCache,
    self_attn: AttnCache,
    ln2: LnCache,
    cross: AttnCache,
    ln3: LnCache,
    ffn: FfnCache,
}

fn dec_layer(
    p: &ModelParams,
    l: &DecIdx,
    x: &[f64],
    mem: &[f64],
    self_segs: &[Seg],
    cross_segs: &[Seg],
) -> (Vec<f64>, DecCache) {
    let (n1, ln1) = ln_forward(p, l.ln1, x);
    let (a, self_attn) = attn_forward(p, l.self_attn, n1, None, self_segs, true);
    let h1 = add(x, &a);
    let (n2, ln2) = ln_forward(p, l.ln2, &h1);
    let (b, cross) = attn_forward(p, l.cross, n2, Some(mem), cross_segs, false);
    let h2 = add(&h1, &b);
    let (n3, ln3) = ln_forward(p, l.ln3, &h2);
    let (f, ffn) = ffn_forward(p, l.ffn, n3);
    (
        add(&h2, &f),
        DecCache {
            ln1,
            self_attn,
            ln2,
            cross,
            ln3,
            ffn,
        },
    )
}

#[allow(clippy::too_many_arguments)]
fn dec_layer_backward(
    p: &ModelParams,
    gr: &mut ModelParams,
    l: &DecIdx,
    c: &DecCache,
    dout: &[f64],
    self_segs: &[Seg],
    cross_segs: &[Seg],
    dmem: &mut [f64],
) -> Vec<f64> {
    let dn3 = ffn_backward(p, gr, l.ffn, &c.ffn, dout);
    let dh2 = add(dout, &ln_backward(p, gr, l.ln3, &c.ln3, &dn3));
    let (dn2, dm) = attn_backward(p, gr, l.cross, &c.cross, &dh2, cross_segs);
    dmem.iter_mut().zip(dm.expect("cross-attention")).for_each(|(a, b)| *a += b);
    let dh1 = add(&dh2, &ln_backward(p, gr, l.ln2, &c.ln2, &dn2));
    let (dn1, _) = attn_backward(p, gr, l.self_attn, &c.self_attn, &dh1, self_segs);
    add(&dh1, &ln_backward(p, gr, l.ln1, &c.ln1, &dn1))
}

/// Flattened batch: token ids, positions and attention segments.
struct Prepared {
    src: Vec<u32>,
    src_pos: Vec<usize>,
    tgt_in: Vec<u32>,
    tgt_pos: Vec<usize>,
    labels: Vec<u32>,
    enc_segs: Vec<Seg>,
    dec_segs: Vec<Seg>,
    cross_segs: Vec<Seg>,
}

fn prepare(p: &ModelParams, batch: &[Example]) -> Result<Prepared> {
    if batch.is_empty() {
        return Err(ModelError::Input("empty batch".into()));
    }
    let max = p.config().max_len;
    let vocab = p.vocab_size() as u32;
    let mut pr = Prepared {
        src: Vec::new(),
        src_pos: Vec::new(),
        tgt_in: Vec::new(),
        tgt_pos: Vec::new(),
        labels: Vec::new(),
        enc_segs: Vec::new(),
        dec_segs: Vec::new(),
        cross_segs: Vec::new(),
    };
    for (i, (src, tgt)) in batch.iter().enumerate() {
        if src.is_empty() || src.len() > max {
            return Err(ModelError::Input(format!(
                "example {i}: source length {} outside 1..={max}",
                src.len()
            )));
        }
        if tgt.len() < 2 || tgt.len() > max {
            return Err(ModelError::Input(format!(
                "example {i}: framed target length {} outside 2..={max}",
                tgt.len()
            )));
        }
        if let Some(bad) = src.iter().chain(tgt).find(|&&t| t >= vocab) {
            return Err(ModelError::Input(format!("example {i}: token {bad} outside vocabulary of {vocab}")));
        }
        let (s0, t0) = (pr.src.len(), pr.tgt_in.len());
        let tl = tgt.len() - 1;
        pr.src.extend_from_slice(src);
        pr.src_pos.extend(p.config().source_positions(src));
        pr.tgt_in.extend_from_slice(&tgt[..tl]);
        pr.tgt_pos.extend(0..tl);
        pr.labels.extend_from_slice(&tgt[1..]);
        pr.enc_segs.push(Seg { q0: s0, ql: src.len(), k0: s0, kl: src.len() });
        pr.dec_segs.push(Seg { q0: t0, ql: tl, k0: t0, kl: tl });
        pr.cross_segs.push(Seg { q0: t0, ql: tl, k0: s0, kl: src.len() });
    }
    Ok(pr)
}

struct Tape {
    enc: Vec<EncCache>,
    enc_ln: LnCache,
    mem: Vec<f64>,
    dec: Vec<DecCache>,
    dec_ln: LnCache,
    y: Vec<f64>,
}

fn forward(p: &ModelParams, pr: &Prepared) -> (Tape, Vec<f64>) {
    let lay = &p.layout;
    let mut x = embed(p, &pr.src, &pr.src_pos);
    let mut enc = Vec::with_capacity(lay.enc.len());
    for l in &lay.enc {
        let (out, c) = enc_layer(p, l, &x, &pr.enc_segs);
        enc.push(c);
        x = out;
    }
    let (mem, enc_ln) = ln_forward(p, lay.enc_ln, &x);
    let mut t = embed(p, &pr.tgt_in, &pr.tgt_pos);
    let mut dec = Vec::with_capacity(lay.dec.len());
    for l in &lay.dec {
        let (out, c) = dec_layer(p, l, &t, &mem, &pr.dec_segs, &pr.cross_segs);
        dec.push(c);
        t = out;
    }
    let (y, dec_ln) = ln_forward(p, lay.dec_ln, &t);
    let d = p.config().d_model;
    let logits = matmul_wt(&y, pr.tgt_in.len(), d, p.t(lay.emb), p.vocab_size());
    (Tape { enc, enc_ln, mem, dec, dec_ln, y }, logits)
}

/// Mean cross-entropy; turns `logits` into d(loss)/d(logits) when `grad` is set.
fn cross_entropy(logits: &mut [f64], labels: &[u32], vocab: usize, grad: bool) -> f64 {
    let n = labels.len();
    let mut loss = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let row = &mut logits[r * vocab..(r + 1) * vocab];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[y as usize];
        if grad {
            row.iter_mut().for_each(|v| *v = (*v - lse).exp() / n as f64);
            row[y as usize] -= 1.0 / n as f64;
        }
    }
    loss / n as f64
}

fn backward(p: &ModelParams, pr: &Prepared, tape: &Tape, dlogits: &[f64]) -> ModelParams {
    let lay = &p.layout;
    let d = p.config().d_model;
    let vocab = p.vocab_size();
    let n = pr.tgt_in.len();
    let mut gr = p.zeros_like();
    acc_xt_dy(dlogits, &tape.y, n, vocab, d, gr.t_mut(lay.emb));
    let dy = matmul(dlogits, n, vocab, p.t(lay.emb), d);
    let mut dt = ln_backward(p, &mut gr, lay.dec_ln, &tape.dec_ln, &dy);
    let mut dmem = vec![0.0; tape.mem.len()];
    for (l, c) in lay.dec.iter().zip(&tape.dec).rev() {
        dt = dec_layer_backward(p, &mut gr, l, c, &dt, &pr.dec_segs, &pr.cross_segs, &mut dmem);
    }
    embed_backward(&mut gr, &pr.tgt_in, &dt);
    let mut dx = ln_backward(p, &mut gr, lay.enc_ln, &tape.enc_ln, &dmem);
    for (l, c) in lay.enc.iter().zip(&tape.enc).rev() {
        dx = enc_layer_backward(p, &mut gr, l, c, &dx, &pr.enc_segs);
    }
    embed_backward(&mut gr, &pr.src, &dx);
    gr
}

/// Mean token cross-entropy of the batch and its exact gradient.
pub fn forward_loss(p: &ModelParams, batch: &[Example]) -> Result<(f64, ModelParams)> {
    let pr = prepare(p, batch)?;
    let (tape, mut logits) = forward(p, &pr);
    let loss = cross_entropy(&mut logits, &pr.labels, p.vocab_size(), true);
    Ok((loss, backward(p, &pr, &tape, &logits)))
}

/// Mean token cross-entropy without gradients.
pub fn loss(p: &ModelParams, batch: &[Example]) -> Result<f64> {
    let pr = prepare(p, batch)?;
    let (_, mut logits) = forward(p, &pr);
    Ok(cross_entropy(&mut logits, &pr.labels, p.vocab_size(), false))
}

/// Next-token logits at every target position under teacher forcing,
/// `[tgt.len() - 1, vocab]` row-major.
pub fn teacher_forced_logits(p: &ModelParams, src: &[u32], tgt: &[u32]) -> Result<Vec<f64>> {
    let pr = prepare(p, &[(src.to_vec(), tgt.to_vec())])?;
    Ok(forward(p, &pr).1)
}

pub(crate) fn layer_norm_row(p: &ModelParams, idx: LnIdx, x: &[f64]) -> Vec<f64> {
    ln_forward(p, idx, x).0
}
