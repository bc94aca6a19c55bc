//! Vocabulary expansion: new embedding rows drawn around the embedding mean
//! inside the span of its top principal components.

use instruct_nmt_core::seed;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{ModelError, Result};
use crate::linalg::{acc_xt_dy, dot};
use crate::params::{ModelParams, Tensor};

const MAX_ITERS: usize = 20_000;
const CONVERGED: f64 = 1e-13;
/// Eigenvalues at or below this fraction of the total variance count as zero.
const RANK_TOL: f64 = 1e-10;

fn column_mean(m: &Tensor) -> Vec<f64> {
    let (n, d) = (m.shape[0], m.shape[1]);
    let mut mu = vec![0.0; d];
    for r in 0..n {
        mu.iter_mut().zip(m.row(r)).for_each(|(a, b)| *a += b);
    }
    mu.iter_mut().for_each(|a| *a /= n as f64);
    mu
}

fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let c = dot(v, b);
        v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
    }
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Top-`k` principal directions of the rows of `m` (`[n, d]`) as the
/// columns of a `[d, k]` tensor, by power iteration with deflation on the
/// mean-centred covariance. Each column's largest-magnitude entry is positive.
pub fn pca_top_k(m: &Tensor, k: usize) -> Result<Tensor> {
    if m.shape.len() != 2 {
        return Err(ModelError::Rank(format!("expected a matrix, got shape {:?}", m.shape)));
    }
    let (n, d) = (m.shape[0], m.shape[1]);
    if k > n.min(d) {
        return Err(ModelError::Rank(format!("k = {k} exceeds min(rows, cols) = {}", n.min(d))));
    }
    let mu = column_mean(m);
    let centred: Vec<f64> = m.data.chunks(d).flat_map(|r| r.iter().zip(&mu).map(|(a, b)| a - b)).collect();
    let mut cov = vec![0.0; d * d];
    acc_xt_dy(&centred, &centred, n, d, d, &mut cov);
    cov.iter_mut().for_each(|c| *c /= n as f64);
    let total: f64 = (0..d).map(|i| cov[i * d + i]).sum();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut rng = seed::stream(0, "pca:start", 0);
    for c in 0..k {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        orthogonalize(&mut v, &basis);
        normalize(&mut v);
        for _ in 0..MAX_ITERS {
            let mut w: Vec<f64> = (0..d).map(|i| dot(&cov[i * d..(i + 1) * d], &v)).collect();
            orthogonalize(&mut w, &basis);
            if normalize(&mut w) <= RANK_TOL * total.max(f64::MIN_POSITIVE) {
                break;
            }
            let delta = w.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            v = w;
            if delta < CONVERGED {
                break;
            }
        }
        let cv: Vec<f64> = (0..d).map(|i| dot(&cov[i * d..(i + 1) * d], &v)).collect();
        let lambda = dot(&v, &cv);
        if !(lambda > RANK_TOL * total) {
            return Err(ModelError::Rank(format!("k = {k} exceeds the numerical rank {c}")));
        }
        let lead = v.iter().copied().fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
        if lead < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] -= lambda * v[i] * v[j];
            }
        }
        basis.push(v);
    }
    let mut out = Tensor::zeros(&[d, k]);
    for (c, b) in basis.iter().enumerate() {
        for i in 0..d {
            out.data[i * k + c] = b[i];
        }
    }
    Ok(out)
}

/// Append `n_new` embedding rows, each `mu + P r` with `mu` the row mean,
/// `P` the top-`pca_rank` principal basis and `r` a seeded Gaussian vector
/// rescaled so that `|P r| = 1`. With `pca_rank = 0` new rows equal `mu`.
/// Existing rows and all other tensors are untouched; the tied output
/// projection grows with the embedding.
pub fn expand_embeddings(params: &ModelParams, n_new: usize, pca_rank: usize, seed: u64) -> Result<ModelParams> {
    let emb = params.embedding();
    let (n, d) = (emb.shape[0], emb.shape[1]);
    if pca_rank > d {
        return Err(ModelError::Rank(format!("pca_rank {pca_rank} exceeds model width {d}")));
    }
    let mu = column_mean(emb);
    let basis = if pca_rank > 0 { Some(pca_top_k(emb, pca_rank)?) } else { None };
    let mut out = Tensor::zeros(&[n + n_new, d]);
    out.data[..n * d].copy_from_slice(&emb.data);
    for j in 0..n_new {
        let row = &mut out.data[(n + j) * d..(n + j + 1) * d];
        row.copy_from_slice(&mu);
        let Some(p) = &basis else { continue };
        let mut rng = seed::stream(seed, "expand", j as u64);
        let mut dir = vec![0.0; d];
        while normalize(&mut dir) == 0.0 {
            let r: Vec<f64> = (0..pca_rank).map(|_| StandardNormal.sample(&mut rng)).collect();
            for (i, x) in dir.iter_mut().enumerate() {
                *x = dot(&p.data[i * pca_rank..(i + 1) * pca_rank], &r);
            }
        }
        row.iter_mut().zip(&dir).for_each(|(a, b)| *a += b);
    }
    Ok(params.with_embedding(out))
}
