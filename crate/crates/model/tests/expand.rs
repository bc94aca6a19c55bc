mod common;

use common::tiny_model;
use instruct_nmt_model::{expand_embeddings, pca_top_k, Tensor};
use instruct_nmt_core::seed;
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};

fn tensor(rows: &[&[f64]]) -> Tensor {
    Tensor {
        shape: vec![rows.len(), rows[0].len()],
        data: rows.iter().flat_map(|r| r.iter().copied()).collect(),
    }
}

fn random(n: usize, d: usize, s: u64) -> Tensor {
    let mut rng = seed::rng(s);
    Tensor {
        shape: vec![n, d],
        data: (0..n * d).map(|_| StandardNormal.sample(&mut rng)).collect(),
    }
}

fn covariance(m: &Tensor) -> DMatrix<f64> {
    let (n, d) = (m.shape[0], m.shape[1]);
    let x = DMatrix::from_row_slice(n, d, &m.data);
    let mean = x.row_mean();
    let mut c = x.clone();
    for mut r in c.row_iter_mut() {
        r -= &mean;
    }
    c.transpose() * &c / n as f64
}

fn column(b: &Tensor, j: usize) -> Vec<f64> {
    let k = b.shape[1];
    (0..b.shape[0]).map(|i| b.data[i * k + j]).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
fn symmetric_rows_give_first_axis() {
    let m = tensor(&[&[1.0, 0.0], &[-1.0, 0.0], &[2.0, 0.0], &[-2.0, 0.0]]);
    let b = pca_top_k(&m, 1).unwrap();
    assert_eq!(b.shape, vec![2, 1]);
    assert!((b.data[0] - 1.0).abs() < 1e-12 && b.data[1].abs() < 1e-12);
    assert!(pca_top_k(&m, 2).is_err(), "rank is 1");
    assert!(pca_top_k(&m, 3).is_err());
}

#[test]
fn full_rank_basis_captures_total_variance() {
    let m = random(20, 8, 5);
    let b = pca_top_k(&m, 8).unwrap();
    let c = covariance(&m);
    let captured: f64 = (0..8)
        .map(|j| {
            let v = nalgebra::DVector::from_vec(column(&b, j));
            (v.transpose() * &c * &v)[(0, 0)]
        })
        .sum();
    assert!((captured - c.trace()).abs() < 1e-5, "{captured} vs {}", c.trace());
}

#[test]
fn top_components_match_eigendecomposition() {
    let m = random(30, 6, 8);
    let b = pca_top_k(&m, 3).unwrap();
    let eig = SymmetricEigen::new(covariance(&m));
    let mut order: Vec<usize> = (0..6).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    for (j, &e) in order.iter().take(3).enumerate() {
        let want: Vec<f64> = eig.eigenvectors.column(e).iter().copied().collect();
        assert!((dot(&column(&b, j), &want).abs() - 1.0).abs() < 1e-6, "component {j}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn basis_is_orthonormal_and_sign_fixed(s in 0u64..1000, k in 1usize..6) {
        let b = pca_top_k(&random(12, 6, s), k).unwrap();
        for i in 0..k {
            let ci = column(&b, i);
            prop_assert!((dot(&ci, &ci) - 1.0).abs() < 1e-6);
            let lead = ci.iter().copied().fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
            prop_assert!(lead > 0.0);
            for j in 0..i {
                prop_assert!(dot(&ci, &column(&b, j)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn expanded_rows_are_unit_distance_from_mean(s in 0u64..1000, rank in 1usize..9, n_new in 1usize..4) {
        let p = tiny_model(20, s);
        let q = expand_embeddings(&p, n_new, rank, s).unwrap();
        let (old, new) = (p.embedding(), q.embedding());
        prop_assert_eq!(new.shape.clone(), vec![20 + n_new, 16]);
        prop_assert_eq!(&new.data[..old.len()], &old.data[..]);
        let mu: Vec<f64> = (0..16).map(|j| (0..20).map(|i| old.data[i * 16 + j]).sum::<f64>() / 20.0).collect();
        for r in 20..20 + n_new {
            let dist = new.row(r).iter().zip(&mu).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            prop_assert!((dist - 1.0).abs() < 1e-9);
        }
        for (name, t) in p.iter().filter(|(n, _)| *n != "embedding") {
            prop_assert_eq!(q.get(name).unwrap(), t);
        }
    }
}

#[test]
fn rank_zero_gives_the_mean_and_rank_is_bounded() {
    let p = tiny_model(20, 1);
    let q = expand_embeddings(&p, 2, 0, 1).unwrap();
    let old = p.embedding();
    for j in 0..16 {
        let mu = (0..20).map(|i| old.data[i * 16 + j]).sum::<f64>() / 20.0;
        assert_eq!(q.embedding().row(20)[j], mu);
    }
    assert!(expand_embeddings(&p, 2, 17, 1).is_err());
}

#[test]
fn symmetric_embedding_expands_along_first_axis() {
    let p = tiny_model(4, 1);
    let mut rows = vec![0.0; 4 * 16];
    for (i, v) in [1.0, -1.0, 2.0, -2.0].iter().enumerate() {
        rows[i * 16] = *v;
    }
    let named = p
        .iter()
        .map(|(n, t)| {
            let t = if n == "embedding" { Tensor { shape: vec![4, 16], data: rows.clone() } } else { t.clone() };
            (n.to_string(), t)
        })
        .collect();
    let p = instruct_nmt_model::ModelParams::from_tensors(p.config().clone(), named).unwrap();
    let q = expand_embeddings(&p, 1, 1, 3).unwrap();
    let row = q.embedding().row(4);
    assert!((row[0].abs() - 1.0).abs() < 1e-12);
    assert!(row[1..].iter().all(|&x| x == 0.0));
}
