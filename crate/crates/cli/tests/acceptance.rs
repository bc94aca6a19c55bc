//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//! The end-to-end criteria run the release-profile binary twice on the
//! default recipe, which takes several minutes on one core.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use instruct_nmt::pipeline::{AblationReport, CompositionReport, EvalReport};
use instruct_nmt_core::corpus::apply_filters;
use instruct_nmt_core::eval::{chrf_corpus, ChrfConfig};
use instruct_nmt_model::{
    expand_embeddings, forward_loss, init_model, interpolate, loss, pca_top_k, ModelConfig, ModelParams,
};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(start: Instant, limit: Duration, detail: String) -> Outcome {
    let took = start.elapsed();
    check(took <= limit, format!("{detail}; {:.2}s of {}s", took.as_secs_f64(), limit.as_secs()))
}

fn metric_oracle() -> Outcome {
    let start = Instant::now();
    let cfg = ChrfConfig::default();
    let mut worst = 0.0f64;
    let mut identity = true;
    for (h, r) in support::random_pairs(50, 2024) {
        let (h, r) = (vec![h], vec![r]);
        worst = worst.max((chrf_corpus(&h, &r, &cfg).unwrap() - support::chrf_oracle(&h, &r)).abs());
        identity &= chrf_corpus(&h, &h, &cfg).unwrap() == 100.0;
    }
    let ok = worst <= 1e-6 && identity;
    within(start, Duration::from_secs(5), format!("max |diff| {worst:.1e}, identity 100: {identity}"))
        .and_then(|d| check(ok, d))
}

fn filter_exactness() -> Outcome {
    let fx = support::filter_fixture();
    let start = Instant::now();
    let (_, report) = apply_filters(&fx.corpus, &fx.config, Some(&fx.langid)).map_err(|e| e.to_string())?;
    let removed: std::collections::BTreeSet<u64> = report.removed_ids.iter().copied().collect();
    let ok = removed == fx.planted() && report.removed_ids.len() == 35;
    within(start, Duration::from_secs(1), format!("removed {} of 200, planted 35", removed.len()))
        .and_then(|d| check(ok, d))
}

fn d16(vocab: usize, seed: u64) -> ModelParams {
    let cfg = ModelConfig {
        d_model: 16,
        heads: 2,
        d_ff: 32,
        enc_layers: 2,
        dec_layers: 2,
        max_len: 12,
        segment_token: None,
    };
    init_model(&cfg, vocab, seed).unwrap()
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let p = d16(12, 3);
    let batch = vec![
        (vec![5, 6, 7, 2], vec![1, 7, 6, 5, 2]),
        (vec![8, 3, 2], vec![1, 3, 8, 2]),
        (vec![9, 4, 10, 11, 2], vec![1, 11, 10, 4, 9, 2]),
    ];
    let (_, g) = forward_loss(&p, &batch).map_err(|e| e.to_string())?;
    let analytic = g.flat();
    let (eps, mut q, mut worst) = (1e-4, p.clone(), 0.0f64);
    for (i, &a) in analytic.iter().enumerate() {
        let x = p.get_flat(i);
        q.set_flat(i, x + eps);
        let up = loss(&q, &batch).unwrap();
        q.set_flat(i, x - eps);
        let down = loss(&q, &batch).unwrap();
        q.set_flat(i, x);
        let numeric = (up - down) / (2.0 * eps);
        worst = worst.max((a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-6));
    }
    within(start, Duration::from_secs(60), format!("max rel err {worst:.2e} over {} params", analytic.len()))
        .and_then(|d| check(worst <= 1e-4, d))
}

fn interpolation_identities() -> Outcome {
    let (a, b) = (d16(20, 1), d16(20, 2));
    let at0 = interpolate(&a, &b, 0.0).unwrap().flat() == a.flat();
    let at1 = interpolate(&a, &b, 1.0).unwrap().flat() == b.flat();
    let mut worst = 0.0f64;
    for alpha in [0.5, 0.25, 0.9] {
        let x = interpolate(&a, &b, alpha).unwrap().flat();
        let y = interpolate(&a, &b, 1.0 - alpha).unwrap().flat();
        for (i, (u, v)) in x.iter().zip(&y).enumerate() {
            worst = worst.max((u + v - a.get_flat(i) - b.get_flat(i)).abs());
        }
    }
    let mid = interpolate(&a, &b, 0.5).unwrap().flat();
    for (i, m) in mid.iter().enumerate() {
        worst = worst.max((m - 0.5 * (a.get_flat(i) + b.get_flat(i))).abs());
    }
    check(
        at0 && at1 && worst <= 1e-12,
        format!("alpha=0 bitwise {at0}, alpha=1 bitwise {at1}, linearity err {worst:.1e}"),
    )
}

fn embedding_expansion() -> Outcome {
    let base = d16(40, 5);
    let grown = expand_embeddings(&base, 3, 8, 9).map_err(|e| e.to_string())?;
    let (old, new) = (base.embedding(), grown.embedding());
    let d = old.cols();
    let unchanged = new.data[..old.data.len()] == old.data[..];
    let mean: Vec<f64> = (0..d).map(|j| (0..40).map(|i| old.row(i)[j]).sum::<f64>() / 40.0).collect();
    let norm_err = (40..43)
        .map(|i| (new.row(i).iter().zip(&mean).map(|(x, m)| (x - m).powi(2)).sum::<f64>().sqrt() - 1.0).abs())
        .fold(0.0, f64::max);
    let basis = pca_top_k(old, 8).map_err(|e| e.to_string())?;
    let k = basis.shape[1];
    let mut ortho = 0.0f64;
    for p in 0..k {
        for q in 0..k {
            let dot: f64 = (0..d).map(|i| basis.data[i * k + p] * basis.data[i * k + q]).sum();
            ortho = ortho.max((dot - if p == q { 1.0 } else { 0.0 }).abs());
        }
    }
    check(
        unchanged && norm_err <= 1e-9 && ortho <= 1e-6,
        format!("old rows bit-equal {unchanged}, |norm-1| {norm_err:.1e}, basis orthonormality {ortho:.1e}"),
    )
}

/// Runs `reproduce-toy --ablations` on the default recipe under `out`.
fn reproduce(out: &Path) -> Result<(PathBuf, Duration), String> {
    let start = Instant::now();
    let o = Command::new(env!("CARGO_BIN_EXE_instruct-nmt"))
        .args(["reproduce-toy", "--ablations", "--out"])
        .arg(out)
        .env_remove("INSTRUCT_NMT_OUT")
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    let code = o.status.code().unwrap_or(-1);
    // 3 means thresholds failed; the reports are still written and judged below
    if code != 0 && code != 3 {
        return Err(format!("reproduce-toy exited {code}: {}", String::from_utf8_lossy(&o.stderr)));
    }
    Ok((out.join("seed0"), start.elapsed()))
}

fn read<T: serde::de::DeserializeOwned>(run: &Path, rel: &str) -> Result<T, String> {
    let bytes = std::fs::read(run.join(rel)).map_err(|e| format!("{rel}: {e}"))?;
    serde_json::from_slice(&bytes).map_err(|e| format!("{rel}: {e}"))
}

fn instruction_following(run: &Path, took: Duration) -> Outcome {
    let r: EvalReport = read(run, "reports/eval.json")?;
    let sr = |t: &str| r.tasks.row(t).and_then(|x| x.sr).unwrap_or(f64::NAN);
    let rr = r.tasks.row("empty_instruction").map_or(f64::NAN, |x| x.rr);
    let parts = [
        ("uppercase SR", sr("uppercase"), sr("uppercase") >= 90.0),
        ("lowercase SR", sr("lowercase"), sr("lowercase") >= 90.0),
        ("add_hashtag SR", sr("add_hashtag"), sr("add_hashtag") >= 80.0),
        ("empty RR", rr, rr <= 5.0),
        ("general drop", r.general.drop, r.general.drop.abs() <= 2.0),
    ];
    let detail = parts.iter().map(|(n, v, _)| format!("{n} {v:.2}")).collect::<Vec<_>>().join(", ");
    let ok = parts.iter().all(|p| p.2);
    // the runtime target covers the main recipe; ablations run in the same process
    check(ok, format!("{detail}; full run with ablations {:.0}s", took.as_secs_f64()))
}

fn ablation_direction(run: &Path) -> Outcome {
    let r: AblationReport = read(run, "reports/ablation.json")?;
    let g = |v: &str| r.general.get(v).ok_or(format!("variant {v} missing"));
    let (mixed, no_par, no_tags) = (g("mixed")?, g("no-parallel-mix")?, g("no-instruction-tokens")?);
    let a = no_par.drop >= mixed.drop;
    let b = no_tags.finetuned_chrf <= mixed.finetuned_chrf;
    check(
        a && b,
        format!(
            "no-parallel drop {:.2} >= mixed {:.2}: {a}; no-tags ChrF {:.2} <= tagged {:.2}: {b}",
            no_par.drop, mixed.drop, no_tags.finetuned_chrf, mixed.finetuned_chrf
        ),
    )
}

fn zero_shot_composition(run: &Path) -> Outcome {
    let r: CompositionReport = read(run, "reports/composition.json")?;
    let rows: Vec<_> = r
        .rows
        .iter()
        .filter(|x| x.prompt.contains("uppercase") && x.prompt.contains("insert_x_begin"))
        .collect();
    let mut joins: BTreeMap<String, usize> = BTreeMap::new();
    for x in &rows {
        *joins.entry(format!("{:?}", x.join)).or_default() += 1;
    }
    let both = rows.iter().find(|x| x.t1_sr > 0.0 && x.t2_sr > 0.0);
    let listing = rows
        .iter()
        .map(|x| format!("'{}' {:.0}/{:.0}", x.prompt, x.t1_sr, x.t2_sr))
        .collect::<Vec<_>>()
        .join(", ");
    check(both.is_some() && joins.len() == 2, format!("T1/T2 SR: {listing}"))
}

fn files_under(root: &Path, dir: &str) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.join(dir)];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).into_iter().flatten().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn determinism(a: &Path, b: &Path) -> Outcome {
    let mut compared = 0;
    for dir in ["reports", "model", "data"] {
        let (fa, fb) = (files_under(a, dir), files_under(b, dir));
        if fa != fb {
            return Err(format!("{dir}/ holds different files"));
        }
        for rel in fa {
            if std::fs::read(a.join(&rel)).ok() != std::fs::read(b.join(&rel)).ok() {
                return Err(format!("{} differs", rel.display()));
            }
            compared += 1;
        }
    }
    check(compared > 0, format!("{compared} report, checkpoint and data files byte-identical"))
}

fn main() {
    let mut results: Vec<(u32, &str, Outcome)> = vec![
        (1, "metric oracle equivalence", metric_oracle()),
        (2, "filter exactness", filter_exactness()),
        (3, "gradient check", gradient_check()),
        (4, "interpolation identities", interpolation_identities()),
        (5, "embedding expansion", embedding_expansion()),
    ];
    let tmp = tempfile::tempdir().expect("temp dir");
    let first = reproduce(&tmp.path().join("a"));
    let second = reproduce(&tmp.path().join("b"));
    match &first {
        Ok((run, took)) => {
            results.push((6, "toy instruction following", instruction_following(run, *took)));
            results.push((7, "ablation direction", ablation_direction(run)));
            results.push((8, "zero-shot composition", zero_shot_composition(run)));
        }
        Err(e) => {
            for (n, name) in [(6, "toy instruction following"), (7, "ablation direction"), (8, "zero-shot composition")] {
                results.push((n, name, Err(e.clone())));
            }
        }
    }
    let det = match (&first, &second) {
        (Ok((a, _)), Ok((b, _))) => determinism(a, b),
        (Err(e), _) | (_, Err(e)) => Err(e.clone()),
    };
    results.push((9, "determinism", det));

    let mut failed = 0;
    for (n, name, outcome) in &results {
        match outcome {
            Ok(d) => println!("criterion {n} {name}: PASS ({d})"),
            Err(d) => {
                failed += 1;
                println!("criterion {n} {name}: FAIL ({d})");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
