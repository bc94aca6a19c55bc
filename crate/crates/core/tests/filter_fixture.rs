mod support;

use std::collections::BTreeSet;

use instruct_nmt_core::corpus::apply_filters;
use support::filter_fixture;

#[test]
fn removes_exactly_the_planted_pairs() {
    let fx = filter_fixture();
    let (kept, report) = apply_filters(&fx.corpus, &fx.config, Some(&fx.langid)).unwrap();
    let removed: BTreeSet<u64> = report.removed_ids.iter().copied().collect();
    assert_eq!(removed, fx.planted());
    assert_eq!(report.removed_ids.len(), 35);
    assert_eq!(report.kept, 165);
    assert_eq!(kept.len(), 165);
    assert_eq!(report.removed_by_rule["len_ratio"], 20);
    assert_eq!(report.removed_by_rule["max_words"], 5);
    assert_eq!(report.removed_by_rule["langid"], 10);
}

#[test]
fn kept_pairs_keep_their_order() {
    let fx = filter_fixture();
    let (kept, _) = apply_filters(&fx.corpus, &fx.config, Some(&fx.langid)).unwrap();
    let planted = fx.planted();
    let want: Vec<u64> = fx.corpus.pairs.iter().map(|p| p.id).filter(|id| !planted.contains(id)).collect();
    let got: Vec<u64> = kept.pairs.iter().map(|p| p.id).collect();
    assert_eq!(got, want);
}

#[test]
fn without_langid_wrong_language_pairs_survive() {
    let fx = filter_fixture();
    let cfg = instruct_nmt_core::corpus::FilterConfig {
        langid_enabled: false,
        ..fx.config.clone()
    };
    let (_, report) = apply_filters(&fx.corpus, &cfg, None).unwrap();
    let removed: BTreeSet<u64> = report.removed_ids.iter().copied().collect();
    let want: BTreeSet<u64> = fx.ratio.union(&fx.overlong).copied().collect();
    assert_eq!(removed, want);
}
