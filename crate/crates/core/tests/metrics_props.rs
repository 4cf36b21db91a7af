use std::collections::BTreeSet;

use autotag::metrics::{ndcg_at_k, r_precision_at_k, recall_at_k, EvalCase};
use proptest::prelude::*;

fn case() -> impl Strategy<Value = (BTreeSet<String>, Vec<String>)> {
    (
        proptest::collection::btree_set(0u8..20, 1..6),
        Just((0u8..20).collect::<Vec<_>>()).prop_shuffle(),
        0usize..=20,
    )
        .prop_map(|(gold, order, len)| {
            let name = |t: u8| format!("t{t}");
            (
                gold.into_iter().map(name).collect(),
                order.into_iter().take(len).map(name).collect(),
            )
        })
}

/// Relevance-vector formulation, summing in the reverse direction.
fn ndcg_oracle(gold: &BTreeSet<String>, ranked: &[String], k: usize) -> f64 {
    let disc = |i: usize| 1.0 / ((i + 2) as f64).log2();
    let dcg: f64 = (0..ranked.len().min(k))
        .rev()
        .filter(|&i| gold.contains(&ranked[i]))
        .map(disc)
        .sum();
    let idcg: f64 = (0..gold.len().min(k)).rev().map(disc).sum();
    dcg / idcg
}

proptest! {
    #[test]
    fn metrics_match_oracles((gold, ranked) in case(), k in 1usize..25) {
        let c = EvalCase::new(gold.clone(), ranked.clone()).unwrap();
        let hits = ranked.iter().take(k).filter(|t| gold.contains(*t)).count() as f64;
        let cases = [c];
        prop_assert!((recall_at_k(&cases, k).unwrap() - hits / gold.len() as f64).abs() < 1e-12);
        prop_assert!((r_precision_at_k(&cases, k).unwrap() - hits / gold.len().min(k) as f64).abs() < 1e-12);
        prop_assert!((ndcg_at_k(&cases, k).unwrap() - ndcg_oracle(&gold, &ranked, k)).abs() < 1e-12);
    }

    #[test]
    fn metrics_are_bounded_and_monotone_in_k((gold, ranked) in case(), k in 1usize..24) {
        let cases = [EvalCase::new(gold, ranked).unwrap()];
        let (r1, r2) = (recall_at_k(&cases, k).unwrap(), recall_at_k(&cases, k + 1).unwrap());
        prop_assert!((0.0..=1.0).contains(&r1));
        prop_assert!(r1 <= r2);
        let rp = r_precision_at_k(&cases, k).unwrap();
        prop_assert!((0.0..=1.0).contains(&rp) && rp >= r1);
        let n = ndcg_at_k(&cases, k).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&n));
    }

    #[test]
    fn single_gold_identities((_, ranked) in case(), pick in 0usize..20, k in 1usize..25) {
        prop_assume!(!ranked.is_empty());
        let gold_tag = ranked[pick % ranked.len()].clone();
        let rank = pick % ranked.len() + 1;
        let cases = [EvalCase::new(BTreeSet::from([gold_tag]), ranked).unwrap()];
        prop_assert_eq!(recall_at_k(&cases, k).unwrap(), r_precision_at_k(&cases, k).unwrap());
        let want = if rank <= k { 1.0 / ((1 + rank) as f64).log2() } else { 0.0 };
        prop_assert_eq!(ndcg_at_k(&cases, k).unwrap(), want);
    }

    #[test]
    fn perfect_ranking_scores_one((gold, _) in case(), k in 1usize..10) {
        let ranked: Vec<String> = gold.iter().cloned().collect();
        let cases = [EvalCase::new(gold, ranked).unwrap()];
        prop_assert!((ndcg_at_k(&cases, k).unwrap() - 1.0).abs() < 1e-12);
        prop_assert_eq!(r_precision_at_k(&cases, k).unwrap(), 1.0);
    }
}

#[test]
fn hand_computed_values() {
    let ranked = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let gold = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>();
    let c = EvalCase::new(gold(&["b"]), ranked(&["a", "b", "c"])).unwrap();
    assert_eq!(ndcg_at_k(&[c], 5).unwrap(), 1.0 / 3f64.log2());

    // gold {a, c} ranked a, b, c: DCG = 1 + 1/2, IDCG = 1 + 1/log2 3
    let c = EvalCase::new(gold(&["a", "c"]), ranked(&["a", "b", "c"])).unwrap();
    let want = 1.5 / (1.0 + 1.0 / 3f64.log2());
    assert!((ndcg_at_k(&[c.clone()], 3).unwrap() - want).abs() < 1e-15);
    assert_eq!(recall_at_k(&[c.clone()], 2).unwrap(), 0.5);
    assert_eq!(r_precision_at_k(&[c.clone()], 1).unwrap(), 1.0);
    assert_eq!(r_precision_at_k(&[c], 2).unwrap(), 0.5);
}
