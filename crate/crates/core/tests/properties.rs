use std::collections::{BTreeMap, BTreeSet, HashSet};

use nspgrade_core::baselines::{tfidf_fit, SparseVector};
use nspgrade_core::corpus::{
    few_shot_split, parse_exemplars, parse_responses, write_responses, ExemplarSet, GradeLevel,
    LabeledResponse,
};
use nspgrade_core::encoder::truncate_longest_first;
use nspgrade_core::eval::{cohens_kappa, f1_weighted};
use nspgrade_core::fewshot::{select_samples, SampleStrategy};
use nspgrade_core::mensp::{argmax_lowest, cosine};
use nspgrade_core::Embedding;
use proptest::prelude::*;

fn grades(levels: u32, len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<GradeLevel>> {
    prop::collection::vec((0..levels).prop_map(GradeLevel), len)
}

fn paired_grades() -> impl Strategy<Value = (Vec<GradeLevel>, Vec<GradeLevel>)> {
    (1usize..40).prop_flat_map(|n| (grades(4, n..n + 1), grades(4, n..n + 1)))
}

/// Kappa from the confusion-matrix probability form.
fn kappa_oracle(h: &[GradeLevel], m: &[GradeLevel]) -> f64 {
    let mut table = [[0.0f64; 4]; 4];
    for (a, b) in h.iter().zip(m) {
        table[a.index()][b.index()] += 1.0;
    }
    let n = h.len() as f64;
    let po: f64 = (0..4).map(|i| table[i][i]).sum::<f64>() / n;
    let pe: f64 = (0..4)
        .map(|i| {
            let row: f64 = table[i].iter().sum();
            let col: f64 = (0..4).map(|j| table[j][i]).sum();
            row * col
        })
        .sum::<f64>()
        / (n * n);
    if (1.0 - pe).abs() < 1e-15 {
        1.0
    } else {
        (po - pe) / (1.0 - pe)
    }
}

/// Support-weighted F1 via 2tp / (2tp + fp + fn).
fn f1_oracle(h: &[GradeLevel], m: &[GradeLevel]) -> f64 {
    let classes: BTreeSet<GradeLevel> = h.iter().copied().collect();
    let mut total = 0.0;
    for c in classes {
        let tp = h.iter().zip(m).filter(|(a, b)| **a == c && **b == c).count() as f64;
        let fp = h.iter().zip(m).filter(|(a, b)| **a != c && **b == c).count() as f64;
        let fn_ = h.iter().zip(m).filter(|(a, b)| **a == c && **b != c).count() as f64;
        let support = h.iter().filter(|a| **a == c).count() as f64;
        total += support * 2.0 * tp / (2.0 * tp + fp + fn_);
    }
    total / h.len() as f64
}

fn pool_strategy() -> impl Strategy<Value = Vec<LabeledResponse>> {
    prop::collection::vec(0u32..3, 6..60).prop_map(|golds| {
        golds
            .into_iter()
            .enumerate()
            .map(|(i, g)| LabeledResponse {
                response_id: format!("r{i}"),
                item_id: "item".into(),
                text: format!("response number {i}"),
                gold: GradeLevel(g),
            })
            .collect()
    })
}

fn level_counts(rs: &[LabeledResponse]) -> BTreeMap<GradeLevel, usize> {
    let mut m = BTreeMap::new();
    for r in rs {
        *m.entry(r.gold).or_default() += 1;
    }
    m
}

proptest! {
    #[test]
    fn kappa_matches_confusion_oracle((h, m) in paired_grades()) {
        let k = cohens_kappa(&h, &m).unwrap();
        prop_assert!((k - kappa_oracle(&h, &m)).abs() < 1e-9);
        prop_assert!(k <= 1.0 + 1e-12);
    }

    #[test]
    fn kappa_is_symmetric_and_order_free((h, m) in paired_grades(), rot in 0usize..40) {
        let k = cohens_kappa(&h, &m).unwrap();
        prop_assert!((k - cohens_kappa(&m, &h).unwrap()).abs() < 1e-12);
        let r = rot % h.len();
        let (mut h2, mut m2) = (h.clone(), m.clone());
        h2.rotate_left(r);
        m2.rotate_left(r);
        prop_assert!((k - cohens_kappa(&h2, &m2).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn perfect_agreement_is_one(h in grades(5, 1..30)) {
        prop_assert_eq!(cohens_kappa(&h, &h).unwrap(), 1.0);
        prop_assert!((f1_weighted(&h, &h).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn weighted_f1_matches_oracle((h, m) in paired_grades()) {
        let f = f1_weighted(&h, &m).unwrap();
        prop_assert!((f - f1_oracle(&h, &m)).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&f));
    }

    #[test]
    fn split_partitions_the_pool(pool in pool_strategy(), k in 0usize..3, seed in any::<u64>()) {
        let counts = level_counts(&pool);
        match few_shot_split(&pool, k, seed) {
            Ok(split) => {
                prop_assert!(counts.values().all(|&c| c >= k));
                prop_assert_eq!(split.train.len() + split.test.len(), pool.len());
                let train_ids: HashSet<&str> = split.train.iter().map(|r| r.response_id.as_str()).collect();
                let test_ids: HashSet<&str> = split.test.iter().map(|r| r.response_id.as_str()).collect();
                prop_assert!(train_ids.is_disjoint(&test_ids));
                prop_assert!(level_counts(&split.train).values().all(|&c| c == k));
                let again = few_shot_split(&pool, k, seed).unwrap();
                prop_assert_eq!(again, split);
            }
            Err(_) => prop_assert!(counts.values().any(|&c| c < k)),
        }
    }

    #[test]
    fn smaller_draws_are_prefixes(pool in pool_strategy(), seed in any::<u64>()) {
        let counts = level_counts(&pool);
        prop_assume!(counts.len() == 3 && counts.values().all(|&c| c >= 3));
        let big = select_samples(&pool, 3, &SampleStrategy::random(), seed, "item", 3).unwrap();
        let small = select_samples(&pool, 1, &SampleStrategy::random(), seed, "item", 3).unwrap();
        for level in 0..3 {
            let first_big = big.iter().find(|r| r.gold.0 == level).unwrap();
            let only_small = small.iter().find(|r| r.gold.0 == level).unwrap();
            prop_assert_eq!(first_big, only_small);
        }
    }

    #[test]
    fn truncation_respects_budget(a in 0usize..600, b in 0usize..600, budget in 0usize..600) {
        let (x, y) = truncate_longest_first(a, b, budget);
        prop_assert!(x <= a && y <= b);
        if a + b <= budget {
            prop_assert_eq!((x, y), (a, b));
        } else {
            prop_assert_eq!(x + y, budget);
            if x < a && y < b {
                prop_assert!(x.abs_diff(y) <= 1);
            }
        }
    }

    #[test]
    fn argmax_survives_monotone_maps(ps in prop::collection::vec(0.0f64..1.0, 1..6)) {
        let map: BTreeMap<GradeLevel, f64> =
            ps.iter().enumerate().map(|(i, p)| (GradeLevel(i as u32), *p)).collect();
        let best = argmax_lowest(&map).unwrap();
        let max = ps.iter().cloned().fold(f64::MIN, f64::max);
        let first = ps.iter().position(|p| *p == max).unwrap();
        prop_assert_eq!(best.index(), first);
        let squashed: BTreeMap<GradeLevel, f64> =
            map.iter().map(|(g, p)| (*g, (3.0 * p - 1.0).exp())).collect();
        prop_assert_eq!(argmax_lowest(&squashed).unwrap(), best);
    }

    #[test]
    fn cosine_ignores_positive_scale(
        v in prop::collection::vec(-5.0f64..5.0, 4),
        w in prop::collection::vec(-5.0f64..5.0, 4),
        s in 0.01f64..100.0,
    ) {
        let norm = |x: &[f64]| x.iter().map(|a| a * a).sum::<f64>().sqrt();
        prop_assume!(norm(&v) > 1e-6 && norm(&w) > 1e-6);
        let c = cosine(&Embedding::new(v.clone()), &Embedding::new(w.clone())).unwrap();
        let scaled: Vec<f64> = v.iter().map(|a| a * s).collect();
        let c2 = cosine(&Embedding::new(scaled), &Embedding::new(w)).unwrap();
        prop_assert!((c - c2).abs() < 1e-9);
        prop_assert!((-1.0..=1.0).contains(&c));
    }

    #[test]
    fn tfidf_rows_are_unit_or_zero(
        train in prop::collection::vec("[a-d ]{1,12}", 1..8),
        probe in "[a-f ]{0,12}",
    ) {
        prop_assume!(train.iter().any(|t| t.chars().any(|c| c != ' ')));
        let model = tfidf_fit(&train).unwrap();
        for text in train.iter().chain(std::iter::once(&probe)) {
            let v: SparseVector = model.transform(text);
            let n = v.norm();
            prop_assert!(n == 0.0 || (n - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn responses_round_trip(texts in prop::collection::vec("\\PC{0,30}", 1..10)) {
        let responses: Vec<LabeledResponse> = texts
            .into_iter()
            .enumerate()
            .map(|(i, text)| LabeledResponse {
                response_id: format!("id-{i}"),
                item_id: "q".into(),
                text,
                gold: GradeLevel((i % 3) as u32),
            })
            .collect();
        let mut buf = Vec::new();
        write_responses(&mut buf, &responses).unwrap();
        let back = parse_responses(buf.as_slice(), "mem", "q", 3).unwrap();
        prop_assert_eq!(back, responses);
    }

    #[test]
    fn exemplars_round_trip(texts in prop::collection::vec("[a-z]\\PC{0,20}", 2..6)) {
        let set = ExemplarSet::new("item-7", texts).unwrap();
        let back = parse_exemplars("mem", &set.to_json()).unwrap();
        prop_assert_eq!(back, set);
    }
}
