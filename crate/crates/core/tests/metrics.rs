//! Ranking metric invariants over real model outputs and random inputs.

use comdense::eval::{self, rank_of, Direction, Evaluation, RankingMetrics};
use comdense::kg_data::{classify_relations, Dataset, RawTriple, RelationCategory, Split};
use comdense::model::{ParamLayout, Parameters};
use comdense::synthetic::{toy_kg, toy_model_config};
use comdense::train::init_rng;
use proptest::prelude::*;

fn random_model(ds: &Dataset, seed: u64) -> Parameters {
    let layout = ParamLayout::for_vocab(&toy_model_config(), &ds.vocab).unwrap();
    Parameters::init(layout, &mut init_rng(seed))
}

#[test]
fn pooled_metrics_are_count_weighted_cell_means() {
    let ds = toy_kg(2).dataset().unwrap();
    let params = random_model(&ds, 5);
    let records = eval::rank_triples(&params, &ds, &ds.train).unwrap();
    let cats = classify_relations(&ds.train, &ds.vocab);
    let report = Evaluation::from_records(records, &cats);

    let mut n = 0usize;
    let (mut mrr, mut h1, mut h10) = (0.0, 0.0, 0.0);
    for d in Direction::ALL {
        for c in RelationCategory::ALL {
            if let Some(m) = report.by_category.get(d, c) {
                n += m.count;
                mrr += m.mrr * m.count as f64;
                h1 += m.hits1 * m.count as f64;
                h10 += m.hits10 * m.count as f64;
            }
        }
    }
    let o = report.overall;
    assert_eq!(n, o.count);
    assert!((mrr / n as f64 - o.mrr).abs() < 1e-12);
    assert!((h1 / n as f64 - o.hits1).abs() < 1e-12);
    assert!((h10 / n as f64 - o.hits10).abs() < 1e-12);

    let by_dir: usize = report.by_direction.values().map(|m| m.count).sum();
    assert_eq!(by_dir, o.count);
}

#[test]
fn all_one_to_one_dataset_leaves_other_cells_empty() {
    let train: Vec<RawTriple> = (0..8)
        .map(|i| RawTriple::new(&format!("a{i}"), "twin", &format!("b{i}")))
        .collect();
    let valid = vec![RawTriple::new("a0", "twin", "b0")];
    let ds = Dataset::from_raw(&train, &valid, &valid).unwrap();
    let params = random_model(&ds, 0);
    let report = eval::evaluate(&params, &ds, Split::Valid).unwrap();
    for d in Direction::ALL {
        assert!(report
            .by_category
            .get(d, RelationCategory::OneToOne)
            .is_some());
        for c in &RelationCategory::ALL[1..] {
            assert!(report.by_category.get(d, *c).is_none());
        }
    }
}

#[test]
fn filtered_never_exceeds_raw_on_toy_model() {
    let ds = toy_kg(0).dataset().unwrap();
    for seed in 0..3 {
        let params = random_model(&ds, seed);
        for split in [Split::Train, Split::Valid, Split::Test] {
            for r in eval::evaluate(&params, &ds, split).unwrap().records {
                assert!(1 <= r.filtered_rank && r.filtered_rank <= r.raw_rank);
            }
        }
    }
}

#[test]
fn evaluation_is_reproducible() {
    let ds = toy_kg(0).dataset().unwrap();
    let params = random_model(&ds, 1);
    let a = eval::evaluate(&params, &ds, Split::Test).unwrap();
    let b = eval::evaluate(&params, &ds, Split::Test).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.records, b.records);
    assert_eq!(a.records_tsv(), b.records_tsv());
}

#[test]
fn report_serialises_with_expected_keys() {
    let ds = toy_kg(0).dataset().unwrap();
    let report = eval::evaluate(&random_model(&ds, 0), &ds, Split::Test).unwrap();
    let v = serde_json::to_value(&report).unwrap();
    for k in ["mrr", "hits1", "hits3", "hits10", "count"] {
        assert!(v["overall"].get(k).is_some(), "{k}");
    }
    assert!(v["by_direction"].get("head").is_some());
    assert!(v["by_category"]["tail"].get("N:N").is_some());
}

proptest! {
    #[test]
    fn metric_bounds_and_order(ranks in proptest::collection::vec(1usize..60, 1..80)) {
        let m = RankingMetrics::from_ranks(ranks.iter().copied());
        prop_assert!(0.0 <= m.hits1 && m.hits1 <= m.hits3 && m.hits3 <= m.hits10 && m.hits10 <= 1.0);
        prop_assert!(m.mrr > 0.0 && m.mrr <= 1.0);
        prop_assert!(m.mrr >= m.hits1);
        prop_assert_eq!(eval::hits_at(&ranks, 60), 1.0);
    }

    #[test]
    fn hits_at_entity_count_is_one(
        scores in proptest::collection::vec(-3i32..3, 1..30),
        target_frac in 0.0f64..1.0,
    ) {
        let e = scores.len();
        let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
        let target = ((target_frac * e as f64) as usize).min(e - 1) as u32;
        let (filtered, raw) = rank_of(&scores, target, &[]).unwrap();
        prop_assert!(raw <= e && filtered == raw);
        prop_assert_eq!(eval::hits_at(&[raw], e), 1.0);
    }

    #[test]
    fn strictly_increasing_transform_preserves_ranks(
        scores in proptest::collection::vec(-50i32..50, 1..40),
        target_frac in 0.0f64..1.0,
        scale in 0.01f64..10.0,
        shift in -5.0f64..5.0,
    ) {
        let e = scores.len();
        let scores: Vec<f64> = scores.into_iter().map(|s| f64::from(s) / 10.0).collect();
        let target = ((target_frac * e as f64) as usize).min(e - 1) as u32;
        let filter: Vec<u32> = (0..e as u32).step_by(3).collect();
        let base = rank_of(&scores, target, &filter).unwrap();
        let moved: Vec<f64> = scores.iter().map(|s| (scale * s + shift).tanh() + s.powi(3)).collect();
        prop_assert_eq!(rank_of(&moved, target, &filter).unwrap(), base);
    }
}
