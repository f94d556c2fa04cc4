//! End-to-end training behaviour on the synthetic graph.

use comdense::checkpoint;
use comdense::kg_data::Split;
use comdense::model::{ParamLayout, Parameters};
use comdense::optim::{AdamHyper, AdamState};
use comdense::synthetic::{toy_hyper, toy_kg, toy_model_config, toy_train_settings};
use comdense::train::{self, build_examples, epoch_rng, fit, fit_from, init_rng, TrainSettings};

fn fresh() -> (comdense::kg_data::Dataset, Parameters, AdamState) {
    let ds = toy_kg(0).dataset().unwrap();
    let layout = ParamLayout::for_vocab(&toy_model_config(), &ds.vocab).unwrap();
    let params = Parameters::init(layout, &mut init_rng(0));
    let state = AdamState::new(&params);
    (ds, params, state)
}

#[test]
fn one_step_per_batch() {
    let (ds, mut params, mut state) = fresh();
    let examples = build_examples(&ds.train);
    for batch_size in [1, 7, 16, examples.len(), examples.len() + 3] {
        let settings = TrainSettings {
            batch_size,
            ..toy_train_settings()
        };
        let before = state.step;
        let stats = train::train_epoch(
            &mut params,
            &mut state,
            &examples,
            &settings,
            &toy_hyper(),
            &mut epoch_rng(0, 1),
        )
        .unwrap();
        assert_eq!(stats.steps, examples.len().div_ceil(batch_size));
        assert_eq!(state.step - before, stats.steps as u64);
    }
}

#[test]
fn example_count_is_distinct_queries() {
    let ds = toy_kg(0).dataset().unwrap();
    let examples = build_examples(&ds.train);
    let mut queries: Vec<(u32, u32)> = ds.train.iter().map(|t| (t.subject, t.relation)).collect();
    queries.sort_unstable();
    queries.dedup();
    assert_eq!(examples.len(), queries.len());
    let targets: usize = examples.iter().map(|e| e.targets.len()).sum();
    assert_eq!(targets, ds.train.len());
}

#[test]
fn zero_learning_rate_freezes_parameters() {
    let (ds, mut params, mut state) = fresh();
    let before = params.clone();
    let examples = build_examples(&ds.train);
    let stats = train::train_epoch(
        &mut params,
        &mut state,
        &examples,
        &toy_train_settings(),
        &AdamHyper::with_lr(0.0),
        &mut epoch_rng(0, 1),
    )
    .unwrap();
    assert_eq!(params, before);
    assert!(stats.mean_loss.is_finite() && stats.mean_loss > 0.0);
}

#[test]
fn loss_decreases_over_first_five_epochs() {
    let (ds, mut params, mut state) = fresh();
    let examples = build_examples(&ds.train);
    let mut losses = Vec::new();
    for epoch in 1..=5 {
        let stats = train::train_epoch(
            &mut params,
            &mut state,
            &examples,
            &toy_train_settings(),
            &toy_hyper(),
            &mut epoch_rng(0, epoch),
        )
        .unwrap();
        losses.push(stats.mean_loss);
    }
    assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
}

#[test]
fn loss_finite_for_full_budget() {
    let ds = toy_kg(0).dataset().unwrap();
    let settings = TrainSettings {
        patience: 1000,
        ..toy_train_settings()
    };
    let result = fit(
        &ds,
        &toy_model_config(),
        &settings,
        &toy_hyper(),
        &mut |_| {},
    )
    .unwrap();
    assert_eq!(result.epochs_run, 200);
    assert!(result.log.iter().all(|r| r.mean_loss.is_finite()));
    assert!(result.best.is_finite());
}

#[test]
fn same_seed_same_trajectory() {
    let ds = toy_kg(0).dataset().unwrap();
    let settings = TrainSettings {
        epochs: 12,
        eval_every: 3,
        ..toy_train_settings()
    };
    let run = || {
        fit(
            &ds,
            &toy_model_config(),
            &settings,
            &toy_hyper(),
            &mut |_| {},
        )
        .unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.best, b.best);
    let strip = |r: &train::FitResult| -> Vec<(usize, u64, u64)> {
        r.log
            .iter()
            .map(|l| (l.epoch, l.mean_loss.to_bits(), l.val_mrr.to_bits()))
            .collect()
    };
    assert_eq!(strip(&a), strip(&b));

    let other = TrainSettings {
        seed: 1,
        ..settings
    };
    let c = fit(&ds, &toy_model_config(), &other, &toy_hyper(), &mut |_| {}).unwrap();
    assert_ne!(a.best, c.best);
}

#[test]
fn frozen_model_stops_after_patience() {
    let ds = toy_kg(0).dataset().unwrap();
    let settings = TrainSettings {
        patience: 1,
        eval_every: 2,
        epochs: 50,
        ..toy_train_settings()
    };
    let mut seen = 0;
    let result = fit(
        &ds,
        &toy_model_config(),
        &settings,
        &AdamHyper::with_lr(0.0),
        &mut |_| seen += 1,
    )
    .unwrap();
    assert_eq!(result.log.len(), 2);
    assert_eq!(seen, 2);
    assert_eq!(result.epochs_run, 4);
    assert_eq!(result.best_epoch, 2);
}

#[test]
fn log_has_one_record_per_evaluation() {
    let ds = toy_kg(0).dataset().unwrap();
    // 10 epochs, every 4th plus the cap -> epochs 4, 8, 10
    let settings = TrainSettings {
        epochs: 10,
        eval_every: 4,
        patience: 100,
        ..toy_train_settings()
    };
    let result = fit(
        &ds,
        &toy_model_config(),
        &settings,
        &toy_hyper(),
        &mut |_| {},
    )
    .unwrap();
    let epochs: Vec<usize> = result.log.iter().map(|r| r.epoch).collect();
    assert_eq!(epochs, vec![4, 8, 10]);
}

#[test]
fn best_checkpoint_reproduces_logged_metrics() {
    let ds = toy_kg(0).dataset().unwrap();
    let settings = TrainSettings {
        epochs: 40,
        ..toy_train_settings()
    };
    let result = fit(
        &ds,
        &toy_model_config(),
        &settings,
        &toy_hyper(),
        &mut |_| {},
    )
    .unwrap();
    let logged = result
        .log
        .iter()
        .find(|r| r.epoch == result.best_epoch)
        .unwrap();
    let again = comdense::eval::evaluate(&result.best, &ds, Split::Valid)
        .unwrap()
        .overall;
    assert_eq!(again.mrr, logged.val_mrr);
    assert_eq!(again, result.best_metrics);
}

#[test]
fn resume_from_checkpoint_continues_training() {
    let ds = toy_kg(0).dataset().unwrap();
    let settings = TrainSettings {
        epochs: 10,
        eval_every: 5,
        patience: 100,
        ..toy_train_settings()
    };
    let first = fit(
        &ds,
        &toy_model_config(),
        &settings,
        &toy_hyper(),
        &mut |_| {},
    )
    .unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.bin");
    checkpoint::save(
        &path,
        &first.best,
        Some(&first.best_state),
        first.best_epoch,
        serde_json::Value::Null,
    )
    .unwrap();
    let ck = checkpoint::load(&path).unwrap();
    let state = ck.adam.unwrap();
    assert_eq!(state.step, first.best_state.step);

    let more = TrainSettings {
        epochs: 20,
        ..settings
    };
    let resumed = fit_from(
        &ds,
        ck.params,
        state,
        ck.header.epoch,
        &more,
        &toy_hyper(),
        &mut |_| {},
    )
    .unwrap();
    let epochs: Vec<usize> = resumed.log.iter().map(|r| r.epoch).collect();
    assert_eq!(epochs, vec![15, 20]);
    assert!(resumed.best_metrics.mrr >= first.best_metrics.mrr - 0.2);
}

#[test]
fn perfectly_memorized_model_scores_one() {
    let ds = toy_kg(0).dataset().unwrap();
    let result = fit(
        &ds,
        &toy_model_config(),
        &toy_train_settings(),
        &toy_hyper(),
        &mut |_| {},
    )
    .unwrap();
    assert_eq!(result.best_metrics.mrr, 1.0);
    assert_eq!(result.best_metrics.hits1, 1.0);
}
