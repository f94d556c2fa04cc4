//! 1:N training: one example per distinct `(s, r)` in the training split,
//! scored against every entity with a multi-hot BCE target.
//!
//! Randomness is derived from `(seed, epoch, position)` so that a run is
//! bit-reproducible regardless of how batches are spread over worker threads,
//! and so that a run resumed from a checkpoint at epoch `e` continues exactly.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{self, RankingMetrics};
use crate::kg_data::{Dataset, Split, Triple};
use crate::model::{backward_into, forward, Gradients, ModelConfig, ParamLayout, Parameters};
use crate::ndmath::bce_with_logits;
use crate::optim::{adam_step, AdamHyper, AdamState};

/// Examples per reduction chunk. Fixed so that the summation order, and hence
/// the result, does not depend on the number of threads.
const CHUNK: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainExample {
    pub subject: u32,
    pub relation: u32,
    /// Every training-true object of `(subject, relation)`, sorted.
    pub targets: Vec<u32>,
}

/// Group training triples by `(subject, relation)`, ordered by that pair.
pub fn build_examples(train: &[Triple]) -> Vec<TrainExample> {
    let mut groups: BTreeMap<(u32, u32), Vec<u32>> = BTreeMap::new();
    for t in train {
        groups
            .entry((t.subject, t.relation))
            .or_default()
            .push(t.object);
    }
    groups
        .into_iter()
        .map(|((subject, relation), mut targets)| {
            targets.sort_unstable();
            targets.dedup();
            TrainExample {
                subject,
                relation,
                targets,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSettings {
    pub batch_size: usize,
    pub epochs: usize,
    pub eval_every: usize,
    pub patience: usize,
    pub label_smoothing: f64,
    pub seed: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            batch_size: 128,
            epochs: 1000,
            eval_every: 3,
            patience: 10,
            label_smoothing: 0.0,
            seed: 0,
        }
    }
}

impl TrainSettings {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("train.batch_size", self.batch_size),
            ("train.epochs", self.epochs),
            ("train.eval_every", self.eval_every),
            ("train.patience", self.patience),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::config(
                "train.label_smoothing",
                format!("{} must lie in [0, 1)", self.label_smoothing),
            ));
        }
        Ok(())
    }
}

/// Multi-hot target over `num_entities`, smoothed as `(1 - ls) y + ls / E`.
pub fn targets_vector(targets: &[u32], num_entities: usize, label_smoothing: f64) -> Vec<f64> {
    let mut y = vec![0.0; num_entities];
    for &t in targets {
        y[t as usize] = 1.0;
    }
    if label_smoothing > 0.0 {
        let floor = label_smoothing / num_entities as f64;
        for v in &mut y {
            *v = (1.0 - label_smoothing) * *v + floor;
        }
    }
    y
}

/// Loss of one example, accumulating its gradient into `grads`.
pub fn loss_for_example_into<R: rand::Rng + ?Sized>(
    params: &Parameters,
    example: &TrainExample,
    label_smoothing: f64,
    rng: &mut R,
    grads: &mut Gradients,
) -> Result<f64> {
    let fwd = forward(params, example.subject, example.relation, true, rng)?;
    let y = targets_vector(&example.targets, params.num_entities(), label_smoothing);
    let (loss, dscores) = bce_with_logits(&fwd.scores, &y)?;
    let cache = fwd.cache.as_ref().ok_or(Error::MissingCache)?;
    backward_into(params, cache, &dscores, grads)?;
    Ok(loss)
}

pub fn loss_for_example<R: rand::Rng + ?Sized>(
    params: &Parameters,
    example: &TrainExample,
    label_smoothing: f64,
    rng: &mut R,
) -> Result<(f64, Gradients)> {
    let mut grads = Gradients::empty(params.layout());
    let loss = loss_for_example_into(params, example, label_smoothing, rng, &mut grads)?;
    Ok((loss, grads))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub mean_loss: f64,
    /// Mean example loss of every batch, in processing order.
    pub batch_losses: Vec<f64>,
    pub steps: usize,
}

fn example_rng(base: u64, position: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(position as u64);
    rng
}

fn chunk_gradients(
    params: &Parameters,
    chunk: &[&TrainExample],
    first_position: usize,
    base: u64,
    label_smoothing: f64,
) -> Result<(f64, Gradients)> {
    let mut grads = Gradients::empty(params.layout());
    let mut loss = 0.0;
    for (i, ex) in chunk.iter().enumerate() {
        let mut rng = example_rng(base, first_position + i);
        loss += loss_for_example_into(params, ex, label_smoothing, &mut rng, &mut grads)?;
    }
    Ok((loss, grads))
}

fn batch_gradients(
    params: &Parameters,
    batch: &[&TrainExample],
    first_position: usize,
    base: u64,
    label_smoothing: f64,
) -> Result<(f64, Gradients)> {
    let run = |(c, chunk): (usize, &[&TrainExample])| {
        chunk_gradients(
            params,
            chunk,
            first_position + c * CHUNK,
            base,
            label_smoothing,
        )
    };
    #[cfg(feature = "parallel")]
    let parts: Vec<(f64, Gradients)> = {
        use rayon::prelude::*;
        batch
            .par_chunks(CHUNK)
            .enumerate()
            .map(run)
            .collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<(f64, Gradients)> = batch
        .chunks(CHUNK)
        .enumerate()
        .map(run)
        .collect::<Result<_>>()?;

    let mut parts = parts.into_iter();
    let (mut loss, mut grads) = parts.next().expect("non-empty batch");
    for (l, g) in parts {
        loss += l;
        grads.add_assign(&g);
    }
    Ok((loss, grads))
}

/// One pass over `examples`: shuffle, then one Adam step per batch on the mean
/// example gradient.
pub fn train_epoch<R: RngCore + ?Sized>(
    params: &mut Parameters,
    state: &mut AdamState,
    examples: &[TrainExample],
    settings: &TrainSettings,
    hyper: &AdamHyper,
    rng: &mut R,
) -> Result<EpochStats> {
    let mut order: Vec<&TrainExample> = examples.iter().collect();
    order.shuffle(rng);
    let base = rng.next_u64();

    let mut total = 0.0;
    let mut batch_losses = Vec::with_capacity(order.len().div_ceil(settings.batch_size));
    for (b, batch) in order.chunks(settings.batch_size).enumerate() {
        let first = b * settings.batch_size;
        let (loss, mut grads) =
            batch_gradients(params, batch, first, base, settings.label_smoothing)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "training loss at batch {b} (examples {first}..{})",
                first + batch.len()
            )));
        }
        grads.scale(1.0 / batch.len() as f64);
        adam_step(params, &grads, state, hyper)?;
        total += loss;
        batch_losses.push(loss / batch.len() as f64);
    }
    Ok(EpochStats {
        mean_loss: if order.is_empty() {
            0.0
        } else {
            total / order.len() as f64
        },
        steps: batch_losses.len(),
        batch_losses,
    })
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_mrr: f64,
    pub val_hits1: f64,
    pub val_hits10: f64,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub best: Parameters,
    pub best_state: AdamState,
    pub best_epoch: usize,
    pub best_metrics: RankingMetrics,
    pub epochs_run: usize,
    pub log: Vec<LogRecord>,
}

/// RNG used to initialise parameters for `seed`.
pub fn init_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// RNG driving epoch `epoch` (1-based) for `seed`.
pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    rng
}

/// Train from a fresh initialisation.
pub fn fit(
    dataset: &Dataset,
    config: &ModelConfig,
    settings: &TrainSettings,
    hyper: &AdamHyper,
    on_eval: &mut dyn FnMut(&LogRecord),
) -> Result<FitResult> {
    let layout = ParamLayout::for_vocab(config, &dataset.vocab)?;
    let params = Parameters::init(layout, &mut init_rng(settings.seed));
    let state = AdamState::new(&params);
    fit_from(dataset, params, state, 0, settings, hyper, on_eval)
}

/// Continue training after `completed_epochs` epochs.
///
/// Validation MRR is computed every `eval_every` epochs (and at the epoch cap);
/// training stops after `patience` evaluations without a strict improvement.
pub fn fit_from(
    dataset: &Dataset,
    mut params: Parameters,
    mut state: AdamState,
    completed_epochs: usize,
    settings: &TrainSettings,
    hyper: &AdamHyper,
    on_eval: &mut dyn FnMut(&LogRecord),
) -> Result<FitResult> {
    settings.validate()?;
    hyper.validate()?;
    if !state.matches(&params) {
        return Err(Error::shape(
            "fit optimizer state",
            "buffers matching parameters",
            "mismatch",
        ));
    }
    let examples = build_examples(&dataset.train);
    let start = Instant::now();
    let mut log = Vec::new();
    let mut best: Option<(Parameters, AdamState, usize, RankingMetrics)> = None;
    let mut stale = 0usize;
    let mut epoch = completed_epochs;

    while epoch < settings.epochs {
        epoch += 1;
        let mut rng = epoch_rng(settings.seed, epoch);
        let stats = train_epoch(
            &mut params,
            &mut state,
            &examples,
            settings,
            hyper,
            &mut rng,
        )?;
        if !epoch.is_multiple_of(settings.eval_every) && epoch != settings.epochs {
            continue;
        }
        let metrics = eval::evaluate(&params, dataset, Split::Valid)?.overall;
        let record = LogRecord {
            epoch,
            mean_loss: stats.mean_loss,
            val_mrr: metrics.mrr,
            val_hits1: metrics.hits1,
            val_hits10: metrics.hits10,
            elapsed_s: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: loss {:.6} val mrr {:.4} hits@10 {:.4}",
            record.mean_loss,
            record.val_mrr,
            record.val_hits10
        );
        on_eval(&record);
        log.push(record);

        let improved = best.as_ref().is_none_or(|b| metrics.mrr > b.3.mrr);
        if improved {
            best = Some((params.clone(), state.clone(), epoch, metrics));
            stale = 0;
        } else {
            stale += 1;
            if stale >= settings.patience {
                break;
            }
        }
    }

    let (best, best_state, best_epoch, best_metrics) = best.unwrap_or_else(|| {
        (
            params.clone(),
            state.clone(),
            epoch,
            RankingMetrics::default(),
        )
    });
    Ok(FitResult {
        best,
        best_state,
        best_epoch,
        best_metrics,
        epochs_run: epoch,
        log,
    })
}
