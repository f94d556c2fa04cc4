//! Train on the synthetic graph and print validation metrics as they arrive.
//!
//! Usage: `cargo run --release --example toy_fit -- [seed]`

use comdense::synthetic::{toy_hyper, toy_kg, toy_model_config, toy_train_settings};
use comdense::train::{fit, TrainSettings};

fn main() -> comdense::Result<()> {
    let seed = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let dataset = toy_kg(0).dataset()?;
    let settings = TrainSettings {
        seed,
        ..toy_train_settings()
    };
    let start = std::time::Instant::now();
    let result = fit(
        &dataset,
        &toy_model_config(),
        &settings,
        &toy_hyper(),
        &mut |r| {
            println!(
                "epoch {:3}  loss {:.5}  val mrr {:.4}",
                r.epoch, r.mean_loss, r.val_mrr
            );
        },
    )?;
    println!(
        "best epoch {}  val mrr {:.4}  ({:.2}s)",
        result.best_epoch,
        result.best_metrics.mrr,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
