//! Trains one of the 1-filter models on a freshly generated Line-Circle
//! dataset and reports the test AP.
//!
//!     cargo run --release --example train_line_circle [model] [seed] [epochs]
//!
//! where `model` is `local`, `global`, `local_global` (default), or
//! `block_variant_0` … `block_variant_4`.

use std::time::Instant;

use htprior::dataset::generate_dataset;
use htprior::model::ModelKind;
use htprior::train::{test_ap, train, TrainSettings};

fn main() -> htprior::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let kind = ModelKind::parse(args.get(1).map(|s| s.as_str()).unwrap_or("local_global"))?;
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0);
    let mut settings = TrainSettings::for_kind(kind, seed);
    if let Some(e) = args.get(3).and_then(|s| s.parse().ok()) {
        settings.epochs = e;
    }

    println!("generating Line-Circle dataset (seed 0)");
    let data = generate_dataset(0)?;
    println!(
        "training {} for up to {} epochs (lr {}, wd {}, patience {})",
        kind.name(),
        settings.epochs,
        settings.lr,
        settings.weight_decay,
        settings.patience
    );
    let started = Instant::now();
    let outcome = train(&settings, &data.train, &data.val, None, |s| {
        println!(
            "epoch {:3}  train_loss {:.6}  val_ap {:.4}  [{:.1}s]",
            s.epoch,
            s.train_loss,
            s.val_ap,
            started.elapsed().as_secs_f64()
        );
    })?;
    println!(
        "best epoch {} with val AP {:.4}",
        outcome.best_epoch, outcome.best_val_ap
    );
    let ap = test_ap(&outcome.best_model, &data.test)?;
    println!("test AP: {:.4} ({:.2}%)", ap, ap * 100.0);
    Ok(())
}
