//! Train the classifier with the auxiliary depth branch on a small synthetic
//! dataset, save a checkpoint and evaluate it.
//!
//! Run with `cargo run --release --example training -- [epochs]`.

use spn::nn::checkpoint::{load_checkpoint, save_checkpoint};
use spn::nn::train::metrics_csv;
use spn::nn::{evaluate, train, LossConfig, NetworkConfig, TrainConfig};
use spn::synth::{generate_dataset, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epochs = std::env::args().nth(1).map_or(Ok(8), |s| s.parse())?;
    let data = generate_dataset(&SynthConfig {
        sequences_per_class: 10,
        seed: 4,
        ..SynthConfig::default()
    })?;
    let (train_set, test_set) = data.labeled();
    let train_cfg = TrainConfig {
        max_epochs: epochs,
        seed: 4,
        ..TrainConfig::default()
    };
    let (net, metrics) = train(
        &NetworkConfig::default(),
        &train_set,
        Some(&test_set),
        &LossConfig::default(),
        &train_cfg,
    )?;
    print!("{}", metrics_csv(&metrics));

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("checkpoint.spn");
    save_checkpoint(&net, &path)?;
    let restored = load_checkpoint(&path)?;
    let eval = evaluate(&restored, &test_set)?;
    println!(
        "test: {:.2}% images, {:.2}% sequences ({} sequences)",
        100.0 * eval.image_accuracy,
        100.0 * eval.sequence_accuracy,
        eval.sequences
    );
    Ok(())
}
