//! The four-row comparison: a baseline without depth supervision against
//! depth targets from lines, points, and points with lines.
//!
//! `cargo run --release --example experiment -- [seed] [epochs]`. The full
//! default configuration takes on the order of 15 minutes on one core.

use spn::experiment::{run_experiment, ExperimentConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let seed = args.next().map_or(Ok(0), |s| s.parse())?;
    let mut config = ExperimentConfig::default().with_seed(seed);
    if let Some(e) = args.next() {
        config.train.max_epochs = e.parse()?;
    }
    config.output_dir = format!("experiment_seed{seed}").into();
    let report = run_experiment(&config)?;
    print!("{}", report.to_table());
    println!(
        "{} train / {} test sequences, {:.0} s, artifacts in {}",
        report.train_sequences,
        report.test_sequences,
        report.wall_clock_seconds,
        config.output_dir.display()
    );
    Ok(())
}
