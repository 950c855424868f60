//! Generate a small synthetic dataset, inspect one sequence and write the
//! dataset directory.
//!
//! Run with `cargo run --example synth_dataset -- [out_dir]`.

use std::path::PathBuf;

use spn::synth::{generate_dataset, read_split, write_dataset, SynthConfig, VehicleClass};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "synth_out".into()),
    );
    let config = SynthConfig {
        sequences_per_class: 5,
        seed: 3,
        ..SynthConfig::default()
    };
    let data = generate_dataset(&config)?;
    println!(
        "{} train / {} test sequences",
        data.train.len(),
        data.test.len()
    );
    for class in VehicleClass::ALL {
        let n = data.train.iter().filter(|s| s.label == class).count();
        println!("  {:<18} {n} train", class.name());
    }

    let s = &data.train[0];
    let rec = s
        .reconstruction
        .as_ref()
        .expect("generated samples keep their reconstruction");
    println!(
        "sequence {}: {} frames of {}x{}, speed {:.2}, {} model points, {} lines",
        s.sequence_id,
        s.frames.len(),
        s.frames[0].width(),
        s.frames[0].height(),
        s.speed,
        rec.bundle.model.points.len(),
        rec.bundle.model.lines.len()
    );
    for (k, d) in s.depth_maps.iter().enumerate() {
        println!(
            "  frame {k}: {:5.2}% of pixels carry depth",
            100.0 * d.valid_fraction()
        );
    }

    write_dataset(&out, &config, &data)?;
    let back = read_split(&out, "test")?;
    println!(
        "wrote {}; read back {} test sequences",
        out.display(),
        back.len()
    );
    Ok(())
}
