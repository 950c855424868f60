//! Render a wireframe model into sparse depth maps for each variant and save
//! them as SDM1 files with PNG previews.
//!
//! Run with `cargo run --example reprojection -- [out_dir]`.

use std::path::PathBuf;

use nalgebra::{Vector2, Vector3};
use spn::geometry::{PinholeCamera, Segment3, VehicleModel3D};
use spn::reprojection::{
    read_depth_map, reproject, write_depth_map, write_depth_preview, ReprojectionVariant,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "reprojection_out".into()),
    );
    std::fs::create_dir_all(&out)?;

    // a 4 x 1.5 x 1.8 box 6 m in front of the camera
    let corner = |i: u32| {
        Vector3::new(
            -2.0 + 4.0 * f64::from(i & 1),
            -0.75 + 1.5 * f64::from(i >> 1 & 1),
            6.0 + 1.8 * f64::from(i >> 2 & 1),
        )
    };
    let points: Vec<_> = (0..8).map(corner).collect();
    let edges = [
        (0, 1),
        (2, 3),
        (4, 5),
        (6, 7),
        (0, 2),
        (1, 3),
        (4, 6),
        (5, 7),
        (0, 4),
        (1, 5),
        (2, 6),
        (3, 7),
    ];
    let lines = edges
        .iter()
        .map(|&(a, b)| Segment3::new(corner(a), corner(b)))
        .collect();
    let model = VehicleModel3D::new(points, lines)?;
    let cam =
        PinholeCamera::axis_aligned(40.0, Vector2::new(31.5, 31.5), Vector3::zeros(), 64, 64)?;

    for variant in ReprojectionVariant::ALL {
        let map = reproject(&model, &cam, variant)?;
        let name = variant.name().replace('+', "_");
        let path = out.join(format!("{name}.sdm"));
        write_depth_map(&map, &path)?;
        write_depth_preview(&map, &out.join(format!("{name}.png")))?;
        let back = read_depth_map(&path)?;
        let (lo, hi) = map
            .depths()
            .iter()
            .filter(|d| !d.is_nan())
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &d| {
                (lo.min(d), hi.max(d))
            });
        println!(
            "{:<13} {:4} valid pixels ({:5.2}%), depth {lo:.3}..{hi:.3}, file round trip ok: {}",
            variant.name(),
            map.valid_count(),
            100.0 * map.valid_fraction(),
            back == map.quantized()
        );
    }
    println!("wrote maps and previews to {}", out.display());
    Ok(())
}
