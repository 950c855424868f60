//! Recover the scale of a reconstruction from a reference line parallel to
//! the trajectory, and show that two copies of a scene at different scales
//! align to the same world frame.
//!
//! Run with `cargo run --example alignment`.

use nalgebra::{Vector2, Vector3};
use spn::alignment::{align_to_world, AlignOptions, ReferenceLineObservation, ScaleReference};
use spn::geometry::{look_rotation, PinholeCamera, Segment3, VehicleModel3D};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Camera positions relative to the vehicle: the vehicle moves +x, so in
    // its frame the camera steps along -x by the per-frame travel.
    let step = 0.8;
    let rotation = look_rotation(&Vector3::new(-0.4, 0.3, 1.0), &Vector3::y());
    let cameras: Vec<PinholeCamera> = (0..5)
        .map(|k| {
            PinholeCamera::new(
                300.0,
                Vector2::new(320.0, 240.0),
                rotation,
                Vector3::new(-step * f64::from(k), 0.0, 0.0),
                640,
                480,
            )
        })
        .collect::<Result<_, _>>()?;

    // a box-shaped vehicle and a reference line of length `step` on the road
    let corners: Vec<Vector3<f64>> = (0..8)
        .map(|i| {
            Vector3::new(
                -2.0 + 4.0 * f64::from(i & 1),
                1.0 - 1.5 * f64::from(i >> 1 & 1),
                8.0 + 1.8 * f64::from(i >> 2),
            )
        })
        .collect();
    let lines = vec![
        Segment3::new(corners[0], corners[1]),
        Segment3::new(corners[2], corners[3]),
    ];
    let model = VehicleModel3D::new(corners, lines)?;
    let p1 = Vector3::new(-6.0, 1.5, 6.0);
    let p2 = p1 + Vector3::x() * step;
    let obs = ReferenceLineObservation::new(
        cameras[0].project_unbounded(&p1)?,
        cameras[0].project_unbounded(&p2)?,
    )?;

    let aligned = align_to_world(&model, &cameras, &obs, &AlignOptions::default())?;
    let s = aligned.solution;
    println!(
        "alpha {:.4} rad, beta {:.4} rad, a {:.4}, d {:.4}, d1c {:.4}, d2c {:.4}",
        s.alpha_rad, s.beta_rad, s.a, s.d, s.d1c, s.d2c
    );
    println!("|P1| in the aligned frame: {:.12}", aligned.p1.norm());

    // the same scene reconstructed at 7.5x scale with an arbitrary offset
    let k = 7.5;
    let shift = Vector3::new(40.0, -3.0, 12.0);
    let big = model.apply_similarity(k, &shift)?;
    let big_cams: Vec<_> = cameras
        .iter()
        .map(|c| c.with_center(c.center() * k + shift))
        .collect();
    let other = align_to_world(&big, &big_cams, &obs, &AlignOptions::default())?;
    let diff = aligned
        .model
        .points
        .iter()
        .zip(&other.model.points)
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max);
    println!("max point difference after aligning both copies: {diff:.2e}");

    let line_unit = align_to_world(
        &model,
        &cameras,
        &obs,
        &AlignOptions {
            scale_reference: ScaleReference::LineLength,
            ..AlignOptions::default()
        },
    )?;
    println!(
        "with the line-length unit, |P1 - P2| = {:.12}",
        (line_unit.p1 - line_unit.p2).norm()
    );
    Ok(())
}
