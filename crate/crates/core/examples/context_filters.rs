//! Filter keypoint matches of a fixed camera by displacement and driving
//! direction, with the direction range either configured or estimated from
//! line segments.
//!
//! Run with `cargo run --example context_filters`.

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spn::context::{
    dominant_angle_hough, estimate_direction_range, AngleRangeDeg, KeypointMatch,
    MatchFilterConfig, Segment2,
};

fn heading(deg: f64) -> Vector2<f64> {
    let r = deg.to_radians();
    Vector2::new(r.cos(), -r.sin())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut matches = Vec::new();
    // background: jitter of a few pixels
    for _ in 0..40 {
        let a = Vector2::new(
            rng.random_range(50.0..1800.0),
            rng.random_range(50.0..1000.0),
        );
        matches.push(KeypointMatch::new(
            a,
            a + heading(rng.random_range(0.0..360.0)) * rng.random_range(0.1..4.0),
        )?);
    }
    // vehicles on our lane drive toward ~350°, the other lane the opposite way
    for (dir, n) in [(350.0, 25), (170.0, 15)] {
        for _ in 0..n {
            let a = Vector2::new(
                rng.random_range(400.0..1400.0),
                rng.random_range(300.0..700.0),
            );
            let d = dir + rng.random_range(-8.0..8.0);
            matches.push(KeypointMatch::new(
                a,
                a + heading(d) * rng.random_range(60.0..250.0),
            )?);
        }
    }

    let config = MatchFilterConfig {
        min_displacement_px: 50.0,
        valid_range: "320:20".parse()?,
    };
    let kept = config.apply(&matches)?;
    println!(
        "configured range 320:20 keeps {} of {} matches",
        kept.len(),
        matches.len()
    );

    // road markings seen as long segments along the road, plus clutter
    let mut segments: Vec<Segment2> = (0..6)
        .map(|i| {
            let a = Vector2::new(100.0, 400.0 + 60.0 * f64::from(i));
            Segment2::new(a, a + heading(170.0 + rng.random_range(-0.4..0.4)) * -900.0)
        })
        .collect();
    segments.extend((0..10).map(|_| {
        let a = Vector2::new(rng.random_range(0.0..1900.0), rng.random_range(0.0..1000.0));
        Segment2::new(
            a,
            a + heading(rng.random_range(0.0..180.0)) * rng.random_range(5.0..60.0),
        )
    }));
    let axis = dominant_angle_hough(&segments, 1.0)?;
    let moved = spn::context::filter_static_matches(&matches, 50.0)?;
    let range = estimate_direction_range(&segments, &moved, 1.0, 30.0)?;
    let auto = spn::context::filter_direction_matches(&moved, &range)?;
    println!(
        "dominant line orientation {axis} deg, estimated range {}:{}, keeps {} matches",
        range.start_deg(),
        range.end_deg(),
        auto.len()
    );
    let everything = spn::context::filter_direction_matches(&moved, &AngleRangeDeg::full())?;
    println!(
        "without a direction test {} moving matches remain",
        everything.len()
    );
    Ok(())
}
