//! Project world points into a pinhole camera and cast rays back out.
//!
//! Run with `cargo run --example projection`.

use nalgebra::{Vector2, Vector3};
use spn::geometry::{look_rotation, PinholeCamera};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // 640x480 camera 4 m above the road, pitched down toward a point 20 m ahead.
    let center = Vector3::new(0.0, -4.0, 0.0);
    let target = Vector3::new(0.0, 0.0, 20.0);
    let rotation = look_rotation(&(target - center), &Vector3::y());
    let cam = PinholeCamera::new(
        500.0,
        Vector2::new(320.0, 240.0),
        rotation,
        center,
        640,
        480,
    )?;

    for p in [
        target,
        Vector3::new(2.0, 0.0, 12.0),
        Vector3::new(-3.0, -1.5, 30.0),
    ] {
        let proj = cam.project_point(&p)?;
        let ray = cam.cast_ray(&proj.pixel);
        // the ray direction is unit length, so the distance lands on p again
        let back = ray.at((p - center).norm());
        println!(
            "point {:>6.2?} -> pixel ({:7.2}, {:7.2}), z_cam {:6.3}, distance to origin {:6.3}, ray error {:.1e}",
            p.as_slice(),
            proj.pixel.x,
            proj.pixel.y,
            proj.z_cam,
            proj.depth,
            (back - p).norm()
        );
    }

    match cam.project_point(&Vector3::new(0.0, -4.0, -5.0)) {
        Ok(_) => println!("unexpected projection"),
        Err(e) => println!("behind the camera: {e}"),
    }
    Ok(())
}
