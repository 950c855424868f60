use nalgebra::{Matrix3, Rotation3, Vector2, Vector3};
use proptest::prelude::*;

use spn::alignment::{align_to_world, solve_scale, AlignOptions, ReferenceLineObservation};
use spn::context::{
    dominant_angle_hough, filter_direction_matches, filter_static_matches, AngleRangeDeg,
    KeypointMatch, Segment2,
};
use spn::geometry::{look_rotation, PinholeCamera, Ray, Segment3, VehicleModel3D};
use spn::nn::loss::{huber, masked_huber, softmax, AuxReduction};
use spn::reprojection::{reproject, reproject_points, ReprojectionVariant, SparseDepthMap};

fn vec3(range: f64) -> impl Strategy<Value = Vector3<f64>> {
    prop::array::uniform3(-range..range).prop_map(Vector3::from)
}

fn rotation() -> impl Strategy<Value = Matrix3<f64>> {
    prop::array::uniform3(-3.0..3.0f64)
        .prop_map(|a| *Rotation3::from_euler_angles(a[0], a[1], a[2]).matrix())
}

fn camera() -> impl Strategy<Value = PinholeCamera> {
    (50.0..400.0f64, rotation(), vec3(20.0)).prop_map(|(f, r, c)| {
        PinholeCamera::new(f, Vector2::new(32.0, 32.0), r, c, 64, 64).unwrap()
    })
}

fn keypoint_match() -> impl Strategy<Value = KeypointMatch> {
    (
        0.0..500.0f64,
        0.0..500.0f64,
        -120.0..120.0f64,
        -120.0..120.0f64,
    )
        .prop_filter("moves", |(_, _, dx, dy)| *dx != 0.0 || *dy != 0.0)
        .prop_map(|(x, y, dx, dy)| {
            let a = Vector2::new(x + 200.0, y + 200.0);
            KeypointMatch::new(a, a + Vector2::new(dx, dy)).unwrap()
        })
}

fn segment2() -> impl Strategy<Value = Segment2> {
    prop::array::uniform4(0.0..300.0f64)
        .prop_map(|v| Segment2::new(Vector2::new(v[0], v[1]), Vector2::new(v[2], v[3])))
}

/// A camera at the origin looking along `+z`, with a model in front of it.
fn front_camera() -> PinholeCamera {
    PinholeCamera::axis_aligned(60.0, Vector2::new(32.0, 32.0), Vector3::zeros(), 64, 64).unwrap()
}

fn front_points() -> impl Strategy<Value = Vec<Vector3<f64>>> {
    prop::collection::vec(
        (-2.0..2.0f64, -2.0..2.0f64, 1.0..8.0f64).prop_map(|(x, y, z)| Vector3::new(x, y, z)),
        1..40,
    )
}

fn front_segments() -> impl Strategy<Value = Vec<Segment3>> {
    prop::collection::vec((front_points(), front_points()), 1..2).prop_map(|v| {
        let (a, b) = &v[0];
        a.iter()
            .zip(b)
            .filter(|(p, q)| (*p - *q).norm() > 1e-6)
            .map(|(p, q)| Segment3::new(*p, *q))
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn ray_round_trip(cam in camera(), px in 0.0..64.0f64, py in 0.0..64.0f64, t in 0.01..100.0f64) {
        let pixel = Vector2::new(px, py);
        let ray = cam.cast_ray(&pixel);
        prop_assert!((ray.direction.norm() - 1.0).abs() < 1e-12);
        let p = ray.at(t);
        let back = cam.project_unbounded(&p).unwrap();
        prop_assert!((back - pixel).norm() < 1e-6, "{back:?} vs {pixel:?}");
    }

    #[test]
    fn similarity_composes(
        pts in prop::collection::vec(vec3(50.0), 1..10),
        s1 in 0.1..10.0f64, s2 in 0.1..10.0f64, t1 in vec3(50.0), t2 in vec3(50.0),
    ) {
        let lines = pts.windows(2).filter(|w| (w[0] - w[1]).norm() > 1e-6)
            .map(|w| Segment3::new(w[0], w[1])).collect();
        let m = VehicleModel3D::new(pts, lines).unwrap();
        let twice = m.apply_similarity(s1, &t1).unwrap().apply_similarity(s2, &t2).unwrap();
        let once = m.apply_similarity(s2 * s1, &(t1 * s2 + t2)).unwrap();
        for (p, q) in twice.points.iter().zip(&once.points) {
            prop_assert!((p - q).amax() < 1e-9);
        }
        for (p, q) in twice.lines.iter().zip(&once.lines) {
            prop_assert!((p.a - q.a).amax() < 1e-9 && (p.b - q.b).amax() < 1e-9);
        }
    }

    #[test]
    fn non_orthonormal_rotation_rejected(r in rotation(), k in 1.001..2.0f64, col in 0usize..3) {
        let mut bad = r;
        bad.column_mut(col).scale_mut(k);
        prop_assert!(PinholeCamera::new(100.0, Vector2::zeros(), bad, Vector3::zeros(), 8, 8).is_err());
        prop_assert!(PinholeCamera::new(100.0, Vector2::zeros(), -r, Vector3::zeros(), 8, 8).is_err());
    }

    #[test]
    fn static_filter_idempotent_subset(ms in prop::collection::vec(keypoint_match(), 0..40), t in 0.0..150.0f64) {
        let once = filter_static_matches(&ms, t).unwrap();
        prop_assert_eq!(&filter_static_matches(&once, t).unwrap(), &once);
        // order-preserving subsequence of the input
        let mut it = ms.iter();
        for m in &once {
            prop_assert!(it.any(|x| x == m));
        }
    }

    #[test]
    fn full_range_is_identity(ms in prop::collection::vec(keypoint_match(), 0..40)) {
        prop_assert_eq!(filter_direction_matches(&ms, &AngleRangeDeg::full()).unwrap(), ms);
    }

    #[test]
    fn filters_commute(
        ms in prop::collection::vec(keypoint_match(), 0..40),
        t in 0.0..150.0f64, start in 0.0..360.0f64, end in 0.0..360.0f64,
    ) {
        let range = AngleRangeDeg::new(start, end).unwrap();
        let a = filter_direction_matches(&filter_static_matches(&ms, t).unwrap(), &range).unwrap();
        let b = filter_static_matches(&filter_direction_matches(&ms, &range).unwrap(), t).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn hough_ignores_endpoint_order_and_permutation(
        segs in prop::collection::vec(segment2(), 1..30),
        flips in prop::collection::vec(any::<bool>(), 30),
        shuffle in any::<u64>(),
    ) {
        let Ok(angle) = dominant_angle_hough(&segs, 1.0) else { return Ok(()) };
        let mut other: Vec<Segment2> = segs.iter().zip(&flips)
            .map(|(s, &f)| if f { Segment2::new(s.b, s.a) } else { *s })
            .collect();
        let k = other.len();
        other.rotate_left((shuffle % k as u64) as usize);
        other.reverse();
        prop_assert_eq!(dominant_angle_hough(&other, 1.0).unwrap(), angle);
    }

    #[test]
    fn scale_solution_relations(
        a in 0.2..8.0f64, d in 0.2..8.0f64, len in 0.01..50.0f64,
        t in vec3(1.0).prop_filter("nonzero", |v| v.norm() > 0.1),
        n in vec3(1.0),
    ) {
        let t = t.normalize();
        let n = n - t * t.dot(&n);
        prop_assume!(n.norm() > 0.1);
        let n = n.normalize();
        let r1 = Ray::new(Vector3::zeros(), t * ((a + 1.0) * len) + n * (d * len));
        let r2 = Ray::new(Vector3::zeros(), t * (a * len) + n * (d * len));
        let s = solve_scale(&t, &r1, &r2).unwrap();
        let (ta, tb) = (s.alpha_rad.tan(), s.beta_rad.tan());
        prop_assert!(((tb * s.a) - ta * (s.a + 1.0)).abs() <= 1e-9 * (tb * s.a).abs());
        prop_assert!((tb - s.d / s.a).abs() < 1e-9);
        prop_assert!((ta - s.d / (s.a + 1.0)).abs() < 1e-9);
    }

    #[test]
    fn aligned_scene_invariant_to_similarity(
        pts in prop::collection::vec(vec3(3.0), 1..20),
        k in 0.1..10.0f64, shift in vec3(100.0),
        step in 0.2..2.0f64, d in 3.0..12.0f64, frames in 2usize..6,
    ) {
        // Cameras step along -x and look across +z at a line parallel to
        // their path.
        let r = look_rotation(&Vector3::new(-0.3, 0.0, 1.0), &Vector3::y());
        let cams: Vec<PinholeCamera> = (0..frames)
            .map(|i| PinholeCamera::new(80.0, Vector2::new(32.0, 32.0), r,
                Vector3::new(-(i as f64) * step, 0.0, 0.0), 64, 64).unwrap())
            .collect();
        let p1 = Vector3::new(-3.0, 0.5, d);
        let p2 = p1 + Vector3::x() * step;
        let obs = ReferenceLineObservation::new(
            cams[0].project_unbounded(&p1).unwrap(),
            cams[0].project_unbounded(&p2).unwrap(),
        ).unwrap();
        let model = VehicleModel3D::new(pts.iter().map(|p| p + Vector3::new(0.0, 0.0, d)).collect(), vec![]).unwrap();
        let opts = AlignOptions::default();
        let a = align_to_world(&model, &cams, &obs, &opts).unwrap();
        let model2 = model.apply_similarity(k, &shift).unwrap();
        let cams2: Vec<_> = cams.iter().map(|c| c.with_center(c.center() * k + shift)).collect();
        let b = align_to_world(&model2, &cams2, &obs, &opts).unwrap();
        for (p, q) in a.model.points.iter().zip(&b.model.points) {
            prop_assert!((p - q).amax() < 1e-6);
        }
        for (ca, cb) in a.cameras.iter().zip(&b.cameras) {
            prop_assert!((ca.center() - cb.center()).amax() < 1e-6);
        }
        prop_assert!((a.p1.norm() - 1.0).abs() < 1e-9);
        // aligned units are camera-to-P1 distances
        let expected = (model.points[0] - cams[0].center()) / p1.norm();
        prop_assert!((a.model.points[0] - expected).amax() < 1e-9);
    }

    #[test]
    fn point_depth_is_norm(pts in front_points()) {
        let cam = front_camera();
        let map = reproject(&VehicleModel3D::new(pts.clone(), vec![]).unwrap(), &cam, ReprojectionVariant::Points).unwrap();
        for y in 0..64 {
            for x in 0..64 {
                if let Some(v) = map.get(x, y) {
                    prop_assert!(pts.iter().any(|p| (p.norm() - v).abs() < 1e-9));
                }
            }
        }
    }

    #[test]
    fn adding_primitives_is_monotone(pts in front_points(), more in front_points()) {
        let cam = front_camera();
        let mut map = SparseDepthMap::for_camera(&cam);
        reproject_points(&pts, &cam, &mut map);
        let before = map.clone();
        reproject_points(&more, &cam, &mut map);
        for (b, a) in before.depths().iter().zip(map.depths()) {
            if !b.is_nan() {
                prop_assert!(!a.is_nan() && a <= b);
            }
        }
    }

    #[test]
    fn merged_variant_is_union_with_min(pts in front_points(), lines in front_segments()) {
        prop_assume!(!lines.is_empty());
        let cam = front_camera();
        let m = VehicleModel3D::new(pts, lines).unwrap();
        let p = reproject(&m, &cam, ReprojectionVariant::Points).unwrap();
        let l = reproject(&m, &cam, ReprojectionVariant::Lines).unwrap();
        let both = reproject(&m, &cam, ReprojectionVariant::PointsAndLines).unwrap();
        for ((x, y), z) in p.depths().iter().zip(l.depths()).zip(both.depths()) {
            let want = match (x.is_nan(), y.is_nan()) {
                (true, true) => f64::NAN,
                (false, true) => *x,
                (true, false) => *y,
                (false, false) => x.min(*y),
            };
            prop_assert_eq!(want.to_bits(), z.to_bits());
        }
    }

    #[test]
    fn softmax_is_a_distribution(logits in prop::collection::vec(-15.0..15.0f64, 6)) {
        let p = softmax(&logits);
        prop_assert_eq!(p.len(), 6);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn huber_even_and_below_parabola(x in -10.0..10.0f64, delta in 0.01..5.0f64) {
        let h = huber(x, delta).unwrap();
        prop_assert_eq!(h, huber(-x, delta).unwrap());
        prop_assert!(h <= 0.5 * x * x);
        prop_assert!(h >= 0.0);
    }

    #[test]
    fn masked_loss_ignores_invalid_pixels(
        pred in prop::collection::vec(-2.0..2.0f64, 64),
        noise in prop::collection::vec(-5.0..5.0f64, 64),
        valid in prop::collection::vec(prop::option::of(0.1..3.0f64), 64),
    ) {
        let mut target = SparseDepthMap::empty(8, 8);
        for (i, v) in valid.iter().enumerate() {
            if let Some(d) = v {
                target.splat((i % 8) as u32, (i / 8) as u32, *d);
            }
        }
        prop_assume!(target.valid_count() > 0);
        let perturbed: Vec<f64> = pred.iter().zip(&noise).zip(target.depths())
            .map(|((p, n), t)| if t.is_nan() { p + n } else { *p })
            .collect();
        for reduction in [AuxReduction::Mean, AuxReduction::Sum] {
            let (mut g1, mut g2) = (vec![0.0; 64], vec![0.0; 64]);
            let l1 = masked_huber(&pred, &target, 0.1, reduction, Some(&mut g1)).unwrap();
            let l2 = masked_huber(&perturbed, &target, 0.1, reduction, Some(&mut g2)).unwrap();
            prop_assert_eq!(l1.to_bits(), l2.to_bits());
            prop_assert_eq!(g1, g2);
        }
    }
}
