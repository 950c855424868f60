//! Scale recovery from a reference line parallel to the camera trajectory, and
//! the mapping of a reconstruction into the shared world frame.
//!
//! A reconstruction of a passing vehicle by a fixed camera looks like a static
//! object filmed by a camera that moves along a straight trajectory `t`. Its
//! overall scale is arbitrary. A scene line parallel to `t` whose endpoints
//! `P1` (far) and `P2` (near) are annotated in the first image fixes the scale:
//! with the line length as unit, the angles between `t` and the rays to `P1`
//! and `P2` determine the along-track offset `a` of `P2`, the perpendicular
//! distance `d` of the line from the trajectory and the distances `d1c`, `d2c`
//! from the camera to both endpoints.
//!
//! ```text
//!   tan(beta)  = d / a
//!   tan(alpha) = d / (a + 1)      =>   a = tan(alpha) / (tan(beta) - tan(alpha))
//! ```

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::{GeometryError, PinholeCamera, Ray, VehicleModel3D};

const DEGENERATE_TAN: f64 = 1e-12;

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum AlignError {
    #[error("degenerate reference geometry: {0}")]
    DegenerateGeometry(String),
    #[error("ray angles must satisfy 0 < alpha < beta < pi/2 (alpha = {alpha}, beta = {beta})")]
    InvalidAngles { alpha: f64, beta: f64 },
    #[error("need at least 2 cameras, got {0}")]
    TooFewCameras(usize),
    #[error("invalid reference line: {0}")]
    InvalidReference(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// The two reference-line endpoints as seen in the first camera.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RefLineJson", into = "RefLineJson")]
pub struct ReferenceLineObservation {
    pixel_p1: Vector2<f64>,
    pixel_p2: Vector2<f64>,
}

impl ReferenceLineObservation {
    /// `p1` is the endpoint farther along the trajectory.
    pub fn new(pixel_p1: Vector2<f64>, pixel_p2: Vector2<f64>) -> Result<Self, AlignError> {
        if !pixel_p1
            .iter()
            .chain(pixel_p2.iter())
            .all(|v| v.is_finite())
        {
            return Err(AlignError::InvalidReference("non-finite pixel".into()));
        }
        if pixel_p1 == pixel_p2 {
            return Err(AlignError::InvalidReference("endpoints coincide".into()));
        }
        Ok(Self { pixel_p1, pixel_p2 })
    }

    pub fn pixel_p1(&self) -> Vector2<f64> {
        self.pixel_p1
    }

    pub fn pixel_p2(&self) -> Vector2<f64> {
        self.pixel_p2
    }
}

#[derive(Serialize, Deserialize)]
struct RefLineJson {
    p1: [f64; 2],
    p2: [f64; 2],
}

impl TryFrom<RefLineJson> for ReferenceLineObservation {
    type Error = AlignError;

    fn try_from(j: RefLineJson) -> Result<Self, Self::Error> {
        Self::new(Vector2::from(j.p1), Vector2::from(j.p2))
    }
}

impl From<ReferenceLineObservation> for RefLineJson {
    fn from(o: ReferenceLineObservation) -> Self {
        RefLineJson {
            p1: [o.pixel_p1.x, o.pixel_p1.y],
            p2: [o.pixel_p2.x, o.pixel_p2.y],
        }
    }
}

/// Every intermediate quantity of the scale recovery. Lengths are in units of
/// the reference line length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleSolution {
    pub alpha_rad: f64,
    pub beta_rad: f64,
    /// Along-track distance from the camera to the foot of `P2`.
    pub a: f64,
    /// Distance between the reference line and the trajectory.
    pub d: f64,
    /// Camera to `P1`.
    pub d1c: f64,
    /// Camera to `P2`.
    pub d2c: f64,
    pub scale: f64,
}

/// Solves the reference-line triangle for rays `r1` (to `P1`) and `r2` (to
/// `P2`) that leave the same camera center, given the unit trajectory
/// direction `t`.
pub fn solve_scale(t: &Vector3<f64>, r1: &Ray, r2: &Ray) -> Result<ScaleSolution, AlignError> {
    if ((t.norm() - 1.0).abs()) > 1e-9 {
        return Err(AlignError::DegenerateGeometry(format!(
            "trajectory direction is not unit length (|t| = {})",
            t.norm()
        )));
    }
    if (r1.origin - r2.origin).norm() > 1e-9 * (1.0 + r1.origin.norm()) {
        return Err(AlignError::DegenerateGeometry(
            "rays do not share an origin".into(),
        ));
    }
    let angle = |r: &Ray| {
        let c = t.dot(&r.direction) / (t.norm() * r.direction.norm());
        c.clamp(-1.0, 1.0).acos()
    };
    let alpha = angle(r1);
    let beta = angle(r2);
    let (tan_a, tan_b) = (alpha.tan(), beta.tan());
    if !((tan_b - tan_a).abs() >= DEGENERATE_TAN) {
        return Err(AlignError::DegenerateGeometry(format!(
            "rays are parallel (|tan(beta) - tan(alpha)| = {:e})",
            (tan_b - tan_a).abs()
        )));
    }
    let quarter = std::f64::consts::FRAC_PI_2;
    if !(alpha > 0.0 && beta < quarter && alpha < beta) {
        return Err(AlignError::InvalidAngles { alpha, beta });
    }
    let a = tan_a / (tan_b - tan_a);
    let d = tan_b * a;
    let d1c = d.hypot(a + 1.0);
    let d2c = d.hypot(a);
    Ok(ScaleSolution {
        alpha_rad: alpha,
        beta_rad: beta,
        a,
        d,
        d1c,
        d2c,
        scale: 1.0 / d1c,
    })
}

/// Which length becomes the unit of the aligned frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleReference {
    /// The first camera is at distance 1 from `P1`.
    #[default]
    CameraToP1,
    /// The reference line has length 1.
    LineLength,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AlignOptions {
    /// Overrides the trajectory direction estimated from the camera centers.
    pub trajectory: Option<[f64; 3]>,
    pub scale_reference: ScaleReference,
}

/// A reconstruction mapped into the shared world frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedScene {
    pub model: VehicleModel3D,
    pub cameras: Vec<PinholeCamera>,
    pub solution: ScaleSolution,
    /// Total factor applied to input lengths.
    pub scale: f64,
    /// First camera center in the input frame; subtracted before scaling.
    pub origin: Vector3<f64>,
    /// Recovered reference endpoints in the aligned frame.
    pub p1: Vector3<f64>,
    pub p2: Vector3<f64>,
}

/// Unit vector from the first to the last camera center.
pub fn estimate_trajectory(cameras: &[PinholeCamera]) -> Result<Vector3<f64>, AlignError> {
    let (first, last) = match cameras {
        [first, .., last] => (first, last),
        _ => return Err(AlignError::TooFewCameras(cameras.len())),
    };
    let span = last.center() - first.center();
    if span.norm() <= 1e-12 {
        return Err(AlignError::DegenerateGeometry(
            "first and last camera centers coincide".into(),
        ));
    }
    Ok(span.normalize())
}

/// Moves the first camera center to the origin and rescales model and cameras
/// so that reconstructions of different scale become comparable.
///
/// The reference line length is identified with the mean spacing of
/// consecutive camera centers, which converts the line-unit distances of the
/// [`ScaleSolution`] into input units. Rotations are unchanged.
pub fn align_to_world(
    model: &VehicleModel3D,
    cameras: &[PinholeCamera],
    obs: &ReferenceLineObservation,
    options: &AlignOptions,
) -> Result<AlignedScene, AlignError> {
    if cameras.len() < 2 {
        return Err(AlignError::TooFewCameras(cameras.len()));
    }
    let first = &cameras[0];
    let origin = first.center();
    let span = cameras[cameras.len() - 1].center() - origin;
    let step = span.norm() / (cameras.len() - 1) as f64;
    if step <= 1e-12 {
        return Err(AlignError::DegenerateGeometry(
            "camera centers do not move".into(),
        ));
    }
    let t = match options.trajectory {
        Some(t) => Vector3::from(t).normalize(),
        None => estimate_trajectory(cameras)?,
    };
    let r1 = first.cast_ray(&obs.pixel_p1);
    let r2 = first.cast_ray(&obs.pixel_p2);
    let solution = solve_scale(&t, &r1, &r2)?;

    let unit = match options.scale_reference {
        ScaleReference::CameraToP1 => solution.d1c * step,
        ScaleReference::LineLength => step,
    };
    let scale = 1.0 / unit;
    let map = |p: &Vector3<f64>| (p - origin) * scale;
    let model = model
        .apply_similarity(1.0, &-origin)?
        .apply_similarity(scale, &Vector3::zeros())?;
    let cameras = cameras
        .iter()
        .map(|c| c.with_center(map(&c.center())))
        .collect();
    let p1 = r1.direction * (solution.d1c * step * scale);
    let p2 = r2.direction * (solution.d2c * step * scale);
    Ok(AlignedScene {
        model,
        cameras,
        solution,
        scale,
        origin,
        p1,
        p2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Segment3;
    use approx::assert_relative_eq;

    fn ray_to(p: Vector3<f64>) -> Ray {
        Ray::new(Vector3::zeros(), p)
    }

    #[test]
    fn constructed_right_triangle() {
        let s = solve_scale(
            &Vector3::x(),
            &ray_to(Vector3::new(2.0, 0.0, 1.0)),
            &ray_to(Vector3::new(1.0, 0.0, 1.0)),
        )
        .unwrap();
        assert_relative_eq!(s.alpha_rad, (2.0 / 5f64.sqrt()).acos(), epsilon = 1e-12);
        assert_relative_eq!(s.alpha_rad, 0.463648, epsilon = 1e-6);
        assert_relative_eq!(s.beta_rad, std::f64::consts::FRAC_PI_4, epsilon = 1e-12);
        assert_relative_eq!(s.a, 1.0, epsilon = 1e-12);
        assert_relative_eq!(s.d, 1.0, epsilon = 1e-12);
        assert_relative_eq!(s.d1c, 5f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(s.d2c, 2f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(s.scale, 1.0 / 5f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn solution_depends_only_on_directions() {
        let t = Vector3::x();
        let a = solve_scale(
            &t,
            &ray_to(Vector3::new(2.0, 0.0, 1.0)),
            &ray_to(Vector3::new(1.0, 0.0, 1.0)),
        )
        .unwrap();
        let b = solve_scale(
            &t,
            &ray_to(Vector3::new(6.0, 0.0, 3.0)),
            &ray_to(Vector3::new(3.0, 0.0, 3.0)),
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn parallel_rays_are_degenerate() {
        let r = ray_to(Vector3::new(1.0, 0.0, 1.0));
        assert!(matches!(
            solve_scale(&Vector3::x(), &r, &r),
            Err(AlignError::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn swapped_endpoints_rejected() {
        assert!(matches!(
            solve_scale(
                &Vector3::x(),
                &ray_to(Vector3::new(1.0, 0.0, 1.0)),
                &ray_to(Vector3::new(2.0, 0.0, 1.0)),
            ),
            Err(AlignError::InvalidAngles { .. })
        ));
        // behind the camera with respect to the trajectory
        assert!(matches!(
            solve_scale(
                &Vector3::x(),
                &ray_to(Vector3::new(-2.0, 0.0, 1.0)),
                &ray_to(Vector3::new(-1.0, 0.0, 1.0)),
            ),
            Err(AlignError::InvalidAngles { .. })
        ));
    }

    #[test]
    fn triangle_relations_hold() {
        let s = solve_scale(
            &Vector3::new(0.0, 0.6, 0.8),
            &ray_to(Vector3::new(0.3, 2.9, 3.1)),
            &ray_to(Vector3::new(0.3, 1.2, 1.4)),
        )
        .unwrap();
        let (ta, tb) = (s.alpha_rad.tan(), s.beta_rad.tan());
        assert_relative_eq!(tb * s.a, ta * (s.a + 1.0), max_relative = 1e-9);
        assert!((tb - s.d / s.a).abs() < 1e-9);
        assert!((ta - s.d / (s.a + 1.0)).abs() < 1e-9);
        assert_relative_eq!(
            s.d1c * s.d1c,
            s.d * s.d + (s.a + 1.0).powi(2),
            max_relative = 1e-9
        );
        assert_relative_eq!(s.scale * s.d1c, 1.0, max_relative = 1e-12);
    }

    /// Cameras on the x axis spaced by `step`, reference line through
    /// (-(a+1)*step, 0, d*step) and (-a*step, 0, d*step), trajectory toward -x.
    fn scene(step: f64, a: f64, d: f64) -> (Vec<PinholeCamera>, ReferenceLineObservation) {
        let rot = crate::geometry::look_rotation(
            &Vector3::new(-1.0, 0.0, 1.0),
            &Vector3::new(0.0, 1.0, 0.0),
        );
        let base = PinholeCamera::new(
            100.0,
            Vector2::new(32.0, 32.0),
            rot,
            Vector3::zeros(),
            64,
            64,
        )
        .unwrap();
        let cameras: Vec<_> = (0..4)
            .map(|k| base.with_center(Vector3::new(-(k as f64) * step, 0.0, 0.0)))
            .collect();
        let p1 = Vector3::new(-(a + 1.0) * step, 0.0, d * step);
        let p2 = Vector3::new(-a * step, 0.0, d * step);
        let obs = ReferenceLineObservation::new(
            base.project_unbounded(&p1).unwrap(),
            base.project_unbounded(&p2).unwrap(),
        )
        .unwrap();
        (cameras, obs)
    }

    #[test]
    fn aligned_frame_has_unit_distance_to_p1() {
        let (cameras, obs) = scene(0.5, 1.0, 1.5);
        let model = VehicleModel3D::new(
            vec![Vector3::new(-1.0, 0.2, 2.0)],
            vec![Segment3::new(
                Vector3::new(-1.0, 0.0, 2.0),
                Vector3::new(-2.0, 0.0, 2.0),
            )],
        )
        .unwrap();
        let out = align_to_world(&model, &cameras, &obs, &AlignOptions::default()).unwrap();
        assert_eq!(out.cameras[0].center(), Vector3::zeros());
        assert_relative_eq!(out.solution.a, 1.0, max_relative = 1e-9);
        assert_relative_eq!(out.solution.d, 1.5, max_relative = 1e-9);
        assert_relative_eq!(out.p1.norm(), 1.0, epsilon = 1e-9);
        // the recovered P1 is the constructed one mapped through the same similarity
        let truth = Vector3::new(-2.0 * 0.5, 0.0, 1.5 * 0.5) * out.scale;
        assert_relative_eq!(out.p1, truth, epsilon = 1e-9);
        assert_eq!(out.cameras[2].rotation(), cameras[2].rotation());

        let opts = AlignOptions {
            scale_reference: ScaleReference::LineLength,
            ..Default::default()
        };
        let out = align_to_world(&model, &cameras, &obs, &opts).unwrap();
        assert_relative_eq!((out.p1 - out.p2).norm(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn unit_scene_is_unchanged() {
        // d1c = sqrt(1.5^2 + 2^2) = 2.5, camera step 0.4 -> total scale 1
        let (cameras, obs) = scene(0.4, 1.0, 1.5);
        let model = VehicleModel3D::new(
            vec![Vector3::new(-1.0, 0.2, 2.0), Vector3::new(0.5, 0.5, 3.0)],
            vec![],
        )
        .unwrap();
        let out = align_to_world(&model, &cameras, &obs, &AlignOptions::default()).unwrap();
        assert_relative_eq!(out.scale, 1.0, epsilon = 1e-12);
        for (a, b) in out.model.points.iter().zip(&model.points) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
        for (a, b) in out.cameras.iter().zip(&cameras) {
            assert_relative_eq!(a.center(), b.center(), epsilon = 1e-12);
        }
    }

    #[test]
    fn invariant_to_global_scale() {
        let (cameras, obs) = scene(1.0, 0.7, 2.0);
        let model = VehicleModel3D::new(
            vec![Vector3::new(-3.0, 0.4, 5.0), Vector3::new(-2.0, -0.3, 4.0)],
            vec![Segment3::new(
                Vector3::new(-3.0, 0.0, 5.0),
                Vector3::new(-4.0, 0.0, 5.0),
            )],
        )
        .unwrap();
        let k = 7.3;
        let shift = Vector3::new(0.3, -2.0, 11.0);
        let scaled_model = model.apply_similarity(k, &shift).unwrap();
        let scaled_cams: Vec<_> = cameras
            .iter()
            .map(|c| c.with_center(c.center() * k + shift))
            .collect();
        let a = align_to_world(&model, &cameras, &obs, &AlignOptions::default()).unwrap();
        let b =
            align_to_world(&scaled_model, &scaled_cams, &obs, &AlignOptions::default()).unwrap();
        for (p, q) in a.model.points.iter().zip(&b.model.points) {
            assert_relative_eq!(p, q, epsilon = 1e-9);
        }
        for (p, q) in a.cameras.iter().zip(&b.cameras) {
            assert_relative_eq!(p.center(), q.center(), epsilon = 1e-9);
        }
    }

    #[test]
    fn too_few_cameras() {
        let (cameras, obs) = scene(1.0, 1.0, 1.0);
        assert_eq!(
            align_to_world(
                &VehicleModel3D::default(),
                &cameras[..1],
                &obs,
                &Default::default()
            ),
            Err(AlignError::TooFewCameras(1))
        );
    }

    #[test]
    fn refline_json() {
        let obs =
            ReferenceLineObservation::new(Vector2::new(1.0, 2.0), Vector2::new(3.0, 4.0)).unwrap();
        let s = serde_json::to_string(&obs).unwrap();
        assert_eq!(s, r#"{"p1":[1.0,2.0],"p2":[3.0,4.0]}"#);
        assert_eq!(
            serde_json::from_str::<ReferenceLineObservation>(&s).unwrap(),
            obs
        );
        assert!(
            serde_json::from_str::<ReferenceLineObservation>(r#"{"p1":[1,1],"p2":[1,1]}"#).is_err()
        );
    }
}
