//! Pinhole camera, rays and the sparse vehicle model shared by every stage.
//!
//! Conventions used throughout the crate:
//!
//! - `rotation` maps world to camera: `p_cam = R (p_world - center)`.
//! - The camera looks down `+z`, `+x` is image right (`u`), `+y` is image
//!   down (`v`).
//! - Pixel `(0, 0)` is the top-left pixel and pixel centers sit on integer
//!   coordinates, so the image covers `[0, width) x [0, height)`.
//! - No lens distortion.

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

/// Camera-frame depth below which a point counts as behind the camera.
pub const MIN_CAMERA_DEPTH: f64 = 1e-9;

const ORTHONORMAL_TOL: f64 = 1e-9;

#[derive(thiserror::Error, Debug, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),
    #[error("pixel ({0}, {1}) is outside the image")]
    OutsideImage(f64, f64),
    #[error("scale must be positive, got {0}")]
    NonPositiveScale(f64),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
}

/// Calibrated, distortion-free pinhole camera with a world pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraJson", into = "CameraJson")]
pub struct PinholeCamera {
    focal: f64,
    principal: Vector2<f64>,
    rotation: Matrix3<f64>,
    center: Vector3<f64>,
    width: u32,
    height: u32,
}

/// Result of projecting a point that lands inside the image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub pixel: Vector2<f64>,
    /// Depth along the optical axis of this camera.
    pub z_cam: f64,
    /// Euclidean distance of the point to the world origin. After alignment the
    /// origin is the first camera center, which makes this the stored depth.
    pub depth: f64,
}

impl PinholeCamera {
    pub fn new(
        focal: f64,
        principal: Vector2<f64>,
        rotation: Matrix3<f64>,
        center: Vector3<f64>,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        if !(focal.is_finite() && focal > 0.0) {
            return Err(GeometryError::InvalidCamera(format!(
                "focal length {focal}"
            )));
        }
        if width == 0 || height == 0 {
            return Err(GeometryError::InvalidCamera(format!(
                "image size {width}x{height}"
            )));
        }
        if !principal.iter().chain(center.iter()).all(|v| v.is_finite()) {
            return Err(GeometryError::InvalidCamera("non-finite parameters".into()));
        }
        let gram = rotation.transpose() * rotation;
        let off = (gram - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        if !(off <= ORTHONORMAL_TOL && (det - 1.0).abs() <= ORTHONORMAL_TOL) {
            return Err(GeometryError::InvalidCamera(format!(
                "rotation is not a proper rotation (|RtR - I| = {off:e}, det = {det})"
            )));
        }
        Ok(Self {
            focal,
            principal,
            rotation,
            center,
            width,
            height,
        })
    }

    /// Camera at `center` with identity orientation (looking down world `+z`).
    pub fn axis_aligned(
        focal: f64,
        principal: Vector2<f64>,
        center: Vector3<f64>,
        width: u32,
        height: u32,
    ) -> Result<Self, GeometryError> {
        Self::new(focal, principal, Matrix3::identity(), center, width, height)
    }

    pub fn focal(&self) -> f64 {
        self.focal
    }

    pub fn principal(&self) -> Vector2<f64> {
        self.principal
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn center(&self) -> Vector3<f64> {
        self.center
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Same intrinsics and orientation, different center.
    pub fn with_center(&self, center: Vector3<f64>) -> Self {
        Self {
            center,
            ..self.clone()
        }
    }

    pub fn to_camera_frame(&self, point: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * (point - self.center)
    }

    /// Pixel coordinates of a camera-frame point, without any bounds check.
    pub fn pixel_of_camera_point(&self, pc: &Vector3<f64>) -> Vector2<f64> {
        self.principal + Vector2::new(pc.x / pc.z, pc.y / pc.z) * self.focal
    }

    /// Projects a world point without checking the image bounds. Only fails
    /// for points at or behind the camera plane.
    pub fn project_unbounded(&self, point: &Vector3<f64>) -> Result<Vector2<f64>, GeometryError> {
        let pc = self.to_camera_frame(point);
        if pc.z <= MIN_CAMERA_DEPTH {
            return Err(GeometryError::BehindCamera(pc.z));
        }
        Ok(self.pixel_of_camera_point(&pc))
    }

    pub fn contains_pixel(&self, pixel: &Vector2<f64>) -> bool {
        pixel.x >= 0.0
            && pixel.y >= 0.0
            && pixel.x < f64::from(self.width)
            && pixel.y < f64::from(self.height)
    }

    /// Projects a world point into the image.
    pub fn project_point(&self, point: &Vector3<f64>) -> Result<Projection, GeometryError> {
        let pc = self.to_camera_frame(point);
        if pc.z <= MIN_CAMERA_DEPTH {
            return Err(GeometryError::BehindCamera(pc.z));
        }
        let pixel = self.pixel_of_camera_point(&pc);
        if !self.contains_pixel(&pixel) {
            return Err(GeometryError::OutsideImage(pixel.x, pixel.y));
        }
        Ok(Projection {
            pixel,
            z_cam: pc.z,
            depth: point.norm(),
        })
    }

    /// Ray from the camera center through `pixel`. The pixel may lie outside
    /// the image.
    pub fn cast_ray(&self, pixel: &Vector2<f64>) -> Ray {
        let offset = (pixel - self.principal) / self.focal;
        let dir_cam = Vector3::new(offset.x, offset.y, 1.0);
        Ray::new(self.center, self.rotation.transpose() * dir_cam)
    }
}

#[derive(Serialize, Deserialize)]
struct CameraJson {
    focal: f64,
    principal: [f64; 2],
    rotation: [f64; 9],
    center: [f64; 3],
    width: u32,
    height: u32,
}

impl TryFrom<CameraJson> for PinholeCamera {
    type Error = GeometryError;

    fn try_from(j: CameraJson) -> Result<Self, Self::Error> {
        PinholeCamera::new(
            j.focal,
            Vector2::from(j.principal),
            Matrix3::from_row_slice(&j.rotation),
            Vector3::from(j.center),
            j.width,
            j.height,
        )
    }
}

impl From<PinholeCamera> for CameraJson {
    fn from(c: PinholeCamera) -> Self {
        let r = c.rotation;
        CameraJson {
            focal: c.focal,
            principal: [c.principal.x, c.principal.y],
            rotation: [
                r[(0, 0)],
                r[(0, 1)],
                r[(0, 2)],
                r[(1, 0)],
                r[(1, 1)],
                r[(1, 2)],
                r[(2, 0)],
                r[(2, 1)],
                r[(2, 2)],
            ],
            center: [c.center.x, c.center.y, c.center.z],
            width: c.width,
            height: c.height,
        }
    }
}

/// Half-line with a unit direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vector3<f64>,
    pub direction: Vector3<f64>,
}

impl Ray {
    /// Normalizes `direction`.
    pub fn new(origin: Vector3<f64>, direction: Vector3<f64>) -> Self {
        Self {
            origin,
            direction: direction.normalize(),
        }
    }

    pub fn at(&self, t: f64) -> Vector3<f64> {
        self.origin + self.direction * t
    }
}

/// A 3D line segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[[f64; 3]; 2]", into = "[[f64; 3]; 2]")]
pub struct Segment3 {
    pub a: Vector3<f64>,
    pub b: Vector3<f64>,
}

impl Segment3 {
    pub fn new(a: Vector3<f64>, b: Vector3<f64>) -> Self {
        Self { a, b }
    }

    pub fn length(&self) -> f64 {
        (self.b - self.a).norm()
    }
}

impl From<[[f64; 3]; 2]> for Segment3 {
    fn from(v: [[f64; 3]; 2]) -> Self {
        Self::new(Vector3::from(v[0]), Vector3::from(v[1]))
    }
}

impl From<Segment3> for [[f64; 3]; 2] {
    fn from(s: Segment3) -> Self {
        [[s.a.x, s.a.y, s.a.z], [s.b.x, s.b.y, s.b.z]]
    }
}

/// Sparse reconstruction: points and 3D line segments in one frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VehicleModel3D {
    pub points: Vec<Vector3<f64>>,
    pub lines: Vec<Segment3>,
}

impl VehicleModel3D {
    pub fn new(points: Vec<Vector3<f64>>, lines: Vec<Segment3>) -> Result<Self, GeometryError> {
        let model = Self { points, lines };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let finite = |p: &Vector3<f64>| p.iter().all(|v| v.is_finite());
        if !self.points.iter().all(finite) {
            return Err(GeometryError::InvalidModel("non-finite point".into()));
        }
        for (i, s) in self.lines.iter().enumerate() {
            if !(finite(&s.a) && finite(&s.b)) {
                return Err(GeometryError::InvalidModel(format!("non-finite line {i}")));
            }
            if s.length() <= 1e-12 {
                return Err(GeometryError::InvalidModel(format!(
                    "line {i} has coincident endpoints"
                )));
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty() && self.lines.is_empty()
    }

    /// Maps every point and endpoint `p` to `scale * p + translation`.
    pub fn apply_similarity(
        &self,
        scale: f64,
        translation: &Vector3<f64>,
    ) -> Result<Self, GeometryError> {
        if !(scale > 0.0) {
            return Err(GeometryError::NonPositiveScale(scale));
        }
        let map = |p: &Vector3<f64>| p * scale + translation;
        Ok(Self {
            points: self.points.iter().map(map).collect(),
            lines: self
                .lines
                .iter()
                .map(|s| Segment3::new(map(&s.a), map(&s.b)))
                .collect(),
        })
    }

    /// Axis-aligned bounding box `(min, max)` over points and line endpoints.
    pub fn bounds(&self) -> Option<(Vector3<f64>, Vector3<f64>)> {
        let mut all = self
            .points
            .iter()
            .chain(self.lines.iter().flat_map(|s| [&s.a, &s.b]));
        let first = *all.next()?;
        Some(all.fold((first, first), |(lo, hi), p| (lo.inf(p), hi.sup(p))))
    }
}

/// Rotation whose optical axis points along `forward`, with image-down as
/// close as possible to `down`.
pub fn look_rotation(forward: &Vector3<f64>, down: &Vector3<f64>) -> Matrix3<f64> {
    let z = forward.normalize();
    let x = down.cross(&z).normalize();
    let y = z.cross(&x);
    Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cam64() -> PinholeCamera {
        PinholeCamera::axis_aligned(100.0, Vector2::new(32.0, 32.0), Vector3::zeros(), 64, 64)
            .unwrap()
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let p = cam64().project_point(&Vector3::new(0.0, 0.0, 2.0)).unwrap();
        assert_eq!(p.pixel, Vector2::new(32.0, 32.0));
        assert_eq!(p.z_cam, 2.0);
        assert_eq!(p.depth, 2.0);
    }

    #[test]
    fn point_behind_camera() {
        assert!(matches!(
            cam64().project_point(&Vector3::new(0.0, 0.0, -1.0)),
            Err(GeometryError::BehindCamera(_))
        ));
    }

    #[test]
    fn point_outside_image() {
        let cam = cam64();
        let pixel = cam.project_unbounded(&Vector3::new(1.0, 0.0, 2.0)).unwrap();
        assert_eq!(pixel, Vector2::new(82.0, 32.0));
        assert_eq!(
            cam.project_point(&Vector3::new(1.0, 0.0, 2.0)),
            Err(GeometryError::OutsideImage(82.0, 32.0))
        );
    }

    #[test]
    fn rays_through_known_pixels() {
        let cam = cam64();
        let r = cam.cast_ray(&Vector2::new(32.0, 32.0));
        assert_eq!(r.origin, Vector3::zeros());
        assert_relative_eq!(r.direction, Vector3::new(0.0, 0.0, 1.0), epsilon = 1e-15);
        let r = cam.cast_ray(&Vector2::new(132.0, 32.0));
        let expected = Vector3::new(1.0, 0.0, 1.0).normalize();
        assert_relative_eq!(r.direction, expected, epsilon = 1e-15);
        assert_relative_eq!(r.direction.norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn ray_round_trip_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let rot = look_rotation(&Vector3::new(0.3, 0.4, 1.0), &Vector3::new(0.0, 1.0, 0.0));
        let cam = PinholeCamera::new(
            250.0,
            Vector2::new(40.0, 30.0),
            rot,
            Vector3::new(1.0, -2.0, 0.5),
            80,
            60,
        )
        .unwrap();
        for _ in 0..100 {
            let p = Vector3::new(
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
                rng.random_range(-5.0..5.0),
            );
            let Ok(pixel) = cam.project_unbounded(&p) else {
                continue;
            };
            let ray = cam.cast_ray(&pixel);
            let t = (p - ray.origin).dot(&ray.direction);
            assert!((ray.at(t) - p).norm() < 1e-9);
            for lambda in [0.1, 1.0, 17.0] {
                let back = cam.project_unbounded(&ray.at(lambda)).unwrap();
                assert!((back - pixel).norm() < 1e-6);
            }
        }
    }

    #[test]
    fn rejects_bad_rotation() {
        let skew = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(matches!(
            PinholeCamera::new(100.0, Vector2::zeros(), skew, Vector3::zeros(), 4, 4),
            Err(GeometryError::InvalidCamera(_))
        ));
        let reflection = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(
            PinholeCamera::new(100.0, Vector2::zeros(), reflection, Vector3::zeros(), 4, 4)
                .is_err()
        );
        assert!(
            PinholeCamera::axis_aligned(0.0, Vector2::zeros(), Vector3::zeros(), 4, 4).is_err()
        );
        assert!(
            PinholeCamera::axis_aligned(1.0, Vector2::zeros(), Vector3::zeros(), 0, 4).is_err()
        );
    }

    #[test]
    fn camera_json_layout() {
        let cam = cam64().with_center(Vector3::new(1.0, 2.0, 3.0));
        let v: serde_json::Value = serde_json::to_value(&cam).unwrap();
        assert_eq!(v["focal"], 100.0);
        assert_eq!(v["principal"], serde_json::json!([32.0, 32.0]));
        assert_eq!(v["rotation"].as_array().unwrap().len(), 9);
        assert_eq!(v["center"], serde_json::json!([1.0, 2.0, 3.0]));
        assert_eq!(v["width"], 64);
        let back: PinholeCamera = serde_json::from_value(v).unwrap();
        assert_eq!(back, cam);
    }

    #[test]
    fn similarity_examples() {
        let m = VehicleModel3D::new(
            vec![Vector3::new(1.0, 2.0, 3.0)],
            vec![Segment3::new(Vector3::zeros(), Vector3::x())],
        )
        .unwrap();
        assert_eq!(m.apply_similarity(1.0, &Vector3::zeros()).unwrap(), m);
        let out = m
            .apply_similarity(2.0, &Vector3::new(0.0, 0.0, 1.0))
            .unwrap();
        assert_eq!(out.points[0], Vector3::new(2.0, 4.0, 7.0));
        assert_eq!(out.lines.len(), 1);
        assert_eq!(
            m.apply_similarity(0.0, &Vector3::zeros()),
            Err(GeometryError::NonPositiveScale(0.0))
        );
    }

    #[test]
    fn model_rejects_degenerate_line() {
        let p = Vector3::new(1.0, 1.0, 1.0);
        assert!(VehicleModel3D::new(vec![], vec![Segment3::new(p, p)]).is_err());
        assert!(VehicleModel3D::new(vec![Vector3::new(f64::NAN, 0.0, 0.0)], vec![]).is_err());
    }

    #[test]
    fn look_rotation_is_proper() {
        let r = look_rotation(&Vector3::new(-1.0, 0.5, 2.0), &Vector3::new(0.0, 0.0, -1.0));
        assert_relative_eq!(r.transpose() * r, Matrix3::identity(), epsilon = 1e-12);
        assert_relative_eq!(r.determinant(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(
            r * Vector3::new(-1.0, 0.5, 2.0).normalize(),
            Vector3::z(),
            epsilon = 1e-12
        );
    }
}
