//! Sparse depth maps rendered from an aligned model.
//!
//! Every written pixel stores the Euclidean distance of the 3D primitive to
//! the world origin, which after alignment is the first camera center. The
//! same convention holds for every frame of a sequence. Conflicts keep the
//! smaller depth.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::{PinholeCamera, Segment3, VehicleModel3D};

/// Camera-frame depth at which line segments are clipped.
pub const NEAR_CLIP: f64 = 1e-6;

const MAGIC: &[u8; 4] = b"SDM1";
const HEADER_LEN: usize = 12;
/// Canonical quiet NaN written for invalid pixels.
const INVALID_BITS: u32 = 0x7FC0_0000;

#[derive(thiserror::Error, Debug)]
pub enum ReprojectError {
    #[error("model has no {0} to reproject")]
    EmptyModel(&'static str),
    #[error("malformed depth map file: {0}")]
    MalformedFile(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("png export: {0}")]
    Image(#[from] image::ImageError),
}

/// Which primitives of the model are rendered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReprojectionVariant {
    Points,
    Lines,
    PointsAndLines,
}

impl ReprojectionVariant {
    pub const ALL: [ReprojectionVariant; 3] = [Self::Lines, Self::Points, Self::PointsAndLines];

    pub fn uses_points(self) -> bool {
        matches!(self, Self::Points | Self::PointsAndLines)
    }

    pub fn uses_lines(self) -> bool {
        matches!(self, Self::Lines | Self::PointsAndLines)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Points => "points",
            Self::Lines => "lines",
            Self::PointsAndLines => "points+lines",
        }
    }
}

impl std::str::FromStr for ReprojectionVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "points" => Ok(Self::Points),
            "lines" => Ok(Self::Lines),
            "both" | "points_and_lines" | "points+lines" => Ok(Self::PointsAndLines),
            other => Err(format!("unknown variant {other:?} (points|lines|both)")),
        }
    }
}

/// Per-pixel depth with NaN marking pixels without a measurement.
#[derive(Debug, Clone)]
pub struct SparseDepthMap {
    width: u32,
    height: u32,
    depth: Vec<f64>,
}

/// Equal when the sizes match and every pixel is bit-identical, so invalid
/// pixels compare equal to each other.
impl PartialEq for SparseDepthMap {
    fn eq(&self, other: &Self) -> bool {
        self.width == other.width
            && self.height == other.height
            && self
                .depth
                .iter()
                .zip(&other.depth)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl SparseDepthMap {
    /// All pixels invalid.
    pub fn empty(width: u32, height: u32) -> Self {
        assert!(
            width > 0 && height > 0,
            "depth map dimensions must be positive"
        );
        Self {
            width,
            height,
            depth: vec![f64::NAN; width as usize * height as usize],
        }
    }

    pub fn for_camera(camera: &PinholeCamera) -> Self {
        Self::empty(camera.width(), camera.height())
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    fn index(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    /// Depth at `(x, y)` or `None` when the pixel is invalid.
    pub fn get(&self, x: u32, y: u32) -> Option<f64> {
        let v = self.depth[self.index(x, y)];
        (!v.is_nan()).then_some(v)
    }

    pub fn is_valid(&self, x: u32, y: u32) -> bool {
        self.get(x, y).is_some()
    }

    /// Row-major depths; invalid pixels are NaN.
    pub fn depths(&self) -> &[f64] {
        &self.depth
    }

    pub fn valid_mask(&self) -> Vec<bool> {
        self.depth.iter().map(|v| !v.is_nan()).collect()
    }

    pub fn valid_count(&self) -> usize {
        self.depth.iter().filter(|v| !v.is_nan()).count()
    }

    pub fn valid_fraction(&self) -> f64 {
        self.valid_count() as f64 / self.depth.len() as f64
    }

    /// Writes `depth` at `(x, y)` unless a smaller depth is already stored.
    pub fn splat(&mut self, x: u32, y: u32, depth: f64) {
        debug_assert!(depth.is_finite() && depth > 0.0);
        let i = self.index(x, y);
        let cur = self.depth[i];
        if cur.is_nan() || depth < cur {
            self.depth[i] = depth;
        }
    }

    /// Per-pixel minimum of two maps of equal size.
    pub fn merge_min(&self, other: &SparseDepthMap) -> SparseDepthMap {
        assert_eq!((self.width, self.height), (other.width, other.height));
        let depth = self
            .depth
            .iter()
            .zip(&other.depth)
            .map(|(&a, &b)| match (a.is_nan(), b.is_nan()) {
                (true, _) => b,
                (_, true) => a,
                _ => a.min(b),
            })
            .collect();
        SparseDepthMap {
            width: self.width,
            height: self.height,
            depth,
        }
    }

    /// Rounds every depth to the nearest 32-bit float, the precision of the
    /// on-disk format.
    pub fn quantized(&self) -> SparseDepthMap {
        SparseDepthMap {
            width: self.width,
            height: self.height,
            depth: self.depth.iter().map(|&v| f64::from(v as f32)).collect(),
        }
    }

    /// Inclusive pixel bounding box `(x0, y0, x1, y1)` of the valid pixels.
    pub fn valid_bbox(&self) -> Option<(u32, u32, u32, u32)> {
        let mut bbox: Option<(u32, u32, u32, u32)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.is_valid(x, y) {
                    bbox = Some(match bbox {
                        None => (x, y, x, y),
                        Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
                    });
                }
            }
        }
        bbox
    }

    /// `SDM1` encoding: magic, little-endian u32 width and height, then
    /// row-major little-endian f32 depths with quiet NaN for invalid pixels.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.depth.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        for &v in &self.depth {
            let bits = if v.is_nan() {
                INVALID_BITS
            } else {
                (v as f32).to_bits()
            };
            out.extend_from_slice(&bits.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ReprojectError> {
        let bad = |m: String| ReprojectError::MalformedFile(m);
        if bytes.len() < HEADER_LEN {
            return Err(bad(format!(
                "{} bytes is shorter than the header",
                bytes.len()
            )));
        }
        if &bytes[..4] != MAGIC {
            return Err(bad(format!("bad magic {:?}", &bytes[..4])));
        }
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let (width, height) = (u32_at(4), u32_at(8));
        if width == 0 || height == 0 {
            return Err(bad(format!("dimensions {width}x{height}")));
        }
        let payload = (width as usize)
            .checked_mul(height as usize)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| bad(format!("dimensions {width}x{height} overflow")))?;
        if bytes.len() - HEADER_LEN != payload {
            return Err(bad(format!(
                "expected {payload} payload bytes for {width}x{height}, found {}",
                bytes.len() - HEADER_LEN
            )));
        }
        let depth = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| {
                let v = f32::from_le_bytes(c.try_into().unwrap());
                if v.is_nan() {
                    Ok(f64::NAN)
                } else if v.is_finite() && v > 0.0 {
                    Ok(f64::from(v))
                } else {
                    Err(bad(format!("invalid depth value {v}")))
                }
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            width,
            height,
            depth,
        })
    }

    /// Grayscale preview, brighter is farther. Invalid pixels are black and
    /// valid depths span 64..=255.
    pub fn to_preview(&self) -> image::GrayImage {
        let valid: Vec<f64> = self.depth.iter().copied().filter(|v| !v.is_nan()).collect();
        let lo = valid.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = valid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        image::GrayImage::from_fn(self.width, self.height, |x, y| match self.get(x, y) {
            None => image::Luma([0]),
            Some(v) => image::Luma([(64.0 + 191.0 * (v - lo) / span).round() as u8]),
        })
    }
}

pub fn write_depth_map(map: &SparseDepthMap, path: &Path) -> Result<(), ReprojectError> {
    let io = |source| ReprojectError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut f = fs::File::create(path).map_err(io)?;
    f.write_all(&map.to_bytes()).map_err(io)
}

pub fn read_depth_map(path: &Path) -> Result<SparseDepthMap, ReprojectError> {
    let bytes = fs::read(path).map_err(|source| ReprojectError::Io {
        path: path.display().to_string(),
        source,
    })?;
    SparseDepthMap::from_bytes(&bytes)
}

pub fn write_depth_preview(map: &SparseDepthMap, path: &Path) -> Result<(), ReprojectError> {
    map.to_preview().save(path)?;
    Ok(())
}

fn round_half_up(v: f64) -> i64 {
    (v + 0.5).floor() as i64
}

fn in_image(map: &SparseDepthMap, x: i64, y: i64) -> bool {
    x >= 0 && y >= 0 && x < i64::from(map.width) && y < i64::from(map.height)
}

/// Splats each point that projects into the image at its nearest pixel.
pub fn reproject_points(points: &[Vector3<f64>], camera: &PinholeCamera, map: &mut SparseDepthMap) {
    for p in points {
        let Ok(proj) = camera.project_point(p) else {
            continue;
        };
        let (x, y) = (round_half_up(proj.pixel.x), round_half_up(proj.pixel.y));
        if in_image(map, x, y) {
            map.splat(x as u32, y as u32, proj.depth);
        }
    }
}

/// Clips the parametric 2D segment `a + s (b - a)`, `s in [0, 1]`, to the
/// rectangle `[lo, hi]` (Liang-Barsky).
fn clip_to_rect(
    a: Vector2<f64>,
    b: Vector2<f64>,
    lo: Vector2<f64>,
    hi: Vector2<f64>,
) -> Option<(f64, f64)> {
    let d = b - a;
    let (mut s0, mut s1) = (0.0f64, 1.0f64);
    for (p, q) in [
        (-d.x, a.x - lo.x),
        (d.x, hi.x - a.x),
        (-d.y, a.y - lo.y),
        (d.y, hi.y - a.y),
    ] {
        if p == 0.0 {
            if q < 0.0 {
                return None;
            }
        } else {
            let r = q / p;
            if p < 0.0 {
                s0 = s0.max(r);
            } else {
                s1 = s1.min(r);
            }
        }
    }
    (s0 <= s1).then_some((s0, s1))
}

/// Pixels of the 8-connected line through the screen segment `a -> b`, one
/// per integer step along the major axis from `round(a)` to `round(b)`. The
/// minor coordinate is rounded from the continuous line at each step, so a
/// tiny perturbation of the endpoints only changes pixels that sit on a
/// rounding boundary.
fn line_pixels(a: Vector2<f64>, b: Vector2<f64>) -> Vec<(i64, i64)> {
    let d = b - a;
    let (major, minor) = if d.x.abs() >= d.y.abs() {
        (0, 1)
    } else {
        (1, 0)
    };
    let (m0, m1) = (round_half_up(a[major]), round_half_up(b[major]));
    if d[major] == 0.0 || m0 == m1 {
        let p = (round_half_up(a.x), round_half_up(a.y));
        return vec![p];
    }
    let step = (m1 - m0).signum();
    let mut out = Vec::with_capacity((m1 - m0).unsigned_abs() as usize + 1);
    let mut m = m0;
    loop {
        let s = ((m as f64 - a[major]) / d[major]).clamp(0.0, 1.0);
        let n = round_half_up(a[minor] + d[minor] * s);
        out.push(if major == 0 { (m, n) } else { (n, m) });
        if m == m1 {
            break;
        }
        m += step;
    }
    out
}

/// Rasterizes a 3D segment into `map`. Parts in front of the near plane are
/// drawn as an 8-connected pixel line; each pixel takes the distance to the
/// world origin of the segment point seen at that pixel, found by
/// perspective-correct interpolation.
pub fn rasterize_line(segment: &Segment3, camera: &PinholeCamera, map: &mut SparseDepthMap) {
    let mut a = segment.a;
    let mut b = segment.b;
    let za = camera.to_camera_frame(&a).z;
    let zb = camera.to_camera_frame(&b).z;
    if za < NEAR_CLIP && zb < NEAR_CLIP {
        return;
    }
    if za < NEAR_CLIP || zb < NEAR_CLIP {
        let s = (NEAR_CLIP - za) / (zb - za);
        let cut = segment.a + (segment.b - segment.a) * s;
        if za < NEAR_CLIP {
            a = cut;
        } else {
            b = cut;
        }
    }
    let ca = camera.to_camera_frame(&a);
    let cb = camera.to_camera_frame(&b);
    let (za, zb) = (ca.z.max(NEAR_CLIP), cb.z.max(NEAR_CLIP));
    let pa = camera.pixel_of_camera_point(&ca);
    let pb = camera.pixel_of_camera_point(&cb);

    // A margin of one pixel keeps clipped endpoints off the rounding
    // boundary at the image border; pixels outside are skipped below.
    let lo = Vector2::new(-1.0, -1.0);
    let hi = Vector2::new(f64::from(map.width), f64::from(map.height));
    let Some((s0, s1)) = clip_to_rect(pa, pb, lo, hi) else {
        return;
    };
    let screen = pb - pa;
    let len2 = screen.norm_squared();
    let start = pa + screen * s0;
    let end = pa + screen * s1;

    let point_at_screen = |sigma: f64| {
        // 1/z is affine in screen space
        let s = sigma * za / ((1.0 - sigma) * zb + sigma * za);
        a + (b - a) * s
    };
    for (x, y) in line_pixels(start, end) {
        if !in_image(map, x, y) {
            continue;
        }
        let depth = if len2 == 0.0 {
            a.norm().min(b.norm())
        } else {
            let pixel = Vector2::new(x as f64, y as f64);
            let sigma = ((pixel - pa).dot(&screen) / len2).clamp(0.0, 1.0);
            point_at_screen(sigma).norm()
        };
        if depth > 0.0 && depth.is_finite() {
            map.splat(x as u32, y as u32, depth);
        }
    }
}

/// Renders the primitives selected by `variant` into a depth map sized like
/// the camera image.
pub fn reproject(
    model: &VehicleModel3D,
    camera: &PinholeCamera,
    variant: ReprojectionVariant,
) -> Result<SparseDepthMap, ReprojectError> {
    let missing = match variant {
        ReprojectionVariant::Points if model.points.is_empty() => Some("points"),
        ReprojectionVariant::Lines if model.lines.is_empty() => Some("lines"),
        ReprojectionVariant::PointsAndLines if model.is_empty() => Some("points or lines"),
        _ => None,
    };
    if let Some(what) = missing {
        return Err(ReprojectError::EmptyModel(what));
    }
    let mut map = SparseDepthMap::for_camera(camera);
    if variant.uses_points() {
        reproject_points(&model.points, camera, &mut map);
    }
    if variant.uses_lines() {
        for s in &model.lines {
            rasterize_line(s, camera, &mut map);
        }
    }
    Ok(map)
}
