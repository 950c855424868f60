//! Synthetic vehicle sequences.
//!
//! Vehicles are composites of axis-aligned cuboids driving along the road
//! (`+x`) past a fixed camera. For every sequence the generator renders the
//! frames, builds the reconstruction an SfM system would have produced
//! (cuboid corners and edges, in the vehicle frame, with an arbitrary scale
//! and offset), corrupts it, aligns it with the reference line and reprojects
//! it into every frame.
//!
//! Physical frame: camera 0 at the origin, `y` points down to the road, `z`
//! points across the road away from the camera. Every sequence draws from its
//! own ChaCha8 stream, so the dataset is a pure function of the config.

use std::fs;
use std::path::{Path, PathBuf};

use image::GrayImage;
use nalgebra::{Vector2, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::alignment::{align_to_world, AlignError, AlignOptions, ReferenceLineObservation};
use crate::geometry::{look_rotation, GeometryError, PinholeCamera, Segment3, VehicleModel3D};
use crate::nn::LabeledSequence;
use crate::reprojection::{
    read_depth_map, reproject, write_depth_map, ReprojectError, ReprojectionVariant, SparseDepthMap,
};
use crate::scene::{SceneBundle, SceneError};

#[derive(thiserror::Error, Debug)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    InvalidConfig(String),
    #[error("outlier fraction must be in [0, 1), got {0}")]
    InvalidFraction(f64),
    #[error("noise std must be finite and non-negative, got {0}")]
    InvalidNoise(f64),
    #[error("sequence {id}: {source}")]
    Align { id: u64, source: AlignError },
    #[error(transparent)]
    Reproject(#[from] ReprojectError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Malformed { path: String, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SynthError + '_ {
    move |source| SynthError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VehicleClass {
    SpecialTransport,
    Car,
    Camper,
    Van,
    Truck,
    Semitrailer,
}

impl VehicleClass {
    pub const ALL: [VehicleClass; 6] = [
        Self::SpecialTransport,
        Self::Car,
        Self::Camper,
        Self::Van,
        Self::Truck,
        Self::Semitrailer,
    ];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<Self> {
        Self::ALL.get(id).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::SpecialTransport => "special_transport",
            Self::Car => "car",
            Self::Camper => "camper",
            Self::Van => "van",
            Self::Truck => "truck",
            Self::Semitrailer => "semitrailer",
        }
    }

    /// Images per class in the toll-gate recordings the generator imitates
    /// with `imbalanced`.
    fn reference_count(self) -> usize {
        [122, 448, 9, 222, 571, 1316][self.id()]
    }
}

/// Closed interval `[lo, hi]`, serialized as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl From<[f64; 2]> for Interval {
    fn from(v: [f64; 2]) -> Self {
        Self { lo: v[0], hi: v[1] }
    }
}

impl From<Interval> for [f64; 2] {
    fn from(i: Interval) -> Self {
        [i.lo, i.hi]
    }
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn is_valid(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.hi > self.lo {
            rng.random_range(self.lo..=self.hi)
        } else {
            self.lo
        }
    }
}

const fn iv(lo: f64, hi: f64) -> Interval {
    Interval::new(lo, hi)
}

/// One cuboid of a vehicle. Parts are placed front to back along the vehicle,
/// each starting `gap` behind the previous one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartGeometry {
    pub length: Interval,
    pub width: Interval,
    pub height: Interval,
    /// Height of the cuboid's underside above the road.
    pub elevation: Interval,
    #[serde(default = "zero_interval")]
    pub gap: Interval,
}

fn zero_interval() -> Interval {
    iv(0.0, 0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassGeometry {
    pub class: VehicleClass,
    pub parts: Vec<PartGeometry>,
}

fn part(length: Interval, width: Interval, height: Interval, elevation: Interval) -> PartGeometry {
    PartGeometry {
        length,
        width,
        height,
        elevation,
        gap: zero_interval(),
    }
}

fn default_class_geometry() -> Vec<ClassGeometry> {
    use VehicleClass::*;
    let car_w = iv(1.7, 1.9);
    let van_w = iv(1.9, 2.1);
    let lorry_w = iv(2.4, 2.55);
    vec![
        ClassGeometry {
            class: SpecialTransport,
            parts: vec![
                part(iv(2.2, 2.6), lorry_w, iv(2.4, 2.8), iv(0.5, 0.6)),
                part(iv(4.0, 9.0), iv(2.5, 3.0), iv(1.4, 3.0), iv(0.9, 1.1)),
                part(iv(2.0, 5.0), lorry_w, iv(0.3, 0.5), iv(0.8, 1.0)),
            ],
        },
        ClassGeometry {
            class: Car,
            parts: vec![
                part(iv(0.8, 1.1), car_w, iv(0.6, 0.75), iv(0.3, 0.35)),
                part(iv(2.0, 2.6), car_w, iv(1.05, 1.25), iv(0.3, 0.35)),
                part(iv(0.5, 1.0), car_w, iv(0.65, 0.8), iv(0.3, 0.35)),
            ],
        },
        ClassGeometry {
            class: Camper,
            parts: vec![
                part(iv(1.4, 1.8), van_w, iv(1.8, 2.1), iv(0.4, 0.45)),
                part(iv(4.5, 6.0), iv(2.2, 2.35), iv(2.5, 2.9), iv(0.45, 0.55)),
            ],
        },
        ClassGeometry {
            class: Van,
            parts: vec![
                part(iv(0.6, 0.9), van_w, iv(0.8, 1.0), iv(0.4, 0.45)),
                part(iv(3.8, 5.2), van_w, iv(1.8, 2.3), iv(0.35, 0.4)),
            ],
        },
        ClassGeometry {
            class: Truck,
            parts: vec![
                part(iv(1.8, 2.4), lorry_w, iv(2.4, 2.8), iv(0.5, 0.6)),
                PartGeometry {
                    gap: iv(0.2, 0.5),
                    ..part(iv(5.0, 7.5), lorry_w, iv(2.5, 3.0), iv(0.9, 1.1))
                },
            ],
        },
        ClassGeometry {
            class: Semitrailer,
            parts: vec![
                part(iv(2.2, 2.6), lorry_w, iv(2.6, 3.0), iv(0.6, 0.7)),
                PartGeometry {
                    gap: iv(0.6, 1.2),
                    ..part(iv(12.0, 13.6), lorry_w, iv(2.7, 3.0), iv(1.1, 1.3))
                },
            ],
        },
    ]
}

/// Fixed camera and road layout shared by all sequences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneLayout {
    pub hfov_deg: f64,
    /// Camera height above the road.
    pub camera_height: f64,
    /// Downward tilt of the optical axis.
    pub pitch_deg: f64,
    /// Rotation of the optical axis toward oncoming traffic (`-x`).
    pub yaw_deg: f64,
    /// Distance of the vehicle's near side from the camera, drawn per sequence.
    pub lane_distance: Interval,
    /// Lane marking carrying the reference line, as distance from the camera.
    pub marking_distance: f64,
    /// Position of the reference line's far end along the road.
    pub refline_x: f64,
}

impl Default for SceneLayout {
    fn default() -> Self {
        Self {
            hfov_deg: 60.0,
            camera_height: 4.0,
            pitch_deg: 20.0,
            yaw_deg: 10.0,
            lane_distance: iv(7.0, 11.0),
            marking_distance: 5.5,
            refline_x: -5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub image_size: [u32; 2],
    pub sequences_per_class: usize,
    /// Inclusive range of frames per sequence.
    pub frames: [usize; 2],
    /// Vehicle displacement per frame, world units.
    pub speed_range: Interval,
    /// Gaussian noise on the reconstructed model, world units.
    pub noise_std: f64,
    pub outlier_fraction: f64,
    /// Gaussian noise on rendered pixels, in units of full brightness.
    pub pixel_noise: f64,
    pub seed: u64,
    pub class_geometry: Vec<ClassGeometry>,
    /// Class sizes proportional to the toll-gate recordings instead of
    /// `sequences_per_class` each.
    pub imbalanced: bool,
    /// Primitives reprojected into the depth targets.
    pub variant: ReprojectionVariant,
    pub layout: SceneLayout,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            image_size: [64, 64],
            sequences_per_class: 40,
            frames: [3, 10],
            speed_range: iv(0.6, 1.6),
            noise_std: 0.05,
            outlier_fraction: 0.05,
            pixel_noise: 0.03,
            seed: 0,
            class_geometry: default_class_geometry(),
            imbalanced: false,
            variant: ReprojectionVariant::PointsAndLines,
            layout: SceneLayout::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        if self.image_size[0] == 0 || self.image_size[1] == 0 {
            return bad("image_size must be positive".into());
        }
        if self.sequences_per_class == 0 {
            return bad("sequences_per_class must be positive".into());
        }
        let [f0, f1] = self.frames;
        if !(3 <= f0 && f0 <= f1 && f1 <= 10) {
            return bad(format!("frames must satisfy 3 <= {f0} <= {f1} <= 10"));
        }
        if !self.speed_range.is_valid() || self.speed_range.lo <= 0.0 {
            return bad("speed_range must be a positive interval".into());
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(SynthError::InvalidNoise(self.noise_std));
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return Err(SynthError::InvalidFraction(self.outlier_fraction));
        }
        if !(self.pixel_noise >= 0.0 && self.pixel_noise.is_finite()) {
            return bad("pixel_noise must be non-negative".into());
        }
        for (i, c) in VehicleClass::ALL.iter().enumerate() {
            let g = self.class_geometry.iter().filter(|g| g.class == *c).count();
            if g != 1 {
                return bad(format!(
                    "class_geometry needs exactly one entry for {}, found {g}",
                    c.name()
                ));
            }
            let geom = self.geometry(*c);
            if geom.parts.is_empty() {
                return bad(format!("class {i} has no parts"));
            }
            for p in &geom.parts {
                let positive = [p.length, p.width, p.height];
                if positive.iter().any(|r| !r.is_valid() || r.lo <= 0.0)
                    || !p.elevation.is_valid()
                    || p.elevation.lo < 0.0
                    || !p.gap.is_valid()
                {
                    return bad(format!("invalid part geometry for {}", c.name()));
                }
            }
        }
        let l = &self.layout;
        if !(l.hfov_deg > 0.0 && l.hfov_deg < 170.0) {
            return bad("hfov_deg must be in (0, 170)".into());
        }
        if !(l.camera_height > 0.0) || !l.lane_distance.is_valid() || l.lane_distance.lo <= 0.0 {
            return bad("camera_height and lane_distance must be positive".into());
        }
        if !(l.marking_distance > 0.0 && l.refline_x < 0.0) {
            return bad(
                "the reference line must lie ahead of the camera toward oncoming traffic".into(),
            );
        }
        Ok(())
    }

    fn geometry(&self, class: VehicleClass) -> &ClassGeometry {
        self.class_geometry
            .iter()
            .find(|g| g.class == class)
            .expect("validated")
    }

    /// Sequences generated for `class`.
    pub fn class_count(&self, class: VehicleClass) -> usize {
        if !self.imbalanced {
            return self.sequences_per_class;
        }
        let total = VehicleClass::ALL.len() * self.sequences_per_class;
        let all: usize = VehicleClass::ALL.iter().map(|c| c.reference_count()).sum();
        let share = total as f64 * class.reference_count() as f64 / all as f64;
        (share.round() as usize).max(2)
    }

    /// The fixed camera at frame 0.
    pub fn camera(&self) -> Result<PinholeCamera, GeometryError> {
        let [w, h] = self.image_size;
        let l = &self.layout;
        let focal = 0.5 * f64::from(w) / (0.5 * l.hfov_deg.to_radians()).tan();
        let (pitch, yaw) = (l.pitch_deg.to_radians(), l.yaw_deg.to_radians());
        let forward = Vector3::new(
            -yaw.sin() * pitch.cos(),
            pitch.sin(),
            yaw.cos() * pitch.cos(),
        );
        let rotation = look_rotation(&forward, &Vector3::y());
        let principal = Vector2::new(0.5 * f64::from(w) - 0.5, 0.5 * f64::from(h) - 0.5);
        PinholeCamera::new(focal, principal, rotation, Vector3::zeros(), w, h)
    }
}

/// The reconstruction of one sequence and its aligned counterpart.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    /// Uncorrupted cuboid corners and edges in the physical vehicle frame.
    pub ground_truth: VehicleModel3D,
    /// Corrupted model and cameras in the reconstruction's own frame, with
    /// the reference-line annotation.
    pub bundle: SceneBundle,
    pub aligned_model: VehicleModel3D,
    pub aligned_cameras: Vec<PinholeCamera>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceSample {
    pub sequence_id: u64,
    pub label: VehicleClass,
    pub frames: Vec<GrayImage>,
    pub depth_maps: Vec<SparseDepthMap>,
    /// Vehicle displacement per frame.
    pub speed: f64,
    /// Present for generated samples, absent for samples read from disk.
    pub reconstruction: Option<Reconstruction>,
}

impl SequenceSample {
    /// The same sequence with depth targets rendered for `variant`.
    pub fn with_variant(&self, variant: ReprojectionVariant) -> Result<Self, SynthError> {
        let rec = self.reconstruction.as_ref().ok_or_else(|| {
            SynthError::InvalidConfig(format!(
                "sequence {} has no reconstruction to reproject",
                self.sequence_id
            ))
        })?;
        Ok(Self {
            depth_maps: render_depth_maps(&rec.aligned_model, &rec.aligned_cameras, variant)?,
            ..self.clone()
        })
    }

    /// Frames scaled to `[-0.5, 0.5]`, paired with the depth targets.
    pub fn to_labeled(&self) -> LabeledSequence {
        LabeledSequence {
            sequence_id: self.sequence_id,
            label: self.label.id(),
            images: self.frames.iter().map(normalize_frame).collect(),
            targets: self.depth_maps.iter().cloned().map(Some).collect(),
        }
    }
}

pub fn normalize_frame(frame: &GrayImage) -> Vec<f64> {
    frame
        .as_raw()
        .iter()
        .map(|&p| f64::from(p) / 255.0 - 0.5)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<SequenceSample>,
    pub test: Vec<SequenceSample>,
}

impl Dataset {
    pub fn with_variant(&self, variant: ReprojectionVariant) -> Result<Self, SynthError> {
        let conv = |s: &[SequenceSample]| -> Result<Vec<_>, SynthError> {
            s.iter().map(|x| x.with_variant(variant)).collect()
        };
        Ok(Self {
            train: conv(&self.train)?,
            test: conv(&self.test)?,
        })
    }

    pub fn labeled(&self) -> (Vec<LabeledSequence>, Vec<LabeledSequence>) {
        (
            self.train.iter().map(SequenceSample::to_labeled).collect(),
            self.test.iter().map(SequenceSample::to_labeled).collect(),
        )
    }
}

/// Rounds `x >= 0` to the nearest integer, halves up.
fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Generates the stratified 80/20 split of all sequences.
pub fn generate_dataset(config: &SynthConfig) -> Result<Dataset, SynthError> {
    config.validate()?;
    let camera = config.camera()?;
    let mut jobs: Vec<(u64, VehicleClass)> = Vec::new();
    let mut split_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut test_ids = Vec::new();
    for class in VehicleClass::ALL {
        let n = config.class_count(class);
        let first = jobs.len() as u64;
        let mut ids: Vec<u64> = (first..first + n as u64).collect();
        jobs.extend(ids.iter().map(|&id| (id, class)));
        ids.shuffle(&mut split_rng);
        test_ids.extend_from_slice(&ids[..round_half_up(0.2 * n as f64)]);
    }
    let chunks = crate::parallel_chunks(&jobs, |chunk| {
        chunk
            .iter()
            .map(|&(id, class)| generate_sequence(config, &camera, id, class))
            .collect::<Result<Vec<_>, _>>()
    });
    let mut train = Vec::new();
    let mut test = Vec::new();
    for chunk in chunks {
        for s in chunk? {
            if test_ids.contains(&s.sequence_id) {
                test.push(s);
            } else {
                train.push(s);
            }
        }
    }
    Ok(Dataset { train, test })
}

#[derive(Debug, Clone, Copy)]
struct Cuboid {
    min: Vector3<f64>,
    max: Vector3<f64>,
}

impl Cuboid {
    fn corners(&self) -> [Vector3<f64>; 8] {
        let (a, b) = (self.min, self.max);
        std::array::from_fn(|i| {
            Vector3::new(
                if i & 1 == 0 { a.x } else { b.x },
                if i & 2 == 0 { a.y } else { b.y },
                if i & 4 == 0 { a.z } else { b.z },
            )
        })
    }

    fn edges(&self) -> Vec<Segment3> {
        let c = self.corners();
        let mut out = Vec::with_capacity(12);
        for i in 0..8 {
            for bit in [1, 2, 4] {
                if i & bit == 0 {
                    out.push(Segment3::new(c[i], c[i | bit]));
                }
            }
        }
        out
    }

    /// Entry distance and face axis of the ray, if it hits.
    fn hit(&self, origin: &Vector3<f64>, dir: &Vector3<f64>) -> Option<(f64, usize)> {
        let (mut t0, mut t1, mut axis) = (0.0_f64, f64::INFINITY, usize::MAX);
        for k in 0..3 {
            if dir[k].abs() < 1e-15 {
                if origin[k] < self.min[k] || origin[k] > self.max[k] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[k];
            let (mut a, mut b) = (
                (self.min[k] - origin[k]) * inv,
                (self.max[k] - origin[k]) * inv,
            );
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            if a > t0 {
                t0 = a;
                axis = k;
            }
            t1 = t1.min(b);
            if t0 > t1 {
                return None;
            }
        }
        (axis != usize::MAX).then_some((t0, axis))
    }
}

/// Cuboids of one vehicle in the physical frame at frame 0.
fn sample_vehicle(
    geom: &ClassGeometry,
    road_y: f64,
    near_z: f64,
    front_x: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<Cuboid> {
    let mut x = front_x;
    let mut boxes = Vec::with_capacity(geom.parts.len());
    let mut lane_width = 0.0_f64;
    let dims: Vec<_> = geom
        .parts
        .iter()
        .map(|p| {
            let d = (
                p.length.sample(rng),
                p.width.sample(rng),
                p.height.sample(rng),
                p.elevation.sample(rng),
                p.gap.sample(rng),
            );
            lane_width = lane_width.max(d.1);
            d
        })
        .collect();
    let center_z = near_z + 0.5 * lane_width;
    for (i, (len, width, height, elev, gap)) in dims.into_iter().enumerate() {
        if i > 0 {
            x -= gap;
        }
        boxes.push(Cuboid {
            min: Vector3::new(x - len, road_y - elev - height, center_z - 0.5 * width),
            max: Vector3::new(x, road_y - elev, center_z + 0.5 * width),
        });
        x -= len;
    }
    boxes
}

fn vehicle_model(boxes: &[Cuboid]) -> Result<VehicleModel3D, GeometryError> {
    let points = boxes.iter().flat_map(|b| b.corners()).collect();
    let lines = boxes.iter().flat_map(|b| b.edges()).collect();
    VehicleModel3D::new(points, lines)
}

struct Appearance {
    body: f64,
    road: f64,
    sky: f64,
    marking_z: [f64; 2],
}

const MARKING_HALF_WIDTH: f64 = 0.08;

/// Ray-cast frame with 2x2 supersampling, flat-shaded faces and dark edges.
fn render_frame(
    camera: &PinholeCamera,
    boxes: &[Cuboid],
    road_y: f64,
    look: &Appearance,
    pixel_noise: f64,
    rng: &mut ChaCha8Rng,
) -> GrayImage {
    let (w, h) = (camera.width(), camera.height());
    let rt = camera.rotation().transpose();
    let origin = camera.center();
    let f = camera.focal();
    let pp = camera.principal();
    let shade = |u: f64, v: f64| -> f64 {
        let dir = (rt * Vector3::new((u - pp.x) / f, (v - pp.y) / f, 1.0)).normalize();
        let mut best: Option<(f64, usize, &Cuboid)> = None;
        for b in boxes {
            if let Some((t, axis)) = b.hit(&origin, &dir) {
                if best.is_none_or(|(bt, _, _)| t < bt) {
                    best = Some((t, axis, b));
                }
            }
        }
        if let Some((t, axis, b)) = best {
            let p = origin + dir * t;
            let eps = 0.9 * t / f;
            let on_edge = (0..3)
                .filter(|&k| k != axis)
                .any(|k| (p[k] - b.min[k]).abs() < eps || (p[k] - b.max[k]).abs() < eps);
            let face = match axis {
                1 => 1.0,
                2 => 0.8,
                _ => 0.62,
            };
            return if on_edge { 0.12 } else { look.body * face };
        }
        if dir.y > 1e-9 {
            let t = (road_y - origin.y) / dir.y;
            let p = origin + dir * t;
            if look
                .marking_z
                .iter()
                .any(|z| (p.z - z).abs() < MARKING_HALF_WIDTH)
            {
                return 0.9;
            }
            return look.road;
        }
        look.sky
    };
    GrayImage::from_fn(w, h, |x, y| {
        let (u, v) = (f64::from(x), f64::from(y));
        let mean = (shade(u - 0.25, v - 0.25)
            + shade(u + 0.25, v - 0.25)
            + shade(u - 0.25, v + 0.25)
            + shade(u + 0.25, v + 0.25))
            / 4.0;
        let noise: f64 = rng.sample::<f64, _>(StandardNormal) * pixel_noise;
        image::Luma([((mean + noise).clamp(0.0, 1.0) * 255.0).round() as u8])
    })
}

fn render_depth_maps(
    model: &VehicleModel3D,
    cameras: &[PinholeCamera],
    variant: ReprojectionVariant,
) -> Result<Vec<SparseDepthMap>, SynthError> {
    cameras
        .iter()
        .map(|c| Ok(reproject(model, c, variant)?.quantized()))
        .collect()
}

fn generate_sequence(
    config: &SynthConfig,
    camera: &PinholeCamera,
    id: u64,
    class: VehicleClass,
) -> Result<SequenceSample, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(id + 1);
    let layout = &config.layout;
    let road_y = layout.camera_height;

    let frames = rng.random_range(config.frames[0]..=config.frames[1]);
    let speed = config.speed_range.sample(&mut rng);
    let near_z = layout.lane_distance.sample(&mut rng);
    let geom = config.geometry(class);
    let boxes0 = sample_vehicle(geom, road_y, near_z, 0.0, &mut rng);
    let length = -boxes0.iter().map(|b| b.min.x).fold(0.0, f64::min);
    // Vehicle centered on the optical axis halfway through the sequence.
    let axis_x = -(near_z * layout.yaw_deg.to_radians().tan());
    let mid_center = axis_x + rng.random_range(-2.0..=2.0);
    let front0 = mid_center + 0.5 * length - 0.5 * (frames - 1) as f64 * speed;
    let boxes: Vec<Cuboid> = boxes0
        .iter()
        .map(|b| Cuboid {
            min: b.min + Vector3::x() * front0,
            max: b.max + Vector3::x() * front0,
        })
        .collect();
    let look = Appearance {
        body: rng.random_range(0.3..=0.95),
        road: rng.random_range(0.3..=0.45),
        sky: rng.random_range(0.55..=0.8),
        marking_z: [
            layout.marking_distance,
            near_z + 3.5 + rng.random_range(0.0..=1.0),
        ],
    };

    // The vehicle moves by +speed along x per frame; in its own frame the
    // camera moves the other way.
    let cameras_vehicle: Vec<PinholeCamera> = (0..frames)
        .map(|k| camera.with_center(Vector3::new(-(k as f64) * speed, 0.0, 0.0)))
        .collect();
    let images = cameras_vehicle
        .iter()
        .map(|c| render_frame(c, &boxes, road_y, &look, config.pixel_noise, &mut rng))
        .collect();

    let ground_truth = vehicle_model(&boxes)?;
    let corrupted = corrupt_reconstruction(
        &ground_truth,
        config.noise_std,
        config.outlier_fraction,
        rng.next_u64(),
    )?;

    // Arbitrary gauge of the reconstruction.
    let gauge_scale = 10f64.powf(rng.random_range(-1.0..=1.0));
    let gauge_shift = Vector3::from_fn(|_, _| rng.random_range(-50.0..=50.0));
    let model = corrupted.apply_similarity(gauge_scale, &gauge_shift)?;
    let cameras: Vec<PinholeCamera> = cameras_vehicle
        .iter()
        .map(|c| c.with_center(c.center() * gauge_scale + gauge_shift))
        .collect();

    // The annotated line runs one frame displacement along the marking toward
    // the camera from a fixed far point.
    let p1 = Vector3::new(layout.refline_x, road_y, layout.marking_distance);
    let p2 = p1 + Vector3::x() * speed;
    let refline = ReferenceLineObservation::new(
        camera.project_unbounded(&p1)?,
        camera.project_unbounded(&p2)?,
    )
    .map_err(|source| SynthError::Align { id, source })?;

    let aligned = align_to_world(&model, &cameras, &refline, &AlignOptions::default())
        .map_err(|source| SynthError::Align { id, source })?;
    let depth_maps = render_depth_maps(&aligned.model, &aligned.cameras, config.variant)?;
    Ok(SequenceSample {
        sequence_id: id,
        label: class,
        frames: images,
        depth_maps,
        speed,
        reconstruction: Some(Reconstruction {
            ground_truth,
            bundle: SceneBundle {
                cameras,
                model,
                refline,
            },
            aligned_model: aligned.model,
            aligned_cameras: aligned.cameras,
        }),
    })
}

/// Adds isotropic Gaussian noise to every point and line endpoint, then
/// replaces `round(outlier_fraction * n)` points by uniform samples in the
/// model's bounding box scaled 3x about its center.
pub fn corrupt_reconstruction(
    model: &VehicleModel3D,
    noise_std: f64,
    outlier_fraction: f64,
    seed: u64,
) -> Result<VehicleModel3D, SynthError> {
    if !(0.0..1.0).contains(&outlier_fraction) {
        return Err(SynthError::InvalidFraction(outlier_fraction));
    }
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(SynthError::InvalidNoise(noise_std));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut jitter = |p: &Vector3<f64>| {
        if noise_std == 0.0 {
            return *p;
        }
        p + Vector3::from_fn(|_, _| {
            noise_std * Distribution::<f64>::sample(&StandardNormal, &mut rng)
        })
    };
    let mut points: Vec<Vector3<f64>> = model.points.iter().map(&mut jitter).collect();
    let lines: Vec<Segment3> = model
        .lines
        .iter()
        .map(|s| Segment3::new(jitter(&s.a), jitter(&s.b)))
        .collect();
    let count = round_half_up(outlier_fraction * points.len() as f64);
    if count > 0 {
        let (lo, hi) = model.bounds().expect("model with points has bounds");
        let center = (lo + hi) * 0.5;
        let half = (hi - lo) * 1.5;
        let chosen = rand::seq::index::sample(&mut rng, points.len(), count);
        for i in chosen.iter() {
            points[i] = center
                + Vector3::from_fn(|k, _| {
                    if half[k] > 0.0 {
                        rng.random_range(-half[k]..=half[k])
                    } else {
                        0.0
                    }
                });
        }
    }
    Ok(VehicleModel3D::new(points, lines)?)
}

#[derive(Debug, Serialize, Deserialize)]
struct SequenceMeta {
    label: VehicleClass,
    speed: f64,
    seed: u64,
    frames: usize,
}

/// Writes `<root>/<split>/<sequence_id>/frame_<k>.pgm`, `depth_<k>.sdm` and
/// `meta.json`, plus the raw reconstruction in `scene/` when present and the
/// generating config as `<root>/config.json`.
pub fn write_dataset(root: &Path, config: &SynthConfig, data: &Dataset) -> Result<(), SynthError> {
    fs::create_dir_all(root).map_err(io_err(root))?;
    let cfg_path = root.join("config.json");
    let text = serde_json::to_string_pretty(config).expect("config serializes");
    fs::write(&cfg_path, text + "\n").map_err(io_err(&cfg_path))?;
    for (split, samples) in [("train", &data.train), ("test", &data.test)] {
        for s in samples.iter() {
            write_sequence(
                &root.join(split).join(s.sequence_id.to_string()),
                s,
                config.seed,
            )?;
        }
    }
    Ok(())
}

fn write_sequence(dir: &Path, s: &SequenceSample, seed: u64) -> Result<(), SynthError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (k, (frame, depth)) in s.frames.iter().zip(&s.depth_maps).enumerate() {
        let fp = dir.join(format!("frame_{k}.pgm"));
        frame
            .save_with_format(&fp, image::ImageFormat::Pnm)
            .map_err(|e| SynthError::Malformed {
                path: fp.display().to_string(),
                message: e.to_string(),
            })?;
        write_depth_map(depth, &dir.join(format!("depth_{k}.sdm")))?;
    }
    let meta = SequenceMeta {
        label: s.label,
        speed: s.speed,
        seed,
        frames: s.frames.len(),
    };
    let mp = dir.join("meta.json");
    let text = serde_json::to_string_pretty(&meta).expect("meta serializes");
    fs::write(&mp, text + "\n").map_err(io_err(&mp))?;
    if let Some(rec) = &s.reconstruction {
        rec.bundle.write_dir(&dir.join("scene"))?;
    }
    Ok(())
}

/// Reads one split written by [`write_dataset`], ordered by sequence id.
pub fn read_split(root: &Path, split: &str) -> Result<Vec<SequenceSample>, SynthError> {
    let dir = root.join(split);
    let mut entries: Vec<(u64, PathBuf)> = Vec::new();
    for e in fs::read_dir(&dir).map_err(io_err(&dir))? {
        let path = e.map_err(io_err(&dir))?.path();
        let id = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.parse::<u64>().ok());
        if let (Some(id), true) = (id, path.is_dir()) {
            entries.push((id, path));
        }
    }
    entries.sort();
    entries
        .into_iter()
        .map(|(id, path)| read_sequence(&path, id))
        .collect()
}

fn read_sequence(dir: &Path, id: u64) -> Result<SequenceSample, SynthError> {
    let mp = dir.join("meta.json");
    let text = fs::read_to_string(&mp).map_err(io_err(&mp))?;
    let meta: SequenceMeta = serde_json::from_str(&text).map_err(|e| SynthError::Malformed {
        path: mp.display().to_string(),
        message: e.to_string(),
    })?;
    let mut frames = Vec::with_capacity(meta.frames);
    let mut depth_maps = Vec::with_capacity(meta.frames);
    for k in 0..meta.frames {
        let fp = dir.join(format!("frame_{k}.pgm"));
        let img = image::open(&fp).map_err(|e| SynthError::Malformed {
            path: fp.display().to_string(),
            message: e.to_string(),
        })?;
        frames.push(img.into_luma8());
        depth_maps.push(read_depth_map(&dir.join(format!("depth_{k}.sdm")))?);
    }
    Ok(SequenceSample {
        sequence_id: id,
        label: meta.label,
        frames,
        depth_maps,
        speed: meta.speed,
        reconstruction: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            sequences_per_class: 10,
            seed,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn split_is_stratified() {
        let d = generate_dataset(&small(1)).unwrap();
        assert_eq!((d.train.len(), d.test.len()), (48, 12));
        for c in VehicleClass::ALL {
            assert_eq!(d.test.iter().filter(|s| s.label == c).count(), 2);
        }
        for s in d.train.iter().chain(&d.test) {
            assert!((3..=10).contains(&s.frames.len()));
            assert_eq!(s.frames.len(), s.depth_maps.len());
            for (f, m) in s.frames.iter().zip(&s.depth_maps) {
                assert_eq!(f.dimensions(), (m.width(), m.height()));
            }
            assert!(s.depth_maps.iter().any(|m| m.valid_count() > 0));
        }
        let train_ids: Vec<_> = d.train.iter().map(|s| s.sequence_id).collect();
        assert!(d.test.iter().all(|s| !train_ids.contains(&s.sequence_id)));
    }

    #[test]
    fn generation_is_deterministic() {
        let mut cfg = small(5);
        cfg.sequences_per_class = 3;
        let a = generate_dataset(&cfg).unwrap();
        let b = generate_dataset(&cfg).unwrap();
        assert_eq!(a, b);
        cfg.seed = 6;
        assert_ne!(generate_dataset(&cfg).unwrap(), a);
    }

    #[test]
    fn corruption_identity_and_counts() {
        let boxes = [Cuboid {
            min: Vector3::zeros(),
            max: Vector3::new(1.0, 1.0, 1.0),
        }];
        let m = vehicle_model(&boxes).unwrap();
        assert_eq!(corrupt_reconstruction(&m, 0.0, 0.0, 3).unwrap(), m);
        let many = VehicleModel3D::new(
            (0..100)
                .map(|i| Vector3::new(f64::from(i), 0.0, 1.0))
                .collect(),
            vec![],
        )
        .unwrap();
        let c = corrupt_reconstruction(&many, 0.0, 0.5, 9).unwrap();
        let changed = c
            .points
            .iter()
            .zip(&many.points)
            .filter(|(a, b)| a != b)
            .count();
        assert_eq!(changed, 50);
        assert!(matches!(
            corrupt_reconstruction(&m, 0.0, 1.0, 0),
            Err(SynthError::InvalidFraction(_))
        ));
        for seed in 0..5 {
            let c = corrupt_reconstruction(&m, 0.01, 0.0, seed).unwrap();
            let worst = c
                .points
                .iter()
                .zip(&m.points)
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            assert!(worst < 0.1);
        }
    }

    #[test]
    fn round_half_up_counts() {
        assert_eq!(round_half_up(2.5), 3);
        assert_eq!(round_half_up(2.0), 2);
        assert_eq!(round_half_up(0.49), 0);
    }

    #[test]
    fn imbalanced_counts_follow_reference_ratio() {
        let cfg = SynthConfig {
            imbalanced: true,
            ..SynthConfig::default()
        };
        let counts: Vec<_> = VehicleClass::ALL
            .iter()
            .map(|&c| cfg.class_count(c))
            .collect();
        assert_eq!(counts[VehicleClass::Camper.id()], 2);
        assert!(counts[VehicleClass::Semitrailer.id()] > counts[VehicleClass::Truck.id()]);
    }

    #[test]
    fn variants_differ_only_in_targets() {
        let mut cfg = small(2);
        cfg.sequences_per_class = 2;
        let d = generate_dataset(&cfg).unwrap();
        let s = &d.train[0];
        let lines = s.with_variant(ReprojectionVariant::Lines).unwrap();
        let points = s.with_variant(ReprojectionVariant::Points).unwrap();
        assert_eq!(lines.frames, s.frames);
        for ((b, l), p) in s
            .depth_maps
            .iter()
            .zip(&lines.depth_maps)
            .zip(&points.depth_maps)
        {
            assert_eq!(b, &l.merge_min(p));
        }
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = SynthConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: SynthConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        let partial: SynthConfig = serde_json::from_str(r#"{"sequences_per_class": 3}"#).unwrap();
        assert_eq!(partial.sequences_per_class, 3);
        assert_eq!(partial.image_size, [64, 64]);
    }

    #[test]
    fn dataset_directory_round_trip() {
        let mut cfg = small(4);
        cfg.sequences_per_class = 1;
        let d = generate_dataset(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &cfg, &d).unwrap();
        let train = read_split(dir.path(), "train").unwrap();
        assert_eq!(train.len(), d.train.len());
        for (a, b) in train.iter().zip(&d.train) {
            assert_eq!(a.frames, b.frames);
            assert_eq!(a.depth_maps, b.depth_maps);
            assert_eq!((a.label, a.speed), (b.label, b.speed));
        }
        let scene = SceneBundle::read_dir(&dir.path().join("train/0/scene")).unwrap();
        assert_eq!(scene.cameras.len(), d.train[0].frames.len());
    }
}
