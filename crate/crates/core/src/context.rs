//! Scene-context filters for keypoint matches between consecutive frames of a
//! fixed camera: a minimum-displacement test that removes background matches,
//! and a driving-direction test whose reference direction can be estimated
//! with a length-weighted Hough vote over image line segments.
//!
//! Angles follow the image convention used everywhere in this module: 0° is
//! motion toward `+u` (image right) and angles grow counterclockwise as seen
//! on screen, i.e. `atan2(-dv, du)` since `v` points down.

use std::path::Path;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

#[derive(thiserror::Error, Debug)]
pub enum ContextError {
    #[error("displacement threshold must be non-negative, got {0}")]
    NegativeThreshold(f64),
    #[error("match {0} has zero displacement")]
    ZeroDisplacement(usize),
    #[error("no dominant angle: segment list is empty or has zero total length")]
    NoDominantAngle,
    #[error("bin width {0} does not divide 180 degrees")]
    InvalidBinWidth(f64),
    #[error("invalid angle range: {0}")]
    InvalidRange(String),
    #[error("invalid match: {0}")]
    InvalidMatch(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// A keypoint seen at `pixel_a` in frame `i` and at `pixel_b` in frame `i + 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeypointMatch {
    pub pixel_a: Vector2<f64>,
    pub pixel_b: Vector2<f64>,
}

impl KeypointMatch {
    pub fn new(pixel_a: Vector2<f64>, pixel_b: Vector2<f64>) -> Result<Self, ContextError> {
        let ok = pixel_a
            .iter()
            .chain(pixel_b.iter())
            .all(|v| v.is_finite() && *v >= 0.0);
        if !ok {
            return Err(ContextError::InvalidMatch(format!(
                "coordinates must be finite and non-negative: {pixel_a:?} -> {pixel_b:?}"
            )));
        }
        Ok(Self { pixel_a, pixel_b })
    }

    pub fn displacement(&self) -> Vector2<f64> {
        self.pixel_b - self.pixel_a
    }

    /// Direction of motion in degrees, `[0, 360)`. `None` for zero motion.
    pub fn direction_deg(&self) -> Option<f64> {
        let d = self.displacement();
        if d.x == 0.0 && d.y == 0.0 {
            return None;
        }
        Some(wrap_360((-d.y).atan2(d.x).to_degrees()))
    }
}

/// A 2D image line segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment2 {
    pub a: Vector2<f64>,
    pub b: Vector2<f64>,
}

impl Segment2 {
    pub fn new(a: Vector2<f64>, b: Vector2<f64>) -> Self {
        Self { a, b }
    }

    pub fn length(&self) -> f64 {
        (self.b - self.a).norm()
    }

    /// Undirected orientation in `[0, 180)`, independent of endpoint order.
    pub fn orientation_deg(&self) -> Option<f64> {
        let d = self.b - self.a;
        // screen-up component, so that counterclockwise is positive
        let (mut x, mut y) = (d.x, -d.y);
        if x == 0.0 && y == 0.0 {
            return None;
        }
        if y < 0.0 || (y == 0.0 && x < 0.0) {
            x = -x;
            y = -y;
        }
        let deg = y.atan2(x).to_degrees();
        Some(if deg >= 180.0 { 0.0 } else { deg })
    }
}

fn wrap_360(deg: f64) -> f64 {
    let w = deg.rem_euclid(360.0);
    if w >= 360.0 {
        0.0
    } else {
        w
    }
}

/// Inclusive interval of directions in degrees. When `start > end` the
/// interval wraps through 0°, so `320..=20` covers `[320, 360) ∪ [0, 20]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleRangeDeg {
    start: f64,
    end: f64,
    full: bool,
}

impl AngleRangeDeg {
    pub fn new(start_deg: f64, end_deg: f64) -> Result<Self, ContextError> {
        for v in [start_deg, end_deg] {
            if !(0.0..360.0).contains(&v) {
                return Err(ContextError::InvalidRange(format!(
                    "{v} is outside [0, 360)"
                )));
            }
        }
        Ok(Self {
            start: start_deg,
            end: end_deg,
            full: false,
        })
    }

    /// Every direction.
    pub fn full() -> Self {
        Self {
            start: 0.0,
            end: 0.0,
            full: true,
        }
    }

    /// `center ± half_width`, wrapped into `[0, 360)`.
    pub fn around(center_deg: f64, half_width_deg: f64) -> Result<Self, ContextError> {
        if !(half_width_deg >= 0.0) {
            return Err(ContextError::InvalidRange(format!(
                "half width {half_width_deg}"
            )));
        }
        if half_width_deg >= 180.0 {
            return Ok(Self::full());
        }
        Self::new(
            wrap_360(center_deg - half_width_deg),
            wrap_360(center_deg + half_width_deg),
        )
    }

    pub fn start_deg(&self) -> f64 {
        self.start
    }

    pub fn end_deg(&self) -> f64 {
        self.end
    }

    pub fn is_full(&self) -> bool {
        self.full
    }

    pub fn contains(&self, angle_deg: f64) -> bool {
        if self.full {
            return true;
        }
        let a = wrap_360(angle_deg);
        if self.start <= self.end {
            self.start <= a && a <= self.end
        } else {
            a >= self.start || a <= self.end
        }
    }
}

impl std::str::FromStr for AngleRangeDeg {
    type Err = ContextError;

    /// Parses `start:end`, e.g. `320:20`. `0:360` means the full circle.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ContextError::InvalidRange(format!("expected start:end, got {s:?}"));
        let (a, b) = s.split_once(':').ok_or_else(bad)?;
        let a: f64 = a.trim().parse().map_err(|_| bad())?;
        let b: f64 = b.trim().parse().map_err(|_| bad())?;
        if a == 0.0 && b == 360.0 {
            return Ok(Self::full());
        }
        Self::new(a, b)
    }
}

/// Both context filters with their parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchFilterConfig {
    pub min_displacement_px: f64,
    pub valid_range: AngleRangeDeg,
}

impl Default for MatchFilterConfig {
    fn default() -> Self {
        Self {
            min_displacement_px: 50.0,
            valid_range: AngleRangeDeg {
                start: 320.0,
                end: 20.0,
                full: false,
            },
        }
    }
}

impl MatchFilterConfig {
    /// Static-camera filter followed by the direction filter.
    pub fn apply(&self, matches: &[KeypointMatch]) -> Result<Vec<KeypointMatch>, ContextError> {
        let moved = filter_static_matches(matches, self.min_displacement_px)?;
        filter_direction_matches(&moved, &self.valid_range)
    }
}

/// Keeps the matches that moved at least `min_displacement_px` pixels.
pub fn filter_static_matches(
    matches: &[KeypointMatch],
    min_displacement_px: f64,
) -> Result<Vec<KeypointMatch>, ContextError> {
    if !(min_displacement_px >= 0.0) {
        return Err(ContextError::NegativeThreshold(min_displacement_px));
    }
    Ok(matches
        .iter()
        .filter(|m| m.displacement().norm() >= min_displacement_px)
        .copied()
        .collect())
}

/// Keeps the matches whose direction of motion lies in `valid_range`.
pub fn filter_direction_matches(
    matches: &[KeypointMatch],
    valid_range: &AngleRangeDeg,
) -> Result<Vec<KeypointMatch>, ContextError> {
    let mut kept = Vec::with_capacity(matches.len());
    for (i, m) in matches.iter().enumerate() {
        let angle = m.direction_deg().ok_or(ContextError::ZeroDisplacement(i))?;
        if valid_range.contains(angle) {
            kept.push(*m);
        }
    }
    Ok(kept)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HoughWeighting {
    /// Each segment votes with its length.
    #[default]
    Length,
    /// Each segment casts one vote.
    Unweighted,
}

/// Most prominent undirected line orientation, in `[0, 180)`, as the center
/// of the winning accumulator bin. Bins are centered on multiples of
/// `bin_width_deg` so that near-horizontal segments on both sides of 0° share
/// a bin. Equal bins resolve to the lowest index.
pub fn dominant_angle_hough(
    segments: &[Segment2],
    bin_width_deg: f64,
) -> Result<f64, ContextError> {
    dominant_angle_hough_weighted(segments, bin_width_deg, HoughWeighting::Length)
}

pub fn dominant_angle_hough_weighted(
    segments: &[Segment2],
    bin_width_deg: f64,
    weighting: HoughWeighting,
) -> Result<f64, ContextError> {
    let bins = 180.0 / bin_width_deg;
    if !(bin_width_deg > 0.0 && bins.is_finite() && (bins - bins.round()).abs() < 1e-9) {
        return Err(ContextError::InvalidBinWidth(bin_width_deg));
    }
    let n_bins = bins.round() as usize;
    // per-bin votes are summed in sorted order so the result does not depend on
    // the order of the input list
    let mut votes: Vec<Vec<f64>> = vec![Vec::new(); n_bins];
    for s in segments {
        let Some(theta) = s.orientation_deg() else {
            continue;
        };
        let idx = (theta / bin_width_deg).round() as usize % n_bins;
        votes[idx].push(match weighting {
            HoughWeighting::Length => s.length(),
            HoughWeighting::Unweighted => 1.0,
        });
    }
    let totals: Vec<f64> = votes
        .into_iter()
        .map(|mut v| {
            v.sort_by(f64::total_cmp);
            v.iter().sum()
        })
        .collect();
    let mut best = 0;
    for (i, t) in totals.iter().enumerate() {
        if *t > totals[best] {
            best = i;
        }
    }
    if !(totals[best] > 0.0) {
        return Err(ContextError::NoDominantAngle);
    }
    Ok(best as f64 * bin_width_deg)
}

/// Picks which of the two headings of an undirected axis the matches move
/// along: `axis_deg` or `axis_deg + 180`, by majority of displacement
/// directions. Ties keep `axis_deg`.
pub fn orient_axis(axis_deg: f64, matches: &[KeypointMatch]) -> f64 {
    let rad = axis_deg.to_radians();
    let heading = Vector2::new(rad.cos(), -rad.sin());
    let (fwd, back) = matches.iter().fold((0usize, 0usize), |(f, b), m| {
        let dot = m.displacement().dot(&heading);
        if dot > 0.0 {
            (f + 1, b)
        } else if dot < 0.0 {
            (f, b + 1)
        } else {
            (f, b)
        }
    });
    if back > fwd {
        wrap_360(axis_deg + 180.0)
    } else {
        wrap_360(axis_deg)
    }
}

/// Valid direction range derived from the scene instead of configured:
/// the dominant line orientation of `segments`, oriented along the moving
/// `matches`, widened by `half_width_deg` on both sides.
pub fn estimate_direction_range(
    segments: &[Segment2],
    matches: &[KeypointMatch],
    bin_width_deg: f64,
    half_width_deg: f64,
) -> Result<AngleRangeDeg, ContextError> {
    let axis = dominant_angle_hough(segments, bin_width_deg)?;
    AngleRangeDeg::around(orient_axis(axis, matches), half_width_deg)
}

#[derive(Debug, Serialize, Deserialize)]
struct SegmentRecord {
    ua: f64,
    va: f64,
    ub: f64,
    vb: f64,
}

fn read_records(path: &Path) -> Result<Vec<SegmentRecord>, ContextError> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["ua", "va", "ub", "vb"] {
        return Err(ContextError::InvalidMatch(format!(
            "expected header ua,va,ub,vb in {}",
            path.display()
        )));
    }
    rdr.deserialize().map(|r| r.map_err(Into::into)).collect()
}

fn write_records(
    path: &Path,
    records: impl Iterator<Item = SegmentRecord>,
) -> Result<(), ContextError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Reads matches from a CSV file with header `ua,va,ub,vb`.
pub fn read_matches_csv(path: &Path) -> Result<Vec<KeypointMatch>, ContextError> {
    read_records(path)?
        .into_iter()
        .map(|r| KeypointMatch::new(Vector2::new(r.ua, r.va), Vector2::new(r.ub, r.vb)))
        .collect()
}

pub fn write_matches_csv(path: &Path, matches: &[KeypointMatch]) -> Result<(), ContextError> {
    write_records(
        path,
        matches.iter().map(|m| SegmentRecord {
            ua: m.pixel_a.x,
            va: m.pixel_a.y,
            ub: m.pixel_b.x,
            vb: m.pixel_b.y,
        }),
    )
}

pub fn read_segments_csv(path: &Path) -> Result<Vec<Segment2>, ContextError> {
    Ok(read_records(path)?
        .into_iter()
        .map(|r| Segment2::new(Vector2::new(r.ua, r.va), Vector2::new(r.ub, r.vb)))
        .collect())
}

pub fn write_segments_csv(path: &Path, segments: &[Segment2]) -> Result<(), ContextError> {
    write_records(
        path,
        segments.iter().map(|s| SegmentRecord {
            ua: s.a.x,
            va: s.a.y,
            ub: s.b.x,
            vb: s.b.y,
        }),
    )
}
