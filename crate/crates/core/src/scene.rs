//! Scene bundle directories: the cameras, sparse model and reference-line
//! annotation of one reconstruction.
//!
//! ```text
//! <dir>/cameras.json   list of cameras
//! <dir>/points.ply     ASCII PLY, `vertex` element with x, y, z
//! <dir>/lines.json     list of [[x, y, z], [x, y, z]] endpoint pairs
//! <dir>/refline.json   {"p1": [u, v], "p2": [u, v]}
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::Vector3;

use crate::alignment::ReferenceLineObservation;
use crate::geometry::{GeometryError, PinholeCamera, Segment3, VehicleModel3D};

#[derive(thiserror::Error, Debug)]
pub enum SceneError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
    #[error("malformed PLY: {0}")]
    Ply(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneBundle {
    pub cameras: Vec<PinholeCamera>,
    pub model: VehicleModel3D,
    pub refline: ReferenceLineObservation,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SceneError + '_ {
    move |source| SceneError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, SceneError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| SceneError::Json {
        path: path.display().to_string(),
        source,
    })
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), SceneError> {
    let text = serde_json::to_string_pretty(value).map_err(|source| SceneError::Json {
        path: path.display().to_string(),
        source,
    })?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

impl SceneBundle {
    pub fn read_dir(dir: &Path) -> Result<Self, SceneError> {
        let cameras: Vec<PinholeCamera> = read_json(&dir.join("cameras.json"))?;
        let lines: Vec<Segment3> = read_json(&dir.join("lines.json"))?;
        let refline = read_json(&dir.join("refline.json"))?;
        let ply_path = dir.join("points.ply");
        let text = fs::read_to_string(&ply_path).map_err(io_err(&ply_path))?;
        let points = parse_ply_points(&text)?;
        let model = VehicleModel3D::new(points, lines)?;
        Ok(Self {
            cameras,
            model,
            refline,
        })
    }

    pub fn write_dir(&self, dir: &Path) -> Result<(), SceneError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        write_json(&dir.join("cameras.json"), &self.cameras)?;
        write_json(&dir.join("lines.json"), &self.model.lines)?;
        write_json(&dir.join("refline.json"), &self.refline)?;
        let ply_path = dir.join("points.ply");
        fs::write(&ply_path, format_ply_points(&self.model.points)).map_err(io_err(&ply_path))
    }
}

/// ASCII PLY with one `vertex` element of double x, y, z.
pub fn format_ply_points(points: &[Vector3<f64>]) -> String {
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(out, "element vertex {}", points.len());
    out.push_str("property double x\nproperty double y\nproperty double z\nend_header\n");
    for p in points {
        let _ = writeln!(out, "{} {} {}", p.x, p.y, p.z);
    }
    out
}

struct PlyElement {
    name: String,
    count: usize,
    properties: Vec<String>,
    has_list: bool,
}

/// Reads the `x`, `y`, `z` properties of the `vertex` element of an ASCII PLY
/// file. Other properties and elements are skipped.
pub fn parse_ply_points(text: &str) -> Result<Vec<Vector3<f64>>, SceneError> {
    let bad = |m: &str| SceneError::Ply(m.to_string());
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(bad("missing 'ply' magic"));
    }
    let mut elements: Vec<PlyElement> = Vec::new();
    let mut saw_format = false;
    loop {
        let line = lines
            .next()
            .ok_or_else(|| bad("missing end_header"))?
            .trim();
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("format") => {
                if tok.next() != Some("ascii") {
                    return Err(bad("only ASCII PLY is supported"));
                }
                saw_format = true;
            }
            Some("comment") | Some("obj_info") | None => {}
            Some("element") => {
                let name = tok.next().ok_or_else(|| bad("element without name"))?;
                let count = tok
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| bad("element without count"))?;
                elements.push(PlyElement {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                    has_list: false,
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| bad("property before element"))?;
                let kind = tok.next().ok_or_else(|| bad("property without type"))?;
                if kind == "list" {
                    el.has_list = true;
                }
                let name = tok.last().ok_or_else(|| bad("property without name"))?;
                el.properties.push(name.to_string());
            }
            Some("end_header") => break,
            Some(other) => return Err(SceneError::Ply(format!("unknown header line {other:?}"))),
        }
    }
    if !saw_format {
        return Err(bad("missing format line"));
    }
    let mut points = Vec::new();
    for el in &elements {
        if el.name != "vertex" {
            for _ in 0..el.count {
                lines.next().ok_or_else(|| bad("truncated element data"))?;
            }
            continue;
        }
        if el.has_list {
            return Err(bad("list properties on vertex are not supported"));
        }
        let col = |n: &str| {
            el.properties
                .iter()
                .position(|p| p == n)
                .ok_or_else(|| SceneError::Ply(format!("vertex has no '{n}' property")))
        };
        let (ix, iy, iz) = (col("x")?, col("y")?, col("z")?);
        points.reserve(el.count);
        for _ in 0..el.count {
            let row = lines.next().ok_or_else(|| bad("truncated vertex data"))?;
            let vals: Vec<f64> = row
                .split_whitespace()
                .map(|v| v.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| SceneError::Ply(format!("bad number in {row:?}: {e}")))?;
            if vals.len() != el.properties.len() {
                return Err(SceneError::Ply(format!("wrong column count in {row:?}")));
            }
            points.push(Vector3::new(vals[ix], vals[iy], vals[iz]));
        }
    }
    Ok(points)
}
