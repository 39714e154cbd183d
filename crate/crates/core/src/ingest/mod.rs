//! Model and annotation I/O: PLY meshes, KITTI labels, the JSONL annotation
//! format, and class-average cube priors.

pub mod kitti;
pub mod ply;

pub use kitti::{format_kitti_label, kitti_to_record, parse_kitti_label, KittiAnnotation};
pub use ply::{mesh_cube, parse_ply, write_ply, MeshModel, PlyFormat};

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{cube_from_aabb, diameter, rotation_defect, BoundingCube, Pose, Rotation, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Source {
    #[serde(rename = "gt")]
    GroundTruth,
    #[serde(rename = "pred")]
    Prediction,
}

/// One annotated or predicted object instance. Units are mm.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationRecord {
    pub image_id: String,
    pub class_id: String,
    pub pose: Pose,
    /// Object-frame cube.
    pub cube: BoundingCube,
    pub symmetric: bool,
    pub source: Source,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    image_id: String,
    class_id: String,
    rotation: [f64; 9],
    translation_mm: [f64; 3],
    cube_mm: Vec<f64>,
    symmetric: bool,
    source: Source,
}

fn record_from_line(line: usize, text: &str) -> Result<AnnotationRecord> {
    let schema = |msg: String| Error::SchemaViolation { line, msg };
    let raw: RecordLine = serde_json::from_str(text).map_err(|e| schema(e.to_string()))?;
    if raw.cube_mm.len() != 24 {
        return Err(schema(format!("cube_mm has {} values, expected 24", raw.cube_mm.len())));
    }
    if !raw.rotation.iter().all(|v| v.is_finite()) {
        return Err(schema("rotation contains a non-finite value".into()));
    }
    let rotation = Rotation::from_row_major(&raw.rotation).map_err(|_| {
        let m = nalgebra::Matrix3::from_row_slice(&raw.rotation);
        let (ortho, det) = rotation_defect(&m);
        Error::InvalidRotation { line, ortho, det }
    })?;
    let t = Vec3::from_row_slice(&raw.translation_mm);
    if !t.iter().all(|v| v.is_finite()) {
        return Err(schema("translation_mm contains a non-finite value".into()));
    }
    let cube = BoundingCube::from_flat(&raw.cube_mm).map_err(|e| schema(format!("cube_mm: {e}")))?;
    Ok(AnnotationRecord {
        image_id: raw.image_id,
        class_id: raw.class_id,
        pose: Pose::new(rotation, t),
        cube,
        symmetric: raw.symmetric,
        source: raw.source,
    })
}

/// Reads JSON Lines annotations. Blank lines are skipped; line numbers in
/// errors are 1-based and count blank lines.
pub fn read_annotations<R: BufRead>(reader: R) -> Result<Vec<AnnotationRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(record_from_line(i + 1, &line)?);
    }
    Ok(out)
}

pub fn record_to_json(r: &AnnotationRecord) -> String {
    let line = RecordLine {
        image_id: r.image_id.clone(),
        class_id: r.class_id.clone(),
        rotation: r.pose.rotation.to_row_major(),
        translation_mm: [r.pose.translation.x, r.pose.translation.y, r.pose.translation.z],
        cube_mm: r.cube.to_flat(),
        symmetric: r.symmetric,
        source: r.source,
    };
    serde_json::to_string(&line).expect("record fields are finite")
}

pub fn write_annotations<W: Write>(mut w: W, records: &[AnnotationRecord]) -> Result<()> {
    for r in records {
        writeln!(w, "{}", record_to_json(r))?;
    }
    Ok(())
}

/// A class-average cube and the diameter used for its accuracy threshold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassPrior {
    pub class_id: String,
    #[serde(rename = "cube_mm", serialize_with = "ser_cube")]
    pub prior_cube: BoundingCube,
    #[serde(rename = "avg_diameter_mm")]
    pub avg_diameter: f64,
    /// Number of cubes averaged.
    pub count: usize,
}

fn ser_cube<S: serde::Serializer>(c: &BoundingCube, s: S) -> std::result::Result<S::Ok, S::Error> {
    c.to_flat().serialize(s)
}

impl ClassPrior {
    /// Replaces the derived diameter, e.g. with a published class average.
    pub fn with_diameter(mut self, d: f64) -> Result<Self> {
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::InvalidParameter("diameter override must be positive"));
        }
        self.avg_diameter = d;
        Ok(self)
    }
}

/// Averages cubes by their extents after centering each on its centroid.
pub fn class_prior(class_id: &str, cubes: &[BoundingCube]) -> Result<ClassPrior> {
    if cubes.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut lo = Vec3::zeros();
    let mut hi = Vec3::zeros();
    for c in cubes {
        let (a, b) = c.translated(&-c.centroid()).points().aabb();
        lo += a;
        hi += b;
    }
    let n = cubes.len() as f64;
    let prior_cube = cube_from_aabb(&(lo / n), &(hi / n))?;
    let avg_diameter = diameter(&prior_cube.points())?;
    Ok(ClassPrior {
        class_id: class_id.to_string(),
        prior_cube,
        avg_diameter,
        count: cubes.len(),
    })
}

/// One prior per class, in class-id order.
pub fn class_priors(records: &[AnnotationRecord]) -> Result<Vec<ClassPrior>> {
    let mut by_class: std::collections::BTreeMap<&str, Vec<BoundingCube>> = Default::default();
    for r in records {
        by_class.entry(&r.class_id).or_default().push(r.cube);
    }
    by_class
        .into_iter()
        .map(|(id, cubes)| class_prior(id, &cubes))
        .collect()
}
