//! KITTI 3D object labels: one object per line, 15 fields plus an optional
//! detection score.

use crate::error::{Error, Result};
use crate::geometry::{cube_from_aabb, Pose, Rotation, Vec3};

use super::{AnnotationRecord, Source};

pub const DONT_CARE: &str = "DontCare";

#[derive(Debug, Clone, PartialEq)]
pub struct KittiAnnotation {
    pub class_name: String,
    pub truncated: f64,
    pub occluded: i32,
    pub alpha: f64,
    /// left, top, right, bottom in pixels.
    pub bbox: [f64; 4],
    /// Height, width, length in meters.
    pub h: f64,
    pub w: f64,
    pub l: f64,
    /// Bottom-center of the box in camera coordinates, meters.
    pub location: Vec3,
    pub rotation_y: f64,
    pub score: Option<f64>,
}

impl KittiAnnotation {
    pub fn is_dont_care(&self) -> bool {
        self.class_name == DONT_CARE
    }
}

const FIELD_NAMES: [&str; 16] = [
    "type",
    "truncated",
    "occluded",
    "alpha",
    "bbox_left",
    "bbox_top",
    "bbox_right",
    "bbox_bottom",
    "height",
    "width",
    "length",
    "x",
    "y",
    "z",
    "rotation_y",
    "score",
];

pub fn parse_kitti_label(line: &str) -> Result<KittiAnnotation> {
    let f: Vec<&str> = line.split_whitespace().collect();
    if f.len() != 15 && f.len() != 16 {
        return Err(Error::WrongFieldCount(f.len()));
    }
    let num = |i: usize| -> Result<f64> {
        f[i].parse::<f64>().map_err(|_| Error::NonNumericField {
            index: i,
            name: FIELD_NAMES[i],
            value: f[i].to_string(),
        })
    };
    let occluded: i32 = f[2].parse().map_err(|_| Error::NonNumericField {
        index: 2,
        name: FIELD_NAMES[2],
        value: f[2].to_string(),
    })?;
    let a = KittiAnnotation {
        class_name: f[0].to_string(),
        truncated: num(1)?,
        occluded,
        alpha: num(3)?,
        bbox: [num(4)?, num(5)?, num(6)?, num(7)?],
        h: num(8)?,
        w: num(9)?,
        l: num(10)?,
        location: Vec3::new(num(11)?, num(12)?, num(13)?),
        rotation_y: num(14)?,
        score: if f.len() == 16 { Some(num(15)?) } else { None },
    };
    if !a.is_dont_care() {
        if !(-1..=3).contains(&a.occluded) {
            return Err(Error::InvalidField {
                name: "occluded",
                value: a.occluded.to_string(),
            });
        }
        for (name, v) in [("height", a.h), ("width", a.w), ("length", a.l)] {
            if !(v >= 0.0) {
                return Err(Error::InvalidField {
                    name,
                    value: v.to_string(),
                });
            }
        }
    }
    Ok(a)
}

/// Writes the fields back with shortest round-trip float formatting.
pub fn format_kitti_label(a: &KittiAnnotation) -> String {
    let mut parts = vec![
        a.class_name.clone(),
        a.truncated.to_string(),
        a.occluded.to_string(),
        a.alpha.to_string(),
    ];
    parts.extend(a.bbox.iter().map(f64::to_string));
    parts.extend([a.h, a.w, a.l].iter().map(f64::to_string));
    parts.extend(a.location.iter().map(f64::to_string));
    parts.push(a.rotation_y.to_string());
    if let Some(s) = a.score {
        parts.push(s.to_string());
    }
    parts.join(" ")
}

/// Canonical record for a KITTI object. The cube spans `(l, h, w)` meters
/// (converted to mm) along the object's x, y, z with the bottom-center at the
/// origin; camera y points down, so the box occupies `y ∈ [−h, 0]`.
pub fn kitti_to_record(
    a: &KittiAnnotation,
    image_id: &str,
    symmetric: bool,
) -> Result<AnnotationRecord> {
    if a.is_dont_care() {
        return Err(Error::DontCareRecord);
    }
    let (l, h, w) = (a.l * 1000.0, a.h * 1000.0, a.w * 1000.0);
    let cube = cube_from_aabb(&Vec3::new(-l / 2.0, -h, -w / 2.0), &Vec3::new(l / 2.0, 0.0, w / 2.0))?;
    let rotation = if a.rotation_y == 0.0 {
        Rotation::identity()
    } else {
        Rotation::about_y(a.rotation_y)
    };
    Ok(AnnotationRecord {
        image_id: image_id.to_string(),
        class_id: a.class_name.clone(),
        pose: Pose::new(rotation, a.location * 1000.0),
        cube,
        symmetric,
        source: if a.score.is_some() {
            Source::Prediction
        } else {
            Source::GroundTruth
        },
    })
}
