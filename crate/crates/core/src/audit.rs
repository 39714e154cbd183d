//! Pinhole projection of annotated cubes and a visibility audit that flags
//! ground truth no image-space detector could see.

use std::fmt;

use crate::error::{Error, Result};
use crate::geometry::{BoundingCube, Pose, Vec3, CORNER_SIGNS};
use crate::ingest::AnnotationRecord;

/// Default smallest projected hull area (px²) considered learnable.
pub const DEFAULT_MIN_AREA_PX: f64 = 25.0;
/// Depth (mm) of the plane used to clip cubes that cross the camera plane.
const NEAR_PLANE_MM: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0) || !fx.is_finite() || !fy.is_finite() {
            return Err(Error::InvalidParameter("focal lengths must be positive"));
        }
        if !(cx.is_finite() && cy.is_finite()) {
            return Err(Error::NonFinite("principal point"));
        }
        if width < 1 || height < 1 {
            return Err(Error::InvalidParameter("image size must be at least 1x1"));
        }
        Ok(CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Parses the key-value intrinsics format (`fx fy cx cy width height`).
    pub fn parse(text: &str) -> Result<Self> {
        let kv = crate::config::parse_key_values(text)?;
        let get = |key: &str| -> Result<&str> {
            kv.iter()
                .find(|(_, k, _)| k == key)
                .map(|(_, _, v)| v.as_str())
                .ok_or_else(|| Error::BadValue {
                    key: key.to_string(),
                    msg: "missing".into(),
                })
        };
        let real = |key: &str| -> Result<f64> {
            get(key)?.parse().map_err(|_| Error::BadValue {
                key: key.to_string(),
                msg: "expected a number".into(),
            })
        };
        let int = |key: &str| -> Result<u32> {
            get(key)?.parse().map_err(|_| Error::BadValue {
                key: key.to_string(),
                msg: "expected a positive integer".into(),
            })
        };
        for (_, k, _) in &kv {
            if !["fx", "fy", "cx", "cy", "width", "height"].contains(&k.as_str()) {
                return Err(Error::BadValue {
                    key: k.clone(),
                    msg: "unknown intrinsics key".into(),
                });
            }
        }
        CameraIntrinsics::new(real("fx")?, real("fy")?, real("cx")?, real("cy")?, int("width")?, int("height")?)
    }

    /// Whether a pixel lies inside the image rectangle.
    pub fn contains(&self, u: f64, v: f64) -> bool {
        (0.0..=self.width as f64).contains(&u) && (0.0..=self.height as f64).contains(&v)
    }
}

pub type Pixel = (f64, f64);

/// Projects a camera-frame point (mm) to pixels; the camera looks down +z.
pub fn project_point(k: &CameraIntrinsics, p: &Vec3) -> Result<Pixel> {
    if !(p.z > 0.0) {
        return Err(Error::BehindCamera(p.z));
    }
    Ok((k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedCube {
    /// Projection of each vertex, `None` where the vertex has z ≤ 0.
    pub pixels: [Option<Pixel>; 8],
    /// Camera-frame vertices.
    pub camera: [Vec3; 8],
}

impl ProjectedCube {
    pub fn mask(&self) -> [bool; 8] {
        self.pixels.map(|p| p.is_some())
    }

    pub fn valid_pixels(&self) -> Vec<Pixel> {
        self.pixels.iter().flatten().copied().collect()
    }

    /// Image-plane outline of the cube clipped to `z ≥ 1 mm`: projections of
    /// the vertices in front of that plane plus the points where cube edges
    /// cross it.
    pub fn clipped_outline(&self, k: &CameraIntrinsics) -> Vec<Pixel> {
        let mut out = Vec::new();
        for v in &self.camera {
            if v.z >= NEAR_PLANE_MM {
                out.push(project_point(k, v).expect("in front of the near plane"));
            }
        }
        for (a, b) in cube_edges() {
            let (p, q) = (self.camera[a], self.camera[b]);
            if (p.z < NEAR_PLANE_MM) != (q.z < NEAR_PLANE_MM) {
                let s = (NEAR_PLANE_MM - p.z) / (q.z - p.z);
                let x = p + (q - p) * s;
                out.push(project_point(k, &Vec3::new(x.x, x.y, NEAR_PLANE_MM)).expect("on the near plane"));
            }
        }
        out
    }
}

/// The 12 edges: vertex pairs differing in exactly one corner sign.
pub fn cube_edges() -> Vec<(usize, usize)> {
    let mut edges = Vec::with_capacity(12);
    for a in 0..8 {
        for b in a + 1..8 {
            let diff = (0..3).filter(|&k| CORNER_SIGNS[a][k] != CORNER_SIGNS[b][k]).count();
            if diff == 1 {
                edges.push((a, b));
            }
        }
    }
    edges
}

pub fn project_cube(k: &CameraIntrinsics, pose: &Pose, cube: &BoundingCube) -> ProjectedCube {
    let camera = cube.vertices().map(|v| pose.transform(&v));
    ProjectedCube {
        pixels: camera.map(|p| project_point(k, &p).ok()),
        camera,
    }
}

fn cross(o: Pixel, a: Pixel, b: Pixel) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Convex hull by the monotone chain, counter-clockwise, no repeated points
/// and no collinear vertices.
pub fn convex_hull(points: &[Pixel]) -> Vec<Pixel> {
    let mut pts: Vec<Pixel> = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Pixel> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Pixel>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Shoelace area of a simple polygon.
pub fn polygon_area(poly: &[Pixel]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let twice: f64 = (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum();
    twice.abs() / 2.0
}

/// Whether a convex polygon (hull order) and the image rectangle overlap,
/// by the separating-axis test.
fn overlaps_image(hull: &[Pixel], k: &CameraIntrinsics) -> bool {
    let (w, h) = (k.width as f64, k.height as f64);
    if hull.is_empty() {
        return false;
    }
    let rect = [(0.0, 0.0), (w, 0.0), (w, h), (0.0, h)];
    let project = |poly: &[Pixel], axis: Pixel| {
        poly.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            let d = p.0 * axis.0 + p.1 * axis.1;
            (lo.min(d), hi.max(d))
        })
    };
    let mut axes = vec![(1.0, 0.0), (0.0, 1.0)];
    for i in 0..hull.len() {
        let (a, b) = (hull[i], hull[(i + 1) % hull.len()]);
        axes.push((a.1 - b.1, b.0 - a.0));
    }
    axes.iter().all(|&axis| {
        let (a0, a1) = project(hull, axis);
        let (b0, b1) = project(&rect, axis);
        a1 >= b0 && b1 >= a0
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AuditReason {
    BehindCamera,
    OutOfFrame,
    TinyProjection,
}

impl AuditReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            AuditReason::BehindCamera => "BehindCamera",
            AuditReason::OutOfFrame => "OutOfFrame",
            AuditReason::TinyProjection => "TinyProjection",
        }
    }
}

impl fmt::Display for AuditReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditFlag {
    pub image_id: String,
    pub class_id: String,
    pub reason: AuditReason,
}

/// Reason a single cube is invisible, or `None` when it passes.
///
/// Checks run in order: every vertex behind the camera; the clipped outline
/// misses the image rectangle entirely; the outline's hull is smaller than
/// `min_area_px`.
pub fn audit_cube(
    k: &CameraIntrinsics,
    pose: &Pose,
    cube: &BoundingCube,
    min_area_px: f64,
) -> Option<AuditReason> {
    let proj = project_cube(k, pose, cube);
    if proj.mask().iter().all(|v| !v) {
        return Some(AuditReason::BehindCamera);
    }
    let hull = convex_hull(&proj.clipped_outline(k));
    if !overlaps_image(&hull, k) {
        return Some(AuditReason::OutOfFrame);
    }
    if polygon_area(&hull) < min_area_px {
        return Some(AuditReason::TinyProjection);
    }
    None
}

/// Flags for every record that fails [`audit_cube`], in input order.
pub fn frustum_audit(
    records: &[AnnotationRecord],
    k: &CameraIntrinsics,
    min_area_px: f64,
) -> Vec<AuditFlag> {
    records
        .iter()
        .filter_map(|r| {
            audit_cube(k, &r.pose, &r.cube, min_area_px).map(|reason| AuditFlag {
                image_id: r.image_id.clone(),
                class_id: r.class_id.clone(),
                reason,
            })
        })
        .collect()
}
