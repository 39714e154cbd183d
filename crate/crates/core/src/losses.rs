//! Trainable losses: the eight-vertex cube loss with learned scale, the
//! volume loss, rotation-robust BEV IoU, and their weighted combination.

use crate::error::{Error, Result};
use crate::geometry::{
    effective_scale, scale_cube_unchecked, volume, AxisAngle, BoundingCube, Pose, ScaleParam,
    Vec3,
};
use crate::metrics::{chamfer_mean_brute, paired_mean_distance, ChamferDirection};

/// Denominator floor of [`volume_loss`], mm³.
pub const VOLUME_EPS: f64 = 1.0;

/// The nine optimized quantities: rotation vector, translation (mm) and raw scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseScaleParams {
    pub aa: AxisAngle,
    pub t: Vec3,
    pub s: ScaleParam,
}

impl PoseScaleParams {
    pub fn new(aa: AxisAngle, t: Vec3, s: ScaleParam) -> Self {
        PoseScaleParams { aa, t, s }
    }

    /// Pose parameters of `pose` with unit effective scale.
    pub fn from_pose(pose: &Pose, offset: f64) -> Result<Self> {
        let aa = crate::geometry::rotation_to_axis_angle(pose.rotation.matrix())?;
        let s = if offset == 0.0 {
            ScaleParam::unfloored(Vec3::zeros())
        } else {
            ScaleParam::for_scale(&Vec3::repeat(1.0), offset)?
        };
        Ok(PoseScaleParams::new(aa, pose.translation, s))
    }

    pub fn pose(&self) -> Pose {
        Pose::new(self.aa.to_rotation(), self.t)
    }

    pub fn to_array(&self) -> [f64; 9] {
        let (a, t, r) = (self.aa.0, self.t, self.s.raw);
        [a.x, a.y, a.z, t.x, t.y, t.z, r.x, r.y, r.z]
    }

    pub fn from_array(v: &[f64; 9], offset: f64) -> Self {
        PoseScaleParams {
            aa: AxisAngle(Vec3::new(v[0], v[1], v[2])),
            t: Vec3::new(v[3], v[4], v[5]),
            s: ScaleParam {
                raw: Vec3::new(v[6], v[7], v[8]),
                offset,
            },
        }
    }
}

/// Bird's-eye-view rectangle: center, length along its own x, width, yaw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BevBox {
    pub cx: f64,
    pub cy: f64,
    pub l: f64,
    pub w: f64,
    pub r: f64,
}

impl BevBox {
    pub fn new(cx: f64, cy: f64, l: f64, w: f64, r: f64) -> Result<Self> {
        if !(l > 0.0 && w > 0.0) {
            return Err(Error::InvalidParameter("BEV box sides must be positive"));
        }
        if ![cx, cy, l, w, r].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("BEV box"));
        }
        Ok(BevBox { cx, cy, l, w, r })
    }

    /// Footprint of an object-frame cube placed by `pose`: the cube's own x/y
    /// edges give length and width, the pose yaw gives the rotation.
    pub fn from_cube(cube: &BoundingCube, pose: &Pose) -> Self {
        let c = pose.transform(&cube.centroid());
        let e = cube.extents();
        BevBox {
            cx: c.x,
            cy: c.y,
            l: e.x,
            w: e.y,
            r: pose.rotation.yaw(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub cube: f64,
    pub volume: f64,
    pub riou: f64,
}

impl LossWeights {
    pub fn new(cube: f64, volume: f64, riou: f64) -> Result<Self> {
        let w = [cube, volume, riou];
        if w.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
            return Err(Error::InvalidParameter("loss weights must be non-negative"));
        }
        if w.iter().all(|&x| x == 0.0) {
            return Err(Error::InvalidParameter("at least one loss weight must be positive"));
        }
        Ok(LossWeights { cube, volume, riou })
    }

    pub fn cube_only() -> Self {
        LossWeights {
            cube: 1.0,
            volume: 0.0,
            riou: 0.0,
        }
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            cube: 1.0,
            volume: 0.1,
            riou: 0.0,
        }
    }
}

/// Everything the combined loss needs besides the optimized parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSetup {
    pub prior: BoundingCube,
    pub gt_pose: Pose,
    pub gt_cube: BoundingCube,
    pub dir: ChamferDirection,
    pub symmetric: bool,
    pub weights: LossWeights,
}

impl LossSetup {
    pub fn gt_points(&self) -> [Vec3; 8] {
        self.gt_cube.vertices().map(|v| self.gt_pose.transform(&v))
    }
}

/// Object-frame predicted cube: the prior scaled by the effective scale.
pub fn predicted_cube(params: &PoseScaleParams, prior: &BoundingCube) -> BoundingCube {
    scale_cube_unchecked(prior, &effective_scale(&params.s))
}

pub fn predicted_points(params: &PoseScaleParams, prior: &BoundingCube) -> [Vec3; 8] {
    let pose = params.pose();
    predicted_cube(params, prior)
        .vertices()
        .map(|v| pose.transform(&v))
}

fn check_finite(params: &PoseScaleParams) -> Result<()> {
    if params.to_array().iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite("pose/scale parameters"))
    }
}

/// Eight-vertex pose loss: ADD between the predicted and ground-truth cube
/// corners, or ADD-S in direction `dir` for symmetric objects.
pub fn cube_loss(
    params: &PoseScaleParams,
    prior: &BoundingCube,
    gt_pose: &Pose,
    gt_cube: &BoundingCube,
    dir: ChamferDirection,
    symmetric: bool,
) -> Result<f64> {
    check_finite(params)?;
    let pred = predicted_points(params, prior);
    let gt = gt_cube.vertices().map(|v| gt_pose.transform(&v));
    Ok(if !symmetric {
        paired_mean_distance(&pred, &gt)
    } else {
        match dir {
            ChamferDirection::PredToGt => chamfer_mean_brute(&pred, &gt),
            ChamferDirection::GtToPred => chamfer_mean_brute(&gt, &pred),
        }
    })
}

/// `|V(pred) − V(gt)| / max(V(gt), 1 mm³)`.
pub fn volume_loss(pred: &BoundingCube, gt: &BoundingCube) -> f64 {
    let vg = volume(gt);
    (volume(pred) - vg).abs() / vg.max(VOLUME_EPS)
}

/// Arithmetic needed to evaluate RIoU on plain floats and on dual numbers.
pub(crate) trait Real:
    Copy
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
{
    fn value(self) -> f64;
    fn constant(v: f64) -> Self;
    fn abs(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;

    fn min(self, o: Self) -> Self {
        if o.value() < self.value() {
            o
        } else {
            self
        }
    }

    fn max(self, o: Self) -> Self {
        if o.value() > self.value() {
            o
        } else {
            self
        }
    }
}

impl Real for f64 {
    fn value(self) -> f64 {
        self
    }
    fn constant(v: f64) -> Self {
        v
    }
    fn abs(self) -> Self {
        f64::abs(self)
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
}

/// Box parameters in generic arithmetic.
#[derive(Clone, Copy)]
pub(crate) struct BoxT<T> {
    pub cx: T,
    pub cy: T,
    pub l: T,
    pub w: T,
    pub r: T,
}

impl From<&BevBox> for BoxT<f64> {
    fn from(b: &BevBox) -> Self {
        BoxT {
            cx: b.cx,
            cy: b.cy,
            l: b.l,
            w: b.w,
            r: b.r,
        }
    }
}

/// Overlap area of `other`'s axis-aligned hull, expressed in `frame`'s axes,
/// with the `frame` rectangle.
fn frame_overlap<T: Real>(frame: &BoxT<T>, other: &BoxT<T>) -> T {
    let half = T::constant(0.5);
    let zero = T::constant(0.0);
    let (s, c) = (frame.r.sin(), frame.r.cos());
    let (ox, oy) = (other.cx - frame.cx, other.cy - frame.cy);
    let dx = c * ox + s * oy;
    let dy = c * oy - s * ox;
    let delta = other.r - frame.r;
    let (ds, dc) = (delta.sin().abs(), delta.cos().abs());
    let hx = half * other.l * dc + half * other.w * ds;
    let hy = half * other.l * ds + half * other.w * dc;
    let (fx, fy) = (half * frame.l, half * frame.w);
    let ix = ((dx + hx).min(fx) - (dx - hx).max(zero - fx)).max(zero);
    let iy = ((dy + hy).min(fy) - (dy - hy).max(zero - fy)).max(zero);
    ix * iy
}

pub(crate) fn riou_generic<T: Real>(g: &BoxT<T>, p: &BoxT<T>) -> T {
    let zero = T::constant(0.0);
    let i1 = frame_overlap(g, p);
    let i2 = frame_overlap(p, g);
    let inter = i1.min(i2) * (T::constant(2.0) * (g.r - p.r)).cos().abs();
    let union = inter.max(g.l * g.w + p.l * p.w - inter);
    if union.value() <= 0.0 {
        return zero;
    }
    (inter / union).max(zero).min(T::constant(1.0))
}

/// Rotation-robust IoU of two BEV boxes, in `[0, 1]`.
///
/// Each intersection term replaces the other box by its axis-aligned hull in
/// the frame of the reference box, so this is an approximation to exact
/// polygon IoU scaled down by `|cos 2Δr|`.
pub fn riou(g: &BevBox, p: &BevBox) -> f64 {
    riou_generic(&BoxT::from(g), &BoxT::from(p))
}

/// Weighted sum of the cube, volume and `1 − RIoU` terms.
pub fn combined_loss(params: &PoseScaleParams, setup: &LossSetup) -> Result<f64> {
    let terms = loss_terms(params, setup)?;
    Ok(terms.total(&setup.weights))
}

/// Unweighted loss components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub cube: f64,
    pub volume: f64,
    pub riou: f64,
}

impl LossTerms {
    pub fn total(&self, w: &LossWeights) -> f64 {
        let mut total = 0.0;
        // skip disabled terms so an unused term cannot inject NaN
        if w.cube != 0.0 {
            total += w.cube * self.cube;
        }
        if w.volume != 0.0 {
            total += w.volume * self.volume;
        }
        if w.riou != 0.0 {
            total += w.riou * (1.0 - self.riou);
        }
        total
    }
}

pub fn loss_terms(params: &PoseScaleParams, setup: &LossSetup) -> Result<LossTerms> {
    let cube = cube_loss(
        params,
        &setup.prior,
        &setup.gt_pose,
        &setup.gt_cube,
        setup.dir,
        setup.symmetric,
    )?;
    let pred_cube = predicted_cube(params, &setup.prior);
    let volume = volume_loss(&pred_cube, &setup.gt_cube);
    let g = BevBox::from_cube(&setup.gt_cube, &setup.gt_pose);
    let p = BevBox::from_cube(&pred_cube, &params.pose());
    let riou = riou(&g, &p);
    Ok(LossTerms { cube, volume, riou })
}

/// Distances of an RIoU evaluation from its switching surfaces (the
/// min/max/abs kinks), grouped by unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct KinkMargins {
    /// Smallest |sin| or |cos| of the yaw differences.
    pub angle: f64,
    /// Smallest clearance of a clipped interval endpoint, mm.
    pub length: f64,
    /// Gap between the two frame overlaps, mm².
    pub area: f64,
}

pub(crate) fn riou_kink_margins(g: &BevBox, p: &BevBox) -> KinkMargins {
    fn frame_margins(frame: &BevBox, other: &BevBox, angle: &mut f64, length: &mut f64) {
        let (s, c) = frame.r.sin_cos();
        let (ox, oy) = (other.cx - frame.cx, other.cy - frame.cy);
        let dx = c * ox + s * oy;
        let dy = c * oy - s * ox;
        let delta = other.r - frame.r;
        let (ds, dc) = (delta.sin(), delta.cos());
        let hx = 0.5 * other.l * dc.abs() + 0.5 * other.w * ds.abs();
        let hy = 0.5 * other.l * ds.abs() + 0.5 * other.w * dc.abs();
        let (fx, fy) = (0.5 * frame.l, 0.5 * frame.w);
        *angle = angle.min(ds.abs()).min(dc.abs());
        for (d, h, f) in [(dx, hx, fx), (dy, hy, fy)] {
            let hi = (d + h).min(f);
            let lo = (d - h).max(-f);
            for m in [d + h - f, d - h + f, hi - lo] {
                *length = length.min(m.abs());
            }
        }
    }
    let (mut angle, mut length) = ((2.0 * (g.r - p.r)).cos().abs(), f64::INFINITY);
    frame_margins(g, p, &mut angle, &mut length);
    frame_margins(p, g, &mut angle, &mut length);
    let gb = BoxT::from(g);
    let pb = BoxT::from(p);
    let area = (frame_overlap(&gb, &pb) - frame_overlap(&pb, &gb)).abs();
    KinkMargins { angle, length, area }
}
