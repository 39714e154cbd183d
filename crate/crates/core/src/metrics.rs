//! ADD / ADD-S pose errors and thresholded accuracy.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::{Pose, PointSet, Vec3};
use crate::spatial::{dist_sq, KdTree};

/// Default ADD(-S) acceptance fraction of the object diameter.
pub const DEFAULT_THRESHOLD: f64 = 0.1;
/// Outer point count above which ADD-S queries go through an [`NnIndex`].
pub const DEFAULT_NN_CROSSOVER: usize = 64;

/// Which transformed set supplies the outer loop of the ADD-S sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ChamferDirection {
    /// Each predicted point is matched to its nearest ground-truth point.
    PredToGt,
    /// Each ground-truth point is matched to its nearest predicted point.
    GtToPred,
}

impl ChamferDirection {
    pub fn as_str(&self) -> &'static str {
        match self {
            ChamferDirection::PredToGt => "pred_to_gt",
            ChamferDirection::GtToPred => "gt_to_pred",
        }
    }
}

impl fmt::Display for ChamferDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ChamferDirection {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "pred_to_gt" => Ok(ChamferDirection::PredToGt),
            "gt_to_pred" => Ok(ChamferDirection::GtToPred),
            other => Err(format!("expected pred_to_gt or gt_to_pred, got {other:?}")),
        }
    }
}

/// Exact nearest-neighbor index over a fixed point set.
#[derive(Debug, Clone)]
pub struct NnIndex {
    tree: KdTree,
}

impl NnIndex {
    pub fn build(points: &[Vec3]) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyPointSet);
        }
        Ok(NnIndex {
            tree: KdTree::build(points),
        })
    }

    /// `(index, distance)` of the nearest indexed point; ties go to the lowest index.
    pub fn nearest(&self, q: &Vec3) -> (usize, f64) {
        let (i, d2) = self.tree.nearest(q);
        (i, d2.sqrt())
    }

    pub fn len(&self) -> usize {
        self.tree.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tree.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricScore {
    pub error: f64,
    pub diameter: f64,
    pub symmetric: bool,
    pub correct: bool,
}

impl MetricScore {
    pub fn new(error: f64, diameter: f64, symmetric: bool, k: f64) -> Self {
        MetricScore {
            error,
            diameter,
            symmetric,
            correct: is_correct(error, diameter, k),
        }
    }
}

/// Strict: an error of exactly `k · diameter` is incorrect.
pub fn is_correct(error: f64, diameter: f64, k: f64) -> bool {
    error < k * diameter
}

/// Mean distance between index-paired points.
pub fn paired_mean_distance(a: &[Vec3], b: &[Vec3]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let sum: f64 = a.iter().zip(b).map(|(p, q)| dist_sq(p, q).sqrt()).sum();
    sum / a.len() as f64
}

/// Mean over `outer` of the distance to the nearest point of `inner`, linear scan.
pub fn chamfer_mean_brute(outer: &[Vec3], inner: &[Vec3]) -> f64 {
    let sum: f64 = outer
        .iter()
        .map(|p| {
            inner
                .iter()
                .map(|q| dist_sq(p, q))
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .sum();
    sum / outer.len() as f64
}

/// Same as [`chamfer_mean_brute`] using an index over `inner`.
pub fn chamfer_mean_indexed(outer: &[Vec3], index: &NnIndex) -> f64 {
    let sum: f64 = outer.iter().map(|p| index.nearest(p).1).sum();
    sum / outer.len() as f64
}

fn transformed(p: &Pose, pts: &PointSet) -> Vec<Vec3> {
    pts.points().iter().map(|x| p.transform(x)).collect()
}

pub fn add_error(pred: &Pose, gt: &Pose, pts: &PointSet) -> Result<f64> {
    if pts.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    let sum: f64 = pts
        .points()
        .iter()
        .map(|x| dist_sq(&gt.transform(x), &pred.transform(x)).sqrt())
        .sum();
    Ok(sum / pts.len() as f64)
}

pub fn add_s_error(pred: &Pose, gt: &Pose, pts: &PointSet, dir: ChamferDirection) -> Result<f64> {
    add_s_error_with(pred, gt, pts, dir, DEFAULT_NN_CROSSOVER)
}

/// ADD-S with an explicit brute-force/index crossover (index used when `m > crossover`).
pub fn add_s_error_with(
    pred: &Pose,
    gt: &Pose,
    pts: &PointSet,
    dir: ChamferDirection,
    crossover: usize,
) -> Result<f64> {
    if pts.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    let (outer, inner) = oriented_sets(pred, gt, pts, dir);
    if pts.len() > crossover {
        Ok(chamfer_mean_indexed(&outer, &NnIndex::build(&inner)?))
    } else {
        Ok(chamfer_mean_brute(&outer, &inner))
    }
}

/// Linear-scan ADD-S regardless of size.
pub fn add_s_error_brute(
    pred: &Pose,
    gt: &Pose,
    pts: &PointSet,
    dir: ChamferDirection,
) -> Result<f64> {
    add_s_error_with(pred, gt, pts, dir, usize::MAX)
}

/// Index-backed ADD-S regardless of size.
pub fn add_s_error_indexed(
    pred: &Pose,
    gt: &Pose,
    pts: &PointSet,
    dir: ChamferDirection,
) -> Result<f64> {
    add_s_error_with(pred, gt, pts, dir, 0)
}

fn oriented_sets(
    pred: &Pose,
    gt: &Pose,
    pts: &PointSet,
    dir: ChamferDirection,
) -> (Vec<Vec3>, Vec<Vec3>) {
    let p = transformed(pred, pts);
    let g = transformed(gt, pts);
    match dir {
        ChamferDirection::PredToGt => (p, g),
        ChamferDirection::GtToPred => (g, p),
    }
}

/// ADD-S for symmetric objects, ADD otherwise.
pub fn pose_error(
    pred: &Pose,
    gt: &Pose,
    pts: &PointSet,
    symmetric: bool,
    dir: ChamferDirection,
) -> Result<f64> {
    if symmetric {
        add_s_error(pred, gt, pts, dir)
    } else {
        add_error(pred, gt, pts)
    }
}

/// Fraction of scores with `error < k · diameter`.
pub fn threshold_accuracy(scores: &[MetricScore], k: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(k > 0.0) {
        return Err(Error::InvalidParameter("threshold k must be positive"));
    }
    let hits = scores
        .iter()
        .filter(|s| is_correct(s.error, s.diameter, k))
        .count();
    Ok(hits as f64 / scores.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{cube_from_aabb, AxisAngle, Rotation};
    use std::f64::consts::PI;

    fn unit_cube_points() -> PointSet {
        cube_from_aabb(&Vec3::repeat(-0.5), &Vec3::repeat(0.5))
            .unwrap()
            .points()
    }

    #[test]
    fn identical_poses_score_zero() {
        let pts = unit_cube_points();
        let p = Pose::new(AxisAngle(Vec3::new(0.1, 0.2, 0.3)).to_rotation(), Vec3::new(1.0, 2.0, 3.0));
        assert_eq!(add_error(&p, &p, &pts).unwrap(), 0.0);
        for dir in [ChamferDirection::PredToGt, ChamferDirection::GtToPred] {
            assert_eq!(add_s_error(&p, &p, &pts, dir).unwrap(), 0.0);
        }
        assert_eq!(pose_error(&p, &p, &pts, false, ChamferDirection::GtToPred).unwrap(), 0.0);
    }

    #[test]
    fn translation_offset_is_exact() {
        let pts = unit_cube_points();
        let gt = Pose::identity();
        let pred = Pose::from_translation(Vec3::new(10.0, 0.0, 0.0));
        assert_eq!(add_error(&pred, &gt, &pts).unwrap(), 10.0);
    }

    #[test]
    fn half_turn_cube() {
        let pts = unit_cube_points();
        let gt = Pose::identity();
        let pred = Pose::new(Rotation::about_z(PI), Vec3::zeros());
        let add = add_error(&pred, &gt, &pts).unwrap();
        assert!((add - 2f64.sqrt()).abs() < 1e-9);
        let adds = add_s_error(&pred, &gt, &pts, ChamferDirection::GtToPred).unwrap();
        assert!(adds.abs() < 1e-9);
        let sym = pose_error(&pred, &gt, &pts, true, ChamferDirection::PredToGt).unwrap();
        assert!(sym.abs() < 1e-9);
    }

    #[test]
    fn direction_matters_for_unequal_sets() {
        let pts = PointSet::new(vec![Vec3::zeros(), Vec3::new(10.0, 0.0, 0.0)]).unwrap();
        // prediction collapses both points onto the origin
        let gt = Pose::identity();
        let pred = Pose::identity();
        let a = chamfer_mean_brute(&[Vec3::zeros(), Vec3::zeros()], pts.points());
        let b = chamfer_mean_brute(pts.points(), &[Vec3::zeros(), Vec3::zeros()]);
        assert_eq!(a, 0.0);
        assert_eq!(b, 5.0);
        assert_eq!(add_s_error(&pred, &gt, &pts, ChamferDirection::PredToGt).unwrap(), 0.0);
    }

    #[test]
    fn threshold_accuracy_examples() {
        let d = 170.0;
        let s = |e: f64| MetricScore::new(e, d, false, 0.1);
        assert_eq!(threshold_accuracy(&[s(0.05 * d), s(0.2 * d)], 0.1).unwrap(), 0.5);
        assert_eq!(threshold_accuracy(&[s(0.0), s(0.0)], 0.1).unwrap(), 1.0);
        let boundary = MetricScore::new(17.0, 170.0, false, 0.1);
        assert!(is_correct(16.999, 170.0, 0.1));
        assert!(!boundary.correct);
        assert_eq!(threshold_accuracy(&[boundary], 0.1).unwrap(), 0.0);
        assert_eq!(threshold_accuracy(&[], 0.1), Err(Error::EmptyInput));
        assert!(threshold_accuracy(&[s(0.0)], 0.0).is_err());
    }

    #[test]
    fn index_guards() {
        assert!(NnIndex::build(&[]).is_err());
        let idx = NnIndex::build(&[Vec3::zeros(), Vec3::x()]).unwrap();
        let (i, d) = idx.nearest(&Vec3::new(0.9, 0.0, 0.0));
        assert_eq!(i, 1);
        assert!((d - 0.1).abs() < 1e-12);
        assert_eq!(idx.len(), 2);
    }

    #[test]
    fn direction_parses() {
        assert_eq!("pred_to_gt".parse::<ChamferDirection>(), Ok(ChamferDirection::PredToGt));
        assert_eq!("gt_to_pred".parse::<ChamferDirection>(), Ok(ChamferDirection::GtToPred));
        assert!("both".parse::<ChamferDirection>().is_err());
    }
}
