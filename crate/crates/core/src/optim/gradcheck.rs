//! Randomized comparison of an analytic gradient against central differences
//! on instances kept away from every non-smooth point of the loss.

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{cube_from_aabb, AxisAngle, BoundingCube, Pose, ScaleParam, Vec3};
use crate::losses::{
    predicted_cube, predicted_points, riou_kink_margins, BevBox, LossSetup, LossWeights,
    PoseScaleParams,
};
use crate::metrics::ChamferDirection;
use crate::spatial::dist_sq;

use super::experiments::{random_rotation, random_unit, trial_rng};
use super::gradient::{finite_difference_gradient, Gradient};

/// Minimum clearance (mm) from residual zeros and nearest-neighbor ties.
const DISTANCE_MARGIN: f64 = 2.0;
/// Minimum relative gap between predicted and ground-truth volume.
const VOLUME_MARGIN: f64 = 1e-2;
/// Minimum clearances from the RIoU switching surfaces: dimensionless, mm, mm².
const RIOU_ANGLE_MARGIN: f64 = 0.02;
const RIOU_LENGTH_MARGIN: f64 = 2.0;
const RIOU_AREA_MARGIN: f64 = 200.0;
const MAX_DRAWS: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckConfig {
    pub instances: usize,
    /// Central-difference step for the accuracy check.
    pub h: f64,
    /// Pass threshold on the worst relative error.
    pub tolerance: f64,
    /// Coarse step of the convergence-order check (compared with `order_h / 2`).
    pub order_h: f64,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            instances: 100,
            h: 1e-5,
            tolerance: 1e-5,
            order_h: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceCheck {
    pub index: usize,
    pub rel_error: f64,
    pub analytic: Gradient,
    pub numeric: Gradient,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub checks: Vec<InstanceCheck>,
    pub max_rel_error: f64,
    pub worst: usize,
    /// Observed order of the central-difference error, `log2(E(h) / E(h/2))`.
    pub order: f64,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance && self.order_ok()
    }

    /// Central differences are second order; anything in `[1.5, 2.5]` counts.
    pub fn order_ok(&self) -> bool {
        (1.5..=2.5).contains(&self.order)
    }
}

/// `‖a − n‖∞ / max(‖a‖∞, ‖n‖∞)`, or 0 when both vanish.
pub fn relative_error(a: &Gradient, n: &Gradient) -> f64 {
    let inf = |v: &Gradient| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let diff: Gradient = std::array::from_fn(|k| a[k] - n[k]);
    let scale = inf(a).max(inf(n));
    if scale == 0.0 {
        0.0
    } else {
        inf(&diff) / scale
    }
}

fn smooth_enough(params: &PoseScaleParams, setup: &LossSetup) -> bool {
    let angle = params.aa.angle();
    if !(0.1..std::f64::consts::PI - 0.1).contains(&angle) {
        return false;
    }
    let pred = predicted_points(params, &setup.prior);
    let gt = setup.gt_points();
    let clear = |outer: &[Vec3; 8], inner: &[Vec3; 8]| {
        outer.iter().all(|p| {
            let mut d: Vec<f64> = inner.iter().map(|q| dist_sq(p, q).sqrt()).collect();
            d.sort_by(f64::total_cmp);
            d[0] > DISTANCE_MARGIN && d[1] - d[0] > DISTANCE_MARGIN
        })
    };
    let ok_cube = if !setup.symmetric {
        pred.iter().zip(&gt).all(|(p, q)| dist_sq(p, q).sqrt() > DISTANCE_MARGIN)
    } else {
        match setup.dir {
            ChamferDirection::PredToGt => clear(&pred, &gt),
            ChamferDirection::GtToPred => clear(&gt, &pred),
        }
    };
    if !ok_cube {
        return false;
    }
    let vp = predicted_cube(params, &setup.prior).volume();
    let vg = setup.gt_cube.volume();
    if (vp - vg).abs() < VOLUME_MARGIN * vg {
        return false;
    }
    let r = params.aa.to_rotation();
    let m = r.matrix();
    if m[(0, 0)].powi(2) + m[(1, 0)].powi(2) < 0.1 {
        return false;
    }
    let g = BevBox::from_cube(&setup.gt_cube, &setup.gt_pose);
    let p = BevBox::from_cube(&predicted_cube(params, &setup.prior), &params.pose());
    let k = riou_kink_margins(&g, &p);
    k.angle > RIOU_ANGLE_MARGIN && k.length > RIOU_LENGTH_MARGIN && k.area > RIOU_AREA_MARGIN
}

fn box_of(extents: Vec3) -> Result<BoundingCube> {
    cube_from_aabb(&(-extents / 2.0), &(extents / 2.0))
}

/// Draws one random instance with all four loss branches enabled and a random
/// symmetric flag and chamfer direction, redrawing until it is smooth.
pub fn random_smooth_instance(rng: &mut impl Rng) -> Result<(PoseScaleParams, LossSetup)> {
    for _ in 0..MAX_DRAWS {
        let extents = Vec3::new(
            rng.random_range(40.0..200.0),
            rng.random_range(40.0..200.0),
            rng.random_range(40.0..200.0),
        );
        let prior = box_of(extents)?;
        let gt_ext = extents.map(|e| e * rng.random_range(0.8..1.2));
        let gt_cube = box_of(gt_ext)?;
        let gt_pose = Pose::new(
            random_rotation(rng),
            Vec3::new(
                rng.random_range(-100.0..100.0),
                rng.random_range(-100.0..100.0),
                rng.random_range(500.0..1500.0),
            ),
        );
        let delta = AxisAngle::new(random_unit(rng), rng.random_range(0.05..0.6)).to_rotation();
        let rot = gt_pose.rotation.compose(&delta);
        let aa = crate::geometry::rotation_to_axis_angle(rot.matrix())?;
        let t = gt_pose.translation + random_unit(rng) * rng.random_range(5.0..40.0);
        let raw = Vec3::new(
            rng.random_range(-0.4..0.4),
            rng.random_range(-0.4..0.4),
            rng.random_range(-0.4..0.4),
        );
        let params = PoseScaleParams::new(aa, t, ScaleParam::new(raw, 0.2)?);
        let symmetric = rng.random_bool(0.5);
        let dir = if rng.random_bool(0.5) {
            ChamferDirection::PredToGt
        } else {
            ChamferDirection::GtToPred
        };
        let weights = LossWeights::new(1.0, rng.random_range(0.0..1.0), rng.random_range(0.0..50.0))?;
        let setup = LossSetup {
            prior,
            gt_pose,
            gt_cube,
            dir,
            symmetric,
            weights,
        };
        if smooth_enough(&params, &setup) {
            return Ok((params, setup));
        }
    }
    Err(Error::InvalidParameter("could not draw a smooth gradcheck instance"))
}

/// Checks `grad` against central differences on `cfg.instances` seeded
/// instances and estimates the convergence order of the differences.
pub fn gradcheck<G>(cfg: &GradcheckConfig, grad: G) -> Result<GradcheckReport>
where
    G: Fn(&PoseScaleParams, &LossSetup) -> Result<Gradient>,
{
    if cfg.instances < 1 {
        return Err(Error::InvalidParameter("gradcheck needs at least one instance"));
    }
    if !(cfg.h > 0.0 && cfg.order_h > 0.0) {
        return Err(Error::InvalidParameter("finite-difference steps must be positive"));
    }
    let mut checks = Vec::with_capacity(cfg.instances);
    let (mut coarse, mut fine) = (0.0, 0.0);
    for index in 0..cfg.instances {
        let mut rng = trial_rng(cfg.seed, index);
        let (params, setup) = random_smooth_instance(&mut rng)?;
        let analytic = grad(&params, &setup)?;
        let numeric = finite_difference_gradient(&params, &setup, cfg.h)?;
        let rel_error = relative_error(&analytic, &numeric);
        if !rel_error.is_finite() {
            return Err(Error::NonFinite("gradient"));
        }
        let at_coarse = finite_difference_gradient(&params, &setup, cfg.order_h)?;
        let at_fine = finite_difference_gradient(&params, &setup, cfg.order_h / 2.0)?;
        coarse += relative_error(&analytic, &at_coarse);
        fine += relative_error(&analytic, &at_fine);
        checks.push(InstanceCheck {
            index,
            rel_error,
            analytic,
            numeric,
        });
    }
    let worst = checks
        .iter()
        .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
        .map_or(0, |c| c.index);
    let order = if fine > 0.0 { (coarse / fine).log2() } else { f64::NAN };
    Ok(GradcheckReport {
        max_rel_error: checks[worst].rel_error,
        worst,
        checks,
        order,
        tolerance: cfg.tolerance,
    })
}

/// The analytic gradient with every component negated, for negative-control runs.
pub fn sign_flipped_gradient(params: &PoseScaleParams, setup: &LossSetup) -> Result<Gradient> {
    Ok(super::gradient::loss_gradient(params, setup)?.map(|g| -g))
}
