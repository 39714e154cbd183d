//! Analytic gradient of [`combined_loss`](crate::losses::combined_loss) with
//! respect to the nine parameters `(rotation vector, translation, raw scale)`,
//! and a central-difference reference.

use nalgebra::Matrix3;

use crate::error::Result;
use crate::geometry::{effective_scale, right_jacobian, skew, Vec3, CORNER_SIGNS};
use crate::losses::{
    predicted_cube, riou_generic, BevBox, BoxT, LossSetup, PoseScaleParams, Real, VOLUME_EPS,
};
use crate::metrics::ChamferDirection;
use crate::spatial::dist_sq;

pub type Gradient = [f64; 9];

/// Forward-mode dual number carrying partials with respect to the five
/// predicted BEV box quantities `(cx, cy, l, w, r)`.
#[derive(Debug, Clone, Copy)]
struct Dual {
    v: f64,
    d: [f64; 5],
}

impl Dual {
    fn var(v: f64, k: usize) -> Self {
        let mut d = [0.0; 5];
        d[k] = 1.0;
        Dual { v, d }
    }

    fn map(self, v: f64, slope: f64) -> Self {
        Dual {
            v,
            d: self.d.map(|x| x * slope),
        }
    }
}

impl std::ops::Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        Dual {
            v: self.v + o.v,
            d: std::array::from_fn(|k| self.d[k] + o.d[k]),
        }
    }
}

impl std::ops::Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        Dual {
            v: self.v - o.v,
            d: std::array::from_fn(|k| self.d[k] - o.d[k]),
        }
    }
}

impl std::ops::Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        Dual {
            v: self.v * o.v,
            d: std::array::from_fn(|k| self.d[k] * o.v + self.v * o.d[k]),
        }
    }
}

impl std::ops::Div for Dual {
    type Output = Dual;
    fn div(self, o: Dual) -> Dual {
        let inv = 1.0 / o.v;
        Dual {
            v: self.v * inv,
            d: std::array::from_fn(|k| (self.d[k] - self.v * inv * o.d[k]) * inv),
        }
    }
}

impl Real for Dual {
    fn value(self) -> f64 {
        self.v
    }
    fn constant(v: f64) -> Self {
        Dual { v, d: [0.0; 5] }
    }
    fn abs(self) -> Self {
        let s = if self.v > 0.0 {
            1.0
        } else if self.v < 0.0 {
            -1.0
        } else {
            0.0
        };
        self.map(self.v.abs(), s)
    }
    fn sin(self) -> Self {
        self.map(self.v.sin(), self.v.cos())
    }
    fn cos(self) -> Self {
        self.map(self.v.cos(), -self.v.sin())
    }
}

/// Index pairs `(pred, gt)` entering the cube loss, each weighted 1/8.
fn matched_pairs(pred: &[Vec3; 8], gt: &[Vec3; 8], setup: &LossSetup) -> [(usize, usize); 8] {
    let nearest = |q: &Vec3, set: &[Vec3; 8]| {
        let mut best = (0, f64::INFINITY);
        for (i, p) in set.iter().enumerate() {
            let d = dist_sq(p, q);
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    };
    std::array::from_fn(|k| {
        if !setup.symmetric {
            (k, k)
        } else {
            match setup.dir {
                ChamferDirection::PredToGt => (k, nearest(&pred[k], gt)),
                ChamferDirection::GtToPred => (nearest(&gt[k], pred), k),
            }
        }
    })
}

/// Gradient of the combined loss. In the ADD-S branch the nearest-neighbor
/// assignment is frozen at the current parameters; at exact ties the lowest
/// index wins. Zero-length residuals contribute the zero subgradient.
pub fn loss_gradient(params: &PoseScaleParams, setup: &LossSetup) -> Result<Gradient> {
    // validates finiteness the same way the loss does
    crate::losses::cube_loss(
        params,
        &setup.prior,
        &setup.gt_pose,
        &setup.gt_cube,
        setup.dir,
        setup.symmetric,
    )?;
    let w = setup.weights;
    let rot = params.aa.to_rotation();
    let r = *rot.matrix();
    let jr = right_jacobian(&params.aa);
    let scale = effective_scale(&params.s);
    let dscale = params.s.raw.map(f64::exp);
    let prior = &setup.prior;
    let half = prior.half_axes();

    let mut g_aa = Vec3::zeros();
    let mut g_t = Vec3::zeros();
    let mut g_raw = Vec3::zeros();

    if w.cube != 0.0 {
        let q = predicted_cube(params, prior).vertices().to_owned();
        let pred = q.map(|v| r * v + params.t);
        let gt = setup.gt_points();
        // dL/dp_i accumulated per predicted vertex
        let mut u = [Vec3::zeros(); 8];
        for (i, j) in matched_pairs(&pred, &gt, setup) {
            let diff = pred[i] - gt[j];
            let n = dist_sq(&pred[i], &gt[j]).sqrt();
            if n > 0.0 {
                u[i] += diff * (w.cube / (8.0 * n));
            }
        }
        let mut torque = Vec3::zeros();
        for i in 0..8 {
            g_t += u[i];
            let body = r.transpose() * u[i];
            torque += q[i].cross(&body);
            for k in 0..3 {
                g_raw[k] += CORNER_SIGNS[i][k] * half[k].dot(&body) * dscale[k];
            }
        }
        g_aa += jr.transpose() * torque;
    }

    if w.volume != 0.0 {
        let v_prior = prior.volume();
        let v_gt = setup.gt_cube.volume();
        let v_pred = predicted_cube(params, prior).volume();
        let sign = if v_pred > v_gt {
            1.0
        } else if v_pred < v_gt {
            -1.0
        } else {
            0.0
        };
        let coeff = w.volume * sign * v_prior / v_gt.max(VOLUME_EPS);
        for k in 0..3 {
            let others: f64 = (0..3).filter(|&j| j != k).map(|j| scale[j]).product();
            g_raw[k] += coeff * others * dscale[k];
        }
    }

    if w.riou != 0.0 {
        let pose = params.pose();
        let pred_cube = predicted_cube(params, prior);
        let pb = BevBox::from_cube(&pred_cube, &pose);
        let gb = BoxT::from(&BevBox::from_cube(&setup.gt_cube, &setup.gt_pose));
        let g_dual = BoxT {
            cx: Dual::constant(gb.cx),
            cy: Dual::constant(gb.cy),
            l: Dual::constant(gb.l),
            w: Dual::constant(gb.w),
            r: Dual::constant(gb.r),
        };
        let p_dual = BoxT {
            cx: Dual::var(pb.cx, 0),
            cy: Dual::var(pb.cy, 1),
            l: Dual::var(pb.l, 2),
            w: Dual::var(pb.w, 3),
            r: Dual::var(pb.r, 4),
        };
        let d = riou_generic(&g_dual, &p_dual).d.map(|x| -w.riou * x);

        // center: R c + t
        let c = prior.centroid();
        let dc_daa = -(r * skew(&c) * jr);
        for k in 0..3 {
            g_aa[k] += d[0] * dc_daa[(0, k)] + d[1] * dc_daa[(1, k)];
        }
        g_t.x += d[0];
        g_t.y += d[1];
        // length and width follow the scaled x / y extents
        let ext = prior.extents();
        g_raw.x += d[2] * ext.x * dscale.x;
        g_raw.y += d[3] * ext.y * dscale.y;
        // yaw = atan2(R10, R00)
        let den = r[(0, 0)].powi(2) + r[(1, 0)].powi(2);
        if den > 0.0 {
            for k in 0..3 {
                let dr: Matrix3<f64> = r * skew(&jr.column(k).into());
                let dyaw = (r[(0, 0)] * dr[(1, 0)] - r[(1, 0)] * dr[(0, 0)]) / den;
                g_aa[k] += d[4] * dyaw;
            }
        }
    }

    Ok([
        g_aa.x, g_aa.y, g_aa.z, g_t.x, g_t.y, g_t.z, g_raw.x, g_raw.y, g_raw.z,
    ])
}

/// Central differences of `f` around `x` with step `h` in every coordinate.
pub fn finite_difference<F>(f: F, x: &Gradient, h: f64) -> Result<Gradient>
where
    F: Fn(&Gradient) -> Result<f64>,
{
    let mut g = [0.0; 9];
    for k in 0..9 {
        let mut plus = *x;
        let mut minus = *x;
        plus[k] += h;
        minus[k] -= h;
        g[k] = (f(&plus)? - f(&minus)?) / (2.0 * h);
    }
    Ok(g)
}

/// Central-difference gradient of the combined loss.
pub fn finite_difference_gradient(
    params: &PoseScaleParams,
    setup: &LossSetup,
    h: f64,
) -> Result<Gradient> {
    let offset = params.s.offset;
    finite_difference(
        |x| crate::losses::combined_loss(&PoseScaleParams::from_array(x, offset), setup),
        &params.to_array(),
        h,
    )
}
