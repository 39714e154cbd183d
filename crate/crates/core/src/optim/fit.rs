use crate::error::{Error, Result};
use crate::geometry::PointSet;
use crate::losses::{combined_loss, LossSetup, PoseScaleParams};
use crate::metrics::{pose_error, ChamferDirection};

use super::gradient::{loss_gradient, Gradient};

/// Armijo sufficient-decrease constant.
const ARMIJO_C: f64 = 1e-4;
/// Backtracking shrink factor.
const SHRINK: f64 = 0.5;
const MAX_BACKTRACKS: usize = 60;
/// Floor on exp(raw) in the relative scale preconditioner.
const MIN_SCALE_LEVER: f64 = 1e-6;
/// Losses below this fraction of the prior's half-diagonal count as exact zero.
const ZERO_LOSS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub max_iters: usize,
    /// Initial trial step as a fraction of the prior's half-diagonal.
    pub step_size: f64,
    /// Loss change (mm) below which an iteration counts as stalled.
    pub converge_tol: f64,
    /// Consecutive stalled iterations that end the fit.
    pub patience: usize,
    pub fit_rotation: bool,
    pub fit_translation: bool,
    pub fit_scale: bool,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_iters: 2000,
            step_size: 1e-2,
            converge_tol: 1e-6,
            patience: 20,
            fit_rotation: true,
            fit_translation: true,
            fit_scale: false,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(Error::InvalidParameter("max_iters must be at least 1"));
        }
        if !(self.step_size > 0.0) {
            return Err(Error::InvalidParameter("step_size must be positive"));
        }
        if !(self.converge_tol >= 0.0) {
            return Err(Error::InvalidParameter("converge_tol must be non-negative"));
        }
        Ok(())
    }

    fn mask(&self) -> [bool; 9] {
        let (r, t, s) = (self.fit_rotation, self.fit_translation, self.fit_scale);
        [r, r, r, t, t, t, s, s, s]
    }
}

/// Points and protocol used to score the fitted pose against the true model.
#[derive(Debug, Clone)]
pub struct EvalModel {
    pub points: PointSet,
    pub symmetric: bool,
    pub dir: ChamferDirection,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub loss: f64,
    pub add_vs_true: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitTrace {
    pub rows: Vec<TraceRow>,
    pub params: PoseScaleParams,
    pub converged: bool,
}

impl FitTrace {
    pub fn final_loss(&self) -> f64 {
        self.rows.last().map_or(f64::NAN, |r| r.loss)
    }

    pub fn final_add(&self) -> f64 {
        self.rows.last().map_or(f64::NAN, |r| r.add_vs_true)
    }
}

/// Gradient descent with Armijo backtracking on the combined loss.
///
/// The search direction is the negative gradient preconditioned so that one
/// unit of step moves cube corners by roughly one millimeter whichever block
/// (rotation, translation, scale) it acts on. Row 0 of the trace is the
/// initial point; every later row is an accepted (or stalled) iteration, so
/// the loss column never increases.
pub fn fit_pose(
    init: &PoseScaleParams,
    setup: &LossSetup,
    eval: &EvalModel,
    cfg: &FitConfig,
) -> Result<FitTrace> {
    cfg.validate()?;
    let offset = init.s.offset;
    let mask = cfg.mask();
    let radius = setup
        .prior
        .half_axes()
        .iter()
        .map(|h| h.norm_squared())
        .sum::<f64>()
        .sqrt()
        .max(1e-9);
    let lever = 1.0 / (radius * radius);
    let score = |p: &PoseScaleParams| {
        pose_error(&p.pose(), &setup.gt_pose, &eval.points, eval.symmetric, eval.dir)
    };
    let loss_at = |x: &Gradient| combined_loss(&PoseScaleParams::from_array(x, offset), setup);

    let mut x = init.to_array();
    let mut loss = loss_at(&x)?;
    if !loss.is_finite() {
        return Err(Error::Diverged { iter: 0 });
    }
    let mut rows = vec![TraceRow {
        iter: 0,
        loss,
        add_vs_true: score(init)?,
    }];
    let mut alpha = cfg.step_size * radius;
    let max_alpha = 10.0 * radius;
    let mut stalled = 0;
    let mut converged = loss <= ZERO_LOSS * radius;
    if converged {
        return Ok(FitTrace {
            rows,
            params: *init,
            converged,
        });
    }

    for iter in 1..cfg.max_iters {
        if loss <= ZERO_LOSS * radius {
            converged = true;
            break;
        }
        let params = PoseScaleParams::from_array(&x, offset);
        let g = loss_gradient(&params, setup)?;
        // scale steps are relative: dividing by exp(raw)² makes a unit step
        // change the effective scale in proportion to its current size
        let relative = params.s.raw.map(|r| r.exp().max(MIN_SCALE_LEVER).powi(-2));
        let precond = [
            lever,
            lever,
            lever,
            1.0,
            1.0,
            1.0,
            lever * relative.x,
            lever * relative.y,
            lever * relative.z,
        ];
        let mut d = [0.0; 9];
        for k in 0..9 {
            if mask[k] {
                d[k] = -precond[k] * g[k];
            }
        }
        let slope: f64 = (0..9).map(|k| g[k] * d[k]).sum();
        if slope == 0.0 {
            converged = true;
            break;
        }
        if !slope.is_finite() {
            return Err(Error::Diverged { iter });
        }

        let mut accepted = None;
        let mut any_finite = false;
        let mut step = alpha;
        for _ in 0..MAX_BACKTRACKS {
            let trial: Gradient = std::array::from_fn(|k| x[k] + step * d[k]);
            let trial_loss = match loss_at(&trial) {
                Ok(l) => l,
                Err(Error::NonFinite(_)) => f64::NAN,
                Err(e) => return Err(e),
            };
            any_finite |= trial_loss.is_finite();
            if trial_loss.is_finite() && trial_loss <= loss + ARMIJO_C * step * slope {
                accepted = Some((trial, trial_loss));
                break;
            }
            step *= SHRINK;
        }
        if !any_finite {
            return Err(Error::Diverged { iter });
        }

        let change = match accepted {
            Some((trial, trial_loss)) => {
                let change = loss - trial_loss;
                x = trial;
                loss = trial_loss;
                alpha = (step * 2.0).min(max_alpha);
                change
            }
            None => {
                alpha = step;
                0.0
            }
        };
        if !loss.is_finite() {
            return Err(Error::Diverged { iter });
        }
        rows.push(TraceRow {
            iter,
            loss,
            add_vs_true: score(&PoseScaleParams::from_array(&x, offset))?,
        });
        if change < cfg.converge_tol {
            stalled += 1;
            if stalled >= cfg.patience {
                converged = true;
                break;
            }
        } else {
            stalled = 0;
        }
    }

    Ok(FitTrace {
        rows,
        params: PoseScaleParams::from_array(&x, offset),
        converged,
    })
}
