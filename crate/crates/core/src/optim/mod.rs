//! Analytic gradients, finite-difference checks and gradient-descent fitting.

pub mod experiments;
pub mod fit;
pub mod gradcheck;
pub mod gradient;

pub use experiments::{
    collapse_experiment, model_swap_experiment, pose_recovery_trials, CollapseReport, CollapseRun,
    COLLAPSE_CONTROL, COLLAPSE_FLOORED, COLLAPSE_FREE,
    Perturbation, PoseRecoveryReport, TrialOutcome,
};
pub use gradcheck::{gradcheck, sign_flipped_gradient, GradcheckConfig, GradcheckReport, InstanceCheck};
pub use fit::{fit_pose, EvalModel, FitConfig, FitTrace, TraceRow};
pub use gradient::{finite_difference, finite_difference_gradient, loss_gradient, Gradient};
