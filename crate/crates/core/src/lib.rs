//! Pose-error metrics, a bounding-cube pose loss with learned per-axis scale,
//! analytic gradients and a gradient-descent fitter, plus dataset I/O and a
//! ground-truth visibility audit.

pub mod audit;
pub mod config;
pub mod error;
pub mod geometry;
pub mod ingest;
pub mod losses;
pub mod metrics;
pub mod optim;
pub mod spatial;

pub use error::{Error, Result};
