//! Neural contraction metrics for tracking control of control-affine systems:
//! joint metric/controller learning with penalty losses, constant-metric
//! CV-STEM synthesis, and simulation-based certification of exponential
//! tracking-error bounds.
//!
//! Every numeric type is generic over [`Real`]; the aliases at the crate root
//! fix the scalar to `f64`.

pub mod certify;
pub mod cvstem;
pub mod error;
pub mod losses;
pub mod netmetric;
pub mod numerics;
pub mod scalar;
pub mod selftest;
pub mod systems;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Real;

/// Dense `f64` matrix.
pub type Matrix = numerics::Mat<f64>;
/// `f64` benchmark system.
pub type System = systems::SystemModel<f64>;
/// `f64` learned metric.
pub type Metric = netmetric::MetricNet<f64>;
/// `f64` learned tracking controller.
pub type Controller = netmetric::ControllerNet<f64>;
