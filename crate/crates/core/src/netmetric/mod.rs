//! Neural dual metric `W_L`, neural tracking controller, and their on-disk
//! format.

mod checkpoint;
mod controller;
mod metric;
mod mlp;

pub use checkpoint::{Checkpoint, ControllerRecord, LayerRecord, MetricRecord, CHECKPOINT_VERSION};
pub use controller::{ControllerEval, ControllerNet};
pub use metric::{metric_time_and_flow_derivatives, FlowDerivatives, MetricEval, MetricNet};
pub use mlp::{mlp_eval_with_grads, Layer, Mlp, MlpTape};
