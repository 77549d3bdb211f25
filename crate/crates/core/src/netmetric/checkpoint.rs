use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ControllerNet, Layer, MetricNet, Mlp};
use crate::error::{Error, Result};
use crate::numerics::Mat;
use crate::scalar::Real;

pub const CHECKPOINT_VERSION: &str = "contraction-kit/ckpt-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerRecord {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs × inputs`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricRecord {
    pub state_dim: usize,
    pub time_input: bool,
    pub time_scale: f64,
    pub m_bar: f64,
    pub m_under: f64,
    pub layers: Vec<LayerRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerRecord {
    pub state_dim: usize,
    pub input_dim: usize,
    pub features: usize,
    pub w1: Vec<LayerRecord>,
    pub w2: Vec<LayerRecord>,
    /// Per-channel output scale; empty means all ones.
    #[serde(default)]
    pub output_scale: Vec<f64>,
}

/// Serialized metric/controller pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: String,
    pub system: String,
    pub seed: u64,
    pub alpha: f64,
    pub metric: MetricRecord,
    pub controller: ControllerRecord,
}

fn record_layers<T: Real>(net: &Mlp<T>) -> Vec<LayerRecord> {
    net.layers
        .iter()
        .map(|l| LayerRecord {
            inputs: l.inputs(),
            outputs: l.outputs(),
            weights: l.weight.as_slice().iter().map(|v| v.as_f64()).collect(),
            bias: l.bias.iter().map(|v| v.as_f64()).collect(),
        })
        .collect()
}

fn restore_layers<T: Real>(records: &[LayerRecord], inputs: usize, outputs: usize, what: &str) -> Result<Mlp<T>> {
    if records.is_empty() {
        return Err(Error::Checkpoint(format!("{what}: no layers")));
    }
    let mut layers = Vec::with_capacity(records.len());
    let mut expected_in = inputs;
    for (i, r) in records.iter().enumerate() {
        if r.inputs != expected_in || r.bias.len() != r.outputs {
            return Err(Error::Checkpoint(format!("{what}: layer {i} has inconsistent shape")));
        }
        let weight = Mat::from_vec(r.outputs, r.inputs, r.weights.iter().map(|&v| T::lit(v)).collect())
            .map_err(|_| Error::Checkpoint(format!("{what}: layer {i} weight count mismatch")))?;
        layers.push(Layer {
            weight,
            bias: r.bias.iter().map(|&v| T::lit(v)).collect(),
        });
        expected_in = r.outputs;
    }
    if expected_in != outputs {
        return Err(Error::Checkpoint(format!("{what}: expected {outputs} outputs, found {expected_in}")));
    }
    Ok(Mlp { layers })
}

impl Checkpoint {
    pub fn from_nets<T: Real>(
        system: &str,
        seed: u64,
        alpha: T,
        metric: &MetricNet<T>,
        controller: &ControllerNet<T>,
    ) -> Self {
        Self {
            version: CHECKPOINT_VERSION.to_string(),
            system: system.to_string(),
            seed,
            alpha: alpha.as_f64(),
            metric: MetricRecord {
                state_dim: metric.n,
                time_input: metric.time_input,
                time_scale: metric.time_scale.as_f64(),
                m_bar: metric.m_bar.as_f64(),
                m_under: metric.m_under.as_f64(),
                layers: record_layers(&metric.theta),
            },
            controller: ControllerRecord {
                state_dim: controller.n,
                input_dim: controller.m,
                features: controller.features,
                w1: record_layers(&controller.w1),
                w2: record_layers(&controller.w2),
                output_scale: controller.output_scale.iter().map(|v| v.as_f64()).collect(),
            },
        }
    }

    pub fn to_nets<T: Real>(&self) -> Result<(MetricNet<T>, ControllerNet<T>)> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {:?}", self.version)));
        }
        let mr = &self.metric;
        let n = mr.state_dim;
        if !(mr.m_bar >= mr.m_under && mr.m_under > 0.0) {
            return Err(Error::Checkpoint("metric bounds must satisfy m_bar >= m_under > 0".into()));
        }
        let theta = restore_layers(&mr.layers, n + usize::from(mr.time_input), n * n, "metric")?;
        let metric = MetricNet {
            theta,
            n,
            m_bar: T::lit(mr.m_bar),
            m_under: T::lit(mr.m_under),
            time_input: mr.time_input,
            time_scale: T::lit(mr.time_scale),
        };
        let cr = &self.controller;
        if cr.state_dim != n {
            return Err(Error::Checkpoint("metric and controller state dimensions differ".into()));
        }
        let controller = ControllerNet {
            w1: restore_layers(&cr.w1, 2 * n, cr.features * n, "controller w1")?,
            w2: restore_layers(&cr.w2, 2 * n, cr.input_dim * cr.features, "controller w2")?,
            n,
            m: cr.input_dim,
            features: cr.features,
            output_scale: if cr.output_scale.is_empty() {
                vec![T::one(); cr.input_dim]
            } else if cr.output_scale.len() == cr.input_dim {
                cr.output_scale.iter().map(|&v| T::lit(v)).collect()
            } else {
                return Err(Error::Checkpoint("controller output_scale length differs from input_dim".into()));
            },
        };
        Ok((metric, controller))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
