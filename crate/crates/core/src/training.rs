//! Dataset sampling and the minibatch training loop.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{
    empirical_loss, evaluate_loss, flatten_params, unflatten_params, LossConfig, LossReport, Sample, SpherePoints,
};
use crate::netmetric::{ControllerNet, MetricNet};
use crate::numerics::{streams, RngStream};
use crate::scalar::Real;
use crate::systems::SystemModel;

/// How training states are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    /// `x_d` uniform in the state box and `x = x_d + e` with `e` uniform in
    /// the error box (rejected until `x` is in the state box).
    #[default]
    ErrorBox,
    /// `x` and `x_d` independently uniform in the state box.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub samples: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Contraction rate `α`.
    pub alpha: f64,
    /// Sphere points per batch.
    pub k_points: usize,
    pub seed: u64,
    pub metric_hidden: Vec<usize>,
    pub controller_hidden: Vec<usize>,
    /// Rows of `w₁`; `None` means `3n`.
    pub features: Option<usize>,
    pub m_bar: f64,
    pub m_under: f64,
    pub time_input: bool,
    pub holdout_fraction: f64,
    pub sampling: SamplingMode,
    /// Scales each controller output channel by `1/‖b_j‖` at the centre of
    /// the state box.
    pub normalize_inputs: bool,
    /// Adds the reported-only `(C/2α_ℓ)(m̄_L/m̲_L)` term with this `C/2α_ℓ`.
    pub cv_coefficient: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            samples: 20_000,
            epochs: 30,
            batch_size: 16,
            learning_rate: 3e-3,
            alpha: 0.5,
            k_points: 32,
            seed: 0,
            metric_hidden: vec![64],
            controller_hidden: vec![64],
            features: None,
            m_bar: 10.0,
            m_under: 0.1,
            time_input: false,
            holdout_fraction: 0.1,
            sampling: SamplingMode::ErrorBox,
            normalize_inputs: true,
            cv_coefficient: None,
        }
    }
}

impl TrainConfig {
    /// 130 000 samples for 20 epochs with 128-wide networks.
    pub fn full_scale() -> Self {
        Self {
            samples: 130_000,
            epochs: 20,
            metric_hidden: vec![128],
            controller_hidden: vec![128],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.to_string()));
        if self.batch_size == 0 || self.samples < self.batch_size {
            return bad("need samples >= batch_size >= 1");
        }
        if !(self.alpha > 0.0) {
            return bad("alpha must be positive");
        }
        if !(self.m_bar >= self.m_under && self.m_under > 0.0) {
            return bad("need m_bar >= m_under > 0");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.k_points == 0 {
            return bad("k_points must be positive");
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return bad("holdout_fraction must lie in [0, 1)");
        }
        let train = self.samples - self.holdout_count();
        if train < self.batch_size {
            return bad("training split is smaller than one batch");
        }
        Ok(())
    }

    pub fn holdout_count(&self) -> usize {
        (self.samples as f64 * self.holdout_fraction).floor() as usize
    }

    /// Learning rate of `epoch`, halved after each third of training.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let period = self.epochs.div_ceil(3).max(1);
        self.learning_rate * 0.5f64.powi((epoch / period) as i32)
    }
}

/// Draws `count` samples from the product of the state, input and time boxes.
pub fn sample_dataset<T: Real>(system: &SystemModel<T>, count: usize, rng: &mut RngStream) -> Vec<Sample<T>> {
    sample_dataset_with(system, count, SamplingMode::Uniform, rng)
}

pub fn sample_dataset_with<T: Real>(
    system: &SystemModel<T>,
    count: usize,
    mode: SamplingMode,
    rng: &mut RngStream,
) -> Vec<Sample<T>> {
    (0..count)
        .map(|_| {
            let x_d = system.state_box.sample(rng);
            let x = match mode {
                SamplingMode::Uniform => system.state_box.sample(rng),
                SamplingMode::ErrorBox => loop {
                    let e = system.error_box.sample(rng);
                    let x: Vec<T> = x_d.iter().zip(&e).map(|(a, b)| *a + *b).collect();
                    if system.state_box.contains(&x) {
                        break x;
                    }
                },
            };
            Sample {
                x,
                x_d,
                u_d: system.input_box.sample(rng),
                t: system.time_box.sample(rng)[0],
            }
        })
        .collect()
}

/// First-order optimizer with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub metric: MetricNet<f64>,
    pub controller: ControllerNet<f64>,
    /// Full-training-set loss before the first update.
    pub initial: LossReport<f64>,
    /// Full-training-set loss after each epoch.
    pub history: Vec<LossReport<f64>>,
    pub train_set: Vec<Sample<f64>>,
    pub holdout: Vec<Sample<f64>>,
    pub wall_clock_secs: f64,
    pub config: TrainConfig,
}

impl TrainResult {
    /// `epoch,l_u,l_c,l_w1,l_w2,total`, one row per epoch (epoch 0 is the
    /// initialization).
    pub fn loss_csv(&self) -> String {
        loss_csv(&self.initial, &self.history)
    }
}

pub fn loss_csv(initial: &LossReport<f64>, history: &[LossReport<f64>]) -> String {
    let mut out = String::from("epoch,l_u,l_c,l_w1,l_w2,total\n");
    for (e, r) in std::iter::once(initial).chain(history).enumerate() {
        let _ = writeln!(out, "{e},{:e},{:e},{:e},{:e},{:e}", r.l_u, r.l_c, r.l_w1, r.l_w2, r.total);
    }
    out
}

/// `1/‖b_j(x₀, t₀)‖` per input column at the centre of the state box (1 for
/// a vanishing column).
pub fn input_normalization(system: &SystemModel<f64>) -> Vec<f64> {
    let b = system.b(&system.state_box.midpoint(), system.time_box.lo[0]);
    (0..b.cols())
        .map(|j| {
            let norm = b.col(j).iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                norm.recip()
            } else {
                1.0
            }
        })
        .collect()
}

/// Freshly initialized networks for `system` under `config`.
pub fn init_networks(system: &SystemModel<f64>, config: &TrainConfig) -> (MetricNet<f64>, ControllerNet<f64>) {
    let n = system.n();
    let mut rng = RngStream::new(config.seed, streams::INIT);
    let metric = MetricNet::new(
        n,
        &config.metric_hidden,
        config.m_bar,
        config.m_under,
        config.time_input,
        &mut rng,
    );
    let features = config.features.unwrap_or(3 * n);
    let mut controller = ControllerNet::new(n, system.m(), features, &config.controller_hidden, &mut rng);
    if config.normalize_inputs {
        controller.output_scale = input_normalization(system);
    }
    (metric, controller)
}

/// Per-epoch progress callback: `(epoch, report)`.
pub type Progress<'a> = &'a mut dyn FnMut(usize, &LossReport<f64>);

pub fn train(system: &SystemModel<f64>, config: &TrainConfig) -> Result<TrainResult> {
    train_with_progress(system, config, &mut |_, _| {})
}

pub fn train_with_progress(system: &SystemModel<f64>, config: &TrainConfig, progress: Progress) -> Result<TrainResult> {
    config.validate()?;
    let start = Instant::now();
    let mut data_rng = RngStream::new(config.seed, streams::DATASET);
    let mut data = sample_dataset_with(system, config.samples, config.sampling, &mut data_rng);
    let holdout = data.split_off(config.samples - config.holdout_count());
    let train_set = data;

    let (mut metric, mut controller) = init_networks(system, config);
    let loss_cfg = LossConfig {
        alpha: config.alpha,
        cv_coefficient: config.cv_coefficient,
    };
    let eval_points = SpherePoints::for_system(system, config.k_points, &mut RngStream::new(config.seed, streams::SPHERE).fork(u64::MAX));
    let initial = evaluate_loss(&metric, &controller, system, &train_set, &loss_cfg, &eval_points)?;
    if !initial.is_finite() {
        return Err(Error::NonFiniteLoss { epoch: 0, batch: 0 });
    }

    let mut params = flatten_params(&metric, &controller);
    let mut adam = Adam::new(params.len());
    let mut sphere_rng = RngStream::new(config.seed, streams::SPHERE);
    let shuffle_rng = RngStream::new(config.seed, streams::SHUFFLE);
    let mut history = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut batch = Vec::with_capacity(config.batch_size);
    for epoch in 0..config.epochs {
        let mut rng = shuffle_rng.fork(epoch as u64);
        for i in (1..order.len()).rev() {
            order.swap(i, rng.index(i + 1));
        }
        let lr = config.learning_rate_at(epoch);
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            batch.clear();
            batch.extend(idx.iter().map(|&i| train_set[i].clone()));
            let points = SpherePoints::for_system(system, config.k_points, &mut sphere_rng);
            let (report, grad) = empirical_loss(&metric, &controller, system, &batch, &loss_cfg, &points)?;
            let g = grad.flatten();
            if !report.is_finite() || g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch: epoch + 1, batch: b });
            }
            adam.update(&mut params, &g, lr);
            unflatten_params(&mut metric, &mut controller, &params);
        }
        let report = evaluate_loss(&metric, &controller, system, &train_set, &loss_cfg, &eval_points)?;
        if !report.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch: epoch + 1,
                batch: order.len().div_ceil(config.batch_size),
            });
        }
        progress(epoch + 1, &report);
        history.push(report);
    }
    Ok(TrainResult {
        metric,
        controller,
        initial,
        history,
        train_set,
        holdout,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        config: config.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{make_pvtol, make_scalar_test};

    fn small_config() -> TrainConfig {
        TrainConfig {
            samples: 400,
            epochs: 3,
            batch_size: 64,
            metric_hidden: vec![8],
            controller_hidden: vec![8],
            ..TrainConfig::default()
        }
    }

    #[test]
    fn dataset_lies_in_boxes_and_is_seeded() {
        let sys = make_pvtol::<f64>();
        for mode in [SamplingMode::Uniform, SamplingMode::ErrorBox] {
            let a = sample_dataset_with(&sys, 500, mode, &mut RngStream::new(1, streams::DATASET));
            let b = sample_dataset_with(&sys, 500, mode, &mut RngStream::new(1, streams::DATASET));
            assert_eq!(a, b);
            for s in &a {
                assert!(sys.state_box.contains(&s.x) && sys.state_box.contains(&s.x_d));
                assert!(sys.input_box.contains(&s.u_d));
                assert!(sys.time_box.contains(&[s.t]));
            }
        }
    }

    #[test]
    fn uniform_dataset_means_match_box_midpoints() {
        let sys = make_pvtol::<f64>();
        let n = 100_000;
        let data = sample_dataset(&sys, n, &mut RngStream::new(2, streams::DATASET));
        for i in 0..sys.n() {
            let (lo, hi) = (sys.state_box.lo[i], sys.state_box.hi[i]);
            let sigma = (hi - lo) / 12f64.sqrt() / (n as f64).sqrt();
            let mean = data.iter().map(|s| s.x[i]).sum::<f64>() / n as f64;
            assert!((mean - 0.5 * (lo + hi)).abs() < 3.0 * sigma, "coordinate {i}");
        }
    }

    #[test]
    fn zero_epochs_return_initialization() {
        let sys = make_pvtol::<f64>();
        let cfg = TrainConfig {
            epochs: 0,
            ..small_config()
        };
        let res = train(&sys, &cfg).unwrap();
        let (m0, c0) = init_networks(&sys, &cfg);
        assert_eq!(res.metric, m0);
        assert_eq!(res.controller, c0);
        assert!(res.history.is_empty());
        assert_eq!(res.holdout.len(), 40);
    }

    #[test]
    fn training_is_bit_reproducible() {
        let sys = make_pvtol::<f64>();
        let a = train(&sys, &small_config()).unwrap();
        let b = train(&sys, &small_config()).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.loss_csv(), b.loss_csv());
        assert_eq!(a.metric, b.metric);
        assert_eq!(a.history.len(), 3);
    }

    #[test]
    fn scalar_system_reaches_zero_loss() {
        let sys = make_scalar_test(-1.0);
        let cfg = TrainConfig {
            samples: 2000,
            epochs: 50,
            batch_size: 128,
            learning_rate: 3e-3,
            m_bar: 2.0,
            m_under: 0.5,
            metric_hidden: vec![16],
            controller_hidden: vec![16],
            ..TrainConfig::default()
        };
        let res = train(&sys, &cfg).unwrap();
        assert!(res.history.last().unwrap().total < 1e-4, "{:?}", res.history.last());
    }

    #[test]
    fn learning_rate_halves_each_third() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.learning_rate_at(0), 3e-3);
        assert_eq!(cfg.learning_rate_at(9), 3e-3);
        assert_eq!(cfg.learning_rate_at(10), 1.5e-3);
        assert_eq!(cfg.learning_rate_at(29), 7.5e-4);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let cases = [
            TrainConfig { batch_size: 0, ..small_config() },
            TrainConfig { alpha: 0.0, ..small_config() },
            TrainConfig { m_bar: 0.01, ..small_config() },
            TrainConfig { samples: 10, ..small_config() },
        ];
        for c in cases {
            assert!(matches!(c.validate(), Err(Error::InvalidArgument(_))));
        }
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut p = vec![3.0, -2.0];
        let mut adam = Adam::new(2);
        for _ in 0..5000 {
            let g = vec![2.0 * p[0], 8.0 * p[1]];
            adam.update(&mut p, &g, 1e-2);
        }
        assert!(p[0].abs() < 1e-2 && p[1].abs() < 1e-2);
    }
}
