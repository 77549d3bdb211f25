//! Target trajectories `ẋ_d = f(x_d, t) + B(x_d, t) u_d(t)` driven by sums of
//! sinusoids.

use std::f64::consts::TAU;

use super::SystemModel;
use crate::error::{Error, Result};
use crate::numerics::{integrate_ode, streams, RngStream, DEFAULT_DT};
use crate::scalar::Real;

/// Fixed frequency set of the target inputs, Hz.
pub const TARGET_FREQUENCIES_HZ: [f64; 4] = [0.1, 0.2, 0.4, 0.8];

pub const MAX_TARGET_ATTEMPTS: usize = 20;

/// `u_d,j(t) = nominal_j + scale_j Σ_k w_jk sin(2π f_k t + φ_jk)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputSignal<T> {
    pub nominal: Vec<T>,
    pub scale: Vec<T>,
    pub weights: Vec<[T; 4]>,
    pub phases: Vec<[T; 4]>,
}

impl<T: Real> InputSignal<T> {
    pub fn eval(&self, t: T) -> Vec<T> {
        self.nominal
            .iter()
            .enumerate()
            .map(|(j, &u0)| {
                let wave: T = (0..TARGET_FREQUENCIES_HZ.len())
                    .map(|k| {
                        let omega = T::lit(TAU * TARGET_FREQUENCIES_HZ[k]);
                        self.weights[j][k] * (omega * t + self.phases[j][k]).sin()
                    })
                    .sum();
                u0 + self.scale[j] * wave
            })
            .collect()
    }

    fn sample(system: &SystemModel<T>, zero_weights: bool, rng: &mut RngStream) -> Self {
        let m = system.m();
        let mut weights = Vec::with_capacity(m);
        let mut phases = Vec::with_capacity(m);
        for _ in 0..m {
            let mut w = [T::zero(); 4];
            let mut p = [T::zero(); 4];
            for k in 0..4 {
                w[k] = rng.uniform(-T::one(), T::one());
                p[k] = rng.uniform(T::zero(), T::lit(TAU));
            }
            if zero_weights {
                w = [T::zero(); 4];
            }
            weights.push(w);
            phases.push(p);
        }
        Self {
            nominal: system.nominal_input.clone(),
            scale: system.input_scale.clone(),
            weights,
            phases,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TargetOptions<T> {
    pub dt: T,
    pub zero_weights: bool,
    pub max_attempts: usize,
}

impl<T: Real> Default for TargetOptions<T> {
    fn default() -> Self {
        Self {
            dt: T::lit(DEFAULT_DT),
            zero_weights: false,
            max_attempts: MAX_TARGET_ATTEMPTS,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetTrajectory<T> {
    pub times: Vec<T>,
    pub x_d: Vec<Vec<T>>,
    pub u_d: Vec<Vec<T>>,
    pub seed: u64,
    pub signal: InputSignal<T>,
}

impl<T: Real> TargetTrajectory<T> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn horizon(&self) -> T {
        *self.times.last().expect("non-empty target")
    }
}

pub fn generate_target<T: Real>(system: &SystemModel<T>, horizon: T, seed: u64) -> Result<TargetTrajectory<T>> {
    generate_target_with(system, horizon, seed, &TargetOptions::default())
}

/// Samples sinusoid weights and `x_d(0)`, integrates the target with RK4 and
/// resamples whenever it leaves the state box.
pub fn generate_target_with<T: Real>(
    system: &SystemModel<T>,
    horizon: T,
    seed: u64,
    options: &TargetOptions<T>,
) -> Result<TargetTrajectory<T>> {
    if !(horizon > T::zero()) {
        return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
    }
    let mut rng = RngStream::new(seed, streams::TARGETS);
    for _ in 0..options.max_attempts {
        let signal = InputSignal::sample(system, options.zero_weights, &mut rng);
        let x0 = system.target_init_box.sample(&mut rng);
        let rhs = |x: &[T], t: T| system.h(x, &signal.eval(t), t);
        let Ok(traj) = integrate_ode(rhs, &x0, T::zero(), horizon, options.dt) else {
            continue;
        };
        if traj.states.iter().all(|x| system.state_box.contains(x)) {
            let u_d = traj.times.iter().map(|&t| signal.eval(t)).collect();
            return Ok(TargetTrajectory {
                times: traj.times,
                x_d: traj.states,
                u_d,
                seed,
                signal,
            });
        }
    }
    Err(Error::TargetBudgetExhausted {
        attempts: options.max_attempts,
    })
}

/// Initial tracking error `e(0)` uniform in the system's initial-error box.
pub fn sample_initial_error<T: Real>(system: &SystemModel<T>, rng: &mut RngStream) -> Vec<T> {
    system.initial_error_box.sample(rng)
}
