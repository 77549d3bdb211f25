//! Planar vertical take-off and landing vehicle.
//!
//! State `(p_x, p_z, φ, v_x, v_z, φ̇)` with body-frame velocities, inputs
//! `(u₁, u₂)` = (total thrust, differential thrust torque):
//!
//! ```text
//! ṗ_x = v_x cos φ − v_z sin φ      v̇_x = v_z φ̇ − g sin φ
//! ṗ_z = v_x sin φ + v_z cos φ      v̇_z = −v_x φ̇ − g cos φ + u₁/m
//! φ̇   = φ̇                          φ̈   = u₂/J
//! ```

use std::sync::Arc;

use super::{BoxSet, Dynamics, SystemModel};
use crate::numerics::Mat;
use crate::scalar::Real;

pub const GRAVITY: f64 = 9.81;
pub const MASS: f64 = 0.486;
pub const INERTIA: f64 = 0.00383;

#[derive(Debug, Clone)]
pub struct Pvtol<T> {
    pub gravity: T,
    pub mass: T,
    pub inertia: T,
}

impl<T: Real> Default for Pvtol<T> {
    fn default() -> Self {
        Self {
            gravity: T::lit(GRAVITY),
            mass: T::lit(MASS),
            inertia: T::lit(INERTIA),
        }
    }
}

impl<T: Real> Pvtol<T> {
    pub fn hover_thrust(&self) -> T {
        self.mass * self.gravity
    }
}

impl<T: Real> Dynamics<T> for Pvtol<T> {
    fn state_dim(&self) -> usize {
        6
    }

    fn input_dim(&self) -> usize {
        2
    }

    fn drift(&self, x: &[T], _t: T) -> Vec<T> {
        let (phi, vx, vz, w) = (x[2], x[3], x[4], x[5]);
        let (s, c) = phi.sin_cos();
        let g = self.gravity;
        vec![
            vx * c - vz * s,
            vx * s + vz * c,
            w,
            vz * w - g * s,
            -vx * w - g * c,
            T::zero(),
        ]
    }

    fn input_matrix(&self, _x: &[T], _t: T) -> Mat<T> {
        let mut b = Mat::zeros(6, 2);
        b[(4, 0)] = self.mass.recip();
        b[(5, 1)] = self.inertia.recip();
        b
    }

    fn drift_jacobian(&self, x: &[T], _t: T) -> Mat<T> {
        let (phi, vx, vz, w) = (x[2], x[3], x[4], x[5]);
        let (s, c) = phi.sin_cos();
        let g = self.gravity;
        let mut j = Mat::zeros(6, 6);
        j[(0, 2)] = -vx * s - vz * c;
        j[(0, 3)] = c;
        j[(0, 4)] = -s;
        j[(1, 2)] = vx * c - vz * s;
        j[(1, 3)] = s;
        j[(1, 4)] = c;
        j[(2, 5)] = T::one();
        j[(3, 2)] = -g * c;
        j[(3, 4)] = w;
        j[(3, 5)] = vz;
        j[(4, 2)] = g * s;
        j[(4, 3)] = -w;
        j[(4, 5)] = -vx;
        j
    }

    fn input_column_jacobian(&self, _x: &[T], _t: T, _j: usize) -> Mat<T> {
        Mat::zeros(6, 6)
    }

    fn constant_input_matrix(&self) -> bool {
        true
    }
}

/// PVTOL with default compact sets and disturbance bounds `d̄ = 0.5`, `ḡ = 0.1`.
pub fn make_pvtol<T: Real>() -> SystemModel<T> {
    let dynamics = Pvtol::<T>::default();
    let hover = dynamics.hover_thrust();
    let l = |v: &[f64]| v.iter().map(|&x| T::lit(x)).collect::<Vec<T>>();
    let mut model = SystemModel {
        name: "pvtol".into(),
        dynamics: Arc::new(dynamics),
        d_bar: T::lit(0.5),
        g_bar: T::lit(0.1),
        b_bar: T::zero(),
        l_u: T::zero(),
        state_box: BoxSet::symmetric(&l(&[8.0, 8.0, 0.6, 2.0, 1.5, 1.0])),
        input_box: BoxSet::centered(&[hover, T::zero()], &l(&[0.4, 2e-4])),
        time_box: BoxSet::new(l(&[0.0]), l(&[10.0])),
        target_init_box: BoxSet::symmetric(&l(&[1.0, 1.0, 0.01, 0.3, 0.3, 0.01])),
        error_box: BoxSet::symmetric(&l(&[1.0, 1.0, 0.4, 1.0, 1.0, 0.8])),
        initial_error_box: BoxSet::symmetric(&l(&[0.5, 0.5, 0.1, 0.3, 0.3, 0.2])),
        nominal_input: vec![hover, T::zero()],
        input_scale: l(&[0.1, 1e-5]),
    };
    model.refresh_input_bounds();
    model
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{streams, RngStream};

    #[test]
    fn hover_is_an_equilibrium() {
        let sys = make_pvtol::<f64>();
        let x = [0.3, -1.0, 0.0, 0.0, 0.0, 0.0];
        let u = [MASS * GRAVITY, 0.0];
        let xdot = sys.h(&x, &u, 0.0);
        assert!(xdot.iter().all(|v| v.abs() < 1e-12), "{xdot:?}");
        // without thrust only gravity acts, along the body z axis
        let fall = sys.h(&x, &[0.0, 0.0], 0.0);
        assert!((fall[4] + GRAVITY).abs() < 1e-12);
    }

    #[test]
    fn input_matrix_is_bounded_over_the_state_box() {
        let sys = make_pvtol::<f64>();
        let mut rng = RngStream::new(2, streams::GRID);
        let expected = 1.0 / INERTIA;
        assert!((sys.b_bar - expected).abs() < 1e-9);
        assert_eq!(sys.l_u, sys.b_bar);
        for _ in 0..50 {
            let x = sys.state_box.sample(&mut rng);
            let b = sys.b(&x, 0.0);
            assert!(crate::numerics::spectral_norm(&b) <= sys.b_bar + 1e-12);
            // only the tilt could enter B; this model's B is constant
            assert_eq!(b, sys.b(&[0.0; 6], 0.0));
        }
    }
}
