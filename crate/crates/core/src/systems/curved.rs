use std::sync::Arc;

use super::{BoxSet, Dynamics, SystemModel};
use crate::numerics::Mat;
use crate::scalar::Real;

/// Three-state, single-input system whose input vector depends on the state:
///
/// `f = (−x₀ + x₁², −x₁ + sin x₂, −x₂/2 + x₀x₁)`,
/// `b = (1 + sin(x₁)/2, 3x₀/10, cos x₂)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Curved;

impl<T: Real> Dynamics<T> for Curved {
    fn state_dim(&self) -> usize {
        3
    }

    fn input_dim(&self) -> usize {
        1
    }

    fn drift(&self, x: &[T], _t: T) -> Vec<T> {
        vec![-x[0] + x[1] * x[1], -x[1] + x[2].sin(), -T::half() * x[2] + x[0] * x[1]]
    }

    fn input_matrix(&self, x: &[T], _t: T) -> Mat<T> {
        Mat::column(&[T::one() + T::half() * x[1].sin(), T::lit(0.3) * x[0], x[2].cos()])
    }

    fn drift_jacobian(&self, x: &[T], _t: T) -> Mat<T> {
        let (o, z) = (T::one(), T::zero());
        Mat::from_rows(&[
            vec![-o, T::two() * x[1], z],
            vec![z, -o, x[2].cos()],
            vec![x[1], x[0], -T::half()],
        ])
        .expect("3×3")
    }

    fn input_column_jacobian(&self, x: &[T], _t: T, _j: usize) -> Mat<T> {
        let z = T::zero();
        Mat::from_rows(&[
            vec![z, T::half() * x[1].cos(), z],
            vec![T::lit(0.3), z, z],
            vec![z, z, -x[2].sin()],
        ])
        .expect("3×3")
    }
}

/// Test system with a state-dependent input matrix, used to exercise the
/// `∂b_j/∂x` terms of the losses.
pub fn make_curved_test<T: Real>() -> SystemModel<T> {
    let mut model = SystemModel {
        name: "curved".into(),
        dynamics: Arc::new(Curved),
        d_bar: T::zero(),
        g_bar: T::zero(),
        b_bar: T::zero(),
        l_u: T::zero(),
        state_box: BoxSet::symmetric(&[T::one(); 3]),
        input_box: BoxSet::symmetric(&[T::one()]),
        time_box: BoxSet::new(vec![T::zero()], vec![T::lit(5.0)]),
        target_init_box: BoxSet::symmetric(&[T::lit(0.2); 3]),
        error_box: BoxSet::symmetric(&[T::lit(0.5); 3]),
        initial_error_box: BoxSet::symmetric(&[T::lit(0.2); 3]),
        nominal_input: vec![T::zero()],
        input_scale: vec![T::lit(0.2)],
    };
    model.refresh_input_bounds();
    model
}
