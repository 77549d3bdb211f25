use std::sync::Arc;

use super::{BoxSet, Dynamics, SystemModel};
use crate::numerics::Mat;
use crate::scalar::Real;

/// `ẋ = A x + B u` with constant matrices.
#[derive(Debug, Clone)]
pub struct LinearDynamics<T> {
    pub a: Mat<T>,
    pub b: Mat<T>,
}

impl<T: Real> Dynamics<T> for LinearDynamics<T> {
    fn state_dim(&self) -> usize {
        self.a.rows()
    }

    fn input_dim(&self) -> usize {
        self.b.cols()
    }

    fn drift(&self, x: &[T], _t: T) -> Vec<T> {
        self.a.matvec(x)
    }

    fn input_matrix(&self, _x: &[T], _t: T) -> Mat<T> {
        self.b.clone()
    }

    fn drift_jacobian(&self, _x: &[T], _t: T) -> Mat<T> {
        self.a.clone()
    }

    fn input_column_jacobian(&self, _x: &[T], _t: T, _j: usize) -> Mat<T> {
        let n = self.a.rows();
        Mat::zeros(n, n)
    }

    fn constant_input_matrix(&self) -> bool {
        true
    }
}

/// Hand-computable oracle `ẋ = a x + u` with `d̄ = ḡ = 0`.
pub fn make_scalar_test<T: Real>(a: T) -> SystemModel<T> {
    let mut model = linear_model(
        "scalar",
        Mat::from_diag(&[a]),
        Mat::identity(1),
    );
    model.state_box = BoxSet::symmetric(&[T::lit(10.0)]);
    model.input_box = BoxSet::symmetric(&[T::lit(4.0)]);
    model
}

/// Linear time-invariant system with generic default sets, `d̄ = ḡ = 0`.
pub fn make_lti<T: Real>(a: Mat<T>, b: Mat<T>) -> SystemModel<T> {
    assert!(a.is_square() && a.rows() == b.rows(), "LTI shape mismatch");
    linear_model("lti", a, b)
}

/// Double integrator `ẍ = u`.
pub(super) fn default_lti<T: Real>() -> SystemModel<T> {
    let a = Mat::from_rows(&[vec![T::zero(), T::one()], vec![T::zero(), T::zero()]]).unwrap();
    let b = Mat::column(&[T::zero(), T::one()]);
    let mut model = make_lti(a, b);
    model.state_box = BoxSet::symmetric(&[T::lit(20.0), T::lit(5.0)]);
    model.target_init_box = BoxSet::symmetric(&[T::lit(1.0), T::lit(0.5)]);
    model.input_scale = vec![T::lit(0.25)];
    model.input_box = BoxSet::symmetric(&[T::one()]);
    model
}

fn linear_model<T: Real>(name: &str, a: Mat<T>, b: Mat<T>) -> SystemModel<T> {
    let n = a.rows();
    let m = b.cols();
    let ones = vec![T::one(); n];
    let mut model = SystemModel {
        name: name.into(),
        dynamics: Arc::new(LinearDynamics { a, b }),
        d_bar: T::zero(),
        g_bar: T::zero(),
        b_bar: T::zero(),
        l_u: T::zero(),
        state_box: BoxSet::symmetric(&vec![T::lit(10.0); n]),
        input_box: BoxSet::symmetric(&vec![T::lit(4.0); m]),
        time_box: BoxSet::new(vec![T::zero()], vec![T::lit(10.0)]),
        target_init_box: BoxSet::symmetric(&ones),
        error_box: BoxSet::symmetric(&ones),
        initial_error_box: BoxSet::symmetric(&ones),
        nominal_input: vec![T::zero(); m],
        input_scale: vec![T::one(); m],
    };
    model.refresh_input_bounds();
    model
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::annihilator;

    #[test]
    fn scalar_oracle() {
        let sys = make_scalar_test(-1.0f64);
        assert_eq!(sys.f(&[2.0], 0.0), vec![-2.0]);
        assert_eq!(sys.jac_f(&[7.0], 0.0)[(0, 0)], -1.0);
        assert_eq!(sys.jac_f(&[-3.0], 1.0)[(0, 0)], -1.0);
        assert_eq!(annihilator(&sys.b(&[0.0], 0.0)).rows(), 0);
        assert_eq!(sys.b_bar, 1.0);
        assert_eq!(sys.d_bar, 0.0);
        assert_eq!(sys.g_bar, 0.0);
    }
}
