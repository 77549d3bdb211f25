//! Control-affine benchmark systems `ẋ = f(x, t) + B(x, t) u`.

mod annihilator;
mod curved;
mod linear;
mod pvtol;
mod target;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use annihilator::annihilator;
pub use curved::{make_curved_test, Curved};
pub use linear::{make_lti, make_scalar_test, LinearDynamics};
pub use pvtol::{make_pvtol, Pvtol};
pub use target::{generate_target, generate_target_with, sample_initial_error, InputSignal, TargetOptions, TargetTrajectory};

use crate::error::{Error, Result};
use crate::numerics::{spectral_norm, Mat, RngStream};
use crate::scalar::Real;

/// Analytic model of a control-affine vector field.
pub trait Dynamics<T: Real>: Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    /// Drift `f(x, t)`.
    fn drift(&self, x: &[T], t: T) -> Vec<T>;
    /// Input matrix `B(x, t)`, `n × m`.
    fn input_matrix(&self, x: &[T], t: T) -> Mat<T>;
    /// `∂f/∂x`.
    fn drift_jacobian(&self, x: &[T], t: T) -> Mat<T>;
    /// `∂b_j/∂x` for the `j`-th column of `B`.
    fn input_column_jacobian(&self, x: &[T], t: T, j: usize) -> Mat<T>;
    /// True when `B` does not depend on the state.
    fn constant_input_matrix(&self) -> bool {
        false
    }
}

/// Axis-aligned box `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxSet<T> {
    pub lo: Vec<T>,
    pub hi: Vec<T>,
}

impl<T: Real> BoxSet<T> {
    pub fn new(lo: Vec<T>, hi: Vec<T>) -> Self {
        assert_eq!(lo.len(), hi.len());
        assert!(lo.iter().zip(&hi).all(|(l, h)| l <= h), "inverted box");
        Self { lo, hi }
    }

    pub fn symmetric(half_widths: &[T]) -> Self {
        Self::new(half_widths.iter().map(|&h| -h).collect(), half_widths.to_vec())
    }

    pub fn centered(center: &[T], half_widths: &[T]) -> Self {
        Self::new(
            center.iter().zip(half_widths).map(|(&c, &h)| c - h).collect(),
            center.iter().zip(half_widths).map(|(&c, &h)| c + h).collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[T]) -> bool {
        x.len() == self.dim()
            && x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(&v, (&l, &h))| v >= l && v <= h)
    }

    pub fn midpoint(&self) -> Vec<T> {
        self.lo.iter().zip(&self.hi).map(|(&l, &h)| (l + h) * T::half()).collect()
    }

    pub fn sample(&self, rng: &mut RngStream) -> Vec<T> {
        self.lo.iter().zip(&self.hi).map(|(&l, &h)| rng.uniform(l, h)).collect()
    }

    /// Uniform lattice with `per_dim` points per axis (endpoints included),
    /// thinned to at most `cap` points by taking every k-th point.
    pub fn lattice(&self, per_dim: usize, cap: usize) -> Vec<Vec<T>> {
        let n = self.dim();
        let per_dim = per_dim.max(1);
        let total = per_dim.checked_pow(n as u32).unwrap_or(usize::MAX);
        let stride = if total > cap { total.div_ceil(cap) } else { 1 };
        let coord = |axis: usize, k: usize| {
            if per_dim == 1 {
                (self.lo[axis] + self.hi[axis]) * T::half()
            } else {
                let s = T::from_usize_lossy(k) / T::from_usize_lossy(per_dim - 1);
                self.lo[axis] + s * (self.hi[axis] - self.lo[axis])
            }
        };
        let mut out = Vec::new();
        let mut flat = 0usize;
        while flat < total {
            let mut rem = flat;
            let mut point = Vec::with_capacity(n);
            for axis in 0..n {
                point.push(coord(axis, rem % per_dim));
                rem /= per_dim;
            }
            out.push(point);
            flat += stride;
        }
        out
    }

    pub fn cast<U: Real>(&self) -> BoxSet<U> {
        BoxSet {
            lo: self.lo.iter().map(|v| U::lit(v.as_f64())).collect(),
            hi: self.hi.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }
}

/// A benchmark system with its compact sets, disturbance bounds and target
/// generation settings.
#[derive(Clone)]
pub struct SystemModel<T: Real> {
    pub name: String,
    pub dynamics: Arc<dyn Dynamics<T>>,
    /// `sup ‖d‖`.
    pub d_bar: T,
    /// `sup ‖G‖_F`.
    pub g_bar: T,
    /// `sup ‖B‖` over the state and time boxes.
    pub b_bar: T,
    /// Lipschitz constant of `h` in `u`; equals `b_bar` for control-affine models.
    pub l_u: T,
    pub state_box: BoxSet<T>,
    pub input_box: BoxSet<T>,
    pub time_box: BoxSet<T>,
    /// Initial conditions of target trajectories.
    pub target_init_box: BoxSet<T>,
    /// Tracking errors `x − x_d` seen during training and certification.
    pub error_box: BoxSet<T>,
    /// Initial tracking errors `e(0)` for rollouts.
    pub initial_error_box: BoxSet<T>,
    /// Offset of the sinusoidal target inputs (e.g. hover thrust).
    pub nominal_input: Vec<T>,
    /// Per-channel amplitude of the sinusoidal target inputs.
    pub input_scale: Vec<T>,
}

impl<T: Real> fmt::Debug for SystemModel<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemModel")
            .field("name", &self.name)
            .field("n", &self.n())
            .field("m", &self.m())
            .field("d_bar", &self.d_bar)
            .field("g_bar", &self.g_bar)
            .field("b_bar", &self.b_bar)
            .finish()
    }
}

impl<T: Real> SystemModel<T> {
    #[inline]
    pub fn n(&self) -> usize {
        self.dynamics.state_dim()
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.dynamics.input_dim()
    }

    pub fn f(&self, x: &[T], t: T) -> Vec<T> {
        self.dynamics.drift(x, t)
    }

    pub fn b(&self, x: &[T], t: T) -> Mat<T> {
        self.dynamics.input_matrix(x, t)
    }

    pub fn jac_f(&self, x: &[T], t: T) -> Mat<T> {
        self.dynamics.drift_jacobian(x, t)
    }

    pub fn jac_b(&self, x: &[T], t: T, j: usize) -> Mat<T> {
        self.dynamics.input_column_jacobian(x, t, j)
    }

    /// `h(x, u, t) = f(x, t) + B(x, t) u`.
    pub fn h(&self, x: &[T], u: &[T], t: T) -> Vec<T> {
        let mut out = self.f(x, t);
        let bu = self.b(x, t).matvec(u);
        for (o, v) in out.iter_mut().zip(bu) {
            *o += v;
        }
        out
    }

    /// Recomputes `b_bar` and `l_u` as the maximum of `‖B‖` over a lattice
    /// of the state box and time box.
    pub fn refresh_input_bounds(&mut self) {
        let b_bar = if self.dynamics.constant_input_matrix() {
            let x = self.state_box.midpoint();
            spectral_norm(&self.b(&x, self.time_box.lo[0]))
        } else {
            let times = self.time_box.lattice(3, 3);
            self.state_box
                .lattice(5, 20_000)
                .iter()
                .flat_map(|x| times.iter().map(move |t| (x, t[0])))
                .map(|(x, t)| spectral_norm(&self.b(x, t)))
                .fold(T::zero(), T::max)
        };
        self.b_bar = b_bar;
        self.l_u = b_bar;
    }

    pub fn with_disturbance(mut self, d_bar: T, g_bar: T) -> Self {
        self.d_bar = d_bar;
        self.g_bar = g_bar;
        self
    }
}

/// Registered system names.
pub const SYSTEM_NAMES: [&str; 3] = ["pvtol", "scalar", "lti"];

/// Builds a system from its configuration name with default parameters.
pub fn system_by_name<T: Real>(name: &str) -> Result<SystemModel<T>> {
    match name {
        "pvtol" => Ok(make_pvtol()),
        "scalar" => Ok(make_scalar_test(T::lit(-1.0))),
        "lti" => Ok(linear::default_lti()),
        other => Err(Error::InvalidArgument(format!(
            "unknown system '{other}' (expected one of {SYSTEM_NAMES:?})"
        ))),
    }
}

/// `∂_p F = Σ_k (∂F/∂x_k) p_k` by central differences with step
/// `1e-5 · (1 + ‖x‖)`.
pub fn directional_matrix_derivative<T: Real, F>(field: F, p: &[T], x: &[T], t: T) -> Result<Mat<T>>
where
    F: Fn(&[T], T) -> Mat<T>,
{
    let step = T::lit(1e-5) * (T::one() + crate::numerics::norm(x));
    let base = field(x, t);
    let mut out = Mat::zeros(base.rows(), base.cols());
    let mut xp = x.to_vec();
    for (k, &pk) in p.iter().enumerate() {
        if pk == T::zero() {
            continue;
        }
        xp[k] = x[k] + step;
        let plus = field(&xp, t);
        xp[k] = x[k] - step;
        let minus = field(&xp, t);
        xp[k] = x[k];
        out.axpy(pk / (T::two() * step), &(&plus - &minus));
    }
    if !out.is_finite() {
        return Err(Error::Divergence { t: t.as_f64() });
    }
    Ok(out)
}

/// Central-difference Jacobian of a vector field, used to cross-check the
/// analytic Jacobians.
pub fn finite_difference_jacobian<T: Real, F>(field: F, x: &[T], step: T) -> Mat<T>
where
    F: Fn(&[T]) -> Vec<T>,
{
    let n = x.len();
    let rows = field(x).len();
    let mut jac = Mat::zeros(rows, n);
    let mut xp = x.to_vec();
    for k in 0..n {
        xp[k] = x[k] + step;
        let plus = field(&xp);
        xp[k] = x[k] - step;
        let minus = field(&xp);
        xp[k] = x[k];
        for i in 0..rows {
            jac[(i, k)] = (plus[i] - minus[i]) / (T::two() * step);
        }
    }
    jac
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::streams;

    fn jacobians_match(sys: &SystemModel<f64>, points: usize) {
        let mut rng = RngStream::new(17, streams::GRID);
        for _ in 0..points {
            let x = sys.state_box.sample(&mut rng);
            let t = 0.3;
            let analytic = sys.jac_f(&x, t);
            let fd = finite_difference_jacobian(|z| sys.f(z, t), &x, 1e-6);
            let rel = (&analytic - &fd).frobenius_norm() / analytic.frobenius_norm().max(1.0);
            assert!(rel < 1e-5, "{}: rel err {rel}", sys.name);
            for j in 0..sys.m() {
                let analytic = sys.jac_b(&x, t, j);
                let fd = finite_difference_jacobian(|z| sys.b(z, t).col(j), &x, 1e-6);
                let rel = (&analytic - &fd).frobenius_norm() / analytic.frobenius_norm().max(1.0);
                assert!(rel < 1e-5, "{} column {j}: rel err {rel}", sys.name);
            }
        }
    }

    #[test]
    fn registered_jacobians_match_finite_differences() {
        for name in SYSTEM_NAMES {
            jacobians_match(&system_by_name::<f64>(name).unwrap(), 100);
        }
        let custom = make_lti(
            Mat::from_rows(&[vec![-2.0, 0.5], vec![0.3, 1.0]]).unwrap(),
            Mat::from_rows(&[vec![1.0], vec![0.0]]).unwrap(),
        );
        jacobians_match(&custom, 20);
        jacobians_match(&make_curved_test(), 100);
    }

    #[test]
    fn unknown_name_is_rejected() {
        assert!(system_by_name::<f64>("segway").is_err());
    }

    #[test]
    fn directional_derivative_examples() {
        let x = [2.0, 5.0];
        let p = [1.0, 0.0];
        let d = directional_matrix_derivative(|z: &[f64], _| Mat::scaled_identity(2, z[0]), &p, &x, 0.0).unwrap();
        assert!((&d - &Mat::identity(2)).frobenius_norm() < 1e-9);
        let d = directional_matrix_derivative(|_: &[f64], _| Mat::scaled_identity(2, 3.0), &p, &x, 0.0).unwrap();
        assert_eq!(d.frobenius_norm(), 0.0);
        let d = directional_matrix_derivative(|z: &[f64], _| Mat::from_diag(&[z[0] * z[0], z[1]]), &p, &x, 0.0).unwrap();
        assert!((&d - &Mat::from_diag(&[4.0, 0.0])).frobenius_norm() < 1e-8);
    }

    #[test]
    fn lattice_covers_corners_and_caps() {
        let b = BoxSet::new(vec![0.0, -1.0], vec![1.0, 1.0]);
        let pts = b.lattice(3, 100);
        assert_eq!(pts.len(), 9);
        assert!(pts.contains(&vec![0.0, -1.0]));
        assert!(pts.contains(&vec![1.0, 1.0]));
        assert!(pts.iter().all(|p| b.contains(p)));
        assert!(b.lattice(100, 50).len() <= 50);
    }
}
