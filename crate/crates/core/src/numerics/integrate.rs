//! Fixed-step integrators: classical RK4 for ODEs and Euler–Maruyama for SDEs.

use crate::error::{Error, Result};
use crate::numerics::matrix::Mat;
use crate::numerics::rng::RngStream;
use crate::scalar::Real;

/// Default step size, seconds.
pub const DEFAULT_DT: f64 = 1e-3;

/// States sampled on a uniform time grid (both endpoints included).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    pub times: Vec<T>,
    pub states: Vec<Vec<T>>,
}

impl<T: Real> Trajectory<T> {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> &[T] {
        self.states.last().expect("non-empty trajectory")
    }
}

/// Number of uniform steps covering `[t0, t1]` with spacing at most `dt`.
pub fn step_count<T: Real>(t0: T, t1: T, dt: T) -> Result<usize> {
    if !(dt > T::zero()) {
        return Err(Error::InvalidArgument(format!("step size must be positive, got {dt}")));
    }
    if !(t1 > t0) {
        return Err(Error::InvalidArgument(format!("empty interval [{t0}, {t1}]")));
    }
    let steps = ((t1 - t0) / dt - T::lit(1e-9)).ceil();
    Ok(steps.to_usize().unwrap_or(1).max(1))
}

/// One classical fourth-order Runge–Kutta step.
pub fn rk4_step<T: Real, F>(rhs: &F, x: &[T], t: T, h: T) -> Vec<T>
where
    F: Fn(&[T], T) -> Vec<T>,
{
    let half = h * T::half();
    let k1 = rhs(x, t);
    let x2: Vec<T> = x.iter().zip(&k1).map(|(&a, &k)| a + half * k).collect();
    let k2 = rhs(&x2, t + half);
    let x3: Vec<T> = x.iter().zip(&k2).map(|(&a, &k)| a + half * k).collect();
    let k3 = rhs(&x3, t + half);
    let x4: Vec<T> = x.iter().zip(&k3).map(|(&a, &k)| a + h * k).collect();
    let k4 = rhs(&x4, t + h);
    let sixth = h / T::lit(6.0);
    x.iter()
        .enumerate()
        .map(|(i, &a)| a + sixth * (k1[i] + T::two() * (k2[i] + k3[i]) + k4[i]))
        .collect()
}

/// Integrates `ẋ = rhs(x, t)` from `t0` to `t1` with fixed-step RK4.
pub fn integrate_ode<T: Real, F>(rhs: F, x0: &[T], t0: T, t1: T, dt: T) -> Result<Trajectory<T>>
where
    F: Fn(&[T], T) -> Vec<T>,
{
    let steps = step_count(t0, t1, dt)?;
    let h = (t1 - t0) / T::from_usize_lossy(steps);
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut x = x0.to_vec();
    times.push(t0);
    states.push(x.clone());
    for k in 0..steps {
        let t = t0 + h * T::from_usize_lossy(k);
        x = rk4_step(&rhs, &x, t, h);
        let t_next = if k + 1 == steps { t1 } else { t0 + h * T::from_usize_lossy(k + 1) };
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { t: t_next.as_f64() });
        }
        times.push(t_next);
        states.push(x.clone());
    }
    Ok(Trajectory { times, states })
}

/// One Euler–Maruyama step `x + drift·h + G·ΔW` with `ΔW ~ N(0, h I)`.
pub fn em_step<T: Real, D, G>(
    drift: &D,
    diffusion: &G,
    x: &[T],
    t: T,
    h: T,
    rng: &mut RngStream,
) -> Vec<T>
where
    D: Fn(&[T], T) -> Vec<T>,
    G: Fn(&[T], T) -> Mat<T>,
{
    let a = drift(x, t);
    let g = diffusion(x, t);
    let sqrt_h = h.sqrt();
    let dw: Vec<T> = (0..g.cols()).map(|_| rng.normal::<T>() * sqrt_h).collect();
    let noise = if g.cols() == 0 { vec![T::zero(); x.len()] } else { g.matvec(&dw) };
    x.iter()
        .zip(a.iter().zip(&noise))
        .map(|(&xi, (&ai, &ni))| xi + ai * h + ni)
        .collect()
}

/// Euler–Maruyama integration of `dx = drift dt + G dW`. With `G ≡ 0` this is
/// the explicit Euler method.
pub fn integrate_sde<T: Real, D, G>(
    drift: D,
    diffusion: G,
    x0: &[T],
    t0: T,
    t1: T,
    dt: T,
    rng: &mut RngStream,
) -> Result<Trajectory<T>>
where
    D: Fn(&[T], T) -> Vec<T>,
    G: Fn(&[T], T) -> Mat<T>,
{
    let steps = step_count(t0, t1, dt)?;
    let h = (t1 - t0) / T::from_usize_lossy(steps);
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut x = x0.to_vec();
    times.push(t0);
    states.push(x.clone());
    for k in 0..steps {
        let t = t0 + h * T::from_usize_lossy(k);
        x = em_step(&drift, &diffusion, &x, t, h, rng);
        let t_next = if k + 1 == steps { t1 } else { t0 + h * T::from_usize_lossy(k + 1) };
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { t: t_next.as_f64() });
        }
        times.push(t_next);
        states.push(x.clone());
    }
    Ok(Trajectory { times, states })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rk4_exponential_decay() {
        let traj = integrate_ode(|x: &[f64], _| vec![-x[0]], &[1.0], 0.0, 1.0, 1e-3).unwrap();
        assert_eq!(traj.len(), 1001);
        assert_eq!(*traj.times.last().unwrap(), 1.0);
        assert!((traj.last()[0] - (-1f64).exp()).abs() < 1e-8);
    }

    #[test]
    fn rk4_constant_and_ramp() {
        let flat = integrate_ode(|_: &[f64], _| vec![0.0, 0.0], &[2.0, -3.0], 0.0, 2.0, 0.1).unwrap();
        assert!(flat.states.iter().all(|s| s == &vec![2.0, -3.0]));
        let ramp = integrate_ode(|_: &[f64], _| vec![1.0], &[0.0], 0.0, 3.0, 1e-2).unwrap();
        for (t, s) in ramp.times.iter().zip(&ramp.states) {
            assert!((s[0] - t).abs() < 1e-12);
        }
    }

    #[test]
    fn rk4_fourth_order() {
        let err = |dt: f64| {
            let traj = integrate_ode(|x: &[f64], _| vec![-x[0]], &[1.0], 0.0, 1.0, dt).unwrap();
            (traj.last()[0] - (-1f64).exp()).abs()
        };
        let mut dt = 0.2;
        while dt > 0.01 {
            let ratio = err(dt) / err(dt / 2.0);
            assert!(ratio >= 15.0, "dt = {dt}: ratio {ratio}");
            dt /= 2.0;
        }
    }

    #[test]
    fn divergence_is_reported() {
        let res = integrate_ode(|x: &[f64], _| vec![x[0] * x[0]], &[1.0], 0.0, 2.0, 1e-2);
        assert!(matches!(res, Err(Error::Divergence { .. })));
    }

    #[test]
    fn bad_arguments() {
        assert!(integrate_ode(|x: &[f64], _| x.to_vec(), &[1.0], 0.0, 1.0, 0.0).is_err());
        assert!(integrate_ode(|x: &[f64], _| x.to_vec(), &[1.0], 1.0, 1.0, 0.1).is_err());
    }

    #[test]
    fn em_without_noise_is_euler() {
        let mut rng = RngStream::new(0, 0);
        let traj = integrate_sde(
            |x: &[f64], _| vec![-x[0]],
            |_: &[f64], _| Mat::zeros(1, 1),
            &[1.0],
            0.0,
            1.0,
            0.01,
            &mut rng,
        )
        .unwrap();
        let mut x = 1.0;
        for s in &traj.states[1..] {
            x += -x * 0.01;
            assert_eq!(s[0], x);
        }
    }

    #[test]
    fn em_is_reproducible() {
        let run = || {
            let mut rng = RngStream::new(42, 3);
            integrate_sde(
                |x: &[f64], _| vec![-x[0]],
                |_: &[f64], _| Mat::scaled_identity(1, 0.3),
                &[0.5],
                0.0,
                1.0,
                1e-2,
                &mut rng,
            )
            .unwrap()
        };
        assert_eq!(run(), run());
    }
}
