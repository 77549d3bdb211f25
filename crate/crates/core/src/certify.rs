//! Bound constants, exponential tracking-error envelopes and simulation-based
//! certificates.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cvstem::{geodesic_control, MetricSource};
use crate::error::{Error, Result};
use crate::losses::{c_u_matrix, Sample};
use crate::netmetric::{ControllerNet, MetricNet};
use crate::numerics::integrate::step_count;
use crate::numerics::{em_step, eigenvalues_sym, max_eig_sym, norm, rk4_step, spectral_norm, streams, Mat, RngStream};
use crate::scalar::Real;
use crate::systems::{generate_target, sample_initial_error, SystemModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BoundMode {
    #[default]
    Deterministic,
    Stochastic,
}

/// Constants entering the tracking-error bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants<T> {
    pub mode: BoundMode,
    pub m_under: T,
    pub m_over: T,
    pub alpha: T,
    pub alpha_ell: T,
    pub alpha_d: T,
    pub alpha_g: T,
    pub l_u: T,
    pub l_m: T,
    pub eps0: T,
    pub eps1: T,
    pub d_bar: T,
    pub g_bar: T,
    /// Disturbance constant of the stochastic bound; zero in deterministic mode.
    pub c: T,
}

/// `α − L_u ε₁ √(m̄/m̲)`.
pub fn alpha_ell_deterministic<T: Real>(alpha: T, l_u: T, eps1: T, m_over: T, m_under: T) -> T {
    alpha - l_u * eps1 * (m_over / m_under).sqrt()
}

/// `α − (α_d/2 + L_u ε₁ √(m̄/m̲))`.
pub fn alpha_ell_stochastic<T: Real>(alpha: T, alpha_d: T, l_u: T, eps1: T, m_over: T, m_under: T) -> T {
    alpha - (alpha_d * T::half() + l_u * eps1 * (m_over / m_under).sqrt())
}

/// `C = ḡ²(2/α_G + 1) + (L_u ε₀ + d̄)²/α_d`; a term whose numerator vanishes
/// contributes zero whatever its slack.
pub fn disturbance_constant<T: Real>(g_bar: T, alpha_g: T, l_u: T, eps0: T, d_bar: T, alpha_d: T) -> T {
    let g2 = g_bar * g_bar;
    let diffusion = if g2 == T::zero() { T::zero() } else { g2 * (T::two() / alpha_g + T::one()) };
    let drift = l_u * eps0 + d_bar;
    let drift = if drift == T::zero() { T::zero() } else { drift * drift / alpha_d };
    diffusion + drift
}

/// Learning-error constants implied by a metric error `ε_ℓ`:
/// `(ε_ℓ0, ε_ℓ1) = (0, ρ̄ b̄² ε_ℓ)`.
pub fn metric_error_conversion<T: Real>(rho_bar: T, b_bar: T, eps_l: T) -> (T, T) {
    (T::zero(), rho_bar * b_bar * b_bar * eps_l)
}

/// `ε_ℓ = max ‖M_L − M‖` over `grid`.
pub fn metric_error<T: Real>(learned: &Policy<'_, T>, reference: &Policy<'_, T>, grid: &[Sample<T>]) -> T {
    grid.iter()
        .map(|s| spectral_norm(&(&learned.metric(&s.x, s.t) - &reference.metric(&s.x, s.t))))
        .fold(T::zero(), T::max)
}

/// Learning errors implied by a metric error, with `ρ̄ = ‖R⁻¹‖` and
/// `b̄ = max ‖B‖` over `grid`.
pub fn metric_error_constants<T: Real>(eps_l: T, r: &Mat<T>, system: &SystemModel<T>, grid: &[Sample<T>]) -> Result<(T, T)> {
    let rho_bar = spectral_norm(&crate::numerics::spd_inverse(&r.sym())?);
    let b_bar = grid.iter().map(|s| spectral_norm(&system.b(&s.x, s.t))).fold(T::zero(), T::max);
    Ok(metric_error_conversion(rho_bar, b_bar, eps_l))
}

impl<T: Real> BoundConstants<T> {
    /// Builds the constants and derives `α_ℓ` and `C` for `mode`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        mode: BoundMode,
        m_under: T,
        m_over: T,
        alpha: T,
        alpha_d: T,
        alpha_g: T,
        l_u: T,
        l_m: T,
        eps0: T,
        eps1: T,
        d_bar: T,
        g_bar: T,
    ) -> Self {
        let mut c = Self {
            mode,
            m_under,
            m_over,
            alpha,
            alpha_ell: T::zero(),
            alpha_d,
            alpha_g,
            l_u,
            l_m,
            eps0,
            eps1,
            d_bar,
            g_bar,
            c: T::zero(),
        };
        c.refresh();
        c
    }

    /// Recomputes `α_ℓ` and `C` from the other fields.
    pub fn refresh(&mut self) {
        self.alpha_ell = match self.mode {
            BoundMode::Deterministic => {
                alpha_ell_deterministic(self.alpha, self.l_u, self.eps1, self.m_over, self.m_under)
            }
            BoundMode::Stochastic => {
                alpha_ell_stochastic(self.alpha, self.alpha_d, self.l_u, self.eps1, self.m_over, self.m_under)
            }
        };
        self.c = match self.mode {
            BoundMode::Deterministic => T::zero(),
            BoundMode::Stochastic => {
                disturbance_constant(self.g_bar, self.alpha_g, self.l_u, self.eps0, self.d_bar, self.alpha_d)
            }
        };
    }

    pub fn condition_ratio(&self) -> T {
        self.m_over / self.m_under
    }

    fn require_rate(&self) -> Result<()> {
        if self.alpha_ell > T::zero() {
            Ok(())
        } else {
            Err(Error::NonPositiveRate(self.alpha_ell.as_f64()))
        }
    }
}

/// `‖x − x_d‖(t) ≤ V_ℓ(0)/√m̲ e^{−α_ℓ t} + ((L_u ε₀ + d̄)/α_ℓ) √(m̄/m̲) (1 − e^{−α_ℓ t})`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeterministicEnvelope<T> {
    pub initial: T,
    pub steady: T,
    pub rate: T,
}

impl<T: Real> DeterministicEnvelope<T> {
    pub fn eval(&self, t: T) -> T {
        let decay = (-self.rate * t).exp();
        self.initial * decay + self.steady * (T::one() - decay)
    }
}

pub fn bound_envelope_det<T: Real>(constants: &BoundConstants<T>, v_ell_0: T) -> Result<DeterministicEnvelope<T>> {
    constants.require_rate()?;
    let k = constants;
    Ok(DeterministicEnvelope {
        initial: v_ell_0 / k.m_under.sqrt(),
        steady: (k.l_u * k.eps0 + k.d_bar) / k.alpha_ell * k.condition_ratio().sqrt(),
        rate: k.alpha_ell,
    })
}

/// `E‖x − x_d‖²(t) ≤ (C/2α_ℓ)(m̄/m̲) + E[V_sℓ(0)] e^{−2α_ℓ t}/m̲`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StochasticEnvelope<T> {
    pub asymptote: T,
    pub initial: T,
    pub rate: T,
}

impl<T: Real> StochasticEnvelope<T> {
    pub fn eval(&self, t: T) -> T {
        self.asymptote + self.initial * (-T::two() * self.rate * t).exp()
    }
}

pub fn bound_envelope_stoch<T: Real>(constants: &BoundConstants<T>, v_sl_0_mean: T) -> Result<StochasticEnvelope<T>> {
    constants.require_rate()?;
    let k = constants;
    Ok(StochasticEnvelope {
        asymptote: k.c / (T::two() * k.alpha_ell) * k.condition_ratio(),
        initial: v_sl_0_mean / k.m_under,
        rate: k.alpha_ell,
    })
}

/// A closed-loop tracking policy together with its contraction metric.
#[derive(Debug, Clone)]
pub enum Policy<'a, T: Real> {
    /// Learned controller `u_L` certified with the learned metric `M_L`.
    Learned {
        metric: &'a MetricNet<T>,
        controller: &'a ControllerNet<T>,
    },
    /// Differential feedback `u_d − ∫ R⁻¹BᵀM δq` along the straight path.
    Geodesic {
        source: MetricSource<'a, T>,
        r: Mat<T>,
        segments: usize,
    },
}

impl<T: Real> Policy<'_, T> {
    pub fn control(&self, system: &SystemModel<T>, x: &[T], x_d: &[T], u_d: &[T], t: T) -> Vec<T> {
        match self {
            Policy::Learned { controller, .. } => controller.eval_u(x, x_d, u_d),
            Policy::Geodesic { source, r, segments } => geodesic_control(*source, system, x, x_d, u_d, t, r, *segments),
        }
    }

    pub fn metric(&self, x: &[T], t: T) -> Mat<T> {
        match self {
            Policy::Learned { metric, .. } | Policy::Geodesic { source: MetricSource::Net(metric), .. } => {
                metric.eval_m(x, t)
            }
            Policy::Geodesic { source: MetricSource::Cvstem(sol), .. } => sol.metric(),
        }
    }

    fn constant_metric(&self) -> bool {
        matches!(self, Policy::Geodesic { source: MetricSource::Cvstem(_), .. })
    }

    /// `C_u = Ṁ + 2 sym(M ∂h/∂x) + 2αM` of the closed loop. Exact for learned
    /// policies, central differences otherwise.
    pub fn contraction_matrix(&self, system: &SystemModel<T>, s: &Sample<T>, alpha: T) -> Result<Mat<T>> {
        if let Policy::Learned { metric, controller } = self {
            return c_u_matrix(metric, controller, system, s, alpha);
        }
        let n = system.n();
        let closed = |x: &[T], t: T| {
            let u = self.control(system, x, &s.x_d, &s.u_d, t);
            system.h(x, &u, t)
        };
        let step = T::lit(1e-6) * (T::one() + norm(&s.x));
        let mut a = Mat::zeros(n, n);
        for k in 0..n {
            let mut xp = s.x.clone();
            let mut xm = s.x.clone();
            xp[k] += step;
            xm[k] -= step;
            let (fp, fm) = (closed(&xp, s.t), closed(&xm, s.t));
            for i in 0..n {
                a[(i, k)] = (fp[i] - fm[i]) / (T::two() * step);
            }
        }
        let m = self.metric(&s.x, s.t);
        let mdot = if self.constant_metric() {
            Mat::zeros(n, n)
        } else {
            let xdot = closed(&s.x, s.t);
            let xp: Vec<T> = s.x.iter().zip(&xdot).map(|(&x, &v)| x + step * v).collect();
            let xm: Vec<T> = s.x.iter().zip(&xdot).map(|(&x, &v)| x - step * v).collect();
            (&self.metric(&xp, s.t + step) - &self.metric(&xm, s.t - step)).scale((T::two() * step).recip())
        };
        let ma = m.matmul(&a);
        let mut c = &mdot + &(&ma + &ma.transpose());
        c.axpy(T::two() * alpha, &m);
        Ok(c.sym())
    }
}

/// Path length `V_ℓ = ∫√(δqᵀMδq)` and energy `V_sℓ = ∫δqᵀMδq` of the straight
/// path from `x_d` to `x`, by the trapezoid rule.
pub fn path_energy<T: Real>(policy: &Policy<'_, T>, x_d: &[T], x: &[T], t: T, segments: usize) -> (T, T) {
    let e: Vec<T> = x.iter().zip(x_d).map(|(&a, &b)| a - b).collect();
    let nodes = if policy.constant_metric() { 1 } else { segments.max(1) };
    let mut length = T::zero();
    let mut energy = T::zero();
    for i in 0..=nodes {
        let s = T::from_usize_lossy(i) / T::from_usize_lossy(nodes);
        let q: Vec<T> = x_d.iter().zip(&e).map(|(&a, &d)| a + s * d).collect();
        let w = if i == 0 || i == nodes { T::half() } else { T::one() } / T::from_usize_lossy(nodes);
        let quad = policy.metric(&q, t).quad_form(&e).max(T::zero());
        length += w * quad.sqrt();
        energy += w * quad;
    }
    (length, energy)
}

/// Certification grid: a lattice over the state box, each node paired with
/// a tracking error, feedforward input and time taken from `pool` (cycled).
/// `x_d = x − e` is clamped into the state box.
pub fn certification_grid<T: Real>(
    system: &SystemModel<T>,
    pool: &[Sample<T>],
    per_dim: usize,
    cap: usize,
    seed: u64,
) -> Vec<Sample<T>> {
    let mut rng = RngStream::new(seed, streams::GRID);
    system
        .state_box
        .lattice(per_dim, cap)
        .into_iter()
        .enumerate()
        .map(|(i, x)| {
            let (e, u_d, t) = if pool.is_empty() {
                (
                    system.error_box.sample(&mut rng),
                    system.input_box.sample(&mut rng),
                    system.time_box.lo[0],
                )
            } else {
                let s = &pool[i % pool.len()];
                let e = s.x.iter().zip(&s.x_d).map(|(&a, &b)| a - b).collect();
                (e, s.u_d.clone(), s.t)
            };
            let x_d = x
                .iter()
                .zip(&e)
                .enumerate()
                .map(|(k, (&xi, &ei))| (xi - ei).max(system.state_box.lo[k]).min(system.state_box.hi[k]))
                .collect();
            Sample { x, x_d, u_d, t }
        })
        .collect()
}

/// Contraction margins over a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMargins {
    pub points: usize,
    /// Fraction of grid points with `λ_max(C_u) < 0`.
    pub fraction_contracting: f64,
    pub max_eig: f64,
    pub median_eig: f64,
}

pub fn grid_contraction<T: Real>(
    policy: &Policy<'_, T>,
    system: &SystemModel<T>,
    grid: &[Sample<T>],
    alpha: T,
) -> Result<GridMargins> {
    if grid.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut eigs: Vec<f64> = grid
        .par_iter()
        .map(|s| Ok(max_eig_sym(&policy.contraction_matrix(system, s, alpha)?)?.as_f64()))
        .collect::<Result<_>>()?;
    let negative = eigs.iter().filter(|v| **v < 0.0).count();
    eigs.sort_by(f64::total_cmp);
    Ok(GridMargins {
        points: grid.len(),
        fraction_contracting: negative as f64 / grid.len() as f64,
        max_eig: *eigs.last().unwrap(),
        median_eig: median_sorted(&eigs),
    })
}

fn median_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Settings of [`estimate_constants`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantsOptions<T> {
    pub mode: BoundMode,
    pub alpha: T,
    pub alpha_d: T,
    pub alpha_g: T,
    /// Random point pairs for the Lipschitz quotient of `∂M/∂x`.
    pub lipschitz_pairs: usize,
    pub seed: u64,
}

impl<T: Real> ConstantsOptions<T> {
    pub fn new(mode: BoundMode, alpha: T) -> Self {
        Self {
            mode,
            alpha,
            alpha_d: T::zero(),
            alpha_g: T::one(),
            lipschitz_pairs: 200,
            seed: 0,
        }
    }
}

/// `ε₁` by least squares of `‖u_L − u*‖` on `‖x − x_d‖` through the origin
/// (clipped at zero), then the smallest `ε₀ ≥ 0` covering every residual.
pub fn fit_learning_error<T: Real>(deviation: &[T], distance: &[T]) -> (T, T) {
    let (mut sxy, mut sxx) = (T::zero(), T::zero());
    for (&y, &x) in deviation.iter().zip(distance) {
        sxy += x * y;
        sxx += x * x;
    }
    let eps1 = if sxx > T::zero() { (sxy / sxx).max(T::zero()) } else { T::zero() };
    let eps0 = deviation
        .iter()
        .zip(distance)
        .map(|(&y, &x)| y - eps1 * x)
        .fold(T::zero(), T::max);
    (eps0, eps1)
}

/// Measures `m̲`, `m̄`, `L_u`, `L_m` and, against an optional reference
/// controller, the learning errors `(ε₀, ε₁)` over `grid`.
pub fn estimate_constants<T: Real>(
    policy: &Policy<'_, T>,
    reference: Option<&Policy<'_, T>>,
    system: &SystemModel<T>,
    grid: &[Sample<T>],
    options: &ConstantsOptions<T>,
) -> Result<BoundConstants<T>> {
    if grid.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let per_point: Vec<(T, T, T)> = grid
        .par_iter()
        .map(|s| {
            let eig = eigenvalues_sym(&policy.metric(&s.x, s.t).sym())?;
            let b = spectral_norm(&system.b(&s.x, s.t));
            Ok((eig[0], *eig.last().unwrap(), b))
        })
        .collect::<Result<_>>()?;
    let m_under = per_point.iter().map(|p| p.0).fold(T::infinity(), T::min);
    let m_over = per_point.iter().map(|p| p.1).fold(T::neg_infinity(), T::max);
    let l_u = per_point.iter().map(|p| p.2).fold(T::zero(), T::max);
    if !(m_under > T::zero()) {
        return Err(Error::InvalidArgument(format!("metric is not positive definite on the grid (m_under = {m_under})")));
    }
    let l_m = if policy.constant_metric() {
        T::zero()
    } else {
        metric_derivative_lipschitz(policy, system, options.lipschitz_pairs, options.seed)
    };
    let (eps0, eps1) = match reference {
        None => (T::zero(), T::zero()),
        Some(r) => {
            let pairs: Vec<(T, T)> = grid
                .par_iter()
                .map(|s| {
                    let u = policy.control(system, &s.x, &s.x_d, &s.u_d, s.t);
                    let u_star = r.control(system, &s.x, &s.x_d, &s.u_d, s.t);
                    let dev: Vec<T> = u.iter().zip(&u_star).map(|(&a, &b)| a - b).collect();
                    let dist: Vec<T> = s.x.iter().zip(&s.x_d).map(|(&a, &b)| a - b).collect();
                    (norm(&dev), norm(&dist))
                })
                .collect();
            let (dev, dist): (Vec<T>, Vec<T>) = pairs.into_iter().unzip();
            fit_learning_error(&dev, &dist)
        }
    };
    Ok(BoundConstants::new(
        options.mode,
        m_under,
        m_over,
        options.alpha,
        options.alpha_d,
        options.alpha_g,
        l_u,
        l_m,
        eps0,
        eps1,
        system.d_bar,
        system.g_bar,
    ))
}

/// Sampled Lipschitz quotient `max_i ‖∂_iM(x) − ∂_iM(x')‖ / ‖x − x'‖`.
fn metric_derivative_lipschitz<T: Real>(policy: &Policy<'_, T>, system: &SystemModel<T>, pairs: usize, seed: u64) -> T {
    let n = system.n();
    let t = system.time_box.lo[0];
    let mut rng = RngStream::new(seed, streams::GRID).fork(1);
    let h = T::lit(1e-5);
    let partial = |x: &[T], i: usize| {
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[i] += h;
        xm[i] -= h;
        (&policy.metric(&xp, t) - &policy.metric(&xm, t)).scale((T::two() * h).recip())
    };
    let mut best = T::zero();
    for _ in 0..pairs {
        let x = system.state_box.sample(&mut rng);
        let step: Vec<T> = (0..n).map(|_| rng.uniform(-T::lit(0.05), T::lit(0.05))).collect();
        let y: Vec<T> = x.iter().zip(&step).map(|(&a, &b)| a + b).collect();
        let dist = norm(&step);
        if dist <= T::zero() {
            continue;
        }
        for i in 0..n {
            let q = (&partial(&x, i) - &partial(&y, i)).frobenius_norm() / dist;
            best = best.max(q);
        }
    }
    best
}

/// Settings of [`verify_tracking`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions<T> {
    pub mode: BoundMode,
    pub trajectories: usize,
    pub horizon: T,
    pub dt: T,
    /// Samples between recorded grid times.
    pub record_every: usize,
    /// Relative tolerance of the deterministic envelope check.
    pub tol: T,
    pub seed: u64,
    /// Straight-line quadrature segments for path energies.
    pub segments: usize,
}

impl<T: Real> VerifyOptions<T> {
    pub fn new(mode: BoundMode, trajectories: usize, horizon: T) -> Self {
        Self {
            mode,
            trajectories,
            horizon,
            dt: T::lit(1e-3),
            record_every: 10,
            tol: T::lit(0.05),
            seed: 0,
            segments: 8,
        }
    }
}

/// One simulated closed-loop trajectory on the recorded time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub index: usize,
    pub target_seed: u64,
    pub times: Vec<f64>,
    pub errors: Vec<f64>,
    pub envelope: Vec<f64>,
    pub x_e: Vec<f64>,
    pub v_ell_0: f64,
    pub v_sl_0: f64,
    /// `max_t (‖e‖ − env)/env`.
    pub max_violation: f64,
    pub pass: bool,
}

impl TrajectoryRecord {
    /// `t,error,envelope,x_e`, or `t,error,x_e` for plain simulations.
    pub fn to_csv(&self) -> String {
        if self.envelope.is_empty() {
            let mut out = String::from("t,error,x_e\n");
            for i in 0..self.times.len() {
                let _ = writeln!(out, "{},{:e},{:e}", self.times[i], self.errors[i], self.x_e[i]);
            }
            return out;
        }
        let mut out = String::from("t,error,envelope,x_e\n");
        for i in 0..self.times.len() {
            let _ = writeln!(out, "{},{:e},{:e},{:e}", self.times[i], self.errors[i], self.envelope[i], self.x_e[i]);
        }
        out
    }

    /// `x_e` at the recorded time closest to `t`.
    pub fn x_e_at(&self, t: f64) -> f64 {
        let i = self
            .times
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
            .map(|p| p.0)
            .unwrap_or(0);
        self.x_e[i]
    }
}

/// Ensemble mean-square error of the stochastic rollouts.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleRecord {
    pub times: Vec<f64>,
    pub mean_sq: Vec<f64>,
    pub std_err: Vec<f64>,
    pub envelope: Vec<f64>,
}

impl EnsembleRecord {
    /// `t,mean_sq,std_err,envelope`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,mean_sq,std_err,envelope\n");
        for i in 0..self.times.len() {
            let _ = writeln!(out, "{},{:e},{:e},{:e}", self.times[i], self.mean_sq[i], self.std_err[i], self.envelope[i]);
        }
        out
    }

    /// `min_t (envelope − mean)/SE`; large when the envelope holds with room.
    pub fn min_margin_in_se(&self) -> f64 {
        (0..self.times.len())
            .map(|i| {
                let gap = self.envelope[i] - self.mean_sq[i];
                if self.std_err[i] > 0.0 {
                    gap / self.std_err[i]
                } else if gap >= 0.0 {
                    f64::INFINITY
                } else {
                    f64::NEG_INFINITY
                }
            })
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub index: usize,
    pub target_seed: u64,
    pub initial_error: f64,
    pub final_error: f64,
    pub final_x_e: f64,
    pub max_violation: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub paths: usize,
    pub final_mean_sq: f64,
    pub asymptote: f64,
    pub min_margin_in_se: f64,
}

/// Summary written as the certificate JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub format: String,
    pub system: String,
    pub mode: BoundMode,
    pub constants: BoundConstants<f64>,
    pub grid: Option<GridMargins>,
    pub horizon: f64,
    pub median_final_x_e: f64,
    pub max_violation: f64,
    pub trajectories: Vec<TrajectorySummary>,
    pub ensemble: Option<EnsembleSummary>,
    pub pass: bool,
    pub notes: Vec<String>,
}

impl CertificateReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Result of [`verify_tracking`].
#[derive(Debug, Clone)]
pub struct Verification {
    pub report: CertificateReport,
    pub records: Vec<TrajectoryRecord>,
    pub ensemble: Option<EnsembleRecord>,
}

fn constants_f64<T: Real>(k: &BoundConstants<T>) -> BoundConstants<f64> {
    BoundConstants {
        mode: k.mode,
        m_under: k.m_under.as_f64(),
        m_over: k.m_over.as_f64(),
        alpha: k.alpha.as_f64(),
        alpha_ell: k.alpha_ell.as_f64(),
        alpha_d: k.alpha_d.as_f64(),
        alpha_g: k.alpha_g.as_f64(),
        l_u: k.l_u.as_f64(),
        l_m: k.l_m.as_f64(),
        eps0: k.eps0.as_f64(),
        eps1: k.eps1.as_f64(),
        d_bar: k.d_bar.as_f64(),
        g_bar: k.g_bar.as_f64(),
        c: k.c.as_f64(),
    }
}

/// Worst-case radial disturbance `d̄ (x − x_d)/‖x − x_d‖` (first axis when
/// the error vanishes).
pub fn radial_disturbance<T: Real>(d_bar: T, x: &[T], x_d: &[T]) -> Vec<T> {
    let e: Vec<T> = x.iter().zip(x_d).map(|(&a, &b)| a - b).collect();
    let r = norm(&e);
    if r > T::zero() {
        e.iter().map(|&v| d_bar * v / r).collect()
    } else {
        let mut d = vec![T::zero(); e.len()];
        d[0] = d_bar;
        d
    }
}

struct Rollout<T> {
    times: Vec<T>,
    errors: Vec<T>,
}

/// Joint integration of target and closed loop, `z = (x, x_d)`.
#[allow(clippy::too_many_arguments)]
fn rollout<T: Real>(
    policy: &Policy<'_, T>,
    system: &SystemModel<T>,
    signal: &crate::systems::InputSignal<T>,
    x0: &[T],
    xd0: &[T],
    options: &VerifyOptions<T>,
    mut rng: Option<&mut RngStream>,
) -> Result<Rollout<T>> {
    let n = system.n();
    let rhs = |z: &[T], t: T| {
        let (x, x_d) = z.split_at(n);
        let u_d = signal.eval(t);
        let u = policy.control(system, x, x_d, &u_d, t);
        let mut dx = system.h(x, &u, t);
        if system.d_bar > T::zero() {
            for (a, b) in dx.iter_mut().zip(radial_disturbance(system.d_bar, x, x_d)) {
                *a += b;
            }
        }
        dx.extend(system.h(x_d, &u_d, t));
        dx
    };
    let g_scale = system.g_bar / T::from_usize_lossy(n).sqrt();
    let diffusion = |_: &[T], _: T| Mat::from_fn(2 * n, n, |i, j| if i == j { g_scale } else { T::zero() });
    let steps = step_count(T::zero(), options.horizon, options.dt)?;
    let h = options.horizon / T::from_usize_lossy(steps);
    let every = options.record_every.max(1);
    let mut z: Vec<T> = x0.iter().chain(xd0).copied().collect();
    let err = |z: &[T]| norm(&z[..n].iter().zip(&z[n..]).map(|(&a, &b)| a - b).collect::<Vec<_>>());
    let mut out = Rollout {
        times: vec![T::zero()],
        errors: vec![err(&z)],
    };
    for k in 0..steps {
        let t = h * T::from_usize_lossy(k);
        z = match rng.as_deref_mut() {
            Some(r) => em_step(&rhs, &diffusion, &z, t, h, r),
            None => rk4_step(&rhs, &z, t, h),
        };
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { t: (t + h).as_f64() });
        }
        if (k + 1) % every == 0 || k + 1 == steps {
            out.times.push(h * T::from_usize_lossy(k + 1));
            out.errors.push(err(&z));
        }
    }
    Ok(out)
}

/// Rolls out `options.trajectories` closed loops against random targets.
/// Records carry no envelope; `max_violation` is NaN.
pub fn simulate_tracking<T: Real>(
    policy: &Policy<'_, T>,
    system: &SystemModel<T>,
    options: &VerifyOptions<T>,
) -> Result<Vec<TrajectoryRecord>> {
    if options.trajectories == 0 {
        return Err(Error::InvalidArgument("need at least one trajectory".into()));
    }
    let base = RngStream::new(options.seed, streams::TARGETS);
    let stochastic = options.mode == BoundMode::Stochastic;
    (0..options.trajectories)
        .into_par_iter()
        .map(|i| {
            let mut local = base.fork(i as u64);
            let target_seed = rand::RngCore::next_u64(&mut local);
            let target = generate_target(system, options.horizon, target_seed)?;
            let e0 = sample_initial_error(system, &mut local);
            let xd0 = target.x_d[0].clone();
            let x0: Vec<T> = xd0.iter().zip(&e0).map(|(&a, &b)| a + b).collect();
            let (v_ell, v_sl) = path_energy(policy, &xd0, &x0, T::zero(), options.segments);
            let mut wiener = RngStream::new(options.seed, streams::WIENER).fork(i as u64);
            let run = rollout(policy, system, &target.signal, &x0, &xd0, options, stochastic.then_some(&mut wiener))?;
            let e_init = run.errors[0];
            Ok(TrajectoryRecord {
                index: i,
                target_seed,
                times: run.times.iter().map(|t| t.as_f64()).collect(),
                errors: run.errors.iter().map(|e| e.as_f64()).collect(),
                envelope: Vec::new(),
                x_e: run
                    .errors
                    .iter()
                    .map(|&e| if e_init > T::zero() { (e / e_init).as_f64() } else { 0.0 })
                    .collect(),
                v_ell_0: v_ell.as_f64(),
                v_sl_0: v_sl.as_f64(),
                max_violation: f64::NAN,
                pass: true,
            })
        })
        .collect()
}

/// Simulates `trajectories` closed loops against random targets and checks
/// them against the bound envelope of `constants.mode`.
pub fn verify_tracking<T: Real>(
    policy: &Policy<'_, T>,
    system: &SystemModel<T>,
    constants: &BoundConstants<T>,
    options: &VerifyOptions<T>,
) -> Result<Verification> {
    constants.require_rate()?;
    let stochastic = options.mode == BoundMode::Stochastic;
    let horizon = options.horizon;
    let mut records = simulate_tracking(policy, system, options)?;
    for rec in &mut records {
        let env = bound_envelope_det(constants, T::lit(rec.v_ell_0))?;
        rec.envelope = rec.times.iter().map(|&t| env.eval(T::lit(t)).as_f64()).collect();
        rec.max_violation = rec
            .errors
            .iter()
            .zip(&rec.envelope)
            .map(|(e, b)| if *b > 0.0 { (e - b) / b } else if *e > 0.0 { f64::INFINITY } else { 0.0 })
            .fold(f64::NEG_INFINITY, f64::max);
        rec.pass = stochastic || rec.max_violation <= options.tol.as_f64();
    }

    let mut notes = vec!["path energies use the straight line from x_d to x, an upper bound on the geodesic".to_string()];
    let ensemble = if stochastic {
        let count = records.len() as f64;
        let v0_mean = records.iter().map(|r| r.v_sl_0).sum::<f64>() / count;
        let env = bound_envelope_stoch(constants, T::lit(v0_mean))?;
        let len = records[0].times.len();
        let mut rec = EnsembleRecord {
            times: records[0].times.clone(),
            mean_sq: Vec::with_capacity(len),
            std_err: Vec::with_capacity(len),
            envelope: Vec::with_capacity(len),
        };
        for k in 0..len {
            let sq: Vec<f64> = records.iter().map(|r| r.errors[k].powi(2)).collect();
            let mean = sq.iter().sum::<f64>() / count;
            let var = if sq.len() > 1 {
                sq.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1.0)
            } else {
                0.0
            };
            rec.mean_sq.push(mean);
            rec.std_err.push((var / count).sqrt());
            rec.envelope.push(env.eval(T::lit(rec.times[k])).as_f64());
        }
        notes.push("stochastic check: ensemble mean square within envelope + 3 standard errors".into());
        Some(rec)
    } else {
        None
    };

    let mut finals: Vec<f64> = records.iter().map(|r| *r.x_e.last().unwrap()).collect();
    finals.sort_by(f64::total_cmp);
    let (pass, max_violation) = match &ensemble {
        Some(ens) => {
            let worst = (0..ens.times.len())
                .map(|k| (ens.mean_sq[k] - ens.envelope[k]) / ens.envelope[k].max(f64::MIN_POSITIVE))
                .fold(f64::NEG_INFINITY, f64::max);
            (ens.min_margin_in_se() >= -3.0, worst)
        }
        None => (
            records.iter().all(|r| r.pass),
            records.iter().map(|r| r.max_violation).fold(f64::NEG_INFINITY, f64::max),
        ),
    };
    let report = CertificateReport {
        format: "contraction-kit/certificate-v1".into(),
        system: system.name.clone(),
        mode: options.mode,
        constants: constants_f64(constants),
        grid: None,
        horizon: horizon.as_f64(),
        median_final_x_e: median_sorted(&finals),
        max_violation,
        trajectories: records
            .iter()
            .map(|r| TrajectorySummary {
                index: r.index,
                target_seed: r.target_seed,
                initial_error: r.errors[0],
                final_error: *r.errors.last().unwrap(),
                final_x_e: *r.x_e.last().unwrap(),
                max_violation: r.max_violation,
                pass: r.pass,
            })
            .collect(),
        ensemble: ensemble.as_ref().map(|e| EnsembleSummary {
            paths: records.len(),
            final_mean_sq: *e.mean_sq.last().unwrap(),
            asymptote: *e.envelope.last().unwrap(),
            min_margin_in_se: e.min_margin_in_se(),
        }),
        pass,
        notes,
    };
    Ok(Verification {
        report,
        records,
        ensemble,
    })
}

#[cfg(test)]
mod tests;
