//! Constant-metric CV-STEM synthesis.
//!
//! With `W̄ = νW` constant, the contraction conditions become linear matrix
//! inequalities in `(ν, W̄)` at each grid point. The condition number bound
//! `χ` is minimized by bisection; each feasibility problem is solved by a
//! projected subgradient method on the worst constraint margin.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netmetric::MetricNet;
use crate::numerics::{inverse, max_eig_sym, path_quadrature, spd_inverse, sym_eigen, Mat};
use crate::scalar::Real;
use crate::systems::SystemModel;

pub const FEASIBILITY_TOL: f64 = 1e-7;
pub const CHI_WIDTH: f64 = 1e-4;
pub const CHI_MAX: f64 = 1e6;

/// One grid point `(x, t)` of the semi-infinite constraint set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint<T> {
    pub x: Vec<T>,
    pub t: T,
}

#[derive(Debug, Clone)]
pub struct CvstemProblem<T: Real> {
    pub system: SystemModel<T>,
    pub grid: Vec<GridPoint<T>>,
    pub alpha: T,
    /// `α_s = L_m ḡ² (α_G + 1/2)`; zero for deterministic systems.
    pub alpha_s: T,
    pub alpha_d: T,
    pub alpha_g: T,
    /// Constant positive definite input weight.
    pub r: Mat<T>,
    /// Disturbance constant `C` of the steady-state bound.
    pub c: T,
    pub chi_max: T,
    pub max_inner_iterations: usize,
}

/// `α_s = L_m ḡ² (α_G + 1/2)`.
pub fn stochastic_offset<T: Real>(l_m: T, g_bar: T, alpha_g: T) -> T {
    l_m * g_bar * g_bar * (alpha_g + T::half())
}

impl<T: Real> CvstemProblem<T> {
    /// Deterministic problem with `R = I` and `C = 1`.
    pub fn new(system: SystemModel<T>, grid: Vec<GridPoint<T>>, alpha: T) -> Self {
        let m = system.m();
        Self {
            system,
            grid,
            alpha,
            alpha_s: T::zero(),
            alpha_d: T::zero(),
            alpha_g: T::zero(),
            r: Mat::identity(m),
            c: T::one(),
            chi_max: T::lit(CHI_MAX),
            max_inner_iterations: 3000,
        }
    }

    /// Lattice of the state box at the start of the time box.
    pub fn lattice_grid(system: &SystemModel<T>, per_dim: usize, cap: usize) -> Vec<GridPoint<T>> {
        let t = system.time_box.lo[0];
        system
            .state_box
            .lattice(per_dim, cap)
            .into_iter()
            .map(|x| GridPoint { x, t })
            .collect()
    }

    /// `α_ℓ = α − α_d/2` of the exact controller.
    pub fn alpha_l(&self) -> T {
        self.alpha - self.alpha_d * T::half()
    }

    pub fn objective(&self, chi: T) -> T {
        self.c / (T::two() * self.alpha_l()) * chi
    }

    fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::InvalidArgument("CV-STEM grid is empty".into()));
        }
        if !(self.alpha > T::zero()) || self.alpha_s < T::zero() || !(self.chi_max >= T::one()) {
            return Err(Error::InvalidArgument("need alpha > 0, alpha_s >= 0, chi_max >= 1".into()));
        }
        spd_inverse(&self.r.sym())?;
        Ok(())
    }
}

/// `H(ν, W̄) = 2 sym(∂f/∂x W̄) − ν B R⁻¹ Bᵀ` for constant `W̄`.
pub fn h_matrix<T: Real>(problem: &CvstemProblem<T>, nu: T, w_bar: &Mat<T>, x: &[T], t: T) -> Mat<T> {
    let sys = &problem.system;
    let a = sys.jac_f(x, t).matmul(w_bar);
    let b = sys.b(x, t);
    let r_inv = spd_inverse(&problem.r.sym()).expect("R is positive definite");
    let mut h = &a + &a.transpose();
    h.axpy(-nu, &b.matmul(&r_inv).matmul(&b.transpose()));
    h
}

/// Constraint residuals at one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmiResiduals<T> {
    /// `λ_max` of `[[H + 2αW̄, W̄], [W̄, −(ν/α_s) I]]`, or of `H + 2αW̄` when
    /// `α_s = 0`.
    pub block_margin: T,
    /// `‖2 sym(∂b_i/∂x W̄)‖_F` per input column.
    pub killing_margins: Vec<T>,
    /// `(λ_max(I − W̄), λ_max(W̄ − χI))`.
    pub bound_margins: (T, T),
}

impl<T: Real> LmiResiduals<T> {
    pub fn worst(&self) -> T {
        self.killing_margins
            .iter()
            .fold(self.block_margin.max(self.bound_margins.0).max(self.bound_margins.1), |a, &b| a.max(b))
    }
}

/// Symmetric constraint matrix whose maximum eigenvalue is the block margin.
pub fn block_matrix<T: Real>(problem: &CvstemProblem<T>, nu: T, w_bar: &Mat<T>, x: &[T], t: T) -> Mat<T> {
    let mut top = h_matrix(problem, nu, w_bar, x, t);
    top.axpy(T::two() * problem.alpha, w_bar);
    if problem.alpha_s == T::zero() {
        return top.sym();
    }
    let n = w_bar.rows();
    let corner = Mat::scaled_identity(n, -nu / problem.alpha_s);
    Mat::block2(&top, w_bar, w_bar, &corner).sym()
}

fn killing<T: Real>(problem: &CvstemProblem<T>, w_bar: &Mat<T>, x: &[T], t: T) -> Vec<Mat<T>> {
    (0..problem.system.m())
        .map(|j| {
            let k = problem.system.jac_b(x, t, j).matmul(w_bar);
            &k + &k.transpose()
        })
        .collect()
}

pub fn lmi_residuals<T: Real>(
    problem: &CvstemProblem<T>,
    nu: T,
    chi: T,
    w_bar: &Mat<T>,
    x: &[T],
    t: T,
) -> Result<LmiResiduals<T>> {
    let n = w_bar.rows();
    let block_margin = max_eig_sym(&block_matrix(problem, nu, w_bar, x, t))?;
    let killing_margins = killing(problem, w_bar, x, t).iter().map(Mat::frobenius_norm).collect();
    let lower = max_eig_sym(&(&Mat::identity(n) - w_bar).sym())?;
    let upper = max_eig_sym(&(w_bar - &Mat::scaled_identity(n, chi)).sym())?;
    Ok(LmiResiduals {
        block_margin,
        killing_margins,
        bound_margins: (lower, upper),
    })
}

/// Schur reduction `H + 2αW̄ + (α_s/ν) W̄²` of the block constraint.
pub fn schur_equivalent<T: Real>(problem: &CvstemProblem<T>, nu: T, w_bar: &Mat<T>, x: &[T], t: T) -> Result<Mat<T>> {
    if !(problem.alpha_s > T::zero()) || !(nu > T::zero()) {
        return Err(Error::InvalidArgument(
            "Schur reduction needs alpha_s > 0 and nu > 0".into(),
        ));
    }
    let mut out = h_matrix(problem, nu, w_bar, x, t);
    out.axpy(T::two() * problem.alpha, w_bar);
    out.axpy(problem.alpha_s / nu, &w_bar.matmul(w_bar));
    Ok(out.sym())
}

/// Projection onto `{W̄ = W̄ᵀ : I ⪯ W̄ ⪯ χI}`.
fn project<T: Real>(w: &Mat<T>, chi: T) -> Mat<T> {
    let eig = sym_eigen(&w.sym()).expect("symmetric input");
    eig.reconstruct_with(|v| v.max(T::one()).min(chi))
}

struct Witness<T> {
    log_nu: T,
    w_bar: Mat<T>,
}

/// Worst margin and a subgradient `(∂/∂ log ν, ∂/∂W̄)` over the grid.
fn margin_and_subgradient<T: Real>(problem: &CvstemProblem<T>, w: &Witness<T>) -> (T, T, Mat<T>) {
    let nu = w.log_nu.exp();
    let n = w.w_bar.rows();
    let evals: Vec<(T, T, Mat<T>)> = problem
        .grid
        .par_iter()
        .map(|g| {
            let block = block_matrix(problem, nu, &w.w_bar, &g.x, g.t);
            let eig = sym_eigen(&block).expect("symmetric block");
            let top = eig.values.len() - 1;
            let v = eig.eigenvector(top);
            let (v1, v2) = v.split_at(n);
            let jf = problem.system.jac_f(&g.x, g.t);
            let b = problem.system.b(&g.x, g.t);
            let r_inv = spd_inverse(&problem.r.sym()).expect("R is positive definite");
            let bv = b.tr_matvec(v1);
            let mut d_nu = -crate::numerics::dot(&bv, &r_inv.matvec(&bv));
            let p = crate::numerics::outer(v1, v1);
            let mut gw = &jf.tr_matmul(&p) + &p.matmul(&jf);
            gw.axpy(T::two() * problem.alpha, &p);
            if !v2.is_empty() {
                let c = crate::numerics::outer(v1, v2);
                gw.axpy(T::one(), &(&c + &c.transpose()));
                d_nu -= crate::numerics::dot(v2, v2) / problem.alpha_s;
            }
            let mut best = (eig.values[top], d_nu * nu, gw);
            for kres in killing(problem, &w.w_bar, &g.x, g.t).iter().enumerate().map(|(j, k)| (j, k.frobenius_norm(), k.clone())) {
                let (j, norm, k) = kres;
                if norm > best.0 {
                    let kb = k.scale(norm.recip());
                    let jb = problem.system.jac_b(&g.x, g.t, j);
                    let gk = &jb.tr_matmul(&kb) + &kb.matmul(&jb);
                    best = (norm, T::zero(), gk.sym());
                }
            }
            best
        })
        .collect();
    let mut worst = evals[0].clone();
    for e in evals.into_iter().skip(1) {
        if e.0 > worst.0 {
            worst = e;
        }
    }
    worst
}

/// Searches `(ν, W̄)` with `I ⪯ W̄ ⪯ χI` making every margin non-positive.
/// Returns the best witness and its margin.
fn feasibility<T: Real>(problem: &CvstemProblem<T>, chi: T, start: &Witness<T>) -> (Witness<T>, T) {
    let mut w = Witness {
        log_nu: start.log_nu,
        w_bar: project(&start.w_bar, chi),
    };
    let (mut phi, mut g_nu, mut g_w) = margin_and_subgradient(problem, &w);
    let mut best = (
        Witness {
            log_nu: w.log_nu,
            w_bar: w.w_bar.clone(),
        },
        phi,
    );
    let delta = T::lit(1e-3) * (T::one() + phi.abs());
    for _ in 0..problem.max_inner_iterations {
        if best.1 <= T::zero() {
            break;
        }
        let norm2 = g_nu * g_nu + g_w.frobenius_dot(&g_w);
        if norm2 <= T::epsilon() {
            break;
        }
        let step = (phi + delta) / norm2;
        w.log_nu -= step * g_nu;
        w.log_nu = w.log_nu.min(T::lit(60.0));
        w.w_bar.axpy(-step, &g_w);
        w.w_bar = project(&w.w_bar, chi);
        (phi, g_nu, g_w) = margin_and_subgradient(problem, &w);
        if phi < best.1 {
            best = (
                Witness {
                    log_nu: w.log_nu,
                    w_bar: w.w_bar.clone(),
                },
                phi,
            );
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvstemSolution<T> {
    pub nu: T,
    pub chi: T,
    pub w_bar: Mat<T>,
    /// `J_CV = (C / 2α_ℓ) χ`.
    pub objective: T,
    pub residuals: Vec<LmiResiduals<T>>,
}

impl<T: Real> CvstemSolution<T> {
    /// `M = ν W̄⁻¹`.
    pub fn metric(&self) -> Mat<T> {
        spd_inverse(&self.w_bar).expect("W̄ ⪰ I").scale(self.nu)
    }

    /// Worst residual over the grid.
    pub fn max_margin(&self) -> T {
        self.residuals.iter().map(LmiResiduals::worst).fold(T::neg_infinity(), T::max)
    }

    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Report<'a> {
            chi: f64,
            nu: f64,
            w_bar: Vec<Vec<f64>>,
            objective: f64,
            max_margin: f64,
            block_margins: Vec<f64>,
            killing_margins: Vec<Vec<f64>>,
            bound_margins: (f64, f64),
            grid_points: usize,
            #[serde(skip)]
            _s: std::marker::PhantomData<&'a ()>,
        }
        let bound = self.residuals.first().map(|r| r.bound_margins).unwrap_or((T::zero(), T::zero()));
        let report = Report {
            chi: self.chi.as_f64(),
            nu: self.nu.as_f64(),
            w_bar: self.w_bar.to_rows_f64(),
            objective: self.objective.as_f64(),
            max_margin: self.max_margin().as_f64(),
            block_margins: self.residuals.iter().map(|r| r.block_margin.as_f64()).collect(),
            killing_margins: self
                .residuals
                .iter()
                .map(|r| r.killing_margins.iter().map(|v| v.as_f64()).collect())
                .collect(),
            bound_margins: (bound.0.as_f64(), bound.1.as_f64()),
            grid_points: self.residuals.len(),
            _s: std::marker::PhantomData,
        };
        Ok(serde_json::to_string_pretty(&report)?)
    }
}

fn residuals_at<T: Real>(problem: &CvstemProblem<T>, nu: T, chi: T, w_bar: &Mat<T>) -> Result<Vec<LmiResiduals<T>>> {
    problem
        .grid
        .par_iter()
        .map(|g| lmi_residuals(problem, nu, chi, w_bar, &g.x, g.t))
        .collect()
}

/// Minimizes `χ` subject to the constant-metric contraction LMIs on the grid.
pub fn solve_cvstem<T: Real>(problem: &CvstemProblem<T>) -> Result<CvstemSolution<T>> {
    problem.validate()?;
    let n = problem.system.n();
    let tol = T::lit(FEASIBILITY_TOL);
    let start = Witness {
        log_nu: T::zero(),
        w_bar: Mat::identity(n),
    };
    let (mut witness, margin) = feasibility(problem, problem.chi_max, &start);
    if margin > T::zero() {
        return Err(Error::Infeasible(format!(
            "no constant metric satisfies the contraction constraints at alpha = {} (best margin {margin:e})",
            problem.alpha
        )));
    }
    let mut hi = problem.chi_max;
    let (w1, m1) = feasibility(problem, T::one(), &witness);
    if m1 <= T::zero() {
        witness = w1;
        hi = T::one();
    } else {
        let mut lo = T::one();
        let width = T::lit(CHI_WIDTH);
        while hi - lo > width {
            let mid = T::half() * (lo + hi);
            let (w, m) = feasibility(problem, mid, &witness);
            if m <= T::zero() {
                hi = mid;
                witness = w;
            } else {
                lo = mid;
            }
        }
    }
    let chi = hi;
    let nu = witness.log_nu.exp();
    let residuals = residuals_at(problem, nu, chi, &witness.w_bar)?;
    let sol = CvstemSolution {
        nu,
        chi,
        w_bar: witness.w_bar,
        objective: problem.objective(chi),
        residuals,
    };
    debug_assert!(sol.max_margin() <= tol);
    Ok(sol)
}

/// Where the metric of the geodesic controller comes from.
#[derive(Debug, Clone, Copy)]
pub enum MetricSource<'a, T: Real> {
    /// Constant metric `M = ν W̄⁻¹` of a CV-STEM solution.
    Cvstem(&'a CvstemSolution<T>),
    /// Learned `M_L = W_L⁻¹`.
    Net(&'a MetricNet<T>),
}

/// `u* = u_d − ∫ R⁻¹ Bᵀ M δq` along the straight path from `x_d` to `x`.
pub fn geodesic_control<T: Real>(
    source: MetricSource<'_, T>,
    system: &SystemModel<T>,
    x: &[T],
    x_d: &[T],
    u_d: &[T],
    t: T,
    r: &Mat<T>,
    segments: usize,
) -> Vec<T> {
    let r_inv = inverse(r).expect("R is invertible");
    let constant = match source {
        MetricSource::Cvstem(sol) => Some(sol.metric()),
        MetricSource::Net(_) => None,
    };
    let integrand = |q: &[T], dq: &[T]| {
        let m = match (&constant, source) {
            (Some(m), _) => m.clone(),
            (None, MetricSource::Net(net)) => net.eval_m(q, t),
            (None, MetricSource::Cvstem(_)) => unreachable!(),
        };
        let b = system.b(q, t);
        r_inv.matvec(&b.tr_matvec(&m.matvec(dq)))
    };
    let delta = path_quadrature(integrand, x_d, x, segments);
    u_d.iter().zip(&delta).map(|(&a, &d)| a - d).collect()
}
