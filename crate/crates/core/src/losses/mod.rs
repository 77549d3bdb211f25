//! Penalty losses for learning a contraction metric and controller jointly.
//!
//! Every loss term is evaluated per sample from one pass through the metric
//! network (with input tangents) and one through the controller. The reverse
//! pass pushes cotangents of `W`, `∂W/∂x_k`, `∂W/∂t`, `u` and `∂u/∂x` back
//! into the three networks.

mod gradcheck;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netmetric::{ControllerNet, MetricEval, MetricNet, Mlp};
use crate::numerics::{inverse, sample_unit_sphere, Mat, RngStream};
use crate::scalar::Real;
use crate::systems::{annihilator, SystemModel};

pub use gradcheck::{gradient_check, relative_error, GradCheck};

/// Training sample `ξ = (x, x_d, u_d, t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample<T> {
    pub x: Vec<T>,
    pub x_d: Vec<T>,
    pub u_d: Vec<T>,
    pub t: T,
}

/// Loss components averaged over a batch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport<T> {
    pub l_u: T,
    pub l_c: T,
    pub l_w1: T,
    pub l_w2: T,
    pub l_cv: Option<T>,
    pub total: T,
}

impl<T: Real> LossReport<T> {
    fn zero() -> Self {
        Self {
            l_u: T::zero(),
            l_c: T::zero(),
            l_w1: T::zero(),
            l_w2: T::zero(),
            l_cv: None,
            total: T::zero(),
        }
    }

    fn add(&mut self, o: &Self) {
        self.l_u += o.l_u;
        self.l_c += o.l_c;
        self.l_w1 += o.l_w1;
        self.l_w2 += o.l_w2;
    }

    fn finish(&mut self, count: usize, l_cv: Option<T>) {
        let inv = T::from_usize_lossy(count).recip();
        self.l_u *= inv;
        self.l_c *= inv;
        self.l_w1 *= inv;
        self.l_w2 *= inv;
        self.l_cv = l_cv;
        self.total = self.l_u + self.l_c + self.l_w1 + self.l_w2 + l_cv.unwrap_or_else(T::zero);
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
    }
}

/// Gradient of the loss with respect to all trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub metric: Mlp<T>,
    pub w1: Mlp<T>,
    pub w2: Mlp<T>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros(metric: &MetricNet<T>, controller: &ControllerNet<T>) -> Self {
        Self {
            metric: metric.theta.zeros_like(),
            w1: controller.w1.zeros_like(),
            w2: controller.w2.zeros_like(),
        }
    }

    pub fn axpy(&mut self, s: T, other: &Self) {
        self.metric.axpy(s, &other.metric);
        self.w1.axpy(s, &other.w1);
        self.w2.axpy(s, &other.w2);
    }

    /// Flat vector in the order metric, `w1`, `w2`.
    pub fn flatten(&self) -> Vec<T> {
        let mut out = self.metric.params();
        self.w1.write_params(&mut out);
        self.w2.write_params(&mut out);
        out
    }
}

/// Flat parameter vector of a metric/controller pair, same order as
/// [`Gradients::flatten`].
pub fn flatten_params<T: Real>(metric: &MetricNet<T>, controller: &ControllerNet<T>) -> Vec<T> {
    let mut out = metric.theta.params();
    controller.w1.write_params(&mut out);
    controller.w2.write_params(&mut out);
    out
}

/// Inverse of [`flatten_params`].
pub fn unflatten_params<T: Real>(metric: &mut MetricNet<T>, controller: &mut ControllerNet<T>, params: &[T]) {
    let rest = metric.theta.read_params(params);
    let rest = controller.w1.read_params(rest);
    let rest = controller.w2.read_params(rest);
    debug_assert!(rest.is_empty());
}

/// Unit-sphere sample points keyed by dimension, shared by every sample of
/// a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct SpherePoints<T> {
    sets: BTreeMap<usize, Vec<Vec<T>>>,
}

impl<T: Real> SpherePoints<T> {
    pub fn new(dims: &[usize], count: usize, rng: &mut RngStream) -> Self {
        let mut sets = BTreeMap::new();
        for &d in dims {
            if d > 0 && !sets.contains_key(&d) {
                sets.insert(d, sample_unit_sphere(d, count, rng));
            }
        }
        Self { sets }
    }

    /// Points for the full state space and the annihilated subspace.
    pub fn for_system(system: &SystemModel<T>, count: usize, rng: &mut RngStream) -> Self {
        let n = system.n();
        Self::new(&[n, n.saturating_sub(system.m())], count, rng)
    }

    pub fn get(&self, dim: usize) -> Result<&[Vec<T>]> {
        self.sets
            .get(&dim)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Dimension(format!("no sphere points of dimension {dim}")))
    }
}

/// `L_PD(A) = (1/K) Σ max{0, −pᵀ A p}`.
pub fn l_pd<T: Real>(a: &Mat<T>, points: &[Vec<T>]) -> T {
    if points.is_empty() {
        return T::zero();
    }
    let sum: T = points.iter().map(|p| (-a.quad_form(p)).max(T::zero())).sum();
    sum / T::from_usize_lossy(points.len())
}

/// `L_PD(−C)` and its derivative `(1/K) Σ_{pᵀCp>0} p pᵀ` with respect to `C`.
fn l_pd_neg_with_grad<T: Real>(c: &Mat<T>, points: &[Vec<T>]) -> (T, Mat<T>) {
    let d = c.rows();
    let mut g = Mat::zeros(d, d);
    if d == 0 || points.is_empty() {
        return (T::zero(), g);
    }
    let inv_k = T::from_usize_lossy(points.len()).recip();
    let mut value = T::zero();
    for p in points {
        let q = c.quad_form(p);
        if q > T::zero() {
            value += q;
            for i in 0..d {
                for j in 0..d {
                    g[(i, j)] += inv_k * p[i] * p[j];
                }
            }
        }
    }
    (value * inv_k, g)
}

/// Options of the empirical loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig<T> {
    /// Contraction rate `α`.
    pub alpha: T,
    /// When set to `C / 2α_ℓ`, adds the reported-only term
    /// `(C / 2α_ℓ)(m̄_L / m̲_L)`.
    pub cv_coefficient: Option<T>,
}

impl<T: Real> LossConfig<T> {
    pub fn new(alpha: T) -> Self {
        Self {
            alpha,
            cv_coefficient: None,
        }
    }
}

/// Everything the forward pass at one sample produces.
struct Forward<T> {
    me: MetricEval<T>,
    u: Vec<T>,
    ju: Mat<T>,
    ctrl: crate::netmetric::ControllerEval<T>,
    f: Vec<T>,
    jf: Mat<T>,
    b: Mat<T>,
    jb: Vec<Mat<T>>,
    xdot: Vec<T>,
    a: Mat<T>,
    m: Mat<T>,
    wdot: Mat<T>,
    c_u: Mat<T>,
    p: Mat<T>,
    c1: Mat<T>,
    c2: Vec<Mat<T>>,
}

fn forward<T: Real>(
    metric: &MetricNet<T>,
    controller: &ControllerNet<T>,
    system: &SystemModel<T>,
    s: &Sample<T>,
    alpha: T,
) -> Result<Forward<T>> {
    let n = system.n();
    let me = metric.eval(&s.x, s.t);
    let ctrl = controller.eval(&s.x, &s.x_d, &s.u_d);
    let u = ctrl.u.clone();
    let ju = ctrl.ju.clone();
    let f = system.f(&s.x, s.t);
    let jf = system.jac_f(&s.x, s.t);
    let b = system.b(&s.x, s.t);
    let jb: Vec<Mat<T>> = (0..system.m()).map(|j| system.jac_b(&s.x, s.t, j)).collect();
    let mut xdot = f.clone();
    for (xd, v) in xdot.iter_mut().zip(b.matvec(&u)) {
        *xd += v;
    }
    let mut a = &jf + &b.matmul(&ju);
    for (j, jbj) in jb.iter().enumerate() {
        a.axpy(u[j], jbj);
    }
    let m = inverse(&me.w)?;
    let dw_dt = me.dw_dt();
    let mut wdot = dw_dt.clone();
    wdot.axpy(T::one(), &me.directional(&xdot));
    let mdot = -&m.matmul(&wdot).matmul(&m);
    let ma = m.matmul(&a);
    let mut c_u = &mdot + &(&ma + &ma.transpose());
    c_u.axpy(T::two() * alpha, &m);
    let c_u = c_u.sym();

    let p = annihilator(&b);
    let w = &me.w;
    let jfw = jf.matmul(w);
    let mut x1 = &(&jfw + &jfw.transpose()) - &dw_dt;
    x1.axpy(-T::one(), &me.directional(&f));
    x1.axpy(T::two() * alpha, w);
    let c1 = p.matmul(&x1).matmul(&p.transpose()).sym();
    let mut c2 = Vec::with_capacity(jb.len());
    for (j, jbj) in jb.iter().enumerate() {
        let bj = b.col(j);
        let jbw = jbj.matmul(w);
        let y = &me.directional(&bj) - &(&jbw + &jbw.transpose());
        c2.push(p.matmul(&y).matmul(&p.transpose()));
    }
    debug_assert_eq!(c_u.rows(), n);
    Ok(Forward {
        me,
        u,
        ju,
        ctrl,
        f,
        jf,
        b,
        jb,
        xdot,
        a,
        m,
        wdot,
        c_u,
        p,
        c1,
        c2,
    })
}

/// Closed-loop contraction matrix `C_u = Ṁ + 2 sym(M ∂h/∂x) + 2αM` with
/// `M = W_L⁻¹` and `u = u_L(ξ)`.
pub fn c_u_matrix<T: Real>(
    metric: &MetricNet<T>,
    controller: &ControllerNet<T>,
    system: &SystemModel<T>,
    s: &Sample<T>,
    alpha: T,
) -> Result<Mat<T>> {
    Ok(forward(metric, controller, system, s, alpha)?.c_u)
}

/// Weak CCM matrices `(C₁, [C₂ʲ])`, projected onto the annihilator of `B`.
pub fn weak_ccm_matrices<T: Real>(
    metric: &MetricNet<T>,
    system: &SystemModel<T>,
    x: &[T],
    t: T,
    alpha: T,
) -> (Mat<T>, Vec<Mat<T>>) {
    let me = metric.eval(x, t);
    let w = &me.w;
    let f = system.f(x, t);
    let jf = system.jac_f(x, t);
    let b = system.b(x, t);
    let p = annihilator(&b);
    let jfw = jf.matmul(w);
    let mut x1 = &(&jfw + &jfw.transpose()) - &me.dw_dt();
    x1.axpy(-T::one(), &me.directional(&f));
    x1.axpy(T::two() * alpha, w);
    let c1 = p.matmul(&x1).matmul(&p.transpose()).sym();
    let c2 = (0..system.m())
        .map(|j| {
            let jbw = system.jac_b(x, t, j).matmul(w);
            let y = &me.directional(&b.col(j)) - &(&jbw + &jbw.transpose());
            p.matmul(&y).matmul(&p.transpose())
        })
        .collect();
    (c1, c2)
}

/// Loss terms of one sample and, when `grad` is given, their parameter
/// gradient accumulated into it.
fn sample_loss<T: Real>(
    metric: &MetricNet<T>,
    controller: &ControllerNet<T>,
    system: &SystemModel<T>,
    s: &Sample<T>,
    alpha: T,
    points: &SpherePoints<T>,
    grad: Option<&mut Gradients<T>>,
) -> Result<LossReport<T>> {
    let n = system.n();
    let fw = forward(metric, controller, system, s, alpha)?;
    let full = points.get(n)?;
    let (l_u, g_u) = l_pd_neg_with_grad(&fw.c_u, full);

    let mut bounded = fw.me.w.clone();
    bounded.add_diag(-metric.m_under.recip());
    let (l_c, g_c) = l_pd_neg_with_grad(&bounded, full);
    let r = fw.c1.rows();
    let (l_w1, g_w1) = if r > 0 {
        l_pd_neg_with_grad(&fw.c1, points.get(r)?)
    } else {
        (T::zero(), Mat::zeros(0, 0))
    };
    let norms: Vec<T> = fw.c2.iter().map(Mat::frobenius_norm).collect();
    let l_w2: T = norms.iter().copied().sum();
    let report = LossReport {
        l_u,
        l_c,
        l_w1,
        l_w2,
        l_cv: None,
        total: l_u + l_c + l_w1 + l_w2,
    };
    let Some(grad) = grad else {
        return Ok(report);
    };

    let k_dirs = fw.me.dw.len();
    let m = &fw.m;
    // Contraction term.
    let g = &g_u;
    let wdot_bar = -&m.matmul(g).matmul(m);
    let a_bar = m.matmul(g).scale(T::two());
    let gm = g.matmul(m);
    let mut m_bar = -&gm.matmul(&fw.wdot);
    m_bar.axpy(-T::one(), &fw.wdot.matmul(&m.matmul(g)));
    m_bar.axpy(T::one(), &g.matmul(&fw.a.transpose()));
    m_bar.axpy(T::one(), &fw.a.matmul(g));
    m_bar.axpy(T::two() * alpha, g);
    let mut w_bar = -&m.matmul(&m_bar).matmul(m);
    let mut dw_bar: Vec<Mat<T>> = (0..k_dirs).map(|_| Mat::zeros(n, n)).collect();
    let mut xdot_bar = vec![T::zero(); n];
    for k in 0..n {
        dw_bar[k].axpy(fw.xdot[k], &wdot_bar);
        xdot_bar[k] = wdot_bar.frobenius_dot(&fw.me.dw[k]);
    }
    if k_dirs > n {
        dw_bar[n].axpy(T::one(), &wdot_bar);
    }
    let mut u_bar = fw.b.tr_matvec(&xdot_bar);
    let ju_bar = fw.b.tr_matmul(&a_bar);
    for (j, jbj) in fw.jb.iter().enumerate() {
        u_bar[j] += a_bar.frobenius_dot(jbj);
    }

    // Boundedness term.
    w_bar.axpy(T::one(), &g_c);

    // First weak condition.
    if r > 0 {
        let xb = fw.p.tr_matmul(&g_w1).matmul(&fw.p);
        w_bar.axpy(T::one(), &fw.jf.tr_matmul(&xb));
        w_bar.axpy(T::one(), &xb.matmul(&fw.jf));
        w_bar.axpy(T::two() * alpha, &xb);
        for k in 0..n {
            dw_bar[k].axpy(-fw.f[k], &xb);
        }
        if k_dirs > n {
            dw_bar[n].axpy(-T::one(), &xb);
        }
    }

    // Second weak condition.
    for (j, (c2, &nrm)) in fw.c2.iter().zip(&norms).enumerate() {
        if nrm <= T::zero() {
            continue;
        }
        let yb = fw.p.tr_matmul(&c2.scale(nrm.recip())).matmul(&fw.p);
        for k in 0..n {
            dw_bar[k].axpy(fw.b[(k, j)], &yb);
        }
        let jbj = &fw.jb[j];
        w_bar.axpy(-T::one(), &jbj.tr_matmul(&yb));
        w_bar.axpy(-T::one(), &yb.matmul(jbj));
    }

    fw.me.backward_into(metric, &w_bar, &dw_bar, &mut grad.metric);
    controller.backward_into(&fw.ctrl, &u_bar, &ju_bar, &mut grad.w1, &mut grad.w2);
    debug_assert_eq!(fw.u.len(), fw.ju.rows());
    Ok(report)
}

/// Samples per work unit of the parallel reduction. Fixed so that the
/// summation order never depends on the thread count.
const CHUNK: usize = 16;

fn run_batch<T: Real>(
    metric: &MetricNet<T>,
    controller: &ControllerNet<T>,
    system: &SystemModel<T>,
    batch: &[Sample<T>],
    config: &LossConfig<T>,
    points: &SpherePoints<T>,
    with_grad: bool,
) -> Result<(LossReport<T>, Option<Gradients<T>>)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let partials: Vec<Result<(LossReport<T>, Option<Gradients<T>>)>> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut rep = LossReport::zero();
            let mut grad = with_grad.then(|| Gradients::zeros(metric, controller));
            for s in chunk {
                let r = sample_loss(metric, controller, system, s, config.alpha, points, grad.as_mut())?;
                rep.add(&r);
            }
            Ok((rep, grad))
        })
        .collect();
    let mut report = LossReport::zero();
    let mut total_grad: Option<Gradients<T>> = None;
    for part in partials {
        let (rep, grad) = part?;
        report.add(&rep);
        if let Some(g) = grad {
            match total_grad.as_mut() {
                Some(acc) => acc.axpy(T::one(), &g),
                None => total_grad = Some(g),
            }
        }
    }
    let l_cv = config.cv_coefficient.map(|c| c * metric.m_bar / metric.m_under);
    report.finish(batch.len(), l_cv);
    let inv = T::from_usize_lossy(batch.len()).recip();
    if let Some(g) = total_grad.as_mut() {
        let mut scaled = Gradients::zeros(metric, controller);
        scaled.axpy(inv, g);
        *g = scaled;
    }
    Ok((report, total_grad))
}

/// Empirical loss over a batch together with its exact parameter gradient,
/// for the given (frozen) sphere points.
pub fn empirical_loss<T: Real>(
    metric: &MetricNet<T>,
    controller: &ControllerNet<T>,
    system: &SystemModel<T>,
    batch: &[Sample<T>],
    config: &LossConfig<T>,
    points: &SpherePoints<T>,
) -> Result<(LossReport<T>, Gradients<T>)> {
    let (report, grad) = run_batch(metric, controller, system, batch, config, points, true)?;
    Ok((report, grad.expect("gradient requested")))
}

/// As [`empirical_loss`], drawing `k` fresh sphere points from `rng`.
pub fn empirical_loss_sampled<T: Real>(
    metric: &MetricNet<T>,
    controller: &ControllerNet<T>,
    system: &SystemModel<T>,
    batch: &[Sample<T>],
    config: &LossConfig<T>,
    k: usize,
    rng: &mut RngStream,
) -> Result<(LossReport<T>, Gradients<T>)> {
    let points = SpherePoints::for_system(system, k, rng);
    empirical_loss(metric, controller, system, batch, config, &points)
}

/// Loss value only.
pub fn evaluate_loss<T: Real>(
    metric: &MetricNet<T>,
    controller: &ControllerNet<T>,
    system: &SystemModel<T>,
    batch: &[Sample<T>],
    config: &LossConfig<T>,
    points: &SpherePoints<T>,
) -> Result<LossReport<T>> {
    Ok(run_batch(metric, controller, system, batch, config, points, false)?.0)
}

#[cfg(test)]
mod tests;
