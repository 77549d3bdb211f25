use crate::netmetric::mlp::{Mlp, MlpTape};
use crate::numerics::{inverse, Mat, RngStream};
use crate::scalar::Real;
use crate::systems::SystemModel;

/// Learned dual metric `W_L(x, t) = Θ(x, t)ᵀ Θ(x, t) + m̄_L⁻¹ I` with a square
/// `Θ` produced by an MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricNet<T> {
    pub theta: Mlp<T>,
    pub n: usize,
    /// Upper bound `m̄_L` of `M_L = W_L⁻¹`.
    pub m_bar: T,
    /// Lower bound `m̲_L` of `M_L`, enforced by the boundedness loss.
    pub m_under: T,
    pub time_input: bool,
    /// Time is fed to the network as `t / time_scale`.
    pub time_scale: T,
}

/// `W_L` together with its exact partial derivatives at one point.
#[derive(Debug, Clone)]
pub struct MetricEval<T> {
    pub theta: Mat<T>,
    /// `∂Θ/∂x_k` for `k < n`, followed by `∂Θ/∂t` when time is an input.
    pub dtheta: Vec<Mat<T>>,
    pub w: Mat<T>,
    /// `∂W/∂x_k` for `k < n`, followed by `∂W/∂t` when time is an input.
    pub dw: Vec<Mat<T>>,
    tape: MlpTape<T>,
}

impl<T: Real> MetricEval<T> {
    pub fn dw_dx(&self, k: usize) -> &Mat<T> {
        &self.dw[k]
    }

    /// `∂W/∂t`, zero for time-independent metrics.
    pub fn dw_dt(&self) -> Mat<T> {
        let n = self.w.rows();
        if self.dw.len() > n {
            self.dw[n].clone()
        } else {
            Mat::zeros(n, n)
        }
    }

    /// `∂_p W = Σ_k (∂W/∂x_k) p_k`.
    pub fn directional(&self, p: &[T]) -> Mat<T> {
        let n = self.w.rows();
        let mut out = Mat::zeros(n, n);
        for (k, &pk) in p.iter().enumerate() {
            if pk != T::zero() {
                out.axpy(pk, &self.dw[k]);
            }
        }
        out
    }

    /// Accumulates the parameter gradient of a scalar objective given its
    /// cotangents with respect to `W` and each `∂W` (same order as `dw`).
    pub fn backward_into(&self, net: &MetricNet<T>, w_bar: &Mat<T>, dw_bar: &[Mat<T>], grad: &mut Mlp<T>) {
        let n = net.n;
        let k = self.dtheta.len();
        let sym2 = |a: &Mat<T>| &a.transpose() + a;
        let mut theta_bar = self.theta.matmul(&sym2(w_bar));
        let mut g_tan = Mat::zeros(n * n, k);
        for (c, (dtheta, dwb)) in self.dtheta.iter().zip(dw_bar).enumerate() {
            let s = sym2(dwb);
            theta_bar.axpy(T::one(), &dtheta.matmul(&s));
            let dtheta_bar = self.theta.matmul(&s);
            for (idx, &v) in dtheta_bar.as_slice().iter().enumerate() {
                g_tan[(idx, c)] = v;
            }
        }
        self.tape.backward_into(&net.theta, theta_bar.as_slice(), Some(&g_tan), grad);
    }
}

impl<T: Real> MetricNet<T> {
    /// `hidden` lists the hidden widths; the output width is `n²`.
    pub fn new(n: usize, hidden: &[usize], m_bar: T, m_under: T, time_input: bool, rng: &mut RngStream) -> Self {
        assert!(m_bar >= m_under && m_under > T::zero(), "need m̄_L ≥ m̲_L > 0");
        let mut widths = vec![n + usize::from(time_input)];
        widths.extend_from_slice(hidden);
        widths.push(n * n);
        Self {
            theta: Mlp::new(&widths, rng),
            n,
            m_bar,
            m_under,
            time_input,
            time_scale: T::lit(10.0),
        }
    }

    fn input(&self, x: &[T], t: T) -> Vec<T> {
        let mut input = x.to_vec();
        if self.time_input {
            input.push(t / self.time_scale);
        }
        input
    }

    fn directions(&self) -> Mat<T> {
        let n = self.n;
        if self.time_input {
            let mut d = Mat::zeros(n + 1, n + 1);
            for i in 0..n {
                d[(i, i)] = T::one();
            }
            d[(n, n)] = self.time_scale.recip();
            d
        } else {
            Mat::identity(n)
        }
    }

    pub fn eval_theta(&self, x: &[T], t: T) -> Mat<T> {
        let out = self.theta.forward(&self.input(x, t));
        Mat::from_vec(self.n, self.n, out).expect("n² outputs")
    }

    /// `W_L(x, t)`.
    pub fn eval_w(&self, x: &[T], t: T) -> Mat<T> {
        let theta = self.eval_theta(x, t);
        let mut w = theta.tr_matmul(&theta);
        w.add_diag(self.m_bar.recip());
        w
    }

    /// `M_L = W_L⁻¹`.
    pub fn eval_m(&self, x: &[T], t: T) -> Mat<T> {
        inverse(&self.eval_w(x, t)).expect("W_L is uniformly positive definite")
    }

    /// `W_L` with exact first derivatives in `x` (and `t`).
    pub fn eval(&self, x: &[T], t: T) -> MetricEval<T> {
        let n = self.n;
        let tape = self.theta.forward_tangent(&self.input(x, t), &self.directions());
        let theta = Mat::from_vec(n, n, tape.output().to_vec()).expect("n² outputs");
        let tan = tape.output_tangent();
        let dtheta: Vec<Mat<T>> = (0..tan.cols())
            .map(|c| Mat::from_fn(n, n, |i, j| tan[(i * n + j, c)]))
            .collect();
        let mut w = theta.tr_matmul(&theta);
        w.add_diag(self.m_bar.recip());
        let dw = dtheta
            .iter()
            .map(|d| {
                let a = d.tr_matmul(&theta);
                &a + &a.transpose()
            })
            .collect();
        MetricEval { theta, dtheta, w, dw, tape }
    }

    pub fn param_count(&self) -> usize {
        self.theta.param_count()
    }
}

/// Derivatives of the metric along the flow `ẋ = f + B u`.
#[derive(Debug, Clone)]
pub struct FlowDerivatives<T> {
    pub dw_dt: Mat<T>,
    /// `∂_ẋ W = Σ_k (∂W/∂x_k) ẋ_k`.
    pub flow_dw: Mat<T>,
    pub m: Mat<T>,
    /// `Ṁ = −M Ẇ M` with `Ẇ = ∂W/∂t + ∂_ẋ W`.
    pub dm_dt: Mat<T>,
}

pub fn metric_time_and_flow_derivatives<T: Real>(
    metric: &MetricNet<T>,
    system: &SystemModel<T>,
    x: &[T],
    u: &[T],
    t: T,
) -> FlowDerivatives<T> {
    let eval = metric.eval(x, t);
    let xdot = system.h(x, u, t);
    let dw_dt = eval.dw_dt();
    let flow_dw = eval.directional(&xdot);
    let m = inverse(&eval.w).expect("W_L is uniformly positive definite");
    let wdot = &dw_dt + &flow_dw;
    let dm_dt = -&m.matmul(&wdot).matmul(&m);
    FlowDerivatives {
        dw_dt,
        flow_dw,
        m,
        dm_dt,
    }
}
