use crate::netmetric::mlp::{Mlp, MlpTape};
use crate::numerics::{Mat, RngStream};
use crate::scalar::Real;

/// Tracking controller `u = S w₂(x, x_d) tanh(w₁(x, x_d)(x − x_d)) + u_d`, with
/// `w₁` an `h × n` and `w₂` an `m × h` matrix produced by two MLPs and
/// `S = diag(output_scale)` a fixed per-channel scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerNet<T> {
    pub w1: Mlp<T>,
    pub w2: Mlp<T>,
    pub n: usize,
    pub m: usize,
    pub features: usize,
    pub output_scale: Vec<T>,
}

/// Controller output, its Jacobian in `x`, and the intermediates needed to
/// back-propagate through both.
#[derive(Debug, Clone)]
pub struct ControllerEval<T> {
    pub u: Vec<T>,
    /// `∂u/∂x`, `m × n`.
    pub ju: Mat<T>,
    tape1: MlpTape<T>,
    tape2: MlpTape<T>,
    w1: Mat<T>,
    dw1: Vec<Mat<T>>,
    w2: Mat<T>,
    dw2: Vec<Mat<T>>,
    e: Vec<T>,
    th: Vec<T>,
    /// `c_k = ∂_k w₁ e + w₁[:, k]`.
    c: Vec<Vec<T>>,
}

fn split_tangent<T: Real>(tan: &Mat<T>, rows: usize, cols: usize) -> Vec<Mat<T>> {
    (0..tan.cols())
        .map(|k| Mat::from_fn(rows, cols, |i, j| tan[(i * cols + j, k)]))
        .collect()
}

impl<T: Real> ControllerNet<T> {
    pub fn new(n: usize, m: usize, features: usize, hidden: &[usize], rng: &mut RngStream) -> Self {
        let widths = |out: usize| {
            let mut w = vec![2 * n];
            w.extend_from_slice(hidden);
            w.push(out);
            w
        };
        let w1 = Mlp::new(&widths(features * n), rng);
        let w2 = Mlp::new(&widths(m * features), rng);
        Self {
            w1,
            w2,
            n,
            m,
            features,
            output_scale: vec![T::one(); m],
        }
    }

    fn input(x: &[T], x_d: &[T]) -> Vec<T> {
        let mut input = x.to_vec();
        input.extend_from_slice(x_d);
        input
    }

    pub fn eval_u(&self, x: &[T], x_d: &[T], u_d: &[T]) -> Vec<T> {
        let input = Self::input(x, x_d);
        let w1 = Mat::from_vec(self.features, self.n, self.w1.forward(&input)).expect("h·n outputs");
        let w2 = Mat::from_vec(self.m, self.features, self.w2.forward(&input)).expect("m·h outputs");
        let e: Vec<T> = x.iter().zip(x_d).map(|(a, b)| *a - *b).collect();
        let th: Vec<T> = w1.matvec(&e).into_iter().map(|v| v.tanh()).collect();
        let mut u = w2.matvec(&th);
        for ((ui, &di), &si) in u.iter_mut().zip(u_d).zip(&self.output_scale) {
            *ui = si * *ui + di;
        }
        u
    }

    pub fn eval(&self, x: &[T], x_d: &[T], u_d: &[T]) -> ControllerEval<T> {
        let (n, m, h) = (self.n, self.m, self.features);
        let input = Self::input(x, x_d);
        let dirs = Mat::from_fn(2 * n, n, |i, j| if i == j { T::one() } else { T::zero() });
        let tape1 = self.w1.forward_tangent(&input, &dirs);
        let tape2 = self.w2.forward_tangent(&input, &dirs);
        let w1 = Mat::from_vec(h, n, tape1.output().to_vec()).expect("h·n outputs");
        let w2 = Mat::from_vec(m, h, tape2.output().to_vec()).expect("m·h outputs");
        let dw1 = split_tangent(tape1.output_tangent(), h, n);
        let dw2 = split_tangent(tape2.output_tangent(), m, h);
        let e: Vec<T> = x.iter().zip(x_d).map(|(a, b)| *a - *b).collect();
        let th: Vec<T> = w1.matvec(&e).into_iter().map(|v| v.tanh()).collect();
        let mut u = w2.matvec(&th);
        for ((ui, &di), &si) in u.iter_mut().zip(u_d).zip(&self.output_scale) {
            *ui = si * *ui + di;
        }
        let mut ju = Mat::zeros(m, n);
        let mut c = Vec::with_capacity(n);
        for k in 0..n {
            let mut ck = dw1[k].matvec(&e);
            for (i, v) in ck.iter_mut().enumerate() {
                *v += w1[(i, k)];
            }
            let r: Vec<T> = ck.iter().zip(&th).map(|(&ci, &ti)| (T::one() - ti * ti) * ci).collect();
            let col1 = dw2[k].matvec(&th);
            let col2 = w2.matvec(&r);
            for i in 0..m {
                ju[(i, k)] = self.output_scale[i] * (col1[i] + col2[i]);
            }
            c.push(ck);
        }
        ControllerEval {
            u,
            ju,
            tape1,
            tape2,
            w1,
            dw1,
            w2,
            dw2,
            e,
            th,
            c,
        }
    }

    /// Accumulates parameter gradients of a scalar objective with cotangents
    /// `u_bar` (for `u`) and `ju_bar` (for `∂u/∂x`).
    pub fn backward_into(
        &self,
        eval: &ControllerEval<T>,
        u_bar: &[T],
        ju_bar: &Mat<T>,
        grad_w1: &mut Mlp<T>,
        grad_w2: &mut Mlp<T>,
    ) {
        let (n, m, h) = (self.n, self.m, self.features);
        let u_bar: Vec<T> = u_bar.iter().zip(&self.output_scale).map(|(&b, &s)| b * s).collect();
        let ju_bar = Mat::from_fn(m, n, |i, k| ju_bar[(i, k)] * self.output_scale[i]);
        let (u_bar, ju_bar) = (&u_bar[..], &ju_bar);
        let th = &eval.th;
        let s: Vec<T> = th.iter().map(|&t| T::one() - t * t).collect();
        let mut w2_bar = Mat::zeros(m, h);
        let mut w1_bar = Mat::zeros(h, n);
        let mut g_tan1 = Mat::zeros(h * n, n);
        let mut g_tan2 = Mat::zeros(m * h, n);
        let mut th_bar = eval.w2.tr_matvec(u_bar);
        let mut s_bar = vec![T::zero(); h];
        for i in 0..m {
            for a in 0..h {
                w2_bar[(i, a)] += u_bar[i] * th[a];
            }
        }
        for k in 0..n {
            let jb: Vec<T> = (0..m).map(|i| ju_bar[(i, k)]).collect();
            if jb.iter().all(|v| *v == T::zero()) {
                continue;
            }
            let ck = &eval.c[k];
            for i in 0..m {
                for a in 0..h {
                    let rk = s[a] * ck[a];
                    w2_bar[(i, a)] += jb[i] * rk;
                    g_tan2[(i * h + a, k)] = jb[i] * th[a];
                }
            }
            let from_dw2 = eval.dw2[k].tr_matvec(&jb);
            let r_bar = eval.w2.tr_matvec(&jb);
            for a in 0..h {
                th_bar[a] += from_dw2[a];
                s_bar[a] += r_bar[a] * ck[a];
                let c_bar = s[a] * r_bar[a];
                w1_bar[(a, k)] += c_bar;
                for j in 0..n {
                    g_tan1[(a * n + j, k)] = c_bar * eval.e[j];
                }
            }
        }
        for a in 0..h {
            let v_bar = th_bar[a] * s[a] - T::two() * th[a] * s[a] * s_bar[a];
            for j in 0..n {
                w1_bar[(a, j)] += v_bar * eval.e[j];
            }
        }
        eval.tape1.backward_into(&self.w1, w1_bar.as_slice(), Some(&g_tan1), grad_w1);
        eval.tape2.backward_into(&self.w2, w2_bar.as_slice(), Some(&g_tan2), grad_w2);
        debug_assert_eq!(eval.dw1.len(), n);
        debug_assert_eq!(eval.w1.rows(), h);
    }

    pub fn param_count(&self) -> usize {
        self.w1.param_count() + self.w2.param_count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::streams;

    fn net(seed: u64) -> ControllerNet<f64> {
        let mut rng = RngStream::new(seed, streams::INIT);
        let mut c = ControllerNet::new(3, 2, 5, &[8], &mut rng);
        c.output_scale = vec![0.5, 3.0];
        c
    }

    #[test]
    fn zero_error_returns_feedforward() {
        let c = net(1);
        let xd = [0.3, -0.1, 0.7];
        assert_eq!(c.eval_u(&xd, &xd, &[1.5, -2.0]), vec![1.5, -2.0]);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let c = net(2);
        let x = [0.4, -0.3, 0.2];
        let xd = [0.1, 0.2, -0.5];
        let ud = [0.0, 1.0];
        let ev = c.eval(&x, &xd, &ud);
        assert_eq!(ev.u, c.eval_u(&x, &xd, &ud));
        let h = 1e-6;
        for k in 0..3 {
            let mut xp = x;
            xp[k] += h;
            let mut xm = x;
            xm[k] -= h;
            let up = c.eval_u(&xp, &xd, &ud);
            let um = c.eval_u(&xm, &xd, &ud);
            for i in 0..2 {
                let fd = (up[i] - um[i]) / (2.0 * h);
                assert!((fd - ev.ju[(i, k)]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn parameter_gradient_matches_finite_differences() {
        let c = net(3);
        let x = [0.4, -0.3, 0.2];
        let xd = [0.1, 0.2, -0.5];
        let ud = [0.0, 1.0];
        let u_bar = [0.7, -1.1];
        let ju_bar = Mat::from_fn(2, 3, |i, j| 0.3 * i as f64 - 0.2 * j as f64 + 0.1);
        let objective = |c: &ControllerNet<f64>| {
            let ev = c.eval(&x, &xd, &ud);
            ev.u[0] * u_bar[0] + ev.u[1] * u_bar[1] + ev.ju.frobenius_dot(&ju_bar)
        };
        let ev = c.eval(&x, &xd, &ud);
        let mut g1 = c.w1.zeros_like();
        let mut g2 = c.w2.zeros_like();
        c.backward_into(&ev, &u_bar, &ju_bar, &mut g1, &mut g2);
        let mut analytic = g1.params();
        analytic.extend(g2.params());
        let mut params = c.w1.params();
        params.extend(c.w2.params());
        let set = |p: &[f64]| {
            let mut out = c.clone();
            let rest = out.w1.read_params(p);
            out.w2.read_params(rest);
            out
        };
        let h = 1e-6;
        for idx in (0..params.len()).step_by(7) {
            let mut p = params.clone();
            p[idx] += h;
            let fp = objective(&set(&p));
            p[idx] -= 2.0 * h;
            let fm = objective(&set(&p));
            let fd = (fp - fm) / (2.0 * h);
            assert!((fd - analytic[idx]).abs() < 1e-6 * (1.0 + fd.abs()), "param {idx}: fd {fd} vs {}", analytic[idx]);
        }
    }
}
