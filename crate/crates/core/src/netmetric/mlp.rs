//! Fully connected tanh networks with input tangents and exact reverse
//! accumulation through both the outputs and the tangents.

use crate::error::{Error, Result};
use crate::numerics::{Mat, RngStream};
use crate::scalar::Real;

/// Affine layer `z = W a + b`, `W` is `outputs × inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub weight: Mat<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Layer<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Mat::zeros(outputs, inputs),
            bias: vec![T::zero(); outputs],
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.rows()
    }
}

/// Multilayer perceptron with `tanh` hidden activations and an identity
/// output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Real> Mlp<T> {
    /// Weights uniform in `±1/√fan_in`, zero biases.
    pub fn new(widths: &[usize], rng: &mut RngStream) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least input and output widths");
        let layers = widths
            .windows(2)
            .map(|w| {
                let bound = T::one() / T::from_usize_lossy(w[0]).sqrt();
                Layer {
                    weight: Mat::from_fn(w[1], w[0], |_, _| rng.uniform(-bound, bound)),
                    bias: vec![T::zero(); w[1]],
                }
            })
            .collect();
        Self { layers }
    }

    /// All-zero network of the given shape (also the gradient accumulator).
    pub fn zeros(widths: &[usize]) -> Self {
        Self {
            layers: widths.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.widths())
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(self.layers.iter().map(Layer::outputs));
        w
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty network").outputs()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| (l.inputs() + 1) * l.outputs()).sum()
    }

    /// Parameters in layer order, each layer as row-major weights then bias.
    pub fn params(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.param_count());
        self.write_params(&mut out);
        out
    }

    pub fn write_params(&self, out: &mut Vec<T>) {
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(&l.bias);
        }
    }

    /// Overwrites the parameters from a flat slice, returning the unread tail.
    pub fn read_params<'a>(&mut self, mut src: &'a [T]) -> &'a [T] {
        for l in &mut self.layers {
            let nw = l.weight.as_slice().len();
            l.weight.as_mut_slice().copy_from_slice(&src[..nw]);
            src = &src[nw..];
            let nb = l.bias.len();
            l.bias.copy_from_slice(&src[..nb]);
            src = &src[nb..];
        }
        src
    }

    /// `self += s * other` over all parameters.
    pub fn axpy(&mut self, s: T, other: &Self) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.axpy(s, &b.weight);
            for (x, &y) in a.bias.iter_mut().zip(&b.bias) {
                *x += s * y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.is_finite() && l.bias.iter().all(|v| v.is_finite()))
    }

    fn check_input(&self, input: &[T]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                input.len()
            )));
        }
        Ok(())
    }

    /// Plain forward pass.
    pub fn forward(&self, input: &[T]) -> Vec<T> {
        debug_assert_eq!(input.len(), self.input_dim());
        let last = self.layers.len() - 1;
        let mut a = input.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = layer.weight.matvec(&a);
            for (zi, &bi) in z.iter_mut().zip(&layer.bias) {
                *zi += bi;
            }
            if l < last {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            a = z;
        }
        a
    }

    /// Forward pass that also pushes the input tangents `dirs`
    /// (`input_dim × k`) through the network, recording what the reverse
    /// pass needs.
    pub fn forward_tangent(&self, input: &[T], dirs: &Mat<T>) -> MlpTape<T> {
        debug_assert_eq!(input.len(), self.input_dim());
        debug_assert_eq!(dirs.rows(), self.input_dim());
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut tans = Vec::with_capacity(self.layers.len() + 1);
        let mut pre_tans = Vec::with_capacity(self.layers.len());
        acts.push(input.to_vec());
        tans.push(dirs.clone());
        for (l, layer) in self.layers.iter().enumerate() {
            let a_in = &acts[l];
            let mut z = layer.weight.matvec(a_in);
            for (zi, &bi) in z.iter_mut().zip(&layer.bias) {
                *zi += bi;
            }
            let jz = layer.weight.matmul(&tans[l]);
            if l < last {
                let s: Vec<T> = z.iter().map(|v| v.tanh()).collect();
                let mut ja = jz.clone();
                let k = ja.cols();
                for (i, &si) in s.iter().enumerate() {
                    let d = T::one() - si * si;
                    for v in &mut ja.as_mut_slice()[i * k..(i + 1) * k] {
                        *v *= d;
                    }
                }
                acts.push(s);
                tans.push(ja);
            } else {
                acts.push(z);
                tans.push(jz.clone());
            }
            pre_tans.push(jz);
        }
        MlpTape { acts, tans, pre_tans }
    }
}

/// Recorded forward pass of [`Mlp::forward_tangent`].
#[derive(Debug, Clone)]
pub struct MlpTape<T> {
    /// `acts[0]` is the input, `acts[l+1]` the output of layer `l`.
    acts: Vec<Vec<T>>,
    /// Tangents matching `acts`.
    tans: Vec<Mat<T>>,
    /// Pre-activation tangents `W J_in` per layer.
    pre_tans: Vec<Mat<T>>,
}

impl<T: Real> MlpTape<T> {
    pub fn output(&self) -> &[T] {
        self.acts.last().expect("recorded output")
    }

    /// `output_dim × k` derivative of the output along the input tangents.
    pub fn output_tangent(&self) -> &Mat<T> {
        self.tans.last().expect("recorded tangent")
    }

    /// Accumulates into `grad` the parameter gradient of
    /// `⟨g_out, y⟩ + ⟨g_tan, J_y⟩` where `y` is the output and `J_y` its
    /// tangent. `g_tan` may be `None` for a zero cotangent.
    pub fn backward_into(&self, net: &Mlp<T>, g_out: &[T], g_tan: Option<&Mat<T>>, grad: &mut Mlp<T>) {
        let last = net.layers.len() - 1;
        let k = self.tans[0].cols();
        let mut a_bar = g_out.to_vec();
        let mut j_bar = match g_tan {
            Some(g) => g.clone(),
            None => Mat::zeros(net.output_dim(), k),
        };
        for l in (0..net.layers.len()).rev() {
            let layer = &net.layers[l];
            let (z_bar, jz_bar) = if l < last {
                let s = &self.acts[l + 1];
                let jz = &self.pre_tans[l];
                let mut z_bar = Vec::with_capacity(s.len());
                let mut jz_bar = j_bar;
                for (i, &si) in s.iter().enumerate() {
                    let d1 = T::one() - si * si;
                    let d2 = -T::two() * si * d1;
                    let row_bar = &mut jz_bar.as_mut_slice()[i * k..(i + 1) * k];
                    let row_z = jz.row(i);
                    let mut cross = T::zero();
                    for (rb, &rz) in row_bar.iter_mut().zip(row_z) {
                        cross += *rb * rz;
                        *rb *= d1;
                    }
                    z_bar.push(d1 * a_bar[i] + d2 * cross);
                }
                (z_bar, jz_bar)
            } else {
                (a_bar, j_bar)
            };
            let g = &mut grad.layers[l];
            let a_in = &self.acts[l];
            let j_in = &self.tans[l];
            let cols = layer.inputs();
            let gw = g.weight.as_mut_slice();
            for (i, &zb) in z_bar.iter().enumerate() {
                g.bias[i] += zb;
                let row = &mut gw[i * cols..(i + 1) * cols];
                for (w, &a) in row.iter_mut().zip(a_in) {
                    *w += zb * a;
                }
                let jb = jz_bar.row(i);
                for (c, w) in row.iter_mut().enumerate() {
                    let jin = j_in.row(c);
                    let mut acc = T::zero();
                    for (&x, &y) in jb.iter().zip(jin) {
                        acc += x * y;
                    }
                    *w += acc;
                }
            }
            if l > 0 {
                a_bar = layer.weight.tr_matvec(&z_bar);
                j_bar = layer.weight.tr_matmul(&jz_bar);
            } else {
                a_bar = Vec::new();
                j_bar = Mat::zeros(0, 0);
            }
        }
    }
}

/// Output, input Jacobian and a parameter-gradient closure of a network at
/// one input. The closure maps an output cotangent to per-parameter
/// gradients (same layout as the network).
pub fn mlp_eval_with_grads<'a, T: Real>(
    net: &'a Mlp<T>,
    input: &[T],
) -> Result<(Vec<T>, Mat<T>, impl Fn(&[T]) -> Mlp<T> + 'a)> {
    net.check_input(input)?;
    let tape = net.forward_tangent(input, &Mat::identity(input.len()));
    let output = tape.output().to_vec();
    let jacobian = tape.output_tangent().clone();
    let closure = move |g_out: &[T]| {
        let mut grad = net.zeros_like();
        tape.backward_into(net, g_out, None, &mut grad);
        grad
    };
    Ok((output, jacobian, closure))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::dot;

    #[test]
    fn zero_network_outputs_final_bias() {
        let mut net = Mlp::<f64>::zeros(&[3, 4, 2]);
        net.layers[1].bias = vec![0.5, -1.5];
        let (y, jac, _) = mlp_eval_with_grads(&net, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(y, vec![0.5, -1.5]);
        assert_eq!(jac.frobenius_norm(), 0.0);
    }

    #[test]
    fn single_linear_layer_jacobian_is_weight() {
        let mut rng = RngStream::new(1, 0);
        let net = Mlp::<f64>::new(&[3, 2], &mut rng);
        let (_, jac, _) = mlp_eval_with_grads(&net, &[0.3, -0.2, 0.9]).unwrap();
        assert_eq!(jac, net.layers[0].weight);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let net = Mlp::<f64>::zeros(&[3, 2]);
        assert!(mlp_eval_with_grads(&net, &[1.0]).is_err());
    }

    #[test]
    fn param_count_formula() {
        let net = Mlp::<f64>::zeros(&[6, 64, 36]);
        assert_eq!(net.param_count(), 7 * 64 + 65 * 36);
        assert_eq!(net.params().len(), net.param_count());
    }

    /// Scalar objective `⟨g_out, y⟩ + ⟨g_tan, J⟩` through a two-layer
    /// network, differentiated by central differences.
    #[test]
    fn parameter_gradients_match_finite_differences() {
        let mut rng = RngStream::new(5, 0);
        for trial in 0..5 {
            let mut net = Mlp::<f64>::new(&[4, 7, 5, 3], &mut rng);
            for l in &mut net.layers {
                l.bias.iter_mut().for_each(|b| *b = rng.uniform(-0.5, 0.5));
            }
            let input: Vec<f64> = (0..4).map(|_| rng.uniform(-1.0, 1.0)).collect();
            let dirs = Mat::from_fn(4, 2, |_, _| rng.normal());
            let g_out: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
            let g_tan = Mat::from_fn(3, 2, |_, _| rng.normal());
            let objective = |n: &Mlp<f64>| {
                let tape = n.forward_tangent(&input, &dirs);
                dot(&g_out, tape.output()) + g_tan.frobenius_dot(tape.output_tangent())
            };
            let mut grad = net.zeros_like();
            net.forward_tangent(&input, &dirs).backward_into(&net, &g_out, Some(&g_tan), &mut grad);
            let analytic = grad.params();
            let base = net.params();
            for (i, &g) in analytic.iter().enumerate() {
                let h = 1e-6;
                let mut p = base.clone();
                p[i] += h;
                let mut plus = net.clone();
                plus.read_params(&p);
                p[i] -= 2.0 * h;
                let mut minus = net.clone();
                minus.read_params(&p);
                let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
                let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-3);
                assert!(rel < 1e-5, "trial {trial} param {i}: analytic {g} fd {fd}");
            }
            // the tangent is the directional derivative of the output
            let tape = net.forward_tangent(&input, &dirs);
            for c in 0..2 {
                let h = 1e-6;
                let xp: Vec<f64> = input.iter().enumerate().map(|(k, v)| v + h * dirs[(k, c)]).collect();
                let xm: Vec<f64> = input.iter().enumerate().map(|(k, v)| v - h * dirs[(k, c)]).collect();
                let (yp, ym) = (net.forward(&xp), net.forward(&xm));
                for r in 0..3 {
                    let fd = (yp[r] - ym[r]) / (2.0 * h);
                    assert!((fd - tape.output_tangent()[(r, c)]).abs() < 1e-7);
                }
            }
        }
    }
}
