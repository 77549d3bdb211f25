use crate::numerics::matrix::sub_vec;
use crate::scalar::Real;

/// Composite trapezoid approximation of a line integral along the straight
/// path `q(s) = a + s (b − a)`, `s ∈ [0, 1]`, split into `segments` pieces.
///
/// `integrand(q, dq)` must be linear in `dq`; it receives the per-segment
/// displacement `dq = (b − a)/segments`.
pub fn path_quadrature<T: Real, F>(integrand: F, a: &[T], b: &[T], segments: usize) -> Vec<T>
where
    F: Fn(&[T], &[T]) -> Vec<T>,
{
    assert!(segments >= 1, "path quadrature needs at least one segment");
    assert_eq!(a.len(), b.len());
    let diff = sub_vec(b, a);
    let nseg = T::from_usize_lossy(segments);
    let dq: Vec<T> = diff.iter().map(|&d| d / nseg).collect();
    let mut acc: Option<Vec<T>> = None;
    for i in 0..=segments {
        let s = T::from_usize_lossy(i) / nseg;
        let q: Vec<T> = a.iter().zip(&diff).map(|(&ai, &di)| ai + s * di).collect();
        let w = if i == 0 || i == segments { T::half() } else { T::one() };
        let v = integrand(&q, &dq);
        match acc.as_mut() {
            None => acc = Some(v.iter().map(|&x| w * x).collect()),
            Some(acc) => {
                for (o, &x) in acc.iter_mut().zip(&v) {
                    *o += w * x;
                }
            }
        }
    }
    let mut out = acc.expect("at least two nodes");
    if diff.iter().all(|&d| d == T::zero()) {
        out.iter_mut().for_each(|v| *v = T::zero());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_integrand_scales_with_length() {
        let c = 2.5;
        let out = path_quadrature(|_q: &[f64], dq: &[f64]| vec![c * dq[0]], &[1.0], &[4.0], 7);
        assert!((out[0] - c * 3.0).abs() < 1e-13);
    }

    #[test]
    fn linear_integrand_is_exact() {
        // ∫_0^1 (1 + 3s) ds along q from 0 to 1 = 2.5
        for n in [1, 2, 5, 17] {
            let out = path_quadrature(|q: &[f64], dq: &[f64]| vec![(1.0 + 3.0 * q[0]) * dq[0]], &[0.0], &[1.0], n);
            assert!((out[0] - 2.5).abs() < 1e-13, "n = {n}");
        }
    }

    #[test]
    fn quadratic_error_is_second_order() {
        // ∫_0^1 q² dq = 1/3
        let err = |n| {
            let out = path_quadrature(|q: &[f64], dq: &[f64]| vec![q[0] * q[0] * dq[0]], &[0.0], &[1.0], n);
            (out[0] - 1.0 / 3.0).abs()
        };
        for n in [4, 8, 16, 32] {
            let ratio = err(n) / err(2 * n);
            assert!((ratio - 4.0).abs() < 1e-6, "ratio {ratio}");
        }
    }

    #[test]
    fn zero_length_path_is_zero() {
        let out = path_quadrature(|_q: &[f64], _dq: &[f64]| vec![1.0, 2.0], &[3.0, 3.0], &[3.0, 3.0], 4);
        assert_eq!(out, vec![0.0, 0.0]);
    }
}
