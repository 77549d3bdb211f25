use crate::numerics::Mat;
use crate::scalar::Real;

/// Orthonormal basis of the left null space of `B` as the rows of an
/// `(n − r) × n` matrix `B⊥` with `B⊥ B = 0`, where `r = rank B`.
///
/// Householder QR with column pivoting: the trailing `n − r` columns of `Q`
/// span the orthogonal complement of `range(B)`.
pub fn annihilator<T: Real>(b: &Mat<T>) -> Mat<T> {
    let n = b.rows();
    let m = b.cols();
    let mut r = b.clone();
    let mut q = Mat::<T>::identity(n);
    let mut perm: Vec<usize> = (0..m).collect();
    let scale = b.max_abs();
    let tol = T::epsilon() * T::from_usize_lossy(n.max(m).max(1)) * T::lit(16.0) * scale;
    let mut rank = 0;
    for k in 0..m.min(n) {
        // pivot on the largest remaining column norm
        let col_norm = |r: &Mat<T>, j: usize| (k..n).map(|i| r[(i, j)] * r[(i, j)]).sum::<T>();
        let (best, best_norm) = (k..m)
            .map(|j| (j, col_norm(&r, perm[j])))
            .fold((k, -T::one()), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
        if best_norm.sqrt() <= tol {
            break;
        }
        perm.swap(k, best);
        let j = perm[k];
        let alpha = best_norm.sqrt();
        let x0 = r[(k, j)];
        let sign = if x0 >= T::zero() { T::one() } else { -T::one() };
        let mut v: Vec<T> = (k..n).map(|i| r[(i, j)]).collect();
        v[0] += sign * alpha;
        let vnorm2: T = v.iter().map(|&a| a * a).sum();
        if vnorm2 > T::zero() {
            // apply H = I − 2 v vᵀ / (vᵀv) to R from the left and accumulate Q = Q H
            for c in 0..m {
                let d: T = (k..n).map(|i| v[i - k] * r[(i, c)]).sum();
                let f = T::two() * d / vnorm2;
                for i in k..n {
                    r[(i, c)] -= f * v[i - k];
                }
            }
            for row in 0..n {
                let d: T = (k..n).map(|i| q[(row, i)] * v[i - k]).sum();
                let f = T::two() * d / vnorm2;
                for i in k..n {
                    q[(row, i)] -= f * v[i - k];
                }
            }
        }
        rank += 1;
    }
    Mat::from_fn(n - rank, n, |i, c| q[(c, rank + i)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;

    #[test]
    fn unit_vector_input() {
        let b = Mat::column(&[1.0f64, 0.0]);
        let perp = annihilator(&b);
        assert_eq!((perp.rows(), perp.cols()), (1, 2));
        assert!(perp[(0, 0)].abs() < 1e-15);
        assert!((perp[(0, 1)].abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn invertible_input_has_empty_annihilator() {
        let b = Mat::from_rows(&[vec![2.0f64, 1.0], vec![0.5, 3.0]]).unwrap();
        assert_eq!(annihilator(&b).rows(), 0);
    }

    #[test]
    fn rank_deficient_input() {
        let b = Mat::from_rows(&[vec![1.0f64, 2.0], vec![2.0, 4.0], vec![0.0, 0.0]]).unwrap();
        let perp = annihilator(&b);
        assert_eq!(perp.rows(), 2);
        assert!(perp.matmul(&b).frobenius_norm() < 1e-12);
    }

    #[test]
    fn random_full_rank_inputs() {
        let mut rng = RngStream::new(9, 0);
        for _ in 0..100 {
            let b = Mat::from_fn(6, 2, |_, _| rng.normal::<f64>());
            let perp = annihilator(&b);
            assert_eq!(perp.rows(), 4);
            assert!(perp.matmul(&b).frobenius_norm() < 1e-10);
            let gram = perp.matmul(&perp.transpose());
            assert!((&gram - &Mat::identity(4)).frobenius_norm() < 1e-10);
        }
    }
}
