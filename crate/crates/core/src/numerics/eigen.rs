//! Symmetric eigensolver (cyclic Jacobi) and the definiteness checks built on it.

use crate::error::{Error, Result};
use crate::numerics::matrix::Mat;
use crate::scalar::Real;

/// Relative asymmetry accepted before an input is rejected.
pub const SYMMETRY_TOL: f64 = 1e-9;

const MAX_SWEEPS: usize = 100;

/// Eigen-decomposition `A = Q Λ Qᵀ` with eigenvalues in ascending order and
/// eigenvectors stored as the columns of `vectors`.
#[derive(Debug, Clone)]
pub struct SymEigen<T> {
    pub values: Vec<T>,
    pub vectors: Mat<T>,
}

impl<T: Real> SymEigen<T> {
    pub fn min(&self) -> T {
        self.values[0]
    }

    pub fn max(&self) -> T {
        *self.values.last().expect("non-empty spectrum")
    }

    /// `Q diag(g(λ)) Qᵀ`.
    pub fn reconstruct_with(&self, g: impl Fn(T) -> T) -> Mat<T> {
        let n = self.values.len();
        let q = &self.vectors;
        let mut out = Mat::zeros(n, n);
        for k in 0..n {
            let gk = g(self.values[k]);
            if gk == T::zero() {
                continue;
            }
            for i in 0..n {
                let qik = q[(i, k)] * gk;
                for j in 0..n {
                    out[(i, j)] += qik * q[(j, k)];
                }
            }
        }
        out
    }

    pub fn reconstruct(&self) -> Mat<T> {
        self.reconstruct_with(|v| v)
    }

    pub fn eigenvector(&self, k: usize) -> Vec<T> {
        self.vectors.col(k)
    }
}

/// Eigen-decomposition of a symmetric matrix. Inputs are symmetrized first;
/// an asymmetry above [`SYMMETRY_TOL`] (relative) is an error.
pub fn sym_eigen<T: Real>(a: &Mat<T>) -> Result<SymEigen<T>> {
    if !a.is_square() {
        return Err(Error::Dimension(format!(
            "eigen-decomposition of a {}x{} matrix",
            a.rows(),
            a.cols()
        )));
    }
    let asym = a.asymmetry();
    if asym > T::lit(SYMMETRY_TOL) || !asym.is_finite() {
        return Err(Error::NotSymmetric(asym.as_f64()));
    }
    Ok(jacobi(a.sym()))
}

fn jacobi<T: Real>(mut a: Mat<T>) -> SymEigen<T> {
    let n = a.rows();
    let mut v = Mat::identity(n);
    if n == 0 {
        return SymEigen {
            values: vec![],
            vectors: v,
        };
    }
    let eps = T::epsilon();
    for _ in 0..MAX_SWEEPS {
        let mut off = T::zero();
        let mut diag = T::zero();
        for i in 0..n {
            diag += a[(i, i)] * a[(i, i)];
            for j in (i + 1)..n {
                off += a[(i, j)] * a[(i, j)];
            }
        }
        if off <= eps * eps * diag.max(T::min_positive_value()) || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                let theta = (aqq - app) / (T::two() * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                a[(p, q)] = T::zero();
                a[(q, p)] = T::zero();
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].partial_cmp(&a[(j, j)]).expect("finite eigenvalues"));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let vectors = Mat::from_fn(n, n, |i, k| v[(i, order[k])]);
    SymEigen { values, vectors }
}

/// Ascending eigenvalues of a symmetric matrix.
pub fn eigenvalues_sym<T: Real>(a: &Mat<T>) -> Result<Vec<T>> {
    Ok(sym_eigen(a)?.values)
}

pub fn min_eig_sym<T: Real>(a: &Mat<T>) -> Result<T> {
    Ok(sym_eigen(a)?.min())
}

pub fn max_eig_sym<T: Real>(a: &Mat<T>) -> Result<T> {
    Ok(sym_eigen(a)?.max())
}

/// Definiteness senses accepted by [`is_definite`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Definiteness {
    Psd,
    Nsd,
    Pd,
    Nd,
}

/// Eigenvalue threshold test: `psd ⇔ λmin ≥ −tol`, `pd ⇔ λmin > tol`,
/// `nsd ⇔ λmax ≤ tol`, `nd ⇔ λmax < −tol`. Non-symmetric input is never
/// definite.
pub fn is_definite<T: Real>(a: &Mat<T>, sense: Definiteness, tol: T) -> bool {
    let Ok(eig) = sym_eigen(a) else {
        return false;
    };
    if eig.values.is_empty() {
        return true;
    }
    match sense {
        Definiteness::Psd => eig.min() >= -tol,
        Definiteness::Pd => eig.min() > tol,
        Definiteness::Nsd => eig.max() <= tol,
        Definiteness::Nd => eig.max() < -tol,
    }
}

/// Induced 2-norm of an arbitrary matrix.
pub fn spectral_norm<T: Real>(a: &Mat<T>) -> T {
    if a.rows() == 0 || a.cols() == 0 {
        return T::zero();
    }
    let gram = a.tr_matmul(a);
    jacobi(gram.sym()).max().max(T::zero()).sqrt()
}

/// Inverse of a symmetric positive definite matrix through its spectrum.
pub fn spd_inverse<T: Real>(a: &Mat<T>) -> Result<Mat<T>> {
    let eig = sym_eigen(a)?;
    if eig.values.first().map_or(false, |&v| v <= T::zero()) {
        return Err(Error::InvalidArgument(format!(
            "matrix is not positive definite (min eigenvalue {})",
            eig.min()
        )));
    }
    Ok(eig.reconstruct_with(|v| v.recip()))
}

/// General inverse by Gauss-Jordan elimination with partial pivoting.
pub fn inverse<T: Real>(a: &Mat<T>) -> Result<Mat<T>> {
    if !a.is_square() {
        return Err(Error::Dimension("inverse of a non-square matrix".into()));
    }
    let n = a.rows();
    let mut m = a.clone();
    let mut inv = Mat::identity(n);
    let scale = a.max_abs().max(T::min_positive_value());
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[(i, col)].abs().partial_cmp(&m[(j, col)].abs()).unwrap())
            .unwrap();
        if m[(pivot, col)].abs() <= T::epsilon() * scale * T::from_usize_lossy(n) {
            return Err(Error::InvalidArgument("singular matrix".into()));
        }
        if pivot != col {
            for j in 0..n {
                let t = m[(col, j)];
                m[(col, j)] = m[(pivot, j)];
                m[(pivot, j)] = t;
                let t = inv[(col, j)];
                inv[(col, j)] = inv[(pivot, j)];
                inv[(pivot, j)] = t;
            }
        }
        let d = m[(col, col)].recip();
        for j in 0..n {
            m[(col, j)] *= d;
            inv[(col, j)] *= d;
        }
        for i in 0..n {
            if i == col {
                continue;
            }
            let f = m[(i, col)];
            if f == T::zero() {
                continue;
            }
            for j in 0..n {
                let mcj = m[(col, j)];
                let icj = inv[(col, j)];
                m[(i, j)] -= f * mcj;
                inv[(i, j)] -= f * icj;
            }
        }
    }
    Ok(inv)
}
