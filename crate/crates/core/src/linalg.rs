//! Small dense linear-algebra kernels used by the dictionary initializer and
//! the metric utilities. Matrices here are at most a few hundred wide, so
//! plain cyclic Jacobi and an unblocked Cholesky are adequate.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{ensure_shape, LmlError, Result};
use crate::scalar::Real;

/// Eigen-decomposition of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymmetricEigen<T> {
    /// Eigenvalues sorted in descending order.
    pub values: Array1<T>,
    /// Column `i` is the unit eigenvector for `values[i]`.
    pub vectors: Array2<T>,
}

/// Cyclic Jacobi eigenvalue iteration. Only the symmetric part of `a` is used.
pub fn symmetric_eigen<T: Real>(a: ArrayView2<T>) -> Result<SymmetricEigen<T>> {
    let n = a.nrows();
    ensure_shape(a.ncols() == n, || format!("eigen: {}x{} is not square", n, a.ncols()))?;
    let half = T::lit(0.5);
    let mut m = Array2::from_shape_fn((n, n), |(i, j)| half * (a[[i, j]] + a[[j, i]]));
    let mut v = Array2::<T>::eye(n);
    let eps = T::epsilon();

    for _sweep in 0..100 {
        let mut off = T::zero();
        let mut total = T::zero();
        for i in 0..n {
            for j in 0..n {
                let sq = m[[i, j]] * m[[i, j]];
                total += sq;
                if i != j {
                    off += sq;
                }
            }
        }
        if off <= eps * eps * total || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq == T::zero() {
                    continue;
                }
                let app = m[[p, p]];
                let aqq = m[[q, q]];
                let theta = (aqq - app) / (T::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[[j, j]].partial_cmp(&m[[i, i]]).unwrap_or(std::cmp::Ordering::Equal).then(i.cmp(&j)));
    let values = Array1::from_iter(order.iter().map(|&i| m[[i, i]]));
    let vectors = v.select(Axis(1), &order);
    if values.iter().any(|x| !x.is_finite()) {
        return Err(LmlError::Divergence("eigen-decomposition produced non-finite values".into()));
    }
    Ok(SymmetricEigen { values, vectors })
}

/// Lower-triangular Cholesky factor `C` with `a = C Cᵀ`.
pub fn cholesky<T: Real>(a: ArrayView2<T>) -> Result<Array2<T>> {
    let n = a.nrows();
    ensure_shape(a.ncols() == n, || format!("cholesky: {}x{} is not square", n, a.ncols()))?;
    let mut c = Array2::<T>::zeros((n, n));
    for j in 0..n {
        let mut diag = a[[j, j]];
        for k in 0..j {
            diag -= c[[j, k]] * c[[j, k]];
        }
        if !(diag > T::zero()) {
            return Err(LmlError::Divergence(format!("cholesky: matrix is not positive definite (pivot {j})")));
        }
        let d = diag.sqrt();
        c[[j, j]] = d;
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= c[[i, k]] * c[[j, k]];
            }
            c[[i, j]] = s / d;
        }
    }
    Ok(c)
}

/// Inverse of a non-singular lower-triangular matrix.
pub fn lower_triangular_inverse<T: Real>(c: ArrayView2<T>) -> Array2<T> {
    let n = c.nrows();
    let mut inv = Array2::<T>::zeros((n, n));
    for col in 0..n {
        for i in col..n {
            let mut s = if i == col { T::one() } else { T::zero() };
            for k in col..i {
                s -= c[[i, k]] * inv[[k, col]];
            }
            inv[[i, col]] = s / c[[i, i]];
        }
    }
    inv
}

/// Singular values of `a`, descending.
pub fn singular_values<T: Real>(a: ArrayView2<T>) -> Result<Array1<T>> {
    let gram = if a.nrows() <= a.ncols() { a.dot(&a.t()) } else { a.t().dot(&a) };
    let eig = symmetric_eigen(gram.view())?;
    Ok(eig.values.mapv(|x| x.max(T::zero()).sqrt()))
}

/// Nearest positive semi-definite matrix in Frobenius norm: symmetrize and
/// clip negative eigenvalues to zero.
pub fn project_psd<T: Real>(m: ArrayView2<T>) -> Result<Array2<T>> {
    let eig = symmetric_eigen(m)?;
    let clipped = eig.values.mapv(|x| x.max(T::zero()));
    let scaled = &eig.vectors * &clipped.insert_axis(Axis(0));
    Ok(scaled.dot(&eig.vectors.t()))
}

pub fn frobenius_inner<T: Real>(a: ArrayView2<T>, b: ArrayView2<T>) -> T {
    a.iter().zip(b.iter()).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

pub fn frobenius_norm_sq<T: Real>(a: ArrayView2<T>) -> T {
    a.iter().fold(T::zero(), |acc, &x| acc + x * x)
}

pub fn all_finite<T: Real>(a: ArrayView2<T>) -> bool {
    a.iter().all(|x| x.is_finite())
}
