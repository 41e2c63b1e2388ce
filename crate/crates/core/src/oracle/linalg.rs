//! Small dense symmetric linear algebra (D is at most a handful).

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Eigenvalues (ascending) and eigenvectors (columns) of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: Tensor,
}

pub fn check_square(m: &Tensor, what: &str) -> Result<usize> {
    if m.rows() != m.cols() {
        return Err(Error::SizeMismatch(format!("{what} is {}x{}, not square", m.rows(), m.cols())));
    }
    Ok(m.rows())
}

pub fn is_symmetric(m: &Tensor, tol: f64) -> bool {
    let n = m.rows();
    m.rows() == m.cols()
        && (0..n).all(|i| (0..i).all(|j| (m[(i, j)] - m[(j, i)]).abs() <= tol * (1.0 + m[(i, j)].abs())))
}

/// Cyclic Jacobi rotations until the off-diagonal Frobenius norm drops below
/// `1e-12` times the matrix scale.
pub fn sym_eigen(m: &Tensor) -> Result<SymEigen> {
    let n = check_square(m, "matrix")?;
    if !m.all_finite() {
        return Err(Error::numerical("sym_eigen", "non-finite entry"));
    }
    let mut a = m.clone();
    let mut v = Tensor::identity(n);
    let scale = crate::tensor::norm(a.as_slice()).max(1e-300);
    let off = |a: &Tensor| {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[(i, j)] * a[(i, j)];
                }
            }
        }
        s.sqrt()
    };
    for _sweep in 0..100 {
        if off(&a) <= 1e-12 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let values = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = Tensor::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for k in 0..n {
            vectors[(k, dst)] = v[(k, src)];
        }
    }
    Ok(SymEigen { values, vectors })
}

/// `V diag(f(lambda)) V^T`.
pub fn sym_apply(e: &SymEigen, f: impl Fn(f64) -> f64) -> Tensor {
    let n = e.values.len();
    let mut out = Tensor::zeros(n, n);
    for (k, &lam) in e.values.iter().enumerate() {
        let fl = f(lam);
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] += fl * e.vectors[(i, k)] * e.vectors[(j, k)];
            }
        }
    }
    symmetrize(&out)
}

pub fn symmetrize(m: &Tensor) -> Tensor {
    let t = m.transpose();
    m.zip_map(&t, |a, b| 0.5 * (a + b))
}

/// Eigendecomposition of a symmetric positive definite matrix, rejecting
/// asymmetric input and eigenvalues `<= 1e-12`.
pub fn spd_eigen(m: &Tensor, what: &str) -> Result<SymEigen> {
    check_square(m, what)?;
    if !is_symmetric(m, 1e-10) {
        return Err(Error::NotPositiveDefinite(format!("{what} is not symmetric")));
    }
    let e = sym_eigen(m)?;
    let min = e.values[0];
    if min <= 1e-12 {
        return Err(Error::NearSingular(min));
    }
    Ok(e)
}

pub fn spd_sqrt(m: &Tensor, what: &str) -> Result<Tensor> {
    Ok(sym_apply(&spd_eigen(m, what)?, f64::sqrt))
}

pub fn spd_inv(m: &Tensor, what: &str) -> Result<Tensor> {
    Ok(sym_apply(&spd_eigen(m, what)?, |l| 1.0 / l))
}

/// Lower Cholesky factor `L` with `L L^T = m`.
pub fn cholesky(m: &Tensor) -> Result<Tensor> {
    let n = check_square(m, "covariance")?;
    if !is_symmetric(m, 1e-10) {
        return Err(Error::NotPositiveDefinite("covariance is not symmetric".into()));
    }
    let mut l = Tensor::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) {
            return Err(Error::NotPositiveDefinite(format!("pivot {j} is {d:e}")));
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in j + 1..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

pub fn mat_vec(m: &Tensor, v: &[f64]) -> Vec<f64> {
    (0..m.rows()).map(|i| crate::tensor::dot(m.row(i), v)).collect()
}
