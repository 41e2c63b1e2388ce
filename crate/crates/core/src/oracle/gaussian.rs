use crate::error::{Error, Result};
use crate::nets::{Potential, TransportMap};
use crate::tensor::{PointBatch, Tensor};

use super::linalg::{check_square, mat_vec, spd_eigen, spd_inv, sym_apply, symmetrize};

/// `x -> A x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMap {
    pub matrix: Tensor,
    pub offset: Vec<f64>,
}

impl AffineMap {
    pub fn new(matrix: Tensor, offset: Vec<f64>) -> Result<Self> {
        let n = check_square(&matrix, "affine matrix")?;
        if offset.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: offset.len(),
            });
        }
        Ok(Self { matrix, offset })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            matrix: Tensor::identity(dim),
            offset: vec![0.0; dim],
        }
    }

    pub fn apply_point(&self, x: &[f64]) -> Vec<f64> {
        let mut y = mat_vec(&self.matrix, x);
        y.iter_mut().zip(&self.offset).for_each(|(a, b)| *a += b);
        y
    }

    /// For symmetric positive definite `A` this map is the gradient of
    /// `psi(x) = x^T A x / 2 + b^T x`; returns the conjugate
    /// `psi*(y) = (y - b)^T A^{-1} (y - b) / 2`.
    pub fn conjugate_potential(&self) -> Result<QuadraticPotential> {
        QuadraticPotential::new(spd_inv(&self.matrix, "affine matrix")?, self.offset.clone(), 0.0)
    }

    /// `psi(x) = x^T A x / 2 + b^T x`, written in centered form.
    pub fn potential(&self) -> Result<QuadraticPotential> {
        let inv = spd_inv(&self.matrix, "affine matrix")?;
        let center: Vec<f64> = mat_vec(&inv, &self.offset).iter().map(|v| -v).collect();
        let shift = -0.5 * crate::tensor::dot(&self.offset, &mat_vec(&inv, &self.offset));
        QuadraticPotential::new(self.matrix.clone(), center, shift)
    }
}

impl TransportMap for AffineMap {
    fn dim(&self) -> usize {
        self.offset.len()
    }

    fn apply(&self, x: &PointBatch) -> Result<PointBatch> {
        crate::nets::check_dim(self.dim(), x)?;
        let mut y = x.matmul(&self.matrix.transpose())?;
        for r in 0..y.rows() {
            y.row_mut(r).iter_mut().zip(&self.offset).for_each(|(a, b)| *a += b);
        }
        Ok(y)
    }
}

/// `phi(y) = (y - c)^T H (y - c) / 2 + k` with `H` symmetric positive definite.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticPotential {
    hessian: Tensor,
    center: Vec<f64>,
    shift: f64,
    min_eigen: f64,
}

impl QuadraticPotential {
    pub fn new(hessian: Tensor, center: Vec<f64>, shift: f64) -> Result<Self> {
        let hessian = symmetrize(&hessian);
        let e = spd_eigen(&hessian, "hessian")?;
        if center.len() != hessian.rows() {
            return Err(Error::Dimension {
                expected: hessian.rows(),
                got: center.len(),
            });
        }
        Ok(Self {
            hessian,
            center,
            shift,
            min_eigen: e.values[0],
        })
    }

    pub fn hessian(&self) -> &Tensor {
        &self.hessian
    }
}

impl Potential for QuadraticPotential {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn strong_convexity(&self) -> f64 {
        self.min_eigen
    }

    fn values(&self, y: &PointBatch) -> Result<Vec<f64>> {
        Ok(self.values_and_grads(y)?.0)
    }

    fn values_and_grads(&self, y: &PointBatch) -> Result<(Vec<f64>, PointBatch)> {
        crate::nets::check_dim(self.dim(), y)?;
        let mut grads = Tensor::zeros(y.rows(), y.cols());
        let mut values = Vec::with_capacity(y.rows());
        for (i, row) in y.iter_rows().enumerate() {
            let d: Vec<f64> = row.iter().zip(&self.center).map(|(a, c)| a - c).collect();
            let hd = mat_vec(&self.hessian, &d);
            values.push(0.5 * crate::tensor::dot(&d, &hd) + self.shift);
            grads.row_mut(i).copy_from_slice(&hd);
        }
        Ok((values, grads))
    }
}

/// Closed-form quadratic-cost OT map between two Gaussians:
/// `A = S_p^{-1/2} (S_p^{1/2} S_q S_p^{1/2})^{1/2} S_p^{-1/2}`,
/// `b = m_q - A m_p`.
pub fn gaussian_ot_map(mean_p: &[f64], cov_p: &Tensor, mean_q: &[f64], cov_q: &Tensor) -> Result<AffineMap> {
    let n = check_square(cov_p, "source covariance")?;
    if check_square(cov_q, "target covariance")? != n || mean_p.len() != n || mean_q.len() != n {
        return Err(Error::SizeMismatch("Gaussian parameters disagree on dimension".into()));
    }
    let ep = spd_eigen(cov_p, "source covariance")?;
    spd_eigen(cov_q, "target covariance")?;
    let sp_half = sym_apply(&ep, f64::sqrt);
    let sp_inv_half = sym_apply(&ep, |l| 1.0 / l.sqrt());
    let middle = symmetrize(&sp_half.matmul(cov_q)?.matmul(&sp_half)?);
    let middle_half = sym_apply(&spd_eigen(&middle, "S_p^1/2 S_q S_p^1/2")?, f64::sqrt);
    let a = symmetrize(&sp_inv_half.matmul(&middle_half)?.matmul(&sp_inv_half)?);
    let am = mat_vec(&a, mean_p);
    let offset = mean_q.iter().zip(&am).map(|(q, p)| q - p).collect();
    AffineMap::new(a, offset)
}
