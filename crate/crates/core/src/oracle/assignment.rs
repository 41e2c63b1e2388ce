use crate::error::{Error, Result};
use crate::tensor::{sq_dist, PointBatch};

/// Largest instance the exact solver accepts.
pub const MAX_ASSIGNMENT_SIZE: usize = 256;

/// Optimal matching between two equal-size point sets.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `permutation[i]` is the target index matched to source point `i`.
    pub permutation: Vec<usize>,
    /// `(1/N) sum_i |x_i - y_pi(i)|^2 / 2`.
    pub cost: f64,
}

/// Exact quadratic-cost matching by the shortest augmenting path method
/// with dual potentials, `O(N^3)`.
pub fn discrete_assignment(x: &PointBatch, y: &PointBatch) -> Result<Assignment> {
    let n = x.rows();
    if y.rows() != n {
        return Err(Error::SizeMismatch(format!("{n} sources vs {} targets", y.rows())));
    }
    if x.cols() != y.cols() {
        return Err(Error::Dimension {
            expected: x.cols(),
            got: y.cols(),
        });
    }
    if n > MAX_ASSIGNMENT_SIZE {
        return Err(Error::SizeMismatch(format!("{n} points exceeds the exact-solver limit {MAX_ASSIGNMENT_SIZE}")));
    }
    if n == 0 {
        return Err(Error::EmptyBatch("assignment"));
    }
    let cost = |i: usize, j: usize| 0.5 * sq_dist(x.row(i), y.row(j));
    let permutation = hungarian(n, cost);
    let total: f64 = permutation.iter().enumerate().map(|(i, &j)| cost(i, j)).sum();
    Ok(Assignment {
        permutation,
        cost: total / n as f64,
    })
}

/// Square min-cost assignment; rows and columns are 1-indexed internally.
fn hungarian(n: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut col_owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        col_owner[0] = row;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut perm = vec![0; n];
    for j in 1..=n {
        perm[col_owner[j] - 1] = j - 1;
    }
    perm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn identical_sets_match_identically() {
        let x = Tensor::from_rows(&[[0.0, 1.0], [2.0, 3.0], [-1.0, 5.0]]).unwrap();
        let a = discrete_assignment(&x, &x).unwrap();
        assert_eq!(a.permutation, vec![0, 1, 2]);
        assert_eq!(a.cost, 0.0);
    }

    #[test]
    fn swapped_pair() {
        let x = Tensor::from_rows(&[[0.0, 0.0], [1.0, 0.0]]).unwrap();
        let y = Tensor::from_rows(&[[1.0, 0.0], [0.0, 0.0]]).unwrap();
        let a = discrete_assignment(&x, &y).unwrap();
        assert_eq!(a.permutation, vec![1, 0]);
        assert_eq!(a.cost, 0.0);
    }

    #[test]
    fn size_errors() {
        let x = Tensor::zeros(3, 2);
        assert!(matches!(discrete_assignment(&x, &Tensor::zeros(2, 2)), Err(Error::SizeMismatch(_))));
        assert!(discrete_assignment(&Tensor::zeros(257, 1), &Tensor::zeros(257, 1)).is_err());
    }
}
