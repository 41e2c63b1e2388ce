use crate::error::Result;
use crate::random::{rng, uniform_tensor};
use crate::tensor::{PointBatch, Tensor};

/// Outcome of a random-triple midpoint test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvexityReport {
    pub triples: usize,
    /// Triples where `f(l y1 + (1-l) y2) > l f(y1) + (1-l) f(y2) + tol`.
    pub violations: usize,
    /// Largest observed excess (negative when every triple holds strictly).
    pub worst_excess: f64,
}

impl ConvexityReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Tests `f` on `triples` random `(y1, y2, l)` with `y1, y2` uniform in
/// `[-radius, radius]^dim` and `l` uniform in `[0, 1]`.
pub fn convexity_check<F>(
    f: F,
    dim: usize,
    triples: usize,
    radius: f64,
    tol: f64,
    seed: u64,
) -> Result<ConvexityReport>
where
    F: Fn(&PointBatch) -> Result<Vec<f64>>,
{
    let mut r = rng(seed);
    let y1 = uniform_tensor(triples, dim, -radius, radius, &mut r);
    let y2 = uniform_tensor(triples, dim, -radius, radius, &mut r);
    let lam = uniform_tensor(triples, 1, 0.0, 1.0, &mut r);
    let mut mid = Tensor::zeros(triples, dim);
    for i in 0..triples {
        let l = lam.as_slice()[i];
        for j in 0..dim {
            mid[(i, j)] = l * y1[(i, j)] + (1.0 - l) * y2[(i, j)];
        }
    }
    let (f1, f2, fm) = (f(&y1)?, f(&y2)?, f(&mid)?);
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    for i in 0..triples {
        let l = lam.as_slice()[i];
        let excess = fm[i] - (l * f1[i] + (1.0 - l) * f2[i]);
        worst = worst.max(excess);
        if excess > tol {
            violations += 1;
        }
    }
    Ok(ConvexityReport {
        triples,
        violations,
        worst_excess: worst,
    })
}
