use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::graph::{Graph, NodeId};

/// Compares reverse-mode gradients of a scalar function of one input array
/// against central differences.
///
/// `build` receives a fresh graph and the input node and returns the scalar
/// output node. Returns the largest per-coordinate
/// `|analytic - numeric| / (|analytic| + |numeric| + 1e-12)`.
pub fn grad_check<F>(build: F, point: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId>,
{
    if !(step > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be > 0, got {step}")));
    }
    let eval = |p: &Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let x = g.input(p.clone());
        let out = build(&mut g, x)?;
        Ok(g.value(out).item())
    };

    let mut g = Graph::new();
    let x = g.input_with_grad(point.clone());
    let out = build(&mut g, x)?;
    g.backward(out)?;
    let analytic = g.grad(x);
    if !analytic.all_finite() || !g.value(out).item().is_finite() {
        return Err(Error::numerical("grad_check", "non-finite analytic gradient or value"));
    }

    let mut worst = 0.0f64;
    let mut probe = point.clone();
    for i in 0..point.len() {
        let base = point.as_slice()[i];
        probe.as_mut_slice()[i] = base + step;
        let up = eval(&probe)?;
        probe.as_mut_slice()[i] = base - step;
        let down = eval(&probe)?;
        probe.as_mut_slice()[i] = base;
        let numeric = (up - down) / (2.0 * step);
        if !numeric.is_finite() {
            return Err(Error::numerical("grad_check", format!("non-finite difference at coordinate {i}")));
        }
        let a = analytic.as_slice()[i];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs() + 1e-12);
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let s = g.sq_norm(x);
        let s = g.sum(s);
        Ok(g.scale(s, 0.5))
    }

    #[test]
    fn quadratic_is_exact() {
        let p = Tensor::row_vector(&[0.3, -1.7, 2.2, 0.0]);
        assert!(grad_check(quadratic, &p, 1e-5).unwrap() <= 1e-8);
    }

    #[test]
    fn rejects_bad_step() {
        let p = Tensor::row_vector(&[1.0]);
        assert!(grad_check(quadratic, &p, 0.0).is_err());
        assert!(grad_check(quadratic, &p, -1.0).is_err());
    }

    #[test]
    fn non_finite_is_an_error() {
        let p = Tensor::row_vector(&[f64::NAN]);
        assert!(matches!(grad_check(quadratic, &p, 1e-5), Err(Error::Numerical { .. })));
    }
}
