//! Conjugates against closed forms, a grid-search oracle, and the
//! Fenchel-Young and sup-norm properties.

use otmm::conjugate::{conjugate_batch, conjugate_value, ConjugateConfig};
use otmm::nets::{Activation, PotentialSpec, SkipKind, StrongPotential};
use otmm::oracle::QuadraticPotential;
use otmm::random::{normal_tensor, rng, uniform_tensor};
use otmm::tensor::dot;
use otmm::{Potential, PointBatch, Result, Tensor};

fn random_potential(seed: u64) -> StrongPotential {
    let spec = PotentialSpec::new(2, &[6, 6])
        .with_activation(Activation::Celu(1.0))
        .with_skip(if seed % 2 == 0 { SkipKind::Linear } else { SkipKind::Quadratic })
        .with_beta(1.0);
    StrongPotential::init(&spec, seed).unwrap()
}

/// `max_y <x, y> - phi(y)` over a 201 x 201 grid on `[-r, r]^2`.
fn grid_conjugate(pot: &impl Potential, x: &[f64], r: f64) -> (f64, [f64; 2]) {
    let n = 201;
    let h = 2.0 * r / (n - 1) as f64;
    let mut grid = Tensor::zeros(n * n, 2);
    for i in 0..n {
        for j in 0..n {
            grid.row_mut(i * n + j).copy_from_slice(&[-r + i as f64 * h, -r + j as f64 * h]);
        }
    }
    let phi = pot.values(&grid).unwrap();
    let mut best = (f64::NEG_INFINITY, [0.0; 2]);
    for (k, p) in phi.iter().enumerate() {
        let y = grid.row(k);
        let v = dot(x, y) - p;
        if v > best.0 {
            best = (v, [y[0], y[1]]);
        }
    }
    best
}

#[test]
fn quadratic_is_self_dual() {
    for dim in 1..=4 {
        let pot = StrongPotential::pure_quadratic(dim, 1.0).unwrap();
        let x = normal_tensor(20, dim, &mut rng(dim as u64));
        let cfg = ConjugateConfig::default();
        let out = conjugate_batch(&pot, &x, None, &cfg).unwrap();
        for (i, row) in x.iter_rows().enumerate() {
            assert!((out.values[i] - 0.5 * dot(row, row)).abs() <= 1e-6);
            let d: f64 = out.argmax.row(i).iter().zip(row).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(d <= 1e-6);
        }
    }
}

#[test]
fn general_quadratic_closed_form() {
    // phi(y) = (y - c)^T H (y - c) / 2  =>  phi*(x) = <x, c> + x^T H^{-1} x / 2
    let h = Tensor::from_rows(&[[2.0, 0.5], [0.5, 1.0]]).unwrap();
    let c = vec![0.3, -0.7];
    let pot = QuadraticPotential::new(h, c.clone(), 0.0).unwrap();
    let det = 2.0 - 0.25;
    let hinv = [[1.0 / det, -0.5 / det], [-0.5 / det, 2.0 / det]];
    for x in [[0.0, 0.0], [1.0, -2.0], [-0.4, 0.9]] {
        let p = conjugate_value(&pot, &x, &ConjugateConfig::default()).unwrap();
        let hx = [hinv[0][0] * x[0] + hinv[0][1] * x[1], hinv[1][0] * x[0] + hinv[1][1] * x[1]];
        let expected = dot(&x, &c) + 0.5 * dot(&x, &hx);
        assert!((p.value - expected).abs() <= 1e-6, "{} vs {expected}", p.value);
    }
}

#[test]
fn matches_grid_search_oracle() {
    let r = 2.0;
    for seed in 0..6 {
        let pot = random_potential(seed);
        let xs = uniform_tensor(5, 2, -1.0, 1.0, &mut rng(100 + seed));
        let cfg = ConjugateConfig::default().with_box_radius(3.0);
        let out = conjugate_batch(&pot, &xs, None, &cfg).unwrap();
        for (i, x) in xs.iter_rows().enumerate() {
            let (grid, at) = grid_conjugate(&pot, x, r);
            assert!(
                at.iter().all(|v| v.abs() < r - 1e-9),
                "grid maximizer on the boundary; enlarge the box"
            );
            // the grid only ever underestimates a supremum
            assert!(out.values[i] >= grid - 1e-9, "seed {seed}: solver {} below grid {grid}", out.values[i]);
            assert!((out.values[i] - grid).abs() <= 1e-3, "seed {seed}: {} vs {grid}", out.values[i]);
        }
        assert_eq!(out.boundary_count, 0);
    }
}

#[test]
fn fenchel_young() {
    let pot = random_potential(3);
    let x = normal_tensor(30, 2, &mut rng(4));
    let y = normal_tensor(30, 2, &mut rng(5)).map(|v| 2.0 * v);
    let cfg = ConjugateConfig::default();
    let out = conjugate_batch(&pot, &x, None, &cfg).unwrap();
    let phi_y = pot.values(&y).unwrap();
    let phi_star = pot.values(&out.argmax).unwrap();
    for i in 0..30 {
        // phi(y) + phi*(x) >= <x, y>
        assert!(phi_y[i] + out.values[i] >= dot(x.row(i), y.row(i)) - 1e-9);
        // with equality at the maximizer
        let eq = phi_star[i] + out.values[i] - dot(x.row(i), out.argmax.row(i));
        assert!(eq.abs() <= 1e-9, "{eq}");
    }
    // the maximizer solves grad phi(y) = x
    let (_, g) = pot.values_and_grads(&out.argmax).unwrap();
    assert!(g.zip_map(&x, |a, b| (a - b).abs()).max_abs() <= 1e-5);
}

/// `phi + eps * tanh(y_0)`: within `eps` of `phi` in sup norm, still convex
/// when `eps` is small against the strong convexity of `phi`.
struct Perturbed<'a> {
    base: &'a StrongPotential,
    eps: f64,
}

impl Potential for Perturbed<'_> {
    fn dim(&self) -> usize {
        self.base.dim()
    }
    fn strong_convexity(&self) -> f64 {
        self.base.strong_convexity() - 0.77 * self.eps
    }
    fn values(&self, y: &PointBatch) -> Result<Vec<f64>> {
        Ok(self.values_and_grads(y)?.0)
    }
    fn values_and_grads(&self, y: &PointBatch) -> Result<(Vec<f64>, PointBatch)> {
        let (mut v, mut g) = self.base.values_and_grads(y)?;
        for i in 0..y.rows() {
            let t = y.row(i)[0].tanh();
            v[i] += self.eps * t;
            g.row_mut(i)[0] += self.eps * (1.0 - t * t);
        }
        Ok((v, g))
    }
}

#[test]
fn conjugation_is_nonexpansive_in_sup_norm() {
    let cfg = ConjugateConfig::default().with_box_radius(5.0);
    for seed in 0..4 {
        let base = random_potential(seed);
        let eps = 0.05;
        let pert = Perturbed { base: &base, eps };
        let x = uniform_tensor(25, 2, -1.5, 1.5, &mut rng(seed + 50));
        let a = conjugate_batch(&base, &x, None, &cfg).unwrap();
        let b = conjugate_batch(&pert, &x, None, &cfg).unwrap();
        let slack = 10.0 * cfg.tol;
        for i in 0..25 {
            assert!((a.values[i] - b.values[i]).abs() <= eps + slack);
        }
        // a constant shift passes through exactly
        let shifted = conjugate_batch(&Shift(&base, 0.25), &x, None, &cfg).unwrap();
        for i in 0..25 {
            assert!((a.values[i] - 0.25 - shifted.values[i]).abs() <= 1e-9);
        }
    }
}

struct Shift<'a>(&'a StrongPotential, f64);

impl Potential for Shift<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn strong_convexity(&self) -> f64 {
        self.0.strong_convexity()
    }
    fn values(&self, y: &PointBatch) -> Result<Vec<f64>> {
        Ok(self.0.values(y)?.into_iter().map(|v| v + self.1).collect())
    }
    fn values_and_grads(&self, y: &PointBatch) -> Result<(Vec<f64>, PointBatch)> {
        let (v, g) = self.0.values_and_grads(y)?;
        Ok((v.into_iter().map(|v| v + self.1).collect(), g))
    }
}
