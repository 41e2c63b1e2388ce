//! Exact oracles against brute force and against each other.

use otmm::oracle::{discrete_assignment, gaussian_ot_map, monotone_map_1d};
use otmm::random::{normal_tensor, rng};
use otmm::tensor::sq_dist;
use otmm::{PointBatch, Tensor};
use proptest::prelude::*;

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for k in 0..=p.len() {
            let mut q = p.clone();
            q.insert(k, n - 1);
            out.push(q);
        }
    }
    out
}

fn cost(x: &PointBatch, y: &PointBatch, perm: &[usize]) -> f64 {
    perm.iter().enumerate().map(|(i, &j)| 0.5 * sq_dist(x.row(i), y.row(j))).sum::<f64>() / perm.len() as f64
}

fn random_spd(dim: usize, seed: u64) -> Tensor {
    let g = normal_tensor(dim, dim, &mut rng(seed));
    let mut s = g.matmul(&g.transpose()).unwrap();
    for i in 0..dim {
        s[(i, i)] += 0.1;
    }
    s
}

#[test]
fn assignment_matches_enumeration() {
    let perms = permutations(6);
    assert_eq!(perms.len(), 720);
    for seed in 0..20 {
        let x = normal_tensor(6, 2, &mut rng(seed));
        let y = normal_tensor(6, 2, &mut rng(seed + 1000));
        let brute = perms.iter().map(|p| cost(&x, &y, p)).fold(f64::INFINITY, f64::min);
        let a = discrete_assignment(&x, &y).unwrap();
        assert!((a.cost - brute).abs() <= 1e-12, "seed {seed}: {} vs {brute}", a.cost);
        assert!((cost(&x, &y, &a.permutation) - a.cost).abs() <= 1e-15);
    }
}

#[test]
fn monotone_map_matches_assignment() {
    for seed in 0..20 {
        let mut r = rng(seed);
        let x = normal_tensor(8, 1, &mut r);
        let y = normal_tensor(8, 1, &mut r).map(|v| 3.0 * v + 1.0);
        let a = discrete_assignment(&x, &y).unwrap();
        let mut xs: Vec<f64> = x.as_slice().to_vec();
        let mut ys: Vec<f64> = y.as_slice().to_vec();
        xs.sort_by(f64::total_cmp);
        ys.sort_by(f64::total_cmp);
        let m = monotone_map_1d(&xs, &ys).unwrap();
        for i in 0..8 {
            assert_eq!(m.eval(x.row(i)[0]), y.row(a.permutation[i])[0]);
        }
    }
}

#[test]
fn gaussian_map_pushes_covariance() {
    for seed in 0..20 {
        let dim = 2 + (seed as usize % 4);
        let (sp, sq) = (random_spd(dim, seed), random_spd(dim, seed + 500));
        let mp: Vec<f64> = (0..dim).map(|i| i as f64 - 1.0).collect();
        let mq: Vec<f64> = (0..dim).map(|i| 0.5 * i as f64).collect();
        let m = gaussian_ot_map(&mp, &sp, &mq, &sq).unwrap();
        let pushed = m.matrix.matmul(&sp).unwrap().matmul(&m.matrix.transpose()).unwrap();
        let scale = sq.max_abs();
        let err = pushed.zip_map(&sq, |a, b| (a - b).abs()).max_abs();
        assert!(err <= 1e-8 * scale.max(1.0), "seed {seed}: {err}");
        // Brenier maps of this kind are symmetric positive definite
        assert!(m.matrix.zip_map(&m.matrix.transpose(), |a, b| (a - b).abs()).max_abs() <= 1e-12);
        let pm = m.apply_point(&mp);
        assert!(pm.iter().zip(&mq).all(|(a, b)| (a - b).abs() <= 1e-9));
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn assignment_is_optimal_under_swaps(n in 2usize..12, seed in 0u64..10_000) {
        let x = normal_tensor(n, 3, &mut rng(seed));
        let y = normal_tensor(n, 3, &mut rng(seed ^ 0xabc));
        let a = discrete_assignment(&x, &y).unwrap();
        let mut sorted = a.permutation.clone();
        sorted.sort();
        prop_assert_eq!(sorted, (0..n).collect::<Vec<_>>());
        // no pairwise exchange improves the matching
        for i in 0..n {
            for k in i + 1..n {
                let mut p = a.permutation.clone();
                p.swap(i, k);
                prop_assert!(cost(&x, &y, &p) >= a.cost - 1e-12);
            }
        }
    }
}
