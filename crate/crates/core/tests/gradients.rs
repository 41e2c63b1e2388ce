//! Reverse-mode gradients against central differences, and convexity of the
//! potential family.

use otmm::diffcore::{grad_check, Gradients, ParamStore};
use otmm::minimax::{map_gradients, potential_gradients, train, TrainConfig};
use otmm::nets::{convexity_check, Activation, IcnnNet, MapNet, MapSpec, PotentialSpec, SkipKind, StrongPotential};
use otmm::random::{normal_tensor, rng};
use otmm::{MixtureSpec, Potential, Result, Tensor};
use proptest::prelude::*;
use proptest::test_runner::RngSeed;

fn sum_potential(pot: &StrongPotential) -> impl Fn(&mut otmm::diffcore::Graph, otmm::diffcore::NodeId) -> Result<otmm::diffcore::NodeId> + '_ {
    move |g, y| {
        let (out, _) = pot.build(g, y, false)?;
        Ok(g.sum(out))
    }
}

/// Largest (floored) relative error of `grads` against central differences of `loss`
/// over every parameter coordinate.
fn param_fd_error(
    store: &ParamStore,
    grads: &Gradients,
    loss: impl Fn(&ParamStore) -> f64,
    step: f64,
) -> f64 {
    let mut probe = store.clone();
    let mut worst = 0.0f64;
    for (k, p) in store.iter().enumerate() {
        for i in 0..p.value.len() {
            let id = otmm::diffcore::ParamId(k);
            let base = p.value.as_slice()[i];
            probe.value_mut(id).as_mut_slice()[i] = base + step;
            let up = loss(&probe);
            probe.value_mut(id).as_mut_slice()[i] = base - step;
            let down = loss(&probe);
            probe.value_mut(id).as_mut_slice()[i] = base;
            let numeric = (up - down) / (2.0 * step);
            let a = grads.0[k].as_slice()[i];
            // relative above 1e-4, absolute below: tiny entries difference to rounding noise
            worst = worst.max((a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-4));
        }
    }
    worst
}

fn arb_potential() -> impl Strategy<Value = PotentialSpec> {
    (1usize..4, prop::collection::vec(1usize..7, 1..4), 0.3f64..3.0, any::<bool>(), 0.0f64..1.0).prop_map(
        |(dim, hidden, n, quad, beta)| {
            PotentialSpec::new(dim, &hidden)
                .with_activation(Activation::Celu(n))
                .with_skip(if quad { SkipKind::Quadratic } else { SkipKind::Linear })
                .with_beta(beta)
        },
    )
}

/// Smallest `|pre-activation|` of any hidden unit of `map` on `x`.
fn min_preactivation(map: &MapNet, x: &Tensor) -> f64 {
    let layers = map.params().len() / 2;
    let mut h = x.clone();
    let mut least = f64::INFINITY;
    for l in 0..layers {
        let w = map.params().value(otmm::diffcore::ParamId(2 * l));
        let b = map.params().value(otmm::diffcore::ParamId(2 * l + 1));
        let mut z = h.matmul(w).unwrap();
        for r in 0..z.rows() {
            z.row_mut(r).iter_mut().zip(b.as_slice()).for_each(|(v, c)| *v += c);
        }
        if l + 1 < layers {
            least = least.min(z.as_slice().iter().fold(f64::INFINITY, |m, v| m.min(v.abs())));
            h = z.map(|v| v.max(0.0));
        }
    }
    least
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 40, failure_persistence: None, rng_seed: RngSeed::Fixed(7), ..ProptestConfig::default() })]

    #[test]
    fn potential_input_gradients(spec in arb_potential(), seed in 0u64..1000) {
        let pot = StrongPotential::init(&spec, seed).unwrap();
        let y = normal_tensor(3, spec.dim, &mut rng(seed + 1));
        let err = grad_check(sum_potential(&pot), &y, 1e-5).unwrap();
        prop_assert!(err <= 1e-5, "relative error {err}");
        // the analytic input gradient matches the one the Potential trait reports
        let (_, grads) = pot.values_and_grads(&y).unwrap();
        let mut g = otmm::diffcore::Graph::new();
        let yin = g.input_with_grad(y.clone());
        let out = sum_potential(&pot)(&mut g, yin).unwrap();
        g.backward(out).unwrap();
        let diff = g.grad(yin).zip_map(&grads, |a, b| (a - b).abs()).max_abs();
        prop_assert!(diff <= 1e-12);
    }

    #[test]
    fn map_input_gradients(dim in 1usize..4, hidden in prop::collection::vec(1usize..7, 0..3), seed in 0u64..1000) {
        let map = MapNet::init(&MapSpec::new(dim, &hidden), seed).unwrap();
        let x = normal_tensor(2, dim, &mut rng(seed + 7));
        prop_assume!(min_preactivation(&map, &x) > 1e-4);
        // <x, T(x)>, the map's term of the objective
        let build = |g: &mut otmm::diffcore::Graph, x| {
            let (t, _) = map.build(g, x, false)?;
            let s = g.dot(x, t)?;
            Ok(g.sum(s))
        };
        let err = grad_check(build, &x, 1e-5).unwrap();
        prop_assert!(err <= 1e-5, "relative error {err}");
    }

    #[test]
    fn loss_gradients_in_parameters(spec in arb_potential(), mh in prop::collection::vec(1usize..5, 0..2), seed in 0u64..1000) {
        let pot = StrongPotential::init(&spec, seed).unwrap();
        let map = MapNet::init(&MapSpec::new(spec.dim, &mh), seed + 3).unwrap();
        let x = normal_tensor(4, spec.dim, &mut rng(seed + 4));
        // weight perturbations of 1e-4 must not move a ReLU across its kink
        prop_assume!(min_preactivation(&map, &x) > 1e-2);
        // a dead map sends points to exactly 0, where zero biases put the CELU
        // right on its second-derivative jump
        prop_assume!(map.forward(&x).unwrap().iter_rows().all(|r| r.iter().any(|v| v.abs() > 1e-2)));
        let y = normal_tensor(5, spec.dim, &mut rng(seed + 5));

        let (_, gm) = map_gradients(&pot, &map, &x).unwrap();
        let err = param_fd_error(map.params(), &gm, |s| {
            let mut m = map.clone();
            *m.params_mut() = s.clone();
            map_gradients(&pot, &m, &x).unwrap().0
        }, 1e-5);
        prop_assert!(err <= 1e-5, "map parameter error {err}");

        let (_, gp) = potential_gradients(&pot, &map, &x, &y).unwrap();
        let err = param_fd_error(pot.params(), &gp, |s| {
            let mut p = pot.clone();
            *p.params_mut() = s.clone();
            otmm::minimax::empirical_loss(&p, &map, &x, &y).unwrap()
        }, 1e-5);
        prop_assert!(err <= 1e-5, "potential parameter error {err}");
    }

    #[test]
    fn potentials_are_convex(spec in arb_potential(), seed in 0u64..1000) {
        let pot = StrongPotential::init(&spec, seed).unwrap();
        let rep = convexity_check(|y| pot.values(y), spec.dim, 200, 4.0, 1e-9, seed).unwrap();
        prop_assert!(rep.passed(), "{rep:?}");
    }
}

#[test]
fn projection_restores_convexity() {
    let spec = PotentialSpec::new(2, &[8, 8]).with_skip(SkipKind::Quadratic);
    let mut pot = StrongPotential::init(&spec, 5).unwrap();
    // push every internal weight negative
    for p in pot.params_mut().iter_mut().filter(|p| p.nonneg) {
        p.value = p.value.map(|v| -v - 0.5);
    }
    let broken = convexity_check(|y| pot.values(y), 2, 1000, 4.0, 1e-9, 1).unwrap();
    assert!(broken.violations > 0);
    let pot = pot.project_nonneg();
    assert!(pot.params().nonneg_holds());
    let fixed = convexity_check(|y| pot.values(y), 2, 1000, 4.0, 1e-9, 1).unwrap();
    assert!(fixed.passed(), "{fixed:?}");
}

#[test]
fn trained_potential_stays_convex() {
    let src = MixtureSpec::standard(2).unwrap();
    let tgt = MixtureSpec::gaussian(vec![1.0, -1.0], Tensor::identity(2).map(|v| 2.0 * v)).unwrap();
    let spec = PotentialSpec::new(2, &[8, 8]);
    let cfg = TrainConfig {
        steps: 100,
        inner_steps: 3,
        n_source: 256,
        n_target: 256,
        eval_every: 50,
        eval_size: 64,
        record_time: false,
        ..TrainConfig::default()
    };
    let out = train(
        &cfg,
        &src,
        &tgt,
        StrongPotential::init(&spec, 1).unwrap(),
        MapNet::init(&MapSpec::new(2, &[8]), 2).unwrap(),
    )
    .unwrap();
    let rep = convexity_check(|y| out.potential.values(y), 2, 1000, 6.0, 1e-9, 3).unwrap();
    assert!(rep.passed(), "{rep:?}");
    let icnn: &IcnnNet = out.potential.icnn();
    assert!(icnn.params().nonneg_holds());
}
