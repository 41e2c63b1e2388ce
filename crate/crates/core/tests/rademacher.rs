//! Rademacher estimators on classes whose answer is known.

use otmm::nets::{MapSpec, PotentialSpec, StrongPotential};
use otmm::rademacher::{empirical_rademacher, finite_class_rademacher, representativeness, ClassKind, FunctionClassSpec};
use otmm::random::{normal_tensor, rng};
use otmm::MixtureSpec;

#[test]
fn finite_classes_by_enumeration() {
    // {v, -v}: the supremum is |mean sigma_i v_i|; with one point it is |v|
    let r = finite_class_rademacher(&[vec![2.0], vec![-2.0]], 50, 1).unwrap();
    assert_eq!((r.estimate, r.stderr), (2.0, 0.0));
    let r = finite_class_rademacher(&[vec![0.0; 5]], 50, 1).unwrap();
    assert_eq!(r.estimate, 0.0);
    // {e_1, ..., e_M}: sup_j sigma_j / M is 1/M unless every sign is negative
    let m = 4;
    let members: Vec<Vec<f64>> = (0..m).map(|j| (0..m).map(|i| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    let r = finite_class_rademacher(&members, 4000, 2).unwrap();
    let exact = (1.0 - 2.0 * 0.5f64.powi(m as i32)) / m as f64;
    assert!((r.estimate - exact).abs() <= 4.0 * r.stderr, "{} +- {} vs {exact}", r.estimate, r.stderr);
    assert!(finite_class_rademacher(&[vec![1.0], vec![1.0, 2.0]], 5, 0).is_err());
}

#[test]
fn singleton_class_is_centered() {
    let psi = StrongPotential::init(&PotentialSpec::new(2, &[8]), 3).unwrap();
    let spec = FunctionClassSpec::new(ClassKind::Fixed(psi));
    let sample = normal_tensor(256, 2, &mut rng(4));
    let r = empirical_rademacher(&spec, &sample, 400, 5).unwrap();
    assert!(r.estimate.abs() <= 3.0 * r.stderr, "{} +- {}", r.estimate, r.stderr);
    assert_eq!(r.flagged, 0);
}

#[test]
fn neural_classes_are_positive_and_deterministic() {
    let sample = normal_tensor(64, 2, &mut rng(1));
    let f = FunctionClassSpec {
        steps: 30,
        restarts: 2,
        ..FunctionClassSpec::new(ClassKind::Potential(PotentialSpec::new(2, &[4])))
    };
    let a = empirical_rademacher(&f, &sample, 6, 9).unwrap();
    let b = empirical_rademacher(&f, &sample, 6, 9).unwrap();
    assert_eq!(a, b);
    assert!(a.estimate > 0.0);
    let h = FunctionClassSpec {
        steps: 30,
        restarts: 2,
        ..FunctionClassSpec::new(ClassKind::Composite(PotentialSpec::new(2, &[4]), MapSpec::new(2, &[4])))
    };
    assert!(empirical_rademacher(&h, &sample, 4, 9).unwrap().estimate > 0.0);
    assert_eq!(f.label(), "F");
    assert_eq!(h.label(), "H");
}

#[test]
fn more_search_never_lowers_the_supremum() {
    let sample = normal_tensor(64, 2, &mut rng(2));
    let base = FunctionClassSpec::new(ClassKind::Potential(PotentialSpec::new(2, &[4])));
    let short = FunctionClassSpec { steps: 5, restarts: 1, ..base.clone() };
    let long = FunctionClassSpec { steps: 60, restarts: 1, ..base };
    // identical sigma draws and starts; the running maximum only grows
    let (s, l) = (empirical_rademacher(&short, &sample, 5, 3).unwrap(), empirical_rademacher(&long, &sample, 5, 3).unwrap());
    assert!(l.estimate >= s.estimate - 1e-12);
}

#[test]
fn representativeness_is_nonnegative() {
    let src = MixtureSpec::standard(2).unwrap();
    let spec = FunctionClassSpec {
        steps: 20,
        restarts: 1,
        ..FunctionClassSpec::new(ClassKind::Potential(PotentialSpec::new(2, &[4])))
    };
    let sample = normal_tensor(50, 2, &mut rng(6));
    let r = representativeness(&spec, &sample, &src, Some(2000), 7).unwrap();
    assert!(r >= 0.0 && r.is_finite());
}
