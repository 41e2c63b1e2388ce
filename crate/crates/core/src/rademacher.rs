//! Monte-Carlo estimates of empirical Rademacher complexity and
//! representativeness for the potential class `F` and the composite class
//! `H = { x -> <x, T(x)> - phi(T(x)) }`.
//!
//! The supremum over a neural class is not concave in the parameters. It is
//! approximated by projected Adam ascent with several restarts, so every
//! reported value is an estimate (lower bound) of the true supremum.
//!
//! The analytic bounds built from weight-norm products (with their
//! unspecified constants) are not computed here; only the sample-size trend
//! is observable.

use rayon::prelude::*;

use crate::diffcore::{Gradients, Graph, NodeId};
use crate::error::{Error, Result};
use crate::nets::{MapNet, MapSpec, PotentialSpec, StrongPotential};
use crate::optim::{Adam, AdamConfig, Direction};
use crate::random::{derive_seed, rng};
use crate::sampling::Sampler;
use crate::tensor::{PointBatch, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub enum ClassKind {
    /// Strongly convex potentials of a fixed architecture.
    Potential(PotentialSpec),
    /// `<x, T(x)> - phi(T(x))` over maps and potentials.
    Composite(PotentialSpec, MapSpec),
    /// A single frozen potential.
    Fixed(StrongPotential),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionClassSpec {
    pub kind: ClassKind,
    /// Every parameter array is kept inside a Frobenius ball of this radius.
    pub weight_bound: f64,
    /// Ascent steps per restart.
    pub steps: usize,
    pub restarts: usize,
    pub lr: f64,
}

impl FunctionClassSpec {
    pub fn new(kind: ClassKind) -> Self {
        Self {
            kind,
            weight_bound: 1.0,
            steps: 200,
            restarts: 8,
            lr: 1e-2,
        }
    }

    pub fn label(&self) -> &'static str {
        match self.kind {
            ClassKind::Potential(_) => "F",
            ClassKind::Composite(..) => "H",
            ClassKind::Fixed(_) => "singleton",
        }
    }

    fn dim(&self) -> usize {
        match &self.kind {
            ClassKind::Potential(p) | ClassKind::Composite(p, _) => p.dim,
            ClassKind::Fixed(p) => p.spec().dim,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.weight_bound > 0.0) || self.steps == 0 || self.restarts == 0 || !(self.lr > 0.0) {
            return Err(Error::Config(format!(
                "class search needs weight_bound > 0, steps >= 1, restarts >= 1, lr > 0 (got {self:?})"
            )));
        }
        if let ClassKind::Composite(p, m) = &self.kind {
            if p.dim != m.dim {
                return Err(Error::Dimension { expected: p.dim, got: m.dim });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum Member {
    Potential(StrongPotential),
    Composite(StrongPotential, MapNet),
}

impl Member {
    fn init(spec: &FunctionClassSpec, seed: u64) -> Result<Self> {
        let mut m = match &spec.kind {
            ClassKind::Potential(p) => Member::Potential(StrongPotential::init(p, seed)?),
            ClassKind::Composite(p, t) => Member::Composite(
                StrongPotential::init(p, derive_seed(seed, 0))?,
                MapNet::init(t, derive_seed(seed, 1))?,
            ),
            ClassKind::Fixed(p) => Member::Potential(p.clone()),
        };
        if !matches!(spec.kind, ClassKind::Fixed(_)) {
            m.project(spec.weight_bound);
        }
        Ok(m)
    }

    fn project(&mut self, bound: f64) {
        let (pot, map) = match self {
            Member::Potential(p) => (p, None),
            Member::Composite(p, t) => (p, Some(t)),
        };
        pot.project_nonneg_in_place();
        let store = pot.params_mut();
        for i in 0..store.len() {
            store.clip_norm(crate::diffcore::ParamId(i), bound);
        }
        if let Some(t) = map {
            let store = t.params_mut();
            for i in 0..store.len() {
                store.clip_norm(crate::diffcore::ParamId(i), bound);
            }
        }
    }

    /// Member values on `z`, one per row.
    fn values(&self, z: &PointBatch) -> Result<Vec<f64>> {
        match self {
            Member::Potential(p) => p.forward(z),
            Member::Composite(p, t) => {
                let tz = t.forward(z)?;
                let phi = p.forward(&tz)?;
                Ok(z.iter_rows()
                    .zip(tz.iter_rows())
                    .zip(phi)
                    .map(|((a, b), f)| crate::tensor::dot(a, b) - f)
                    .collect())
            }
        }
    }

    /// `sum_i w_i f(z_i)` and its parameter gradients (potential first).
    fn weighted(&self, z: &PointBatch, w: &Tensor) -> Result<(f64, Vec<Gradients>)> {
        let mut g = Graph::new();
        let zin = g.input(z.clone());
        let win = g.input(w.clone());
        let (out, groups): (NodeId, Vec<Vec<NodeId>>) = match self {
            Member::Potential(p) => {
                let (phi, leaves) = p.build(&mut g, zin, true)?;
                (phi, vec![leaves])
            }
            Member::Composite(p, t) => {
                let (tz, lt) = t.build(&mut g, zin, true)?;
                let xt = g.dot(zin, tz)?;
                let (phi, lp) = p.build(&mut g, tz, true)?;
                (g.sub(xt, phi)?, vec![lp, lt])
            }
        };
        let prod = g.dot(out, win)?;
        let total = g.sum(prod);
        g.backward(total)?;
        let value = g.value(total).item();
        let grads = groups
            .into_iter()
            .map(|ls| Gradients(ls.into_iter().map(|l| g.take_grad(l)).collect()))
            .collect();
        Ok((value, grads))
    }

    fn adam(&self, cfg: AdamConfig) -> Vec<Adam> {
        match self {
            Member::Potential(p) => vec![Adam::new(cfg, p.params())],
            Member::Composite(p, t) => vec![Adam::new(cfg, p.params()), Adam::new(cfg, t.params())],
        }
    }

    fn step(&mut self, opt: &mut [Adam], grads: &[Gradients]) {
        match self {
            Member::Potential(p) => opt[0].step(p.params_mut(), &grads[0], Direction::Ascent),
            Member::Composite(p, t) => {
                opt[0].step(p.params_mut(), &grads[0], Direction::Ascent);
                opt[1].step(t.params_mut(), &grads[1], Direction::Ascent);
            }
        }
    }
}

/// Approximate `sup_f sum_i w_i f(z_i)`; `None` if every restart diverged.
fn class_sup(spec: &FunctionClassSpec, z: &PointBatch, w: &Tensor, seed: u64) -> Result<Option<f64>> {
    if let ClassKind::Fixed(p) = &spec.kind {
        let v = p.forward(z)?;
        return Ok(Some(v.iter().zip(w.as_slice()).map(|(a, b)| a * b).sum()));
    }
    let mut best: Option<f64> = None;
    for r in 0..spec.restarts {
        let mut member = Member::init(spec, derive_seed(seed, r as u64))?;
        let mut opt = member.adam(AdamConfig::with_lr(spec.lr));
        for _ in 0..spec.steps {
            let (value, grads) = member.weighted(z, w)?;
            if !value.is_finite() || grads.iter().any(|g| !g.all_finite()) {
                break;
            }
            best = Some(best.map_or(value, |b| b.max(value)));
            member.step(&mut opt, &grads);
            member.project(spec.weight_bound);
        }
        // the final iterate is a class member too
        let v: f64 = member.values(z)?.iter().zip(w.as_slice()).map(|(a, b)| a * b).sum();
        if v.is_finite() {
            best = Some(best.map_or(v, |b| b.max(v)));
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexityEstimate {
    /// Mean over the retained sigma draws of the approximate supremum.
    pub estimate: f64,
    /// Sample standard deviation over draws divided by `sqrt(draws)`.
    pub stderr: f64,
    pub draws: usize,
    pub sample_size: usize,
    /// Draws dropped because every restart diverged.
    pub flagged: usize,
}

pub const COMPLEXITY_CSV_HEADER: &str = "class,sample_size,draws,estimate,stderr";

impl ComplexityEstimate {
    fn from_draws(values: &[f64], sample_size: usize, flagged: usize) -> Self {
        let e = crate::metrics::Estimate::from_values(values);
        Self {
            estimate: e.mean,
            stderr: e.stderr,
            draws: values.len(),
            sample_size,
            flagged,
        }
    }

    pub fn csv_row(&self, class: &str) -> String {
        format!("{class},{},{},{},{}", self.sample_size, self.draws, self.estimate, self.stderr)
    }
}

fn sigma(m: usize, seed: u64) -> Vec<f64> {
    use rand::Rng as _;
    let mut r = rng(seed);
    (0..m).map(|_| if r.random::<bool>() { 1.0 } else { -1.0 }).collect()
}

/// `E_sigma sup_f (1/M) sum_i sigma_i f(y_i)` over `draws` sign vectors.
pub fn empirical_rademacher(
    spec: &FunctionClassSpec,
    sample: &PointBatch,
    draws: usize,
    seed: u64,
) -> Result<ComplexityEstimate> {
    spec.validate()?;
    if draws == 0 {
        return Err(Error::Config("need at least one sigma draw".into()));
    }
    if sample.rows() == 0 {
        return Err(Error::EmptyBatch("rademacher sample"));
    }
    crate::nets::check_dim(spec.dim(), sample)?;
    let m = sample.rows();
    let sups: Vec<Option<f64>> = (0..draws)
        .into_par_iter()
        .map(|s| {
            let ds = derive_seed(seed, s as u64);
            let w = Tensor::from_vec(m, 1, sigma(m, ds).iter().map(|v| v / m as f64).collect())?;
            class_sup(spec, sample, &w, derive_seed(ds, 1))
        })
        .collect::<Result<_>>()?;
    let kept: Vec<f64> = sups.iter().flatten().copied().collect();
    let flagged = draws - kept.len();
    if flagged > 0 {
        eprintln!("warning: {flagged} of {draws} sigma draws diverged and were excluded");
    }
    if kept.is_empty() {
        return Err(Error::numerical("empirical_rademacher", "every sigma draw diverged"));
    }
    Ok(ComplexityEstimate::from_draws(&kept, m, flagged))
}

/// `sup_f |E_ref f - mean_sample f|`, with the reference mean taken over
/// `n_ref` draws (default `max(10 M, 10^4)`).
pub fn representativeness(
    spec: &FunctionClassSpec,
    sample: &PointBatch,
    reference: &(impl Sampler + ?Sized),
    n_ref: Option<usize>,
    seed: u64,
) -> Result<f64> {
    spec.validate()?;
    let m = sample.rows();
    if m == 0 {
        return Err(Error::EmptyBatch("representativeness sample"));
    }
    crate::nets::check_dim(spec.dim(), sample)?;
    let n_ref = n_ref.unwrap_or((10 * m).max(10_000));
    let refs = reference.sample_seeded(n_ref, derive_seed(seed, 0))?;
    let mut z = Tensor::zeros(n_ref + m, sample.cols());
    for i in 0..n_ref {
        z.row_mut(i).copy_from_slice(refs.row(i));
    }
    for i in 0..m {
        z.row_mut(n_ref + i).copy_from_slice(sample.row(i));
    }
    let mut best: Option<f64> = None;
    for (k, sign) in [1.0, -1.0].into_iter().enumerate() {
        let w: Vec<f64> = (0..n_ref + m)
            .map(|i| if i < n_ref { sign / n_ref as f64 } else { -sign / m as f64 })
            .collect();
        let w = Tensor::from_vec(n_ref + m, 1, w)?;
        if let Some(v) = class_sup(spec, &z, &w, derive_seed(seed, 1 + k as u64))? {
            best = Some(best.map_or(v, |b| b.max(v)));
        }
    }
    best.map(|b| b.max(0.0))
        .ok_or_else(|| Error::numerical("representativeness", "every restart diverged"))
}

/// Exact estimator for a finite class given by each member's values on the
/// sample; the supremum is taken by enumeration.
pub fn finite_class_rademacher(members: &[Vec<f64>], draws: usize, seed: u64) -> Result<ComplexityEstimate> {
    let Some(first) = members.first() else {
        return Err(Error::Config("finite class is empty".into()));
    };
    let m = first.len();
    if m == 0 || members.iter().any(|v| v.len() != m) {
        return Err(Error::SizeMismatch("every member needs one value per sample point".into()));
    }
    if draws == 0 {
        return Err(Error::Config("need at least one sigma draw".into()));
    }
    let sups: Vec<f64> = (0..draws)
        .map(|s| {
            let sig = sigma(m, derive_seed(seed, s as u64));
            members
                .iter()
                .map(|v| v.iter().zip(&sig).map(|(a, b)| a * b).sum::<f64>() / m as f64)
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    Ok(ComplexityEstimate::from_draws(&sups, m, 0))
}
