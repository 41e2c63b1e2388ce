//! Alternating min-max training of a potential and a transport map.
//!
//! The empirical objective is
//!
//! ```text
//! L(phi, T) = mean_n [<x_n, T(x_n)> - phi(T(x_n))] + mean_m phi(y_m)
//! ```
//!
//! minimized over `phi` and maximized over `T`. Every outer step runs `k_T`
//! Adam ascent steps on the map with the potential frozen, then one Adam
//! descent step on the potential (on a fresh batch) with the map frozen,
//! then projects the internal ICNN weights back onto the nonnegative orthant.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use crate::diffcore::{Gradients, Graph};
use crate::error::{Error, Result};
use crate::metrics::{loss_terms, map_l2_error_on};
use crate::nets::{Checkpoint, MapNet, StrongPotential, TransportMap};
use crate::optim::{Adam, AdamConfig, Direction};
use crate::random::{derive_seed, rng, Rng};
use crate::sampling::{PoolSampler, Sampler};
use crate::tensor::PointBatch;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    /// Map ascent steps per outer step (`k_T`).
    pub inner_steps: usize,
    /// Batches are `min(batch_cap, pool size)`.
    pub batch_cap: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Source and target pool sizes `N`, `M`.
    pub n_source: usize,
    pub n_target: usize,
    /// Draw every batch fresh from the samplers instead of from fixed pools.
    pub fresh_samples: bool,
    /// Record history every this many steps (and at the first and last).
    pub eval_every: usize,
    /// Points used for history losses and map errors.
    pub eval_size: usize,
    /// Wall-clock column in the history; zero when off, for byte-identical output.
    pub record_time: bool,
    pub checkpoint_every: Option<usize>,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 10_000,
            inner_steps: 10,
            batch_cap: 1024,
            adam: AdamConfig::default(),
            seed: 0,
            n_source: 10_000,
            n_target: 10_000,
            fresh_samples: false,
            eval_every: 1000,
            eval_size: 1024,
            record_time: true,
            checkpoint_every: None,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.steps == 0 || self.inner_steps == 0 {
            return bad(format!("steps ({}) and inner_steps ({}) must be >= 1", self.steps, self.inner_steps));
        }
        if !(self.adam.lr > 0.0) || !self.adam.lr.is_finite() {
            return bad(format!("learning rate must be > 0, got {}", self.adam.lr));
        }
        if self.batch_cap == 0 || self.eval_size == 0 || self.eval_every == 0 {
            return bad("batch_cap, eval_size and eval_every must be >= 1".into());
        }
        if !self.fresh_samples && (self.n_source == 0 || self.n_target == 0) {
            return bad("pool sizes must be >= 1".into());
        }
        if self.checkpoint_every == Some(0) {
            return bad("checkpoint_every must be >= 1".into());
        }
        if self.checkpoint_every.is_some() && self.checkpoint_dir.is_none() {
            return bad("checkpoint_every needs checkpoint_dir".into());
        }
        Ok(())
    }

    pub fn source_batch(&self) -> usize {
        if self.fresh_samples {
            self.batch_cap
        } else {
            self.batch_cap.min(self.n_source)
        }
    }

    pub fn target_batch(&self) -> usize {
        if self.fresh_samples {
            self.batch_cap
        } else {
            self.batch_cap.min(self.n_target)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainRecord {
    pub step: usize,
    pub loss: f64,
    pub holdout_loss: f64,
    pub map_error: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<TrainRecord>,
}

pub const HISTORY_SCHEMA: &str = "# OTMM-HISTORY1";
pub const HISTORY_HEADER: &str = "step,loss,holdout_loss,map_error,seconds";

impl TrainHistory {
    pub fn last(&self) -> Option<&TrainRecord> {
        self.records.last()
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{HISTORY_SCHEMA}\n{HISTORY_HEADER}\n");
        for r in &self.records {
            let err = r.map_error.map(|e| format!("{e:e}")).unwrap_or_default();
            let _ = writeln!(s, "{},{:e},{:e},{err},{:e}", r.step, r.loss, r.holdout_loss, r.seconds);
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut records = Vec::new();
        let mut header_seen = false;
        for (i, line) in text.lines().enumerate() {
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            if !header_seen {
                if line != HISTORY_HEADER {
                    return Err(Error::parse(i + 1, format!("expected header {HISTORY_HEADER}")));
                }
                header_seen = true;
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(Error::parse(i + 1, "expected 5 fields"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| Error::parse(i + 1, format!("bad number {s:?}")));
            records.push(TrainRecord {
                step: f[0].parse().map_err(|_| Error::parse(i + 1, "bad step"))?,
                loss: num(f[1])?,
                holdout_loss: num(f[2])?,
                map_error: if f[3].is_empty() { None } else { Some(num(f[3])?) },
                seconds: num(f[4])?,
            });
        }
        Ok(Self { records })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub potential: StrongPotential,
    pub map: MapNet,
    pub history: TrainHistory,
}

/// `L(phi, T)` on fixed batches.
pub fn empirical_loss(pot: &StrongPotential, map: &MapNet, x: &PointBatch, y: &PointBatch) -> Result<f64> {
    let (inner, outer) = loss_terms(pot, map, x, y)?;
    Ok(inner.iter().sum::<f64>() / inner.len() as f64 + outer.iter().sum::<f64>() / outer.len() as f64)
}

/// Loss and map-parameter gradients of `mean [<x, T(x)> - phi(T(x))]`.
pub fn map_gradients(pot: &StrongPotential, map: &MapNet, x: &PointBatch) -> Result<(f64, Gradients)> {
    let mut g = Graph::new();
    let xin = g.input(x.clone());
    let (t, leaves) = map.build(&mut g, xin, true)?;
    let xt = g.dot(xin, t)?;
    let (phi, _) = pot.build(&mut g, t, false)?;
    let diff = g.sub(xt, phi)?;
    let loss = g.mean(diff)?;
    g.backward(loss)?;
    let value = g.value(loss).item();
    Ok((value, Gradients(leaves.into_iter().map(|l| g.take_grad(l)).collect())))
}

/// Loss and potential-parameter gradients of `L` with the map frozen.
pub fn potential_gradients(pot: &StrongPotential, map: &MapNet, x: &PointBatch, y: &PointBatch) -> Result<(f64, Gradients)> {
    let t = map.forward(x)?;
    let xt: f64 = x.iter_rows().zip(t.iter_rows()).map(|(a, b)| crate::tensor::dot(a, b)).sum::<f64>() / x.rows() as f64;
    let mut g = Graph::new();
    let tin = g.input(t);
    let yin = g.input(y.clone());
    let (phi_t, lt) = pot.build(&mut g, tin, true)?;
    let (phi_y, ly) = pot.build(&mut g, yin, true)?;
    let mt = g.mean(phi_t)?;
    let my = g.mean(phi_y)?;
    let loss = g.sub(my, mt)?;
    g.backward(loss)?;
    let value = xt + g.value(loss).item();
    let grads = lt
        .into_iter()
        .zip(ly)
        .map(|(a, b)| {
            let mut ga = g.take_grad(a);
            let gb = g.take_grad(b);
            ga.as_mut_slice().iter_mut().zip(gb.as_slice()).for_each(|(u, v)| *u += v);
            ga
        })
        .collect();
    Ok((value, Gradients(grads)))
}

enum Batches<'a> {
    Pools(PoolSampler, PoolSampler),
    Fresh(&'a dyn Sampler, &'a dyn Sampler),
}

impl Batches<'_> {
    fn source(&self, n: usize, r: &mut Rng) -> Result<PointBatch> {
        match self {
            Batches::Pools(x, _) => x.sample(n, r),
            Batches::Fresh(x, _) => x.sample(n, r),
        }
    }

    fn target(&self, n: usize, r: &mut Rng) -> Result<PointBatch> {
        match self {
            Batches::Pools(_, y) => y.sample(n, r),
            Batches::Fresh(_, y) => y.sample(n, r),
        }
    }
}

pub fn train(
    cfg: &TrainConfig,
    source: &dyn Sampler,
    target: &dyn Sampler,
    pot: StrongPotential,
    map: MapNet,
) -> Result<TrainOutcome> {
    train_monitored(cfg, source, target, pot, map, None)
}

/// [`train`], additionally recording the map error against `truth`.
pub fn train_monitored(
    cfg: &TrainConfig,
    source: &dyn Sampler,
    target: &dyn Sampler,
    mut pot: StrongPotential,
    mut map: MapNet,
    truth: Option<&dyn TransportMap>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let dim = source.dim();
    for d in [target.dim(), pot.spec().dim, map.spec().dim] {
        if d != dim {
            return Err(Error::Dimension { expected: dim, got: d });
        }
    }
    let started = Instant::now();
    let batches = if cfg.fresh_samples {
        Batches::Fresh(source, target)
    } else {
        Batches::Pools(
            PoolSampler(source.sample_seeded(cfg.n_source, derive_seed(cfg.seed, 0))?),
            PoolSampler(target.sample_seeded(cfg.n_target, derive_seed(cfg.seed, 1))?),
        )
    };
    let mut batch_rng = rng(derive_seed(cfg.seed, 2));
    let eval_x = match &batches {
        Batches::Pools(x, _) => x.0.select_rows(&(0..cfg.eval_size.min(cfg.n_source)).collect::<Vec<_>>()),
        Batches::Fresh(s, _) => s.sample_seeded(cfg.eval_size, derive_seed(cfg.seed, 5))?,
    };
    let eval_y = match &batches {
        Batches::Pools(_, y) => y.0.select_rows(&(0..cfg.eval_size.min(cfg.n_target)).collect::<Vec<_>>()),
        Batches::Fresh(_, t) => t.sample_seeded(cfg.eval_size, derive_seed(cfg.seed, 6))?,
    };
    let mut hold_rng = rng(derive_seed(cfg.seed, 3));
    let hold_x = source.sample(cfg.eval_size, &mut hold_rng)?;
    let hold_y = target.sample(cfg.eval_size, &mut hold_rng)?;
    let test_x = source.sample_seeded(cfg.eval_size, derive_seed(cfg.seed, 4))?;

    let mut adam_map = Adam::new(cfg.adam, map.params());
    let mut adam_pot = Adam::new(cfg.adam, pot.params());
    let mut history = TrainHistory::default();
    let (bx, by) = (cfg.source_batch(), cfg.target_batch());

    let record = |step: usize, pot: &StrongPotential, map: &MapNet, history: &mut TrainHistory| -> Result<()> {
        history.records.push(TrainRecord {
            step,
            loss: empirical_loss(pot, map, &eval_x, &eval_y)?,
            holdout_loss: empirical_loss(pot, map, &hold_x, &hold_y)?,
            map_error: truth.map(|t| map_l2_error_on(map, t, &test_x).map(|e| e.mean)).transpose()?,
            seconds: if cfg.record_time { started.elapsed().as_secs_f64() } else { 0.0 },
        });
        Ok(())
    };
    record(0, &pot, &map, &mut history)?;

    for step in 1..=cfg.steps {
        let last_good = (pot.clone(), map.clone());
        let diverged = |loss: f64, (p, m): (StrongPotential, MapNet)| Error::Diverged {
            step,
            loss,
            last_good: Box::new(Checkpoint {
                potential: Some(p),
                map: Some(m),
            }),
        };
        for _ in 0..cfg.inner_steps {
            let x = batches.source(bx, &mut batch_rng)?;
            let (loss, grads) = map_gradients(&pot, &map, &x)?;
            if !loss.is_finite() || !grads.all_finite() {
                return Err(diverged(loss, last_good));
            }
            adam_map.step(map.params_mut(), &grads, Direction::Ascent);
        }
        let x = batches.source(bx, &mut batch_rng)?;
        let y = batches.target(by, &mut batch_rng)?;
        let (loss, grads) = potential_gradients(&pot, &map, &x, &y)?;
        if !loss.is_finite() || !grads.all_finite() {
            return Err(diverged(loss, last_good));
        }
        adam_pot.step(pot.params_mut(), &grads, Direction::Descent);
        pot.project_nonneg_in_place();
        if !pot.params().all_finite() || !map.params().all_finite() {
            return Err(diverged(f64::NAN, last_good));
        }

        if step % cfg.eval_every == 0 || step == cfg.steps {
            record(step, &pot, &map, &mut history)?;
        }
        if let (Some(every), Some(dir)) = (cfg.checkpoint_every, &cfg.checkpoint_dir) {
            if step % every == 0 || step == cfg.steps {
                Checkpoint {
                    potential: Some(pot.clone()),
                    map: Some(map.clone()),
                }
                .save(dir.join(format!("step{step:06}.otmm")))?;
            }
        }
    }
    Ok(TrainOutcome {
        potential: pot,
        map,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{MapSpec, PotentialSpec};
    use crate::sampling::MixtureSpec;
    use crate::tensor::Tensor;

    fn identity_map(dim: usize) -> MapNet {
        MapNet::from_layers(vec![(Tensor::identity(dim), Tensor::zeros(1, dim))]).unwrap()
    }

    #[test]
    fn loss_trivial_cases() {
        let pot = StrongPotential::pure_quadratic(2, 1.0).unwrap();
        let map = identity_map(2);
        let p = Tensor::row_vector(&[1.0, 0.0]);
        assert_eq!(empirical_loss(&pot, &map, &p, &p).unwrap(), 1.0);
        let z = Tensor::row_vector(&[0.0, 0.0]);
        assert_eq!(empirical_loss(&pot, &map, &z, &z).unwrap(), 0.0);
        assert!(empirical_loss(&pot, &map, &Tensor::zeros(0, 2), &z).is_err());
    }

    #[test]
    fn gradient_losses_match_forward() {
        let pot = StrongPotential::init(&PotentialSpec::new(2, &[8, 8]), 1).unwrap();
        let map = MapNet::init(&MapSpec::new(2, &[8]), 2).unwrap();
        let x = crate::random::normal_tensor(16, 2, &mut rng(3));
        let y = crate::random::normal_tensor(12, 2, &mut rng(4));
        let full = empirical_loss(&pot, &map, &x, &y).unwrap();
        let (lp, _) = potential_gradients(&pot, &map, &x, &y).unwrap();
        assert!((lp - full).abs() < 1e-12);
        let (lm, _) = map_gradients(&pot, &map, &x).unwrap();
        let phi_y: f64 = pot.forward(&y).unwrap().iter().sum::<f64>() / 12.0;
        assert!((lm + phi_y - full).abs() < 1e-12);
    }

    #[test]
    fn training_is_deterministic_and_keeps_weights_nonnegative() {
        let src = MixtureSpec::standard(2).unwrap();
        let cfg = TrainConfig {
            steps: 20,
            inner_steps: 2,
            n_source: 64,
            n_target: 64,
            eval_every: 5,
            eval_size: 32,
            record_time: false,
            ..TrainConfig::default()
        };
        let run = || {
            let pot = StrongPotential::init(&PotentialSpec::new(2, &[8, 8]), 1).unwrap();
            let map = MapNet::init(&MapSpec::new(2, &[8]), 2).unwrap();
            train_monitored(&cfg, &src, &src, pot, map, Some(&crate::nets::IdentityMap(2))).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.history, b.history);
        assert_eq!(a.history.records.iter().map(|r| r.step).collect::<Vec<_>>(), vec![0, 5, 10, 15, 20]);
        assert!(a.potential.params().nonneg_holds());
        assert_eq!(TrainHistory::from_csv(&a.history.to_csv()).unwrap(), a.history);
    }

    #[test]
    fn invalid_configs() {
        let base = TrainConfig::default();
        for cfg in [
            TrainConfig { steps: 0, ..base.clone() },
            TrainConfig { inner_steps: 0, ..base.clone() },
            TrainConfig { adam: AdamConfig::with_lr(0.0), ..base.clone() },
            TrainConfig { checkpoint_every: Some(5), ..base.clone() },
        ] {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        }
        assert_eq!(TrainConfig { n_source: 100, ..base.clone() }.source_batch(), 100);
        assert_eq!(base.source_batch(), 1024);
    }
}
