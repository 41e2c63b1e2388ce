//! Adam with bias correction.

use crate::diffcore::{Gradients, ParamStore};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// Whether a step lowers or raises the objective whose gradient is given.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Descent,
    Ascent,
}

/// Per-network optimizer state. Moments are never reset.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig, store: &ParamStore) -> Self {
        let zeros = store.zeros_like().0;
        Self {
            cfg,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients, dir: Direction) {
        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let sign = match dir {
            Direction::Descent => -1.0,
            Direction::Ascent => 1.0,
        };
        for (((p, g), m), v) in store
            .iter_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            let (pv, gv) = (p.value.as_mut_slice(), g.as_slice());
            let (mv, vv) = (m.as_mut_slice(), v.as_mut_slice());
            for i in 0..pv.len() {
                mv[i] = beta1 * mv[i] + (1.0 - beta1) * gv[i];
                vv[i] = beta2 * vv[i] + (1.0 - beta2) * gv[i] * gv[i];
                let mhat = mv[i] / bc1;
                let vhat = vv[i] / bc2;
                pv[i] += sign * lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}
