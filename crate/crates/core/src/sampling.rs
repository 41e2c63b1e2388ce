//! Point samplers.

use crate::error::{Error, Result};
use crate::nets::TransportMap;
use crate::oracle::linalg::{cholesky, is_symmetric, spd_eigen};
use crate::random::{rng, standard_normal, Rng};
use crate::tensor::{PointBatch, Tensor};

pub trait Sampler: Send + Sync {
    fn dim(&self) -> usize;
    fn sample(&self, n: usize, rng: &mut Rng) -> Result<PointBatch>;

    fn sample_seeded(&self, n: usize, seed: u64) -> Result<PointBatch> {
        self.sample(n, &mut rng(seed))
    }
}

impl<S: Sampler + ?Sized> Sampler for &S {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn sample(&self, n: usize, rng: &mut Rng) -> Result<PointBatch> {
        (**self).sample(n, rng)
    }
}

impl<S: Sampler + ?Sized> Sampler for Box<S> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn sample(&self, n: usize, rng: &mut Rng) -> Result<PointBatch> {
        (**self).sample(n, rng)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub cov: Tensor,
}

/// Finite Gaussian mixture in `R^D`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    dim: usize,
    components: Vec<GaussianComponent>,
    factors: Vec<Tensor>,
}

impl MixtureSpec {
    pub fn new(components: Vec<GaussianComponent>) -> Result<Self> {
        let Some(first) = components.first() else {
            return Err(Error::Config("mixture needs at least one component".into()));
        };
        let dim = first.mean.len();
        if dim == 0 {
            return Err(Error::Config("mixture dimension must be >= 1".into()));
        }
        let mut total = 0.0;
        let mut factors = Vec::with_capacity(components.len());
        for (k, c) in components.iter().enumerate() {
            if c.mean.len() != dim || c.cov.shape() != (dim, dim) {
                return Err(Error::SizeMismatch(format!("component {k} does not have dimension {dim}")));
            }
            if !(c.weight >= 0.0) {
                return Err(Error::Config(format!("component {k} has negative weight {}", c.weight)));
            }
            if !is_symmetric(&c.cov, 1e-12) {
                return Err(Error::NotPositiveDefinite(format!("component {k} covariance is not symmetric")));
            }
            spd_eigen(&c.cov, "component covariance")
                .map_err(|e| Error::NotPositiveDefinite(format!("component {k}: {e}")))?;
            factors.push(cholesky(&c.cov)?);
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("mixture weights sum to {total}, not 1")));
        }
        Ok(Self {
            dim,
            components,
            factors,
        })
    }

    pub fn gaussian(mean: Vec<f64>, cov: Tensor) -> Result<Self> {
        Self::new(vec![GaussianComponent { weight: 1.0, mean, cov }])
    }

    pub fn standard(dim: usize) -> Result<Self> {
        Self::gaussian(vec![0.0; dim], Tensor::identity(dim))
    }

    pub fn components(&self) -> &[GaussianComponent] {
        &self.components
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for c in &self.components {
            m.iter_mut().zip(&c.mean).for_each(|(a, b)| *a += c.weight * b);
        }
        m
    }
}

impl Sampler for MixtureSpec {
    fn dim(&self) -> usize {
        self.dim
    }

    fn sample(&self, n: usize, rng: &mut Rng) -> Result<PointBatch> {
        use rand::Rng as _;
        let mut out = Tensor::zeros(n, self.dim);
        let mut z = vec![0.0; self.dim];
        for i in 0..n {
            let k = if self.components.len() == 1 {
                0
            } else {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut pick = self.components.len() - 1;
                for (k, c) in self.components.iter().enumerate() {
                    acc += c.weight;
                    if u < acc && c.weight > 0.0 {
                        pick = k;
                        break;
                    }
                }
                while self.components[pick].weight == 0.0 {
                    pick -= 1;
                }
                pick
            };
            z.iter_mut().for_each(|v| *v = standard_normal(rng));
            let (c, l) = (&self.components[k], &self.factors[k]);
            for (j, o) in out.row_mut(i).iter_mut().enumerate() {
                *o = c.mean[j] + crate::tensor::dot(&l.row(j)[..=j], &z[..=j]);
            }
        }
        Ok(out)
    }
}

/// Seeded draw of `n` mixture points.
pub fn sample_mixture(spec: &MixtureSpec, n: usize, seed: u64) -> Result<PointBatch> {
    if n == 0 {
        return Err(Error::EmptyBatch("sample_mixture needs n >= 1"));
    }
    spec.sample_seeded(n, seed)
}

/// Distribution of `T(x)` for `x` from `source`.
pub struct Pushforward<S, T> {
    pub source: S,
    pub map: T,
}

impl<S: Sampler, T: TransportMap> Sampler for Pushforward<S, T> {
    fn dim(&self) -> usize {
        self.map.dim()
    }
    fn sample(&self, n: usize, rng: &mut Rng) -> Result<PointBatch> {
        let x = self.source.sample(n, rng)?;
        self.map.apply(&x)
    }
}

/// Uniform draws with replacement from a fixed pool.
#[derive(Debug, Clone)]
pub struct PoolSampler(pub PointBatch);

impl Sampler for PoolSampler {
    fn dim(&self) -> usize {
        self.0.cols()
    }
    fn sample(&self, n: usize, rng: &mut Rng) -> Result<PointBatch> {
        use rand::Rng as _;
        if self.0.rows() == 0 {
            return Err(Error::EmptyBatch("empty pool"));
        }
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..self.0.rows())).collect();
        Ok(self.0.select_rows(&idx))
    }
}

/// Deterministic sampler that cycles through fixed points in order,
/// ignoring the random stream. Drawing exactly `len` points returns the set.
#[derive(Debug, Clone)]
pub struct FixedPoints(pub PointBatch);

impl Sampler for FixedPoints {
    fn dim(&self) -> usize {
        self.0.cols()
    }
    fn sample(&self, n: usize, _rng: &mut Rng) -> Result<PointBatch> {
        if self.0.rows() == 0 {
            return Err(Error::EmptyBatch("no fixed points"));
        }
        let idx: Vec<usize> = (0..n).map(|i| i % self.0.rows()).collect();
        Ok(self.0.select_rows(&idx))
    }
}

/// Sample mean and covariance (divisor `n - 1`).
pub fn moments(x: &PointBatch) -> (Vec<f64>, Tensor) {
    let (n, d) = x.shape();
    let mut mean = vec![0.0; d];
    for r in x.iter_rows() {
        mean.iter_mut().zip(r).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = Tensor::zeros(d, d);
    for r in x.iter_rows() {
        for i in 0..d {
            for j in 0..d {
                cov[(i, j)] += (r[i] - mean[i]) * (r[j] - mean[j]);
            }
        }
    }
    let denom = (n.max(2) - 1) as f64;
    cov.as_mut_slice().iter_mut().for_each(|v| *v /= denom);
    (mean, cov)
}
