//! Parametric families: ReLU MLP transport maps and input-convex potentials.

mod checkpoint;
mod convexity;
mod icnn;
mod mlp;

pub use checkpoint::Checkpoint;
pub use convexity::{convexity_check, ConvexityReport};
pub use icnn::{Activation, IcnnNet, PotentialSpec, SkipKind, StrongPotential};
pub use mlp::{MapNet, MapSpec};

use crate::error::{Error, Result};
use crate::tensor::PointBatch;

/// Anything that pushes a batch of points to another batch of the same dimension.
pub trait TransportMap: Send + Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &PointBatch) -> Result<PointBatch>;
}

/// A convex potential that can report values and input gradients on a batch.
pub trait Potential: Send + Sync {
    fn dim(&self) -> usize;

    /// A lower bound on the strong-convexity modulus.
    fn strong_convexity(&self) -> f64;

    fn values(&self, y: &PointBatch) -> Result<Vec<f64>>;

    /// Values and gradients with respect to the input, one row per point.
    fn values_and_grads(&self, y: &PointBatch) -> Result<(Vec<f64>, PointBatch)>;
}

impl<T: TransportMap + ?Sized> TransportMap for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn apply(&self, x: &PointBatch) -> Result<PointBatch> {
        (**self).apply(x)
    }
}

impl<P: Potential + ?Sized> Potential for &P {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn strong_convexity(&self) -> f64 {
        (**self).strong_convexity()
    }
    fn values(&self, y: &PointBatch) -> Result<Vec<f64>> {
        (**self).values(y)
    }
    fn values_and_grads(&self, y: &PointBatch) -> Result<(Vec<f64>, PointBatch)> {
        (**self).values_and_grads(y)
    }
}

/// The identity map on `R^dim`.
#[derive(Debug, Clone, Copy)]
pub struct IdentityMap(pub usize);

impl TransportMap for IdentityMap {
    fn dim(&self) -> usize {
        self.0
    }
    fn apply(&self, x: &PointBatch) -> Result<PointBatch> {
        check_dim(self.0, x)?;
        Ok(x.clone())
    }
}

/// `T = grad(psi)` for a potential `psi`.
#[derive(Debug, Clone)]
pub struct GradientMap<P>(pub P);

impl<P: Potential> TransportMap for GradientMap<P> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn apply(&self, x: &PointBatch) -> Result<PointBatch> {
        Ok(self.0.values_and_grads(x)?.1)
    }
}

/// Either family, as produced by [`init`].
#[derive(Debug, Clone, PartialEq)]
pub enum Net {
    Map(MapNet),
    Potential(StrongPotential),
}

#[derive(Debug, Clone, PartialEq)]
pub enum NetSpec {
    Map(MapSpec),
    Potential(PotentialSpec),
}

/// Deterministic initialization of either family from a seed.
pub fn init(spec: &NetSpec, seed: u64) -> Result<Net> {
    Ok(match spec {
        NetSpec::Map(s) => Net::Map(MapNet::init(s, seed)?),
        NetSpec::Potential(s) => Net::Potential(StrongPotential::init(s, seed)?),
    })
}

pub(crate) fn check_dim(expected: usize, x: &PointBatch) -> Result<()> {
    if x.cols() != expected {
        return Err(Error::Dimension {
            expected,
            got: x.cols(),
        });
    }
    Ok(())
}

pub(crate) fn check_widths(widths: &[usize]) -> Result<()> {
    if let Some(i) = widths.iter().position(|&w| w == 0) {
        return Err(Error::Config(format!("layer {i} has zero width")));
    }
    Ok(())
}
