//! Minimax semi-dual solver for quadratic-cost optimal transport.
//!
//! A convex potential (an input convex network plus a strongly convex
//! quadratic) and a transport map (a ReLU MLP) are trained against each
//! other. Around the solver sit ground-truth benchmark pairs, exact oracles,
//! conjugate-based duality gaps, Rademacher-complexity estimators and the
//! experiment sweeps that measure how the map error scales with sample size
//! and network width.

pub mod benchmark;
pub mod conjugate;
pub mod diffcore;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod minimax;
pub mod nets;
pub mod optim;
pub mod oracle;
pub mod rademacher;
pub mod random;
pub mod sampling;
pub mod tensor;

pub use error::{Error, Result};
pub use nets::{MapNet, MapSpec, Potential, PotentialSpec, StrongPotential, TransportMap};
pub use tensor::{PointBatch, Tensor};
pub use benchmark::{make_benchmark_pair, make_gaussian_pair, BenchmarkPair};
pub use sampling::{sample_mixture, MixtureSpec, Sampler};
