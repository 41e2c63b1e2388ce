//! Reverse-mode differentiation over dense `f64` matrices.
//!
//! Graphs are rebuilt for every batch. Parameters live in a [`ParamStore`]
//! outside the graph and are copied in as leaves; gradients come back as
//! [`Gradients`] aligned with the store.

mod gradcheck;
mod graph;
mod params;

pub use gradcheck::grad_check;
pub use graph::{celu, celu_derivative, Graph, NodeId, Op};
pub use params::{Gradients, Param, ParamId, ParamStore};
