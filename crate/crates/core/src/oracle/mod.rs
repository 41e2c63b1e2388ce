//! Independent ground truth: closed-form Gaussian OT, one-dimensional
//! monotone rearrangement and exact small-instance assignment.

mod assignment;
mod gaussian;
pub mod linalg;
mod monotone;

pub use assignment::{discrete_assignment, Assignment, MAX_ASSIGNMENT_SIZE};
pub use gaussian::{gaussian_ot_map, AffineMap, QuadraticPotential};
pub use monotone::{monotone_map_1d, MonotoneMap};
