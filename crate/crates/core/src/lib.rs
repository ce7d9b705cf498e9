//! Topology derivation for tree-structured wired networks from per-node
//! driving-point admittance measurements.
//!
//! The forward side ([`network`]) computes the admittance every node would
//! measure; [`noise`] perturbs it the way an admittance meter would; [`pair`]
//! inverts the admittances of a candidate (leaf, neighbor) pair into a branch
//! length and decides adjacency; [`derive`] peels the tree leaf by leaf.

pub mod derive;
pub mod error;
pub mod experiment;
pub mod line;
pub mod network;
pub mod noise;
pub mod pair;
pub mod stats;

pub use error::{Error, Result};
pub use num_complex::Complex64;
