//! Adaptation solvers.

pub mod ea;
pub mod oa;
pub mod toy;
