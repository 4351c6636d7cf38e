//! Few-shot environment adaptation for learned wireless transceivers.
//!
//! Two adaptation schemes are provided on top of a small network substrate
//! with channel-wise scale/shift adapters and a parameter-generating
//! hypernetwork:
//!
//! * effective adaptation ([`solver::ea`]): consensus inexact ADMM over all
//!   previous environments, then a second inexact ADMM that fits the
//!   hypernetwork and the new environment's adapters jointly;
//! * online adaptation ([`solver::oa`]): offline first-order MAML for the
//!   hypernetwork, then an inexact alternating direction method on the few
//!   new-environment samples alone, guarded by a descent monitor.
//!
//! Synthetic OFDM ([`env::ofdm`]) and mmWave beam-selection ([`env::mmwave`])
//! task generators, conventional baselines and an experiment harness sit
//! around them.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops read closer to the math in the numeric kernels.
#![allow(clippy::needless_range_loop)]

pub mod adapters;
pub mod baselines;
pub mod env;
pub mod error;
pub mod harness;
pub mod nn;
pub mod rng;
pub mod solver;
pub mod trace;

pub use adapters::{AdapterSpec, BaseModel, HyperNet};
pub use error::{Error, Result};
pub use nn::{Activation, LayerSpec, LossKind, Network, ParamVector, Sample};
