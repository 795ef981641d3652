//! Numerical core for offline model-based safe reinforcement learning on a
//! hydrogen/diesel dual-fuel engine.
//!
//! The crate is `no_std` (it needs `alloc`) and carries no IO. It contains:
//!
//! - [`nn`]: dense and GRU layers with exact reverse-mode gradients, Adam,
//!   and global-norm gradient clipping.
//! - [`engine`]: the synthetic dual-fuel engine surrogate, multi-level PRBS
//!   excitation, and dataset assembly.
//! - [`sysid`]: the GRU encoder-decoder plant model, its training loop and
//!   RMSPE evaluation.
//! - [`env`]: the RL environment built around a trained plant model, with the
//!   staged tracking reward and the safe-polytope penalty.
//! - [`agents`]: TD3 and PPO trainers, policy evaluation and the
//!   state-augmentation ablation.
//! - [`runtime`]: the control-loop wire format, cascaded policy selection and
//!   the online hidden-state observer.
#![no_std]
// Range checks are written `!(a < b)` so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod agents;
pub mod engine;
pub mod env;
mod error;
pub mod math;
pub mod nn;
pub mod rng;
pub mod runtime;
pub mod sysid;

pub use error::{Error, Result};
