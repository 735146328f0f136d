//! Equilibrium propagation for rate-based and leaky integrate-and-fire
//! networks.
//!
//! - [`network`]: layered topology, weights, seeded RNG streams, checkpoints
//! - [`nonlinearity`]: ReLU, the LIF f–I curve and its rate-model form
//! - [`energy`]: energy, dynamics and Euler relaxation of the rate network
//! - [`rate`]: two-phase training of the rate network
//! - [`lif`]: spiking network and its online learning rule
//! - [`task`]: the two-joint arm regression task
//! - [`gradcheck`]: brute-force checks of the gradient estimate
//! - [`harness`]: configs, presets, training runs and checkpoints

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod energy;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod lif;
pub mod network;
pub mod nonlinearity;
pub mod rate;
pub mod task;

pub use error::{Error, Result};
