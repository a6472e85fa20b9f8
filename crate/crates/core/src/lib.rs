//! Search-based generation of collision scenarios for a rule-based driving agent.
//!
//! Adversarial traffic vehicles (NPCs) are steered through a 3×3 grid drawn
//! around the ego vehicle. Each NPC follows a plan of position instructions
//! (target cell + target speed); a genetic search evolves those plans against
//! a deterministic 2D road simulator and a surrogate-safety fitness.
//!
//! The crate is `no_std` (with `alloc`) and performs no I/O. Persistence,
//! configuration files and the CLI live in the `gridfuzz` crate.
#![no_std]
#![forbid(unsafe_code)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod baselines;
pub mod ego;
pub mod error;
pub mod grid;
pub mod math;
pub mod metrics;
pub mod rng;
pub mod road;
pub mod scenario;
pub mod search;

pub use error::Error;
