//! Downlink cooperative beamforming with interference transmission and
//! cancellation (CB-ITC) for a cellular-connected UAV.
//!
//! The library models a hexagonal cellular deployment in which a set of base
//! stations already serves terrestrial users on the UAV's resource block
//! (the *occupied* BSs) while the remaining eligible ones (the *available*
//! BSs) jointly serve the UAV. Besides transmitting the UAV's own symbol
//! coherently, the available BSs also retransmit the terrestrial users'
//! symbols in anti-phase so that the terrestrial interference cancels at the
//! UAV receiver. The crate provides:
//!
//! - [`topology`]: hexagonal cell grid geometry and tier neighborhoods,
//! - [`channel`]: probabilistic LoS/NLoS air-to-ground channel with a
//!   synthesized vertical ULA antenna pattern,
//! - [`scheduler`]: terrestrial resource-block occupation and UAV serving-BS
//!   eligibility,
//! - [`beamforming`]: SINR expressions and closed-form optimal power
//!   allocations for the single-serving-BS case,
//! - [`solver`]: the general-case optimum via a second-order cone program and
//!   an in-house primal-dual interior-point solver,
//! - [`distributed`]: the divide-and-conquer interference-splitting protocol
//!   with open-loop and closed-loop variants,
//! - [`harness`]: seeded Monte-Carlo experiments comparing the schemes, with
//!   CSV output.

pub mod beamforming;
pub mod channel;
pub mod distributed;
mod error;
pub mod harness;
pub mod scheduler;
pub mod solver;
pub mod topology;

pub use error::{Error, Result};
