//! Dual-sourcing inventory control.
//!
//! A firm replenishes one stock from a slow, cheap *regular* supplier and a fast,
//! expensive *expedited* one. This crate provides
//!
//! * [`dynamics`]: the period transition and cost, plus the compressed state used by
//!   exact methods;
//! * [`dp`]: average-cost value iteration on the compressed state space;
//! * [`heuristics`]: base stock, single/dual index, capped dual index and tailored
//!   base-surge policies with their parameter searches;
//! * [`nnc`]: neural-network controllers trained end to end through the simulated
//!   dynamics with a small reverse-mode autodiff tape;
//! * [`eval`]: Monte-Carlo evaluation with common random numbers, policy RMSE,
//!   Wilcoxon tests and steady-state projections.

pub mod demand;
pub mod dp;
pub mod dynamics;
pub mod error;
pub mod eval;
pub mod heuristics;
pub mod nnc;
pub mod rng;
pub mod sim;
pub mod special;

pub use demand::DemandModel;
pub use dynamics::{Action, CompressedState, CostParams, InventoryState};
pub use error::{Error, Result};
pub use rng::SimRng;
