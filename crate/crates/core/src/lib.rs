//! Scheduling core for EV charging on tree-shaped distribution grids with
//! cable capacities and local solar generation.
//!
//! The crate is `no_std` (with `alloc`) and contains no IO.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod fleet;
pub mod grid;
pub mod ledger;
pub mod sgs;
pub mod lns;
pub mod metrics;
pub mod sampler;
pub mod sim;
