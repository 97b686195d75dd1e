//! Deterministic simulation core for bilateral (reflect-before-commit) links.
//!
//! The crate is `no_std` and only needs `alloc`. It contains:
//!
//! * [`kernel`]: a virtual-time event scheduler and labelled seeded RNG streams.
//! * [`ledger`]: token conservation accounting.
//! * [`ae`]: the bilateral link, two identical peers exchanging
//!   propose / reflect / confirm tokens, with reversal and recovery.
//! * [`fito`]: the timeout-and-retry baseline with omniscient ground truth.
//! * [`flap`]: per-link flap schedules and the cluster inter-flap law.
//! * [`topology`]: triangles, octavalent grids and triangle-coordinated 2PC
//!   recovery of a failed link.
//! * [`sync`]: causal event DAGs, their lossy projections, bilateral
//!   reconciliation, a dataless-file facade store and its audits.
//! * [`harness`]: scenarios, the network driver and metrics rows.
//!
//! IO, file formats and the command line live in the `oae-sim` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod ae;
pub mod fito;
pub mod flap;
pub mod harness;
pub mod kernel;
pub mod ledger;
pub mod sync;
pub mod topology;

mod ids;

pub use ids::{Digest, LinkId, NodeId, TokenId};
pub use kernel::VirtualTime;
