//! Auction engine for slot-based mobility resource allocation.
//!
//! A regulator sells a shared, per-slot mobility resource to users who bid
//! (travel time, price) pairs for trips of a known distance. Two mechanisms are
//! supported:
//!
//! - **pay-as-you-go** (`payg`): each user wins at most one bid, all-or-nothing;
//! - **pay-as-a-package** (`paap`): bids can be served fractionally over a
//!   multi-slot package.
//!
//! The crate provides:
//!
//! - core market types and an exact-undo capacity ledger ([`market`]),
//! - posted unit-price functions and mechanism constants ([`pricing`]),
//! - a dense two-phase simplex solver with dual extraction ([`simplex`]),
//! - travel-bundle feasibility via linear programming ([`bundle`]),
//! - the per-slot online auctions with dual-threshold admission ([`online`]),
//! - offline optimal oracles: column LP with duals and a branch-and-bound
//!   integer solver, plus endogenous price repair ([`offline`]),
//! - rolling-horizon operation wrapping both solver families ([`rolling`]),
//! - competitive-ratio, welfare, identity, and incentive audits ([`analysis`]),
//! - seeded demand generators ([`demand`]),
//! - scenario / trace / summary serialization ([`scenario`]).

pub mod analysis;
pub mod bundle;
pub mod demand;
pub mod error;
pub mod market;
pub mod offline;
pub mod online;
pub mod pricing;
pub mod rolling;
pub mod scenario;
pub mod simplex;

pub use error::{Error, Result};

/// Absolute tolerance used wherever a feasibility or equality comparison is
/// asserted on floating-point quantities.
pub const EPS: f64 = 1e-9;
