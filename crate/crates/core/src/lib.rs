//! Algorithmic core of the shopflow pipeline.
//!
//! Everything in this crate is pure: no filesystem, no sockets, no clocks.
//! Time always arrives as an argument in epoch milliseconds. The companion
//! `shopflow` crate supplies storage, HTTP surfaces and the CLI on top.
//!
//! Layout follows the flow of a shopping event:
//!
//! - [`event`]: the client event document accepted at collection time.
//! - [`raw`]: raw-record envelope, partition keys and the on-disk frame codec.
//! - [`transform`]: explode, sessionize, filter and aggregate operators plus
//!   DAG planning.
//! - [`quality`]: declarative expectations, suite evaluation and the gate.
//! - [`recsys`]: the next-item transition model, its evaluation, search and
//!   behavioural checklist.
//! - [`flow`]: flow specs, retry policies and the run-state fold.
//! - [`datagen`]: deterministic synthetic shoppers.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod datagen;
pub mod event;
pub mod flow;
pub mod hash;
pub mod quality;
pub mod raw;
pub mod recsys;
pub mod table;
pub mod transform;
