//! Deterministic packet-level simulator of a point-to-point 802.11a link.
//!
//! The channel is either replayed from per-link SNR traces or computed from
//! analytic propagation models. Runs produce per-frame event logs and
//! per-second throughput and RTT series, which the [`analysis`] module
//! compares against a reference.

pub mod analysis;
pub mod apps;
pub mod channel;
pub mod cli;
pub mod config;
pub mod engine;
pub mod link;
pub mod phy;
pub mod sim;
pub mod traces;
