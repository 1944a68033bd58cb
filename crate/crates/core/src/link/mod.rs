//! 802.11 DCF medium access and rate control.

pub mod dcf;
pub mod minstrel;
pub mod queue;

pub use dcf::{backoff_slots, dcf_transmit, AttemptResult, ContentionWindow, DcfParams, DcfReport, DcfResult};
pub use minstrel::{MinstrelParams, MinstrelState, RateChoice};
pub use queue::{EnqueueResult, TxQueue};
