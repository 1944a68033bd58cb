//! Discrete-event scheduling and labeled random streams.
//!
//! Simulated time is an integer number of microseconds. Events sharing a
//! timestamp dispatch in the order they were scheduled.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Simulation time in microseconds.
pub type TimeUs = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EventId(pub u64);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("past timestamp: {at_us} us is before the clock at {clock_us} us")]
    PastTimestamp { at_us: TimeUs, clock_us: TimeUs },
}

struct Pending<E> {
    at_us: TimeUs,
    seq: u64,
    event: E,
}

impl<E> PartialEq for Pending<E> {
    fn eq(&self, other: &Self) -> bool {
        self.at_us == other.at_us && self.seq == other.seq
    }
}

impl<E> Eq for Pending<E> {}

impl<E> PartialOrd for Pending<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Pending<E> {
    // reversed: BinaryHeap is a max-heap, we want the earliest (time, seq)
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at_us, other.seq).cmp(&(self.at_us, self.seq))
    }
}

/// Time-ordered event queue with a virtual clock.
pub struct EventQueue<E> {
    pending: BinaryHeap<Pending<E>>,
    clock_us: TimeUs,
    next_seq: u64,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        Self {
            pending: BinaryHeap::new(),
            clock_us: 0,
            next_seq: 0,
        }
    }

    pub fn now(&self) -> TimeUs {
        self.clock_us
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn schedule(&mut self, at_us: TimeUs, event: E) -> Result<EventId, ScheduleError> {
        if at_us < self.clock_us {
            return Err(ScheduleError::PastTimestamp {
                at_us,
                clock_us: self.clock_us,
            });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.pending.push(Pending { at_us, seq, event });
        Ok(EventId(seq))
    }

    /// Schedules `delay_us` after the current clock. Never fails.
    pub fn schedule_in(&mut self, delay_us: TimeUs, event: E) -> EventId {
        let at = self.clock_us + delay_us;
        self.schedule(at, event)
            .expect("relative schedule cannot be in the past")
    }

    /// Pops the next event if its timestamp is `<= t_end_us`, advancing the clock to it.
    pub fn pop_until(&mut self, t_end_us: TimeUs) -> Option<(TimeUs, E)> {
        if self.pending.peek()?.at_us > t_end_us {
            return None;
        }
        let p = self.pending.pop()?;
        self.clock_us = p.at_us;
        Some((p.at_us, p.event))
    }

    /// Dispatches every event with timestamp `<= t_end_us` through `handler`,
    /// including events the handler schedules along the way, then sets the
    /// clock to `t_end_us`. Returns the number of dispatched events.
    pub fn run_until<F>(&mut self, t_end_us: TimeUs, mut handler: F) -> u64
    where
        F: FnMut(&mut Self, TimeUs, E),
    {
        let mut count = 0;
        while let Some((t, ev)) = self.pop_until(t_end_us) {
            handler(self, t, ev);
            count += 1;
        }
        if t_end_us > self.clock_us {
            self.clock_us = t_end_us;
        }
        count
    }
}

/// A reproducible random stream identified by `(root_seed, label)`.
///
/// The seed for the underlying generator is the SHA-256 digest of the root
/// seed and the label, so adding a stream never shifts another stream's
/// sequence.
#[derive(Clone, Debug)]
pub struct RngStream {
    label: String,
    rng: ChaCha12Rng,
}

impl RngStream {
    pub fn label(&self) -> &str {
        &self.label
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, upper]`.
    pub fn uniform_inclusive(&mut self, upper: u32) -> u32 {
        if upper == 0 {
            return 0;
        }
        let span = upper as u64 + 1;
        // rejection sampling over u64 keeps the draw unbiased
        let zone = u64::MAX - (u64::MAX % span);
        loop {
            let v = self.rng.next_u64();
            if v < zone {
                return (v % span) as u32;
            }
        }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Derives the stream for `label` under `root_seed`.
///
/// # Panics
/// Panics if `label` is empty.
pub fn derive_stream(root_seed: u64, label: &str) -> RngStream {
    assert!(!label.is_empty(), "stream label must be non-empty");
    let mut hasher = Sha256::new();
    hasher.update(root_seed.to_le_bytes());
    hasher.update((label.len() as u64).to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    RngStream {
        label: label.to_string(),
        rng: ChaCha12Rng::from_seed(seed),
    }
}
