//! DCF timing, contention window and retry rules.

use crate::engine::RngStream;
use crate::phy::{frame_duration_us, PhyMode};

/// 802.11a OFDM DCF constants.
#[derive(Debug, Clone, PartialEq)]
pub struct DcfParams {
    pub slot_us: u64,
    pub sifs_us: u64,
    pub difs_us: u64,
    pub cw_min: u32,
    pub cw_max: u32,
    pub retry_limit: u32,
    pub ack_bytes: usize,
    /// Rates (Mbit/s) a control response may use: the highest one not above
    /// the data rate is chosen, falling back to the lowest.
    pub basic_rates_mbps: Vec<u32>,
}

impl Default for DcfParams {
    fn default() -> Self {
        Self {
            slot_us: 9,
            sifs_us: 16,
            difs_us: 34,
            cw_min: 15,
            cw_max: 1023,
            retry_limit: 7,
            ack_bytes: 14,
            basic_rates_mbps: vec![6],
        }
    }
}

fn is_pow2_minus_one(v: u32) -> bool {
    (v as u64 + 1).is_power_of_two()
}

impl DcfParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.difs_us != self.sifs_us + 2 * self.slot_us {
            return Err(format!(
                "difs ({}) must equal sifs + 2 * slot ({})",
                self.difs_us,
                self.sifs_us + 2 * self.slot_us
            ));
        }
        if !is_pow2_minus_one(self.cw_min) || !is_pow2_minus_one(self.cw_max) || self.cw_min > self.cw_max {
            return Err(format!(
                "contention window bounds must be 2^k-1 with min <= max, got {}..{}",
                self.cw_min, self.cw_max
            ));
        }
        if self.retry_limit < 1 {
            return Err("retry_limit must be >= 1".into());
        }
        if self.basic_rates_mbps.is_empty() {
            return Err("basic rate set is empty".into());
        }
        for r in &self.basic_rates_mbps {
            if PhyMode::from_mbps(*r).is_none() {
                return Err(format!("basic rate {r} Mbit/s is not an 802.11a rate"));
            }
        }
        Ok(())
    }

    pub fn ack_mode(&self, data_mode: PhyMode) -> PhyMode {
        let chosen = self
            .basic_rates_mbps
            .iter()
            .copied()
            .filter(|r| *r <= data_mode.data_rate_mbps)
            .max()
            .or_else(|| self.basic_rates_mbps.iter().copied().min())
            .unwrap_or(6);
        PhyMode::from_mbps(chosen).unwrap_or_else(PhyMode::lowest)
    }

    pub fn ack_duration_us(&self, data_mode: PhyMode) -> u64 {
        frame_duration_us(self.ack_bytes, self.ack_mode(data_mode))
    }

    /// How long the sender waits after its DATA ends before declaring the ACK missing.
    pub fn ack_timeout_us(&self, data_mode: PhyMode) -> u64 {
        self.sifs_us + self.ack_duration_us(data_mode) + self.slot_us
    }

    /// Expected medium time of one successful exchange with a fresh window.
    pub fn expected_exchange_us(&self, frame_bytes: usize, mode: PhyMode) -> f64 {
        self.difs_us as f64
            + self.cw_min as f64 / 2.0 * self.slot_us as f64
            + frame_duration_us(frame_bytes, mode) as f64
            + self.sifs_us as f64
            + self.ack_duration_us(mode) as f64
    }
}

/// Binary exponential contention window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContentionWindow {
    cw: u32,
    min: u32,
    max: u32,
}

impl ContentionWindow {
    pub fn new(params: &DcfParams) -> Self {
        Self {
            cw: params.cw_min,
            min: params.cw_min,
            max: params.cw_max,
        }
    }

    pub fn value(&self) -> u32 {
        self.cw
    }

    pub fn on_failure(&mut self) {
        self.cw = (2 * (self.cw + 1) - 1).min(self.max);
    }

    pub fn reset(&mut self) {
        self.cw = self.min;
    }
}

/// Uniform backoff in `[0, cw]` slots.
pub fn backoff_slots(cw: u32, rng: &mut RngStream) -> u32 {
    rng.uniform_inclusive(cw)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttemptResult {
    DataLost,
    AckLost,
    Acked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DcfResult {
    /// `airtime_us` is the DATA airtime of the successful attempt.
    Success { tx_attempts: u32, airtime_us: u64 },
    Dropped { tx_attempts: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DcfReport {
    pub result: DcfResult,
    /// Total medium time consumed, from the first DIFS to the end of the last ACK or timeout.
    pub medium_time_us: u64,
    /// Contention window in force for each attempt.
    pub cw_per_attempt: Vec<u32>,
}

/// Runs one MAC frame through DIFS + backoff + DATA (+ SIFS + ACK) attempts
/// on an otherwise idle medium until it is acknowledged or the retry limit
/// is exhausted. `attempt` decides the fate of attempt `i` (0-based).
pub fn dcf_transmit<F>(
    frame_bytes: usize,
    mode: PhyMode,
    params: &DcfParams,
    cw: &mut ContentionWindow,
    rng: &mut RngStream,
    mut attempt: F,
) -> DcfReport
where
    F: FnMut(u32) -> AttemptResult,
{
    let data_us = frame_duration_us(frame_bytes, mode);
    let ack_us = params.ack_duration_us(mode);
    let mut medium = 0;
    let mut cws = Vec::new();
    let max_attempts = params.retry_limit + 1;
    for i in 0..max_attempts {
        cws.push(cw.value());
        let slots = backoff_slots(cw.value(), rng) as u64;
        medium += params.difs_us + slots * params.slot_us + data_us;
        match attempt(i) {
            AttemptResult::Acked => {
                medium += params.sifs_us + ack_us;
                cw.reset();
                return DcfReport {
                    result: DcfResult::Success {
                        tx_attempts: i + 1,
                        airtime_us: data_us,
                    },
                    medium_time_us: medium,
                    cw_per_attempt: cws,
                };
            }
            AttemptResult::DataLost | AttemptResult::AckLost => {
                medium += params.ack_timeout_us(mode);
                cw.on_failure();
            }
        }
    }
    cw.reset();
    DcfReport {
        result: DcfResult::Dropped {
            tx_attempts: max_attempts,
        },
        medium_time_us: medium,
        cw_per_attempt: cws,
    }
}
