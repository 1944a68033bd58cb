//! Traffic sources and sinks: constant-bit-rate UDP and ping.

use std::collections::{BTreeMap, HashSet};

use crate::engine::TimeUs;

/// UDP (8) + IPv4 (20) + 802.11 data header and FCS (28) bytes added to an
/// application payload to obtain the MPDU size.
pub const HEADER_OVERHEAD_BYTES: usize = 56;
pub const MAX_PAYLOAD_BYTES: usize = 2272;

#[derive(Debug, Clone, PartialEq)]
pub struct UdpFlowConfig {
    pub src: String,
    pub dst: String,
    pub offered_load_bps: f64,
    pub payload_bytes: usize,
    pub start_us: TimeUs,
    pub stop_us: TimeUs,
}

impl UdpFlowConfig {
    pub fn new(src: impl Into<String>, dst: impl Into<String>, start_us: TimeUs, stop_us: TimeUs) -> Self {
        Self {
            src: src.into(),
            dst: dst.into(),
            offered_load_bps: 54e6,
            payload_bytes: 1472,
            start_us,
            stop_us,
        }
    }

    pub fn reversed(&self) -> Self {
        Self {
            src: self.dst.clone(),
            dst: self.src.clone(),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.offered_load_bps > 0.0 && self.offered_load_bps.is_finite()) {
            return Err(format!("offered load must be > 0, got {}", self.offered_load_bps));
        }
        if !(1..=MAX_PAYLOAD_BYTES).contains(&self.payload_bytes) {
            return Err(format!(
                "payload must be in [1, {MAX_PAYLOAD_BYTES}] bytes, got {}",
                self.payload_bytes
            ));
        }
        if self.stop_us < self.start_us {
            return Err("flow stops before it starts".into());
        }
        Ok(())
    }

    pub fn gap_us(&self) -> TimeUs {
        cbr_gap_us(self.payload_bytes, self.offered_load_bps)
    }
}

/// Inter-packet gap of a CBR source, rounded half-up to whole microseconds
/// (never below 1 us).
pub fn cbr_gap_us(payload_bytes: usize, offered_load_bps: f64) -> TimeUs {
    let gap = payload_bytes as f64 * 8.0 / offered_load_bps * 1e6;
    ((gap + 0.5).floor() as TimeUs).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PacketArrival {
    pub seq: u64,
    pub t_us: TimeUs,
}

/// CBR arrivals `start + k * gap` for every instant in `[start, stop)`.
pub fn udp_arrivals(cfg: &UdpFlowConfig) -> Vec<PacketArrival> {
    let gap = cfg.gap_us();
    (0u64..)
        .map(|k| PacketArrival {
            seq: k,
            t_us: cfg.start_us + k * gap,
        })
        .take_while(|a| a.t_us < cfg.stop_us)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PingConfig {
    pub src: String,
    pub dst: String,
    pub interval_us: TimeUs,
    pub payload_bytes: usize,
    pub start_us: TimeUs,
    pub stop_us: TimeUs,
}

impl PingConfig {
    pub fn new(src: impl Into<String>, dst: impl Into<String>, start_us: TimeUs, stop_us: TimeUs) -> Self {
        Self {
            src: src.into(),
            dst: dst.into(),
            interval_us: 100_000,
            payload_bytes: 1472,
            start_us,
            stop_us,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.interval_us == 0 {
            return Err("ping interval must be > 0".into());
        }
        if !(1..=MAX_PAYLOAD_BYTES).contains(&self.payload_bytes) {
            return Err(format!("ping payload {} out of range", self.payload_bytes));
        }
        if self.stop_us < self.start_us {
            return Err("ping stops before it starts".into());
        }
        Ok(())
    }

    pub fn request_times(&self) -> impl Iterator<Item = (u64, TimeUs)> + '_ {
        (0u64..)
            .map(|k| (k, self.start_us + k * self.interval_us))
            .take_while(|(_, t)| *t < self.stop_us)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RttSample {
    pub seq: u64,
    pub sent_us: TimeUs,
    pub rtt_us: TimeUs,
}

/// Requester side of a ping session: outstanding requests and RTT samples.
#[derive(Debug, Clone, Default)]
pub struct PingClient {
    outstanding: BTreeMap<u64, TimeUs>,
    samples: Vec<RttSample>,
    sent: u64,
}

impl PingClient {
    pub fn on_request(&mut self, seq: u64, sent_us: TimeUs) {
        self.outstanding.insert(seq, sent_us);
        self.sent += 1;
    }

    /// Matches a reply; unknown or repeated replies yield nothing.
    pub fn on_reply(&mut self, seq: u64, rx_us: TimeUs) -> Option<RttSample> {
        let sent_us = self.outstanding.remove(&seq)?;
        let s = RttSample {
            seq,
            sent_us,
            rtt_us: rx_us - sent_us,
        };
        self.samples.push(s);
        Some(s)
    }

    pub fn outstanding(&self) -> usize {
        self.outstanding.len()
    }

    pub fn sent(&self) -> u64 {
        self.sent
    }

    pub fn into_samples(self) -> Vec<RttSample> {
        self.samples
    }

    pub fn samples(&self) -> &[RttSample] {
        &self.samples
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RxRecord {
    pub rx_time_us: TimeUs,
    pub payload_bytes: usize,
    pub seq: u64,
}

/// Receive log of a UDP flow. Sequence numbers are logged in arrival order;
/// a repeated sequence number is counted as a duplicate.
#[derive(Debug, Clone, Default)]
pub struct UdpSink {
    records: Vec<RxRecord>,
    seen: HashSet<u64>,
    duplicates: u64,
}

impl UdpSink {
    pub fn on_receive(&mut self, rx_time_us: TimeUs, payload_bytes: usize, seq: u64) {
        if !self.seen.insert(seq) {
            self.duplicates += 1;
        }
        self.records.push(RxRecord {
            rx_time_us,
            payload_bytes,
            seq,
        });
    }

    pub fn records(&self) -> &[RxRecord] {
        &self.records
    }

    pub fn duplicates(&self) -> u64 {
        self.duplicates
    }

    pub fn into_records(self) -> Vec<RxRecord> {
        self.records
    }
}

/// Builds a sink log from receive events `(time, bytes, seq)`.
pub fn udp_sink<I>(events: I) -> UdpSink
where
    I: IntoIterator<Item = (TimeUs, usize, u64)>,
{
    let mut sink = UdpSink::default();
    for (t, b, s) in events {
        sink.on_receive(t, b, s);
    }
    sink
}
