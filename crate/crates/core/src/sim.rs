//! Packet-level simulation of stations sharing one half-duplex 802.11a medium.
//!
//! Each station runs DCF over a FIFO queue. A transmission's receiver SNR is
//! fixed at the start of the frame and taken from the configured propagation
//! (trace replay or analytic). Receptions are Bernoulli draws against the
//! frame success probability. Stations whose backoff expires in the same
//! slot collide and both frames are lost.
//!
//! Timing conventions:
//! - a station with a new head-of-line frame waits DIFS plus a fresh backoff,
//!   counted from when both the frame is ready and the medium is idle;
//! - a received data frame is handed to the receiving node's stack when its
//!   ACK transmission ends;
//! - a node's processing delay is applied when its applications hand packets
//!   down to the MAC;
//! - UDP receive times and ping RTTs are stamped at the end of the data frame.

use std::fmt;

use thiserror::Error;

use crate::apps::{PingClient, PingConfig, RttSample, RxRecord, UdpFlowConfig, UdpSink};
use crate::channel::{link_snr, ChannelError, PropagationSpec, RadioParams};
use crate::engine::{derive_stream, EventQueue, RngStream, TimeUs};
use crate::link::dcf::{backoff_slots, ContentionWindow, DcfParams};
use crate::link::minstrel::{MinstrelParams, MinstrelState};
use crate::link::queue::{EnqueueResult, TxQueue};
use crate::phy::{frame_duration_us, receive, PhyMode, RxOutcome, OFDM_MODES};
use crate::traces::{DirectedLink, MobilityTrace, SnrTrace};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum RateControl {
    Minstrel(MinstrelParams),
    Fixed(PhyMode),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Traffic {
    Udp(UdpFlowConfig),
    Ping(PingConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSpec {
    pub id: String,
    pub processing_delay_us: TimeUs,
}

impl NodeSpec {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            processing_delay_us: 0,
        }
    }
}

/// Everything needed to execute one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub nodes: Vec<NodeSpec>,
    pub mobility: MobilityTrace,
    pub propagation: PropagationSpec,
    pub radio: RadioParams,
    pub dcf: DcfParams,
    pub rate_control: RateControl,
    pub queue_capacity: usize,
    pub header_overhead_bytes: usize,
    pub traffic: Vec<Traffic>,
    pub duration_us: TimeUs,
    pub seed: u64,
}

impl Scenario {
    /// Two static nodes `A` and `B` 6 m apart replaying constant SNR levels,
    /// with no traffic. A convenient starting point for experiments.
    pub fn constant_snr(snr_ab_db: f64, snr_ba_db: f64, duration_us: TimeUs, seed: u64) -> Self {
        let trace = SnrTrace::constant(&[
            (DirectedLink::new("A", "B"), snr_ab_db),
            (DirectedLink::new("B", "A"), snr_ba_db),
        ])
        .expect("finite levels");
        Scenario {
            nodes: vec![NodeSpec::new("A"), NodeSpec::new("B")],
            mobility: MobilityTrace::from_static([
                ("A", crate::traces::Position::new(0.0, 0.0, 0.0)),
                ("B", crate::traces::Position::new(6.0, 0.0, 0.0)),
            ]),
            propagation: PropagationSpec::TraceReplay(trace),
            radio: RadioParams::default(),
            dcf: DcfParams::default(),
            rate_control: RateControl::Minstrel(MinstrelParams::default()),
            queue_capacity: crate::link::queue::DEFAULT_QUEUE_CAPACITY,
            header_overhead_bytes: crate::apps::HEADER_OVERHEAD_BYTES,
            traffic: Vec::new(),
            duration_us,
            seed,
        }
    }

    fn node_index(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidScenario(m));
        if self.nodes.len() < 2 {
            return bad("at least two nodes are required".into());
        }
        if self.nodes.len() > u16::MAX as usize {
            return bad("too many nodes".into());
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if self.nodes[..i].iter().any(|m| m.id == n.id) {
                return bad(format!("duplicate node id {}", n.id));
            }
        }
        if self.duration_us == 0 {
            return bad("duration must be > 0".into());
        }
        if self.queue_capacity == 0 {
            return bad("queue capacity must be > 0".into());
        }
        self.dcf.validate().map_err(SimError::InvalidScenario)?;
        self.propagation.validate()?;
        if !self.propagation.is_trace() {
            self.radio.validate()?;
            for n in &self.nodes {
                if !self.mobility.contains(&n.id) {
                    return bad(format!("node {} has no position", n.id));
                }
            }
        }
        for t in &self.traffic {
            let (src, dst) = match t {
                Traffic::Udp(f) => {
                    f.validate().map_err(SimError::InvalidScenario)?;
                    (&f.src, &f.dst)
                }
                Traffic::Ping(p) => {
                    p.validate().map_err(SimError::InvalidScenario)?;
                    (&p.src, &p.dst)
                }
            };
            for id in [src, dst] {
                if self.node_index(id).is_none() {
                    return bad(format!("traffic references unknown node {id}"));
                }
            }
            if src == dst {
                return bad(format!("traffic source and destination are both {src}"));
            }
            if let PropagationSpec::TraceReplay(trace) = &self.propagation {
                let link = DirectedLink::new(src.clone(), dst.clone());
                for l in [link.clone(), link.reversed()] {
                    if trace.samples(&l).is_none() {
                        return bad(format!("no trace for link {l}"));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RunOptions {
    pub log_events: bool,
    pub record_snr: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Tx,
    Rx,
    Drop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameKind {
    Data,
    Ack,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Delivered,
    Corrupted,
    Collision,
}

/// One row of the packet-level log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventRecord {
    pub t_us: TimeUs,
    pub kind: EventKind,
    pub frame: FrameKind,
    pub src: u16,
    pub dst: u16,
    /// MAC sequence number of the data frame (the acknowledged one for ACKs).
    pub seq: u64,
    /// 1-based attempt number of the data frame.
    pub attempt: u32,
    pub mode_mbps: u32,
    /// Airtime for `Tx` rows, zero otherwise.
    pub duration_us: TimeUs,
    /// Receiver SNR, NaN on `Drop` rows.
    pub snr_db: f64,
    pub outcome: Option<Outcome>,
}

/// Receiver SNR of one PHY transmission, stamped with its start time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reception {
    pub t_us: TimeUs,
    pub tx: u16,
    pub rx: u16,
    pub snr_db: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StationStats {
    pub data_attempts: u64,
    pub frames_acked: u64,
    pub frames_dropped: u64,
    pub queue_drops: u64,
    pub collisions: u64,
}

impl StationStats {
    pub fn frames_completed(&self) -> u64 {
        self.frames_acked + self.frames_dropped
    }

    /// Mean PHY retransmissions per completed MAC frame.
    pub fn retransmissions_per_frame(&self) -> f64 {
        let done = self.frames_completed();
        if done == 0 {
            return 0.0;
        }
        // attempts of frames still in service at the end are not counted
        (self.data_attempts as f64 - done as f64).max(0.0) / done as f64
    }
}

#[derive(Debug, Clone)]
pub struct FlowResult {
    pub src: String,
    pub dst: String,
    pub payload_bytes: usize,
    pub generated: u64,
    pub rx_log: Vec<RxRecord>,
    pub duplicates: u64,
}

impl FlowResult {
    pub fn goodput_bps(&self, duration_us: TimeUs) -> f64 {
        let bits: u64 = self.rx_log.iter().map(|r| 8 * r.payload_bytes as u64).sum();
        bits as f64 / (duration_us as f64 * 1e-6)
    }
}

#[derive(Debug, Clone)]
pub struct PingResult {
    pub src: String,
    pub dst: String,
    pub sent: u64,
    pub samples: Vec<RttSample>,
}

/// Artifacts of one run.
#[derive(Debug, Clone)]
pub struct SimRun {
    pub node_ids: Vec<String>,
    pub duration_us: TimeUs,
    pub events: Vec<EventRecord>,
    pub receptions: Vec<Reception>,
    pub udp: Vec<FlowResult>,
    pub ping: Vec<PingResult>,
    pub stations: Vec<StationStats>,
    pub dispatched_events: u64,
}

impl SimRun {
    /// Receptions as an SNR trace in the canonical format.
    pub fn snr_trace(&self) -> Option<SnrTrace> {
        let samples = self.receptions.iter().map(|r| {
            (
                DirectedLink::new(self.node_ids[r.tx as usize].clone(), self.node_ids[r.rx as usize].clone()),
                crate::traces::SnrSample {
                    t_us: r.t_us,
                    snr_db: r.snr_db,
                },
            )
        });
        SnrTrace::from_samples(samples).ok()
    }

    pub fn station(&self, id: &str) -> Option<&StationStats> {
        self.node_ids.iter().position(|n| n == id).map(|i| &self.stations[i])
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EventKind::Tx => "tx",
            EventKind::Rx => "rx",
            EventKind::Drop => "drop",
        })
    }
}

impl fmt::Display for FrameKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FrameKind::Data => "data",
            FrameKind::Ack => "ack",
        })
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Delivered => "delivered",
            Outcome::Corrupted => "corrupted",
            Outcome::Collision => "collision",
        })
    }
}

pub const EVENT_LOG_HEADER: &str = "t_us,event,frame,src,dst,seq,attempt,mode_mbps,duration_us,snr_db,outcome";

/// Formats one event row with node names resolved.
pub fn format_event(e: &EventRecord, node_ids: &[String]) -> String {
    let snr = if e.snr_db.is_nan() {
        String::new()
    } else {
        e.snr_db.to_string()
    };
    let outcome = e.outcome.map(|o| o.to_string()).unwrap_or_default();
    format!(
        "{},{},{},{},{},{},{},{},{},{},{}",
        e.t_us,
        e.kind,
        e.frame,
        node_ids[e.src as usize],
        node_ids[e.dst as usize],
        e.seq,
        e.attempt,
        e.mode_mbps,
        e.duration_us,
        snr,
        outcome
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PacketKind {
    Udp,
    PingRequest,
    PingReply,
}

#[derive(Debug, Clone, Copy)]
struct Packet {
    flow: usize,
    kind: PacketKind,
    app_seq: u64,
    payload_bytes: usize,
    dst: usize,
}

#[derive(Debug, Clone, Copy)]
struct MacFrame {
    packet: Packet,
    mac_seq: u64,
    /// Attempts already made.
    attempts: u32,
    mode: PhyMode,
    probe: bool,
}

enum RateCtl {
    Minstrel(Box<MinstrelState>),
    Fixed(PhyMode),
}

struct Station {
    queue: TxQueue<Packet>,
    current: Option<MacFrame>,
    cw: ContentionWindow,
    backoff_left: u32,
    /// When the backoff countdown (re)starts; meaningful while contending.
    countdown_from: TimeUs,
    rate: RateCtl,
    next_mac_seq: u64,
    last_rx_seq: Vec<Option<u64>>,
    backoff_rng: RngStream,
    rate_rng: RngStream,
    processing_delay_us: TimeUs,
    stats: StationStats,
}

#[derive(Debug, Clone, Copy)]
struct ActiveTx {
    station: usize,
    dst: usize,
    frame_bytes: usize,
    frame: MacFrame,
    snr_db: f64,
    data_end: TimeUs,
    /// Set once the exchange outcome is known.
    acked: Option<bool>,
    /// ACK mode and SNR, when an ACK was sent.
    ack: Option<(PhyMode, f64)>,
    /// Ping request to answer once the ACK has been sent.
    upcall: Option<Packet>,
}

struct Exchange {
    txs: Vec<ActiveTx>,
    collided: bool,
    /// Transmissions whose outcome is not yet settled.
    pending: usize,
}

#[derive(Debug, Clone, Copy)]
enum Ev {
    UdpArrival { flow: usize, seq: u64 },
    PingSend { flow: usize, seq: u64 },
    AppEnqueue { station: usize, packet: Packet },
    Access { epoch: u64 },
    DataEnd { slot: usize },
    AckStart { slot: usize },
    AckEnd { slot: usize },
    ExchangeEnd,
}

enum FlowState {
    Udp { cfg: UdpFlowConfig, src: usize, dst: usize, gap: TimeUs, generated: u64, sink: UdpSink },
    Ping { cfg: PingConfig, src: usize, dst: usize, client: PingClient },
}

struct Sim<'a, 'b> {
    sc: &'a Scenario,
    opts: RunOptions,
    queue: EventQueue<Ev>,
    stations: Vec<Station>,
    flows: Vec<FlowState>,
    link_rx_rng: Vec<RngStream>,
    link_fading_rng: Vec<RngStream>,
    links: Vec<DirectedLink>,
    exchange: Option<Exchange>,
    idle_since: TimeUs,
    epoch: u64,
    sink: &'b mut dyn FnMut(&EventRecord),
    receptions: Vec<Reception>,
}

/// Runs `scenario`, collecting the event log in memory when requested.
pub fn run(scenario: &Scenario, opts: RunOptions) -> Result<SimRun, SimError> {
    let mut events = Vec::new();
    let mut collect = |e: &EventRecord| events.push(*e);
    let mut noop = |_: &EventRecord| {};
    let sink: &mut dyn FnMut(&EventRecord) = if opts.log_events { &mut collect } else { &mut noop };
    let mut run = run_with_sink(scenario, opts, sink)?;
    run.events = events;
    Ok(run)
}

/// Runs `scenario`, streaming every event row to `sink` as it happens.
/// The returned run has an empty `events` vector.
pub fn run_with_sink(
    scenario: &Scenario,
    opts: RunOptions,
    sink: &mut dyn FnMut(&EventRecord),
) -> Result<SimRun, SimError> {
    scenario.validate()?;
    let mut sim = Sim::new(scenario, opts, sink);
    sim.start();
    let end = scenario.duration_us;
    let mut dispatched = 0;
    while let Some((t, ev)) = sim.queue.pop_until(end) {
        sim.handle(t, ev)?;
        dispatched += 1;
    }
    Ok(sim.finish(dispatched))
}

impl<'a, 'b> Sim<'a, 'b> {
    fn new(sc: &'a Scenario, opts: RunOptions, sink: &'b mut dyn FnMut(&EventRecord)) -> Self {
        let n = sc.nodes.len();
        let stations = sc
            .nodes
            .iter()
            .map(|node| {
                let rate = match &sc.rate_control {
                    RateControl::Fixed(m) => RateCtl::Fixed(*m),
                    RateControl::Minstrel(p) => RateCtl::Minstrel(Box::new(MinstrelState::new(
                        OFDM_MODES.to_vec(),
                        p.clone(),
                        sc.dcf.clone(),
                        1472 + sc.header_overhead_bytes,
                    ))),
                };
                Station {
                    queue: TxQueue::new(sc.queue_capacity),
                    current: None,
                    cw: ContentionWindow::new(&sc.dcf),
                    backoff_left: 0,
                    countdown_from: 0,
                    rate,
                    next_mac_seq: 0,
                    last_rx_seq: vec![None; n],
                    backoff_rng: derive_stream(sc.seed, &format!("mac.backoff.{}", node.id)),
                    rate_rng: derive_stream(sc.seed, &format!("rate.{}", node.id)),
                    processing_delay_us: node.processing_delay_us,
                    stats: StationStats::default(),
                }
            })
            .collect();
        let mut links = Vec::with_capacity(n * n);
        let mut rx_rngs = Vec::with_capacity(n * n);
        let mut fading = Vec::with_capacity(n * n);
        for a in &sc.nodes {
            for b in &sc.nodes {
                let link = DirectedLink::new(a.id.clone(), b.id.clone());
                rx_rngs.push(derive_stream(sc.seed, &format!("phy.rx.{link}")));
                fading.push(derive_stream(sc.seed, &format!("channel.fading.{link}")));
                links.push(link);
            }
        }
        let idx = |id: &str| sc.node_index(id).expect("validated");
        let flows = sc
            .traffic
            .iter()
            .map(|t| match t {
                Traffic::Udp(cfg) => FlowState::Udp {
                    src: idx(&cfg.src),
                    dst: idx(&cfg.dst),
                    gap: cfg.gap_us(),
                    cfg: cfg.clone(),
                    generated: 0,
                    sink: UdpSink::default(),
                },
                Traffic::Ping(cfg) => FlowState::Ping {
                    src: idx(&cfg.src),
                    dst: idx(&cfg.dst),
                    cfg: cfg.clone(),
                    client: PingClient::default(),
                },
            })
            .collect();
        Sim {
            sc,
            opts,
            queue: EventQueue::new(),
            stations,
            flows,
            link_rx_rng: rx_rngs,
            link_fading_rng: fading,
            links,
            exchange: None,
            idle_since: 0,
            epoch: 0,
            sink,
            receptions: Vec::new(),
        }
    }

    fn start(&mut self) {
        for (i, f) in self.flows.iter().enumerate() {
            match f {
                FlowState::Udp { cfg, .. } => {
                    if cfg.start_us < cfg.stop_us {
                        self.queue
                            .schedule(cfg.start_us, Ev::UdpArrival { flow: i, seq: 0 })
                            .expect("clock at zero");
                    }
                }
                FlowState::Ping { cfg, .. } => {
                    if cfg.start_us < cfg.stop_us {
                        self.queue
                            .schedule(cfg.start_us, Ev::PingSend { flow: i, seq: 0 })
                            .expect("clock at zero");
                    }
                }
            }
        }
    }

    fn finish(self, dispatched: u64) -> SimRun {
        let mut udp = Vec::new();
        let mut ping = Vec::new();
        for f in self.flows {
            match f {
                FlowState::Udp { cfg, generated, sink, .. } => udp.push(FlowResult {
                    src: cfg.src,
                    dst: cfg.dst,
                    payload_bytes: cfg.payload_bytes,
                    generated,
                    duplicates: sink.duplicates(),
                    rx_log: sink.into_records(),
                }),
                FlowState::Ping { cfg, client, .. } => ping.push(PingResult {
                    src: cfg.src,
                    dst: cfg.dst,
                    sent: client.sent(),
                    samples: client.into_samples(),
                }),
            }
        }
        SimRun {
            node_ids: self.sc.nodes.iter().map(|n| n.id.clone()).collect(),
            duration_us: self.sc.duration_us,
            events: Vec::new(),
            receptions: self.receptions,
            udp,
            ping,
            stations: self.stations.into_iter().map(|s| s.stats).collect(),
            dispatched_events: dispatched,
        }
    }

    fn link_index(&self, tx: usize, rx: usize) -> usize {
        tx * self.sc.nodes.len() + rx
    }

    fn log(&mut self, rec: EventRecord) {
        if self.opts.log_events {
            (self.sink)(&rec);
        }
    }

    fn snr(&mut self, tx: usize, rx: usize, now: TimeUs) -> Result<f64, SimError> {
        let li = self.link_index(tx, rx);
        let snr = link_snr(
            &self.sc.propagation,
            &self.sc.radio,
            &self.links[li],
            &self.sc.mobility,
            now,
            &mut self.link_fading_rng[li],
        )?;
        if self.opts.record_snr {
            self.receptions.push(Reception {
                t_us: now,
                tx: tx as u16,
                rx: rx as u16,
                snr_db: snr,
            });
        }
        Ok(snr)
    }

    fn handle(&mut self, now: TimeUs, ev: Ev) -> Result<(), SimError> {
        match ev {
            Ev::UdpArrival { flow, seq } => self.on_udp_arrival(now, flow, seq),
            Ev::PingSend { flow, seq } => self.on_ping_send(now, flow, seq),
            Ev::AppEnqueue { station, packet } => {
                self.enqueue(now, station, packet);
                Ok(())
            }
            Ev::Access { epoch } => {
                if epoch == self.epoch && self.exchange.is_none() {
                    self.on_access(now)?;
                }
                Ok(())
            }
            Ev::DataEnd { slot } => self.on_data_end(now, slot),
            Ev::AckStart { slot } => self.on_ack_start(now, slot),
            Ev::AckEnd { slot } => self.on_ack_end(now, slot),
            Ev::ExchangeEnd => {
                self.on_exchange_end(now);
                Ok(())
            }
        }
    }

    fn on_udp_arrival(&mut self, now: TimeUs, flow: usize, seq: u64) -> Result<(), SimError> {
        let FlowState::Udp { cfg, src, dst, gap, generated, .. } = &mut self.flows[flow] else {
            unreachable!("udp event on ping flow")
        };
        *generated += 1;
        let packet = Packet {
            flow,
            kind: PacketKind::Udp,
            app_seq: seq,
            payload_bytes: cfg.payload_bytes,
            dst: *dst,
        };
        let (src, next) = (*src, now + *gap);
        if next < cfg.stop_us {
            self.queue.schedule_in(*gap, Ev::UdpArrival { flow, seq: seq + 1 });
        }
        self.emit(now, src, packet);
        Ok(())
    }

    fn on_ping_send(&mut self, now: TimeUs, flow: usize, seq: u64) -> Result<(), SimError> {
        let FlowState::Ping { cfg, src, dst, client } = &mut self.flows[flow] else {
            unreachable!("ping event on udp flow")
        };
        client.on_request(seq, now);
        let packet = Packet {
            flow,
            kind: PacketKind::PingRequest,
            app_seq: seq,
            payload_bytes: cfg.payload_bytes,
            dst: *dst,
        };
        let (src, interval) = (*src, cfg.interval_us);
        if now + interval < cfg.stop_us {
            self.queue.schedule_in(interval, Ev::PingSend { flow, seq: seq + 1 });
        }
        self.emit(now, src, packet);
        Ok(())
    }

    /// An application hands `packet` to `station`'s stack.
    fn emit(&mut self, now: TimeUs, station: usize, packet: Packet) {
        let delay = self.stations[station].processing_delay_us;
        if delay == 0 {
            self.enqueue(now, station, packet);
        } else {
            self.queue.schedule_in(delay, Ev::AppEnqueue { station, packet });
        }
    }

    fn enqueue(&mut self, now: TimeUs, station: usize, packet: Packet) {
        let st = &mut self.stations[station];
        if st.queue.enqueue(packet) == EnqueueResult::DroppedFull {
            st.stats.queue_drops += 1;
            return;
        }
        if st.current.is_none() {
            self.start_next_frame(now, station);
            self.reschedule_access(now);
        }
    }

    /// Moves the head-of-line packet into service with a fresh backoff.
    fn start_next_frame(&mut self, now: TimeUs, station: usize) {
        let medium_idle = self.exchange.is_none();
        let ready_from = if medium_idle { now.max(self.idle_since) } else { now };
        let difs = self.sc.dcf.difs_us;
        let st = &mut self.stations[station];
        let Some(packet) = st.queue.pop_front() else { return };
        let mac_seq = st.next_mac_seq;
        st.next_mac_seq += 1;
        st.current = Some(MacFrame {
            packet,
            mac_seq,
            attempts: 0,
            mode: PhyMode::lowest(),
            probe: false,
        });
        st.backoff_left = backoff_slots(st.cw.value(), &mut st.backoff_rng);
        // while the medium is busy the countdown origin is set at exchange end
        st.countdown_from = ready_from + difs;
    }

    fn access_time(&self, station: usize) -> TimeUs {
        let st = &self.stations[station];
        st.countdown_from + st.backoff_left as u64 * self.sc.dcf.slot_us
    }

    fn reschedule_access(&mut self, now: TimeUs) {
        if self.exchange.is_some() {
            return;
        }
        let next = (0..self.stations.len())
            .filter(|&s| self.stations[s].current.is_some())
            .map(|s| self.access_time(s))
            .min();
        if let Some(t) = next {
            self.epoch += 1;
            let epoch = self.epoch;
            self.queue
                .schedule(t.max(now), Ev::Access { epoch })
                .expect("access never in the past");
        }
    }

    fn on_access(&mut self, now: TimeUs) -> Result<(), SimError> {
        let winners: Vec<usize> = (0..self.stations.len())
            .filter(|&s| self.stations[s].current.is_some() && self.access_time(s) <= now)
            .collect();
        if winners.is_empty() {
            self.reschedule_access(now);
            return Ok(());
        }
        let slot = self.sc.dcf.slot_us;
        for (s, st) in self.stations.iter_mut().enumerate() {
            if st.current.is_none() || winners.contains(&s) {
                continue;
            }
            // freeze the countdown: keep only the slots not yet elapsed
            if now > st.countdown_from {
                let elapsed = ((now - st.countdown_from) / slot) as u32;
                st.backoff_left -= elapsed.min(st.backoff_left);
            }
        }
        let collided = winners.len() > 1;
        let mut txs = Vec::with_capacity(winners.len());
        for &s in &winners {
            txs.push(self.start_data(now, s, collided)?);
        }
        for (i, tx) in txs.iter().enumerate() {
            self.queue
                .schedule(tx.data_end, Ev::DataEnd { slot: i })
                .expect("data end is in the future");
        }
        let pending = txs.len();
        self.exchange = Some(Exchange {
            txs,
            collided,
            pending,
        });
        Ok(())
    }

    fn start_data(&mut self, now: TimeUs, s: usize, collided: bool) -> Result<ActiveTx, SimError> {
        let overhead = self.sc.header_overhead_bytes;
        let st = &mut self.stations[s];
        let mut frame = st.current.expect("winner has a frame");
        let frame_bytes = frame.packet.payload_bytes + overhead;
        match &mut st.rate {
            RateCtl::Fixed(m) => frame.mode = *m,
            RateCtl::Minstrel(ms) => {
                if frame.attempts == 0 {
                    let choice = ms.select(now, frame_bytes, &mut st.rate_rng);
                    frame.mode = choice.mode;
                    frame.probe = choice.probe;
                } else if frame.probe {
                    // a failed probe is retried at the best mode
                    frame.mode = ms.best_mode();
                    frame.probe = false;
                }
            }
        }
        st.current = Some(frame);
        st.stats.data_attempts += 1;
        let dst = frame.packet.dst;
        let snr = self.snr(s, dst, now)?;
        let duration = frame_duration_us(frame_bytes, frame.mode);
        self.log(EventRecord {
            t_us: now,
            kind: EventKind::Tx,
            frame: FrameKind::Data,
            src: s as u16,
            dst: dst as u16,
            seq: frame.mac_seq,
            attempt: frame.attempts + 1,
            mode_mbps: frame.mode.data_rate_mbps,
            duration_us: duration,
            snr_db: snr,
            outcome: if collided { Some(Outcome::Collision) } else { None },
        });
        Ok(ActiveTx {
            station: s,
            dst,
            frame,
            frame_bytes,
            snr_db: snr,
            data_end: now + duration,
            acked: None,
            ack: None,
            upcall: None,
        })
    }

    fn on_data_end(&mut self, now: TimeUs, slot: usize) -> Result<(), SimError> {
        let ex = self.exchange.as_ref().expect("data end inside an exchange");
        let collided = ex.collided;
        let tx = ex.txs[slot];
        let outcome = if collided {
            Outcome::Collision
        } else {
            let li = self.link_index(tx.station, tx.dst);
            match receive(tx.frame_bytes, tx.frame.mode, tx.snr_db, &mut self.link_rx_rng[li]) {
                RxOutcome::Delivered => Outcome::Delivered,
                RxOutcome::Corrupted => Outcome::Corrupted,
            }
        };
        self.log(EventRecord {
            t_us: now,
            kind: EventKind::Rx,
            frame: FrameKind::Data,
            src: tx.station as u16,
            dst: tx.dst as u16,
            seq: tx.frame.mac_seq,
            attempt: tx.frame.attempts + 1,
            mode_mbps: tx.frame.mode.data_rate_mbps,
            duration_us: 0,
            snr_db: tx.snr_db,
            outcome: Some(outcome),
        });
        if outcome != Outcome::Delivered {
            let timeout = self.sc.dcf.ack_timeout_us(tx.frame.mode);
            self.set_acked(slot, false);
            self.queue.schedule_in(timeout, Ev::AckEnd { slot });
            return Ok(());
        }
        let upcall = self.deliver(now, &tx);
        if let Some(ex) = self.exchange.as_mut() {
            ex.txs[slot].upcall = upcall;
        }
        self.queue.schedule_in(self.sc.dcf.sifs_us, Ev::AckStart { slot });
        Ok(())
    }

    /// Hands a delivered data frame to the receiver. Ping requests are
    /// returned so that the reply is generated once the ACK has been sent.
    fn deliver(&mut self, now: TimeUs, tx: &ActiveTx) -> Option<Packet> {
        let rx = &mut self.stations[tx.dst];
        if rx.last_rx_seq[tx.station] == Some(tx.frame.mac_seq) {
            return None;
        }
        rx.last_rx_seq[tx.station] = Some(tx.frame.mac_seq);
        let packet = tx.frame.packet;
        match (&mut self.flows[packet.flow], packet.kind) {
            (FlowState::Udp { sink, .. }, PacketKind::Udp) => {
                sink.on_receive(now, packet.payload_bytes, packet.app_seq);
                None
            }
            (FlowState::Ping { client, .. }, PacketKind::PingReply) => {
                client.on_reply(packet.app_seq, now);
                None
            }
            (FlowState::Ping { .. }, PacketKind::PingRequest) => Some(packet),
            _ => unreachable!("packet kind does not match its flow"),
        }
    }

    fn set_acked(&mut self, slot: usize, acked: bool) {
        if let Some(ex) = self.exchange.as_mut() {
            ex.txs[slot].acked = Some(acked);
        }
    }

    fn on_ack_start(&mut self, now: TimeUs, slot: usize) -> Result<(), SimError> {
        let tx = self.exchange.as_ref().expect("ack inside an exchange").txs[slot];
        let mode = self.sc.dcf.ack_mode(tx.frame.mode);
        let duration = frame_duration_us(self.sc.dcf.ack_bytes, mode);
        let snr = self.snr(tx.dst, tx.station, now)?;
        self.log(EventRecord {
            t_us: now,
            kind: EventKind::Tx,
            frame: FrameKind::Ack,
            src: tx.dst as u16,
            dst: tx.station as u16,
            seq: tx.frame.mac_seq,
            attempt: tx.frame.attempts + 1,
            mode_mbps: mode.data_rate_mbps,
            duration_us: duration,
            snr_db: snr,
            outcome: None,
        });
        let li = self.link_index(tx.dst, tx.station);
        let ok = receive(self.sc.dcf.ack_bytes, mode, snr, &mut self.link_rx_rng[li]) == RxOutcome::Delivered;
        if let Some(ex) = self.exchange.as_mut() {
            ex.txs[slot].acked = Some(ok);
            ex.txs[slot].ack = Some((mode, snr));
        }
        self.queue.schedule_in(duration, Ev::AckEnd { slot });
        Ok(())
    }

    fn on_ack_end(&mut self, now: TimeUs, slot: usize) -> Result<(), SimError> {
        let tx = self.exchange.as_ref().expect("ack end inside an exchange").txs[slot];
        if let Some((mode, snr)) = tx.ack {
            let ok = tx.acked == Some(true);
            self.log(EventRecord {
                t_us: now,
                kind: EventKind::Rx,
                frame: FrameKind::Ack,
                src: tx.dst as u16,
                dst: tx.station as u16,
                seq: tx.frame.mac_seq,
                attempt: tx.frame.attempts + 1,
                mode_mbps: mode.data_rate_mbps,
                duration_us: 0,
                snr_db: snr,
                outcome: Some(if ok { Outcome::Delivered } else { Outcome::Corrupted }),
            });
        }
        if let Some(request) = tx.upcall {
            let reply = Packet {
                kind: PacketKind::PingReply,
                dst: tx.station,
                ..request
            };
            self.emit(now, tx.dst, reply);
        }
        let ex = self.exchange.as_mut().expect("exchange");
        ex.pending -= 1;
        if ex.pending == 0 {
            self.queue.schedule_in(0, Ev::ExchangeEnd);
        }
        Ok(())
    }

    fn on_exchange_end(&mut self, now: TimeUs) {
        let ex = self.exchange.take().expect("exchange end without exchange");
        self.idle_since = now;
        let retry_limit = self.sc.dcf.retry_limit;
        for tx in &ex.txs {
            let s = tx.station;
            let acked = tx.acked == Some(true);
            let st = &mut self.stations[s];
            if let RateCtl::Minstrel(ms) = &mut st.rate {
                ms.record(tx.frame.mode, acked);
            }
            let mut frame = st.current.expect("transmitting station has a frame");
            frame.attempts += 1;
            if acked {
                st.stats.frames_acked += 1;
                st.cw.reset();
                st.current = None;
                self.start_next_frame(now, s);
                continue;
            }
            if ex.collided {
                st.stats.collisions += 1;
            }
            if frame.attempts > retry_limit {
                st.stats.frames_dropped += 1;
                st.cw.reset();
                st.current = None;
                self.log(EventRecord {
                    t_us: now,
                    kind: EventKind::Drop,
                    frame: FrameKind::Data,
                    src: s as u16,
                    dst: tx.dst as u16,
                    seq: frame.mac_seq,
                    attempt: frame.attempts,
                    mode_mbps: frame.mode.data_rate_mbps,
                    duration_us: 0,
                    snr_db: f64::NAN,
                    outcome: None,
                });
                self.start_next_frame(now, s);
            } else {
                st.cw.on_failure();
                st.backoff_left = backoff_slots(st.cw.value(), &mut st.backoff_rng);
                st.current = Some(frame);
            }
        }
        let difs = self.sc.dcf.difs_us;
        for st in &mut self.stations {
            if st.current.is_some() {
                st.countdown_from = now + difs;
            }
        }
        self.reschedule_access(now);
    }
}
