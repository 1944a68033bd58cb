//! SNR and waypoint traces: data model, CSV interchange and lookups.
//!
//! Both formats are UTF-8 CSV with a fixed header. Blank lines and lines
//! starting with `#` are ignored. Serializing a parsed trace and parsing it
//! again yields an equal structure.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::engine::TimeUs;

pub const SNR_HEADER: &str = "t_us,tx,rx,snr_db";
pub const MOBILITY_HEADER: &str = "t_us,node,x_m,y_m,z_m";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TraceError {
    #[error("input is not valid UTF-8")]
    Encoding,
    #[error("trace contains no samples")]
    Empty,
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: non-finite value")]
    NonFinite { line: usize },
    #[error("line {line}: duplicate waypoint for node {node} at {t_us} us")]
    DuplicateWaypoint { line: usize, node: String, t_us: TimeUs },
    #[error("no trace for link {0}")]
    UnknownLink(DirectedLink),
    #[error("unknown node {0}")]
    UnknownNode(String),
}

/// A transmitter/receiver pair. `(A, B)` and `(B, A)` are different links.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DirectedLink {
    pub tx: String,
    pub rx: String,
}

impl DirectedLink {
    pub fn new(tx: impl Into<String>, rx: impl Into<String>) -> Self {
        Self {
            tx: tx.into(),
            rx: rx.into(),
        }
    }

    pub fn reversed(&self) -> Self {
        Self {
            tx: self.rx.clone(),
            rx: self.tx.clone(),
        }
    }
}

impl fmt::Display for DirectedLink {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{}", self.tx, self.rx)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnrSample {
    pub t_us: TimeUs,
    pub snr_db: f64,
}

/// Per-link receiver SNR observations, each sequence strictly ascending in time.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SnrTrace {
    links: BTreeMap<DirectedLink, Vec<SnrSample>>,
}

/// A stretch of a link's trace with no samples for longer than a threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceGap {
    pub link: DirectedLink,
    pub from_us: TimeUs,
    pub to_us: TimeUs,
}

impl SnrTrace {
    /// Builds a trace from unordered samples. Duplicate timestamps on a link
    /// keep the last occurrence.
    pub fn from_samples<I>(samples: I) -> Result<Self, TraceError>
    where
        I: IntoIterator<Item = (DirectedLink, SnrSample)>,
    {
        let mut links: BTreeMap<DirectedLink, Vec<SnrSample>> = BTreeMap::new();
        for (link, s) in samples {
            if !s.snr_db.is_finite() {
                return Err(TraceError::NonFinite { line: 0 });
            }
            links.entry(link).or_default().push(s);
        }
        if links.is_empty() {
            return Err(TraceError::Empty);
        }
        for seq in links.values_mut() {
            normalize(seq);
        }
        Ok(Self { links })
    }

    /// Constant SNR on each given link from t = 0.
    pub fn constant(levels: &[(DirectedLink, f64)]) -> Result<Self, TraceError> {
        Self::from_samples(
            levels
                .iter()
                .map(|(l, snr)| (l.clone(), SnrSample { t_us: 0, snr_db: *snr })),
        )
    }

    pub fn links(&self) -> impl Iterator<Item = &DirectedLink> {
        self.links.keys()
    }

    pub fn samples(&self, link: &DirectedLink) -> Option<&[SnrSample]> {
        self.links.get(link).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.links.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    /// Zero-order hold lookup: the latest sample at or before `t_us`, or the
    /// first sample when `t_us` precedes the trace.
    pub fn snr_at(&self, link: &DirectedLink, t_us: TimeUs) -> Result<f64, TraceError> {
        let samples = self
            .samples(link)
            .ok_or_else(|| TraceError::UnknownLink(link.clone()))?;
        Ok(hold_last(samples, t_us))
    }

    pub fn gaps_exceeding(&self, threshold_us: TimeUs) -> Vec<TraceGap> {
        let mut gaps = Vec::new();
        for (link, seq) in &self.links {
            for w in seq.windows(2) {
                if w[1].t_us - w[0].t_us > threshold_us {
                    gaps.push(TraceGap {
                        link: link.clone(),
                        from_us: w[0].t_us,
                        to_us: w[1].t_us,
                    });
                }
            }
        }
        gaps
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(32 * self.len() + 32);
        out.push_str(SNR_HEADER);
        out.push('\n');
        for (link, seq) in &self.links {
            for s in seq {
                out.push_str(&format!("{},{},{},{}\n", s.t_us, link.tx, link.rx, s.snr_db));
            }
        }
        out
    }
}

/// Hold-last lookup over a non-empty ascending sample slice.
pub fn hold_last(samples: &[SnrSample], t_us: TimeUs) -> f64 {
    let idx = samples.partition_point(|s| s.t_us <= t_us);
    if idx == 0 {
        samples[0].snr_db
    } else {
        samples[idx - 1].snr_db
    }
}

fn normalize(seq: &mut Vec<SnrSample>) {
    // stable sort keeps file order among equal timestamps, so the last wins below
    seq.sort_by_key(|s| s.t_us);
    let mut out: Vec<SnrSample> = Vec::with_capacity(seq.len());
    for s in seq.drain(..) {
        match out.last_mut() {
            Some(prev) if prev.t_us == s.t_us => *prev = s,
            _ => out.push(s),
        }
    }
    *seq = out;
}

/// Iterates over data lines as `(line_number, fields)`, skipping blanks,
/// comments and the expected header.
fn data_lines<'a>(
    text: &'a str,
    header: &'a str,
) -> impl Iterator<Item = (usize, Vec<&'a str>)> + 'a {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .filter(move |(_, l)| *l != header)
        .map(|(n, l)| (n, l.split(',').map(str::trim).collect()))
}

fn malformed(line: usize, reason: impl Into<String>) -> TraceError {
    TraceError::Malformed {
        line,
        reason: reason.into(),
    }
}

fn field_time(line: usize, s: &str) -> Result<TimeUs, TraceError> {
    s.parse::<TimeUs>()
        .map_err(|_| malformed(line, format!("invalid timestamp {s:?}")))
}

fn field_real(line: usize, name: &str, s: &str) -> Result<f64, TraceError> {
    let v = s
        .parse::<f64>()
        .map_err(|_| malformed(line, format!("invalid {name} {s:?}")))?;
    if !v.is_finite() {
        return Err(TraceError::NonFinite { line });
    }
    Ok(v)
}

fn field_id(line: usize, s: &str) -> Result<String, TraceError> {
    if s.is_empty() || s.chars().any(char::is_whitespace) {
        return Err(malformed(line, format!("invalid node id {s:?}")));
    }
    Ok(s.to_string())
}

pub fn parse_snr_trace(bytes: &[u8]) -> Result<SnrTrace, TraceError> {
    let text = std::str::from_utf8(bytes).map_err(|_| TraceError::Encoding)?;
    let mut links: BTreeMap<DirectedLink, Vec<SnrSample>> = BTreeMap::new();
    for (line, f) in data_lines(text, SNR_HEADER) {
        if f.len() != 4 {
            return Err(malformed(line, format!("expected 4 fields, got {}", f.len())));
        }
        let t_us = field_time(line, f[0])?;
        let tx = field_id(line, f[1])?;
        let rx = field_id(line, f[2])?;
        if tx == rx {
            return Err(malformed(line, "transmitter and receiver are the same node"));
        }
        let snr_db = field_real(line, "snr_db", f[3])?;
        links
            .entry(DirectedLink { tx, rx })
            .or_default()
            .push(SnrSample { t_us, snr_db });
    }
    if links.is_empty() {
        return Err(TraceError::Empty);
    }
    for seq in links.values_mut() {
        normalize(seq);
    }
    Ok(SnrTrace { links })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Position {
    pub x_m: f64,
    pub y_m: f64,
    pub z_m: f64,
}

impl Position {
    pub fn new(x_m: f64, y_m: f64, z_m: f64) -> Self {
        Self { x_m, y_m, z_m }
    }

    pub fn distance(&self, other: &Position) -> f64 {
        let dx = self.x_m - other.x_m;
        let dy = self.y_m - other.y_m;
        let dz = self.z_m - other.z_m;
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    fn lerp(&self, other: &Position, frac: f64) -> Position {
        Position {
            x_m: self.x_m + (other.x_m - self.x_m) * frac,
            y_m: self.y_m + (other.y_m - self.y_m) * frac,
            z_m: self.z_m + (other.z_m - self.z_m) * frac,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    pub t_us: TimeUs,
    pub pos: Position,
}

/// Node trajectories as waypoint sequences, linearly interpolated.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MobilityTrace {
    nodes: BTreeMap<String, Vec<Waypoint>>,
}

impl MobilityTrace {
    /// One fixed waypoint per node at t = 0.
    pub fn from_static<I, S>(positions: I) -> Self
    where
        I: IntoIterator<Item = (S, Position)>,
        S: Into<String>,
    {
        let nodes = positions
            .into_iter()
            .map(|(id, pos)| (id.into(), vec![Waypoint { t_us: 0, pos }]))
            .collect();
        Self { nodes }
    }

    /// Sets the trajectory of `node`, replacing any previous one. Waypoints
    /// are sorted by time; repeated timestamps and non-finite coordinates
    /// are rejected.
    pub fn insert_waypoints(&mut self, node: impl Into<String>, mut wps: Vec<Waypoint>) -> Result<(), TraceError> {
        let node = node.into();
        if wps.is_empty() {
            return Err(TraceError::Empty);
        }
        if wps.iter().any(|w| !(w.pos.x_m.is_finite() && w.pos.y_m.is_finite() && w.pos.z_m.is_finite())) {
            return Err(TraceError::NonFinite { line: 0 });
        }
        wps.sort_by_key(|w| w.t_us);
        if let Some(p) = wps.windows(2).find(|p| p[0].t_us == p[1].t_us) {
            return Err(TraceError::DuplicateWaypoint {
                line: 0,
                node,
                t_us: p[0].t_us,
            });
        }
        self.nodes.insert(node, wps);
        Ok(())
    }

    pub fn nodes(&self) -> impl Iterator<Item = &str> {
        self.nodes.keys().map(String::as_str)
    }

    pub fn contains(&self, node: &str) -> bool {
        self.nodes.contains_key(node)
    }

    pub fn waypoints(&self, node: &str) -> Option<&[Waypoint]> {
        self.nodes.get(node).map(Vec::as_slice)
    }

    pub fn position_at(&self, node: &str, t_us: TimeUs) -> Result<Position, TraceError> {
        let wps = self
            .waypoints(node)
            .ok_or_else(|| TraceError::UnknownNode(node.to_string()))?;
        Ok(interpolate(wps, t_us))
    }

    pub fn link_distance(&self, a: &str, b: &str, t_us: TimeUs) -> Result<f64, TraceError> {
        Ok(self.position_at(a, t_us)?.distance(&self.position_at(b, t_us)?))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(MOBILITY_HEADER);
        out.push('\n');
        for (node, wps) in &self.nodes {
            for w in wps {
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    w.t_us, node, w.pos.x_m, w.pos.y_m, w.pos.z_m
                ));
            }
        }
        out
    }
}

fn interpolate(wps: &[Waypoint], t_us: TimeUs) -> Position {
    let idx = wps.partition_point(|w| w.t_us <= t_us);
    if idx == 0 {
        return wps[0].pos;
    }
    if idx == wps.len() {
        return wps[idx - 1].pos;
    }
    let (a, b) = (&wps[idx - 1], &wps[idx]);
    let frac = (t_us - a.t_us) as f64 / (b.t_us - a.t_us) as f64;
    a.pos.lerp(&b.pos, frac)
}

pub fn parse_mobility(bytes: &[u8]) -> Result<MobilityTrace, TraceError> {
    let text = std::str::from_utf8(bytes).map_err(|_| TraceError::Encoding)?;
    let mut nodes: BTreeMap<String, Vec<(usize, Waypoint)>> = BTreeMap::new();
    for (line, f) in data_lines(text, MOBILITY_HEADER) {
        if f.len() != 5 {
            return Err(malformed(line, format!("expected 5 fields, got {}", f.len())));
        }
        let t_us = field_time(line, f[0])?;
        let node = field_id(line, f[1])?;
        let pos = Position {
            x_m: field_real(line, "x_m", f[2])?,
            y_m: field_real(line, "y_m", f[3])?,
            z_m: field_real(line, "z_m", f[4])?,
        };
        nodes.entry(node).or_default().push((line, Waypoint { t_us, pos }));
    }
    if nodes.is_empty() {
        return Err(TraceError::Empty);
    }
    let mut out = BTreeMap::new();
    for (node, mut wps) in nodes {
        wps.sort_by_key(|(_, w)| w.t_us);
        for pair in wps.windows(2) {
            if pair[0].1.t_us == pair[1].1.t_us {
                let line = pair[0].0.max(pair[1].0);
                return Err(TraceError::DuplicateWaypoint {
                    line,
                    node,
                    t_us: pair[1].1.t_us,
                });
            }
        }
        out.insert(node, wps.into_iter().map(|(_, w)| w).collect());
    }
    Ok(MobilityTrace { nodes: out })
}
