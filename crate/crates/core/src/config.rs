//! TOML scenario configuration and its resolution into a [`Scenario`].
//!
//! Relative file paths are resolved against the directory of the config
//! file. See the README for the full schema.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::apps::{PingConfig, UdpFlowConfig, HEADER_OVERHEAD_BYTES};
use crate::channel::{PathLoss, PropagationSpec, RadioParams};
use crate::link::dcf::DcfParams;
use crate::link::minstrel::MinstrelParams;
use crate::link::queue::DEFAULT_QUEUE_CAPACITY;
use crate::phy::PhyMode;
use crate::sim::{NodeSpec, RateControl, Scenario, Traffic};
use crate::traces::{parse_mobility, parse_snr_trace, MobilityTrace, Position, TraceError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Trace {
        path: PathBuf,
        #[source]
        source: TraceError,
    },
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_duration_s")]
    pub duration_s: f64,
    #[serde(default)]
    pub seed: u64,
    /// Label written into the series files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    /// Waypoint file; when set, node positions come from it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mobility: Option<PathBuf>,
    pub nodes: Vec<NodeConfig>,
    pub propagation: PropagationConfig,
    #[serde(default)]
    pub radio: RadioConfig,
    pub traffic: TrafficConfig,
    #[serde(default)]
    pub mac: MacConfig,
}

fn default_duration_s() -> f64 {
    300.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeConfig {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<[f64; 3]>,
    #[serde(default)]
    pub processing_delay_us: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PropagationModel {
    Trace,
    Friis,
    Logdist,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropagationConfig {
    pub model: PropagationModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_distance_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nakagami_m: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RadioConfig {
    pub tx_power_dbm: f64,
    pub rf_gain_db_per_end: f64,
    pub bandwidth_hz: f64,
    pub center_freq_hz: f64,
    pub noise_figure_db: f64,
}

impl Default for RadioConfig {
    fn default() -> Self {
        let r = RadioParams::default();
        Self {
            tx_power_dbm: r.tx_power_dbm,
            rf_gain_db_per_end: r.rf_gain_db_per_end,
            bandwidth_hz: r.bandwidth_hz,
            center_freq_hz: r.center_freq_hz,
            noise_figure_db: r.noise_figure_db,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrafficKind {
    Ping,
    UdpUni,
    UdpBidi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficConfig {
    pub kind: TrafficKind,
    /// Defaults to the first node.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub src: Option<String>,
    /// Defaults to the second node.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dst: Option<String>,
    #[serde(default = "default_load")]
    pub offered_load_bps: f64,
    #[serde(default = "default_payload")]
    pub payload_bytes: usize,
    #[serde(default = "default_interval_ms")]
    pub interval_ms: f64,
    #[serde(default)]
    pub start_s: f64,
    /// Defaults to the run duration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_s: Option<f64>,
}

fn default_load() -> f64 {
    54e6
}
fn default_payload() -> usize {
    1472
}
fn default_interval_ms() -> f64 {
    100.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RateControlKind {
    Minstrel,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MacConfig {
    pub rate_control: RateControlKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_mode_mbps: Option<u32>,
    pub queue_capacity: usize,
    pub retry_limit: u32,
    pub basic_rates_mbps: Vec<u32>,
    pub header_overhead_bytes: usize,
}

impl Default for MacConfig {
    fn default() -> Self {
        let d = DcfParams::default();
        Self {
            rate_control: RateControlKind::Minstrel,
            fixed_mode_mbps: None,
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
            retry_limit: d.retry_limit,
            basic_rates_mbps: d.basic_rates_mbps,
            header_overhead_bytes: HEADER_OVERHEAD_BYTES,
        }
    }
}

fn seconds_to_us(s: f64, what: &str) -> Result<u64, ConfigError> {
    if !(s.is_finite() && s >= 0.0) {
        return invalid(format!("{what} must be a non-negative number of seconds, got {s}"));
    }
    Ok((s * 1e6).round() as u64)
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    /// Makes every relative path absolute with respect to `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = self.out_dir.as_mut() {
            fix(p);
        }
        if let Some(p) = self.mobility.as_mut() {
            fix(p);
        }
        if let Some(p) = self.propagation.trace.as_mut() {
            fix(p);
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is serializable")
    }

    pub fn duration_us(&self) -> Result<u64, ConfigError> {
        let d = seconds_to_us(self.duration_s, "duration_s")?;
        if d == 0 {
            return invalid("duration_s must be > 0");
        }
        Ok(d)
    }

    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| match self.propagation.model {
            PropagationModel::Trace => "trace".into(),
            PropagationModel::Friis => "friis".into(),
            PropagationModel::Logdist => format!("logdist{}", self.propagation.gamma.unwrap_or(2.0)),
        })
    }

    /// Checks the config and loads every referenced file.
    pub fn to_scenario(&self) -> Result<Scenario, ConfigError> {
        let duration_us = self.duration_us()?;
        if self.nodes.len() < 2 {
            return invalid("at least two [[nodes]] are required");
        }
        let propagation = self.propagation_spec()?;
        let mobility = self.mobility_trace()?;
        let nodes = self
            .nodes
            .iter()
            .map(|n| NodeSpec {
                id: n.id.clone(),
                processing_delay_us: n.processing_delay_us,
            })
            .collect();
        let r = &self.radio;
        let radio = RadioParams {
            tx_power_dbm: r.tx_power_dbm,
            rf_gain_db_per_end: r.rf_gain_db_per_end,
            bandwidth_hz: r.bandwidth_hz,
            center_freq_hz: r.center_freq_hz,
            noise_figure_db: r.noise_figure_db,
        };
        let dcf = DcfParams {
            retry_limit: self.mac.retry_limit,
            basic_rates_mbps: self.mac.basic_rates_mbps.clone(),
            ..DcfParams::default()
        };
        let rate_control = match (self.mac.rate_control, self.mac.fixed_mode_mbps) {
            (RateControlKind::Minstrel, None) => RateControl::Minstrel(MinstrelParams::default()),
            (RateControlKind::Minstrel, Some(_)) => {
                return invalid("fixed_mode_mbps is only valid with rate_control = \"fixed\"")
            }
            (RateControlKind::Fixed, Some(r)) => match PhyMode::from_mbps(r) {
                Some(m) => RateControl::Fixed(m),
                None => return invalid(format!("{r} Mbit/s is not an 802.11a rate")),
            },
            (RateControlKind::Fixed, None) => return invalid("rate_control = \"fixed\" requires fixed_mode_mbps"),
        };
        let scenario = Scenario {
            nodes,
            mobility,
            propagation,
            radio,
            dcf,
            rate_control,
            queue_capacity: self.mac.queue_capacity,
            header_overhead_bytes: self.mac.header_overhead_bytes,
            traffic: self.traffic_specs(duration_us)?,
            duration_us,
            seed: self.seed,
        };
        scenario.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(scenario)
    }

    fn propagation_spec(&self) -> Result<PropagationSpec, ConfigError> {
        let p = &self.propagation;
        let analytic_keys = p.gamma.is_some() || p.ref_distance_m.is_some() || p.nakagami_m.is_some();
        match p.model {
            PropagationModel::Trace => {
                if analytic_keys {
                    return invalid("trace replay takes no gamma, ref_distance_m or nakagami_m");
                }
                let Some(path) = &p.trace else {
                    return invalid("model = \"trace\" requires a trace file");
                };
                let bytes = std::fs::read(path).map_err(|source| ConfigError::Io {
                    path: path.clone(),
                    source,
                })?;
                let trace = parse_snr_trace(&bytes).map_err(|source| ConfigError::Trace {
                    path: path.clone(),
                    source,
                })?;
                Ok(PropagationSpec::TraceReplay(trace))
            }
            PropagationModel::Friis | PropagationModel::Logdist => {
                if p.trace.is_some() {
                    return invalid("a trace file cannot be combined with an analytic propagation model");
                }
                let path_loss = if p.model == PropagationModel::Friis {
                    if p.gamma.is_some() || p.ref_distance_m.is_some() {
                        return invalid("friis takes no gamma or ref_distance_m");
                    }
                    PathLoss::Friis
                } else {
                    PathLoss::LogDistance {
                        gamma: p.gamma.ok_or_else(|| ConfigError::Invalid("logdist requires gamma".into()))?,
                        ref_distance_m: p.ref_distance_m.unwrap_or(1.0),
                    }
                };
                Ok(PropagationSpec::Analytic {
                    path_loss,
                    nakagami_m: p.nakagami_m,
                })
            }
        }
    }

    fn mobility_trace(&self) -> Result<MobilityTrace, ConfigError> {
        if let Some(path) = &self.mobility {
            if self.nodes.iter().any(|n| n.position.is_some()) {
                return invalid("give node positions either inline or in the mobility file, not both");
            }
            let bytes = std::fs::read(path).map_err(|source| ConfigError::Io {
                path: path.clone(),
                source,
            })?;
            return parse_mobility(&bytes).map_err(|source| ConfigError::Trace {
                path: path.clone(),
                source,
            });
        }
        let mut positions = Vec::new();
        for n in &self.nodes {
            match n.position {
                Some([x, y, z]) if x.is_finite() && y.is_finite() && z.is_finite() => {
                    positions.push((n.id.clone(), Position::new(x, y, z)))
                }
                Some(_) => return invalid(format!("node {} has a non-finite position", n.id)),
                None if self.propagation.model == PropagationModel::Trace => {}
                None => return invalid(format!("node {} needs a position for analytic propagation", n.id)),
            }
        }
        Ok(MobilityTrace::from_static(positions))
    }

    fn traffic_specs(&self, duration_us: u64) -> Result<Vec<Traffic>, ConfigError> {
        let t = &self.traffic;
        let src = t.src.clone().unwrap_or_else(|| self.nodes[0].id.clone());
        let dst = t.dst.clone().unwrap_or_else(|| self.nodes[1].id.clone());
        let start = seconds_to_us(t.start_s, "start_s")?;
        let stop = match t.stop_s {
            Some(s) => seconds_to_us(s, "stop_s")?,
            None => duration_us,
        };
        Ok(match t.kind {
            TrafficKind::Ping => {
                let interval = seconds_to_us(t.interval_ms / 1000.0, "interval_ms")?;
                vec![Traffic::Ping(PingConfig {
                    interval_us: interval,
                    payload_bytes: t.payload_bytes,
                    ..PingConfig::new(src, dst, start, stop)
                })]
            }
            TrafficKind::UdpUni | TrafficKind::UdpBidi => {
                let flow = UdpFlowConfig {
                    offered_load_bps: t.offered_load_bps,
                    payload_bytes: t.payload_bytes,
                    ..UdpFlowConfig::new(src, dst, start, stop)
                };
                if t.kind == TrafficKind::UdpBidi {
                    vec![Traffic::Udp(flow.clone()), Traffic::Udp(flow.reversed())]
                } else {
                    vec![Traffic::Udp(flow)]
                }
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
seed = 7
duration_s = 10

[[nodes]]
id = "A"
position = [0.0, 0.0, 0.0]

[[nodes]]
id = "B"
position = [6.0, 0.0, 0.0]

[propagation]
model = "friis"

[traffic]
kind = "udp_bidi"
"#;

    #[test]
    fn parses_and_resolves() {
        let cfg = ScenarioConfig::parse(BASE).unwrap();
        assert_eq!(cfg.duration_s, 10.0);
        assert_eq!(cfg.mac, MacConfig::default());
        let sc = cfg.to_scenario().unwrap();
        assert_eq!(sc.traffic.len(), 2);
        assert_eq!(sc.duration_us, 10_000_000);
        assert!(matches!(sc.rate_control, RateControl::Minstrel(_)));
        let back = ScenarioConfig::parse(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn duration_defaults_to_300() {
        let text = BASE.replace("duration_s = 10\n", "");
        assert_eq!(ScenarioConfig::parse(&text).unwrap().duration_s, 300.0);
    }

    #[test]
    fn trace_and_analytic_are_exclusive() {
        let text = BASE.replace("model = \"friis\"", "model = \"friis\"\ntrace = \"x.csv\"");
        let err = ScenarioConfig::parse(&text).unwrap().to_scenario().unwrap_err();
        assert!(err.to_string().contains("cannot be combined"), "{err}");
        let text = BASE.replace("model = \"friis\"", "model = \"trace\"\ngamma = 2.0\ntrace = \"x.csv\"");
        assert!(ScenarioConfig::parse(&text).unwrap().to_scenario().is_err());
    }

    #[test]
    fn rejects_bad_values() {
        for (from, to) in [
            ("duration_s = 10", "duration_s = 0"),
            ("kind = \"udp_bidi\"", "kind = \"tcp\""),
            ("model = \"friis\"", "model = \"logdist\""),
            ("[traffic]", "[traffic]\nbogus = 1"),
            ("[traffic]", "[mac]\nrate_control = \"fixed\"\nfixed_mode_mbps = 13\n[traffic]"),
            ("[traffic]", "[radio]\ntx_power_dbm = 30.0\n[traffic]"),
            ("id = \"B\"", "id = \"A\""),
        ] {
            let text = BASE.replace(from, to);
            let res = ScenarioConfig::parse(&text).and_then(|c| c.to_scenario());
            assert!(res.is_err(), "{to} accepted");
        }
    }

    #[test]
    fn fixed_rate() {
        let text = BASE.replace("[traffic]", "[mac]\nrate_control = \"fixed\"\nfixed_mode_mbps = 54\n[traffic]");
        let sc = ScenarioConfig::parse(&text).unwrap().to_scenario().unwrap();
        assert_eq!(sc.rate_control, RateControl::Fixed(PhyMode::from_mbps(54).unwrap()));
    }

    #[test]
    fn relative_paths_follow_config() {
        let mut cfg = ScenarioConfig::parse(&BASE.replace("model = \"friis\"", "model = \"trace\"\ntrace = \"t.csv\"")).unwrap();
        cfg.resolve_paths(Path::new("/data/run"));
        assert_eq!(cfg.propagation.trace.as_deref(), Some(Path::new("/data/run/t.csv")));
        assert!(matches!(cfg.to_scenario(), Err(ConfigError::Io { .. })));
    }
}
