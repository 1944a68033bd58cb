//! Operations behind the `tracesim` command line: run, record-trace, compare.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analysis::{
    cdf_to_csv, compare_runs, parse_series, rtt_median_series, throughput_series, AnalysisError, ComparisonReport,
    MetricKind, PerSecondSeries,
};
use crate::config::{ConfigError, ScenarioConfig};
use crate::sim::{self, format_event, RunOptions, SimRun, EVENT_LOG_HEADER};

/// SNR traces with silences longer than this trigger a warning.
pub const TRACE_GAP_WARN_US: u64 = 1_000_000;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("simulation failed: {0}")]
    Sim(#[from] sim::SimError),
}

impl CliError {
    /// 1 for usage and configuration problems, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 1,
            CliError::Analysis(AnalysisError::KindMismatch { .. } | AnalysisError::NoCandidates) => 1,
            CliError::Analysis(AnalysisError::Malformed { .. }) => 1,
            _ => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub duration_s: Option<f64>,
    pub out_dir: Option<PathBuf>,
}

/// Everything needed to repeat a run exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub seed: u64,
    /// SHA-256 of `config`.
    pub config_sha256: String,
    /// Resolved configuration (absolute paths, overrides applied) as TOML.
    pub config: String,
    pub outputs: Vec<String>,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const EVENTS_FILE: &str = "events.csv";

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Loads a scenario config, or the config embedded in a run manifest when
/// `path` has a `.json` extension.
pub fn load_config(path: &Path, ov: &Overrides) -> Result<ScenarioConfig, CliError> {
    let mut cfg = if path.extension().is_some_and(|e| e == "json") {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let m: RunManifest =
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: not a run manifest: {e}", path.display())))?;
        ScenarioConfig::parse(&m.config)?
    } else {
        ScenarioConfig::load(path)?
    };
    if let Some(s) = ov.seed {
        cfg.seed = s;
    }
    if let Some(d) = ov.duration_s {
        cfg.duration_s = d;
    }
    if let Some(o) = &ov.out_dir {
        cfg.out_dir = Some(std::path::absolute(o).map_err(io_err(o))?);
    }
    if cfg.out_dir.is_none() {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.out_dir = Some(base.join("out").join(stem));
    }
    Ok(cfg)
}

fn warn_trace_gaps(scenario: &sim::Scenario) {
    if let crate::channel::PropagationSpec::TraceReplay(trace) = &scenario.propagation {
        for g in trace.gaps_exceeding(TRACE_GAP_WARN_US) {
            log::warn!("SNR trace gap on {}: {:?}; holding the last value", g.link, g);
        }
    }
}

#[derive(Debug)]
pub struct RunOutput {
    pub out_dir: PathBuf,
    pub manifest: RunManifest,
    pub run: SimRun,
    pub series: Vec<(String, PerSecondSeries)>,
}

/// Executes a config and writes the event log, per-second series and the
/// run manifest into the output directory.
pub fn run(config_path: &Path, ov: &Overrides) -> Result<RunOutput, CliError> {
    let cfg = load_config(config_path, ov)?;
    let scenario = cfg.to_scenario()?;
    warn_trace_gaps(&scenario);
    let out_dir = cfg.out_dir.clone().expect("set by load_config");
    fs::create_dir_all(&out_dir).map_err(io_err(&out_dir))?;

    let events_path = out_dir.join(EVENTS_FILE);
    let file = File::create(&events_path).map_err(io_err(&events_path))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "{EVENT_LOG_HEADER}").map_err(io_err(&events_path))?;
    let node_ids: Vec<String> = scenario.nodes.iter().map(|n| n.id.clone()).collect();
    let mut write_err = None;
    let mut sink = |e: &sim::EventRecord| {
        if write_err.is_none() {
            if let Err(err) = writeln!(w, "{}", format_event(e, &node_ids)) {
                write_err = Some(err);
            }
        }
    };
    let opts = RunOptions {
        log_events: true,
        record_snr: false,
    };
    let run = sim::run_with_sink(&scenario, opts, &mut sink)?;
    if let Some(err) = write_err {
        return Err(io_err(&events_path)(err));
    }
    w.flush().map_err(io_err(&events_path))?;

    let label = cfg.label();
    let mut series = Vec::new();
    for f in &run.udp {
        let s = throughput_series(&f.rx_log, run.duration_us, &label);
        series.push((format!("throughput_{}_{}.csv", f.src, f.dst), s));
    }
    for p in &run.ping {
        let s = rtt_median_series(&p.samples, run.duration_us, &label);
        series.push((format!("rtt_{}_{}.csv", p.src, p.dst), s));
    }
    let mut outputs = vec![EVENTS_FILE.to_string()];
    for (name, s) in &series {
        let path = out_dir.join(name);
        fs::write(&path, s.to_csv()).map_err(io_err(&path))?;
        outputs.push(name.clone());
    }
    let config_text = cfg.to_toml();
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        config_sha256: sha256_hex(config_text.as_bytes()),
        config: config_text,
        outputs,
    };
    let mpath = out_dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest is serializable");
    fs::write(&mpath, json).map_err(io_err(&mpath))?;
    Ok(RunOutput {
        out_dir,
        manifest,
        run,
        series,
    })
}

/// Runs an analytic-propagation config and writes the receiver SNR of every
/// transmission as an SNR trace. Returns the number of rows written.
pub fn record_trace(config_path: &Path, out: &Path, ov: &Overrides) -> Result<usize, CliError> {
    let cfg = load_config(config_path, ov)?;
    let scenario = cfg.to_scenario()?;
    if scenario.propagation.is_trace() {
        return Err(CliError::Usage(
            "record-trace needs an analytic propagation model, not a trace replay".into(),
        ));
    }
    let run = sim::run(
        &scenario,
        RunOptions {
            log_events: false,
            record_snr: true,
        },
    )?;
    let trace = run.snr_trace();
    let (csv, rows) = match &trace {
        Some(t) => (t.to_csv(), run.receptions.len()),
        None => (format!("{}\n", crate::traces::SNR_HEADER), 0),
    };
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(out, csv).map_err(io_err(out))?;
    Ok(rows)
}

pub fn read_series(path: &Path) -> Result<PerSecondSeries, CliError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let mut s = parse_series(&bytes).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    if s.label.is_empty() {
        s.label = path.file_stem().and_then(|x| x.to_str()).unwrap_or("series").to_string();
    }
    Ok(s)
}

/// Compares candidate series against a reference and writes `report.json`,
/// `report.txt` and one `cdf_<n>_<label>.csv` per candidate into `out_dir`.
pub fn compare(
    metric: MetricKind,
    reference: &Path,
    candidates: &[PathBuf],
    out_dir: &Path,
) -> Result<ComparisonReport, CliError> {
    if candidates.is_empty() {
        return Err(CliError::Usage("compare needs at least one candidate".into()));
    }
    let r = read_series(reference)?;
    let cs = candidates.iter().map(|p| read_series(p)).collect::<Result<Vec<_>, _>>()?;
    let report = compare_runs(&r, &cs, metric)?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let json_path = out_dir.join("report.json");
    fs::write(&json_path, report.to_json()).map_err(io_err(&json_path))?;
    let txt_path = out_dir.join("report.txt");
    fs::write(&txt_path, report.to_table()).map_err(io_err(&txt_path))?;
    for (i, c) in report.candidates.iter().enumerate() {
        let safe: String = c
            .label
            .chars()
            .map(|ch| if ch.is_ascii_alphanumeric() || ch == '-' || ch == '.' { ch } else { '_' })
            .collect();
        let p = out_dir.join(format!("cdf_{i}_{safe}.csv"));
        fs::write(&p, cdf_to_csv(&c.cdf)).map_err(io_err(&p))?;
    }
    Ok(report)
}
