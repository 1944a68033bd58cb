//! Per-second metrics, error measures, CDFs and run comparison.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use serde::Serialize;
use thiserror::Error;

use crate::apps::{RttSample, RxRecord};
use crate::engine::TimeUs;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("filtered sample reached metric (reference value {0})")]
    ZeroReference(f64),
    #[error("accuracy gain undefined for a baseline error of 0")]
    ZeroBaseline,
    #[error("empty input")]
    Empty,
    #[error("no overlapping seconds left after filtering")]
    NoOverlap,
    #[error("at least one candidate is required")]
    NoCandidates,
    #[error("metric kind mismatch: expected {expected}, series {label:?} is {found}")]
    KindMismatch {
        expected: MetricKind,
        found: MetricKind,
        label: String,
    },
    #[error("series line {line}: {reason}")]
    Malformed { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    ThroughputKbps,
    RttMedianMs,
}

impl MetricKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            MetricKind::ThroughputKbps => "throughput_kbps",
            MetricKind::RttMedianMs => "rtt_median_ms",
        }
    }

    pub fn parse(s: &str) -> Option<MetricKind> {
        match s {
            "throughput_kbps" => Some(MetricKind::ThroughputKbps),
            "rtt_median_ms" => Some(MetricKind::RttMedianMs),
            _ => None,
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One value per whole second of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct PerSecondSeries {
    pub kind: MetricKind,
    pub values: BTreeMap<u64, f64>,
    pub label: String,
}

impl PerSecondSeries {
    pub fn new(kind: MetricKind, label: impl Into<String>) -> Self {
        Self {
            kind,
            values: BTreeMap::new(),
            label: label.into(),
        }
    }

    pub fn from_values<I: IntoIterator<Item = (u64, f64)>>(kind: MetricKind, label: impl Into<String>, values: I) -> Self {
        Self {
            kind,
            values: values.into_iter().collect(),
            label: label.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, second: u64) -> Option<f64> {
        self.values.get(&second).copied()
    }

    /// Moves every entry by `offset` seconds, discarding those that would
    /// land before second 0. Used to align imported measurements.
    pub fn shifted(&self, offset: i64) -> Self {
        let values = self
            .values
            .iter()
            .filter_map(|(&k, &v)| {
                let k = k as i64 + offset;
                (k >= 0).then_some((k as u64, v))
            })
            .collect();
        Self {
            kind: self.kind,
            values,
            label: self.label.clone(),
        }
    }

    pub fn mean(&self) -> Option<f64> {
        if self.values.is_empty() {
            return None;
        }
        Some(self.values.values().sum::<f64>() / self.values.len() as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("# kind={} label={}\nsecond,value\n", self.kind, self.label);
        for (k, v) in &self.values {
            let _ = writeln!(out, "{k},{v}");
        }
        out
    }
}

/// Parses the series CSV written by [`PerSecondSeries::to_csv`].
pub fn parse_series(bytes: &[u8]) -> Result<PerSecondSeries, AnalysisError> {
    let text = std::str::from_utf8(bytes).map_err(|_| AnalysisError::Malformed {
        line: 0,
        reason: "not valid UTF-8".into(),
    })?;
    let mut kind = None;
    let mut label = String::new();
    let mut values = BTreeMap::new();
    let mut seen_header = false;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        let bad = |reason: String| AnalysisError::Malformed { line: line_no, reason };
        if line.is_empty() {
            continue;
        }
        if let Some(meta) = line.strip_prefix('#') {
            let meta = meta.trim();
            if let Some(rest) = meta.strip_prefix("kind=") {
                let (k, l) = match rest.split_once(char::is_whitespace) {
                    Some((k, l)) => (k, l.trim()),
                    None => (rest, ""),
                };
                kind = Some(MetricKind::parse(k).ok_or_else(|| bad(format!("unknown kind {k:?}")))?);
                label = l.strip_prefix("label=").unwrap_or(l).to_string();
            }
            continue;
        }
        if !seen_header && line == "second,value" {
            seen_header = true;
            continue;
        }
        let (k, v) = line
            .split_once(',')
            .ok_or_else(|| bad("expected `second,value`".into()))?;
        let k: u64 = k.trim().parse().map_err(|_| bad(format!("bad second {k:?}")))?;
        let v: f64 = v.trim().parse().map_err(|_| bad(format!("bad value {v:?}")))?;
        if !v.is_finite() {
            return Err(bad("non-finite value".into()));
        }
        if values.insert(k, v).is_some() {
            return Err(bad(format!("duplicate second {k}")));
        }
    }
    let kind = kind.ok_or(AnalysisError::Malformed {
        line: 0,
        reason: "missing `# kind=...` line".into(),
    })?;
    Ok(PerSecondSeries { kind, values, label })
}

/// Delivered payload per whole second, in kbit/s. Every second in
/// `[0, duration)` is present; a trailing partial second is dropped.
pub fn throughput_series(rx_log: &[RxRecord], duration_us: TimeUs, label: &str) -> PerSecondSeries {
    let bins = duration_us / 1_000_000;
    let mut bits = vec![0u64; bins as usize];
    for r in rx_log {
        let k = r.rx_time_us / 1_000_000;
        if k < bins {
            bits[k as usize] += 8 * r.payload_bytes as u64;
        }
    }
    PerSecondSeries::from_values(
        MetricKind::ThroughputKbps,
        label,
        bits.into_iter().enumerate().map(|(k, b)| (k as u64, b as f64 / 1000.0)),
    )
}

/// Lower-middle median of the RTT samples sent in each second, in ms.
/// Seconds without samples are absent.
pub fn rtt_median_series(samples: &[RttSample], duration_us: TimeUs, label: &str) -> PerSecondSeries {
    let bins = duration_us / 1_000_000;
    let mut per: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for s in samples {
        let k = s.sent_us / 1_000_000;
        if k < bins {
            per.entry(k).or_default().push(s.rtt_us as f64 / 1000.0);
        }
    }
    PerSecondSeries::from_values(
        MetricKind::RttMedianMs,
        label,
        per.into_iter()
            .map(|(k, v)| (k, lower_median(v).expect("bins are never empty"))),
    )
}

fn lower_median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    Some(v[(v.len() - 1) / 2])
}

pub fn absolute_error(pm_i: f64, pm_e: f64) -> f64 {
    (pm_i - pm_e).abs()
}

/// Relative error in percent of the reference `pm_e`.
pub fn relative_error(pm_i: f64, pm_e: f64) -> Result<f64, AnalysisError> {
    if pm_e == 0.0 {
        return Err(AnalysisError::ZeroReference(pm_e));
    }
    Ok((pm_i - pm_e).abs() / pm_e.abs() * 100.0)
}

/// Percent by which `err_ts` improves on the baseline `err_ps`; negative
/// when it is worse.
pub fn accuracy_gain(err_ts: f64, err_ps: f64) -> Result<f64, AnalysisError> {
    if err_ps == 0.0 {
        return Err(AnalysisError::ZeroBaseline);
    }
    Ok((1.0 - err_ts / err_ps) * 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CdfPoint {
    pub value: f64,
    pub fraction: f64,
}

/// Step CDF: one point per distinct value with the fraction of values at
/// or below it.
pub fn empirical_cdf(values: &[f64]) -> Result<Vec<CdfPoint>, AnalysisError> {
    if values.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut out: Vec<CdfPoint> = Vec::new();
    for (i, x) in v.iter().enumerate() {
        let fraction = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.value == *x => last.fraction = fraction,
            _ => out.push(CdfPoint { value: *x, fraction }),
        }
    }
    Ok(out)
}

/// Nearest-rank percentile: the `ceil(p * n)`-th smallest value (at least the first).
pub fn percentile(values: &[f64], p: f64) -> Result<f64, AnalysisError> {
    if values.is_empty() {
        return Err(AnalysisError::Empty);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = (p.clamp(0.0, 1.0) * v.len() as f64).ceil() as usize;
    Ok(v[rank.clamp(1, v.len()) - 1])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorSummary {
    pub p90: f64,
    pub p50: f64,
    pub mean: f64,
}

impl ErrorSummary {
    pub fn of(errors: &[f64]) -> Result<Self, AnalysisError> {
        Ok(Self {
            p90: percentile(errors, 0.9)?,
            p50: percentile(errors, 0.5)?,
            mean: errors.iter().sum::<f64>() / errors.len() as f64,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateReport {
    pub label: String,
    /// Per-second errors in second order.
    pub errors: Vec<f64>,
    pub cdf: Vec<CdfPoint>,
    pub summary: ErrorSummary,
}

/// Gains of the first candidate over one baseline; `None` where the
/// baseline statistic is zero.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GainReport {
    pub baseline: String,
    pub p90: Option<f64>,
    pub p50: Option<f64>,
    pub mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub metric: MetricKind,
    /// `relative_percent` for throughput, `absolute_ms` for RTT.
    pub error_measure: &'static str,
    pub reference: String,
    pub seconds_total: usize,
    pub seconds_kept: Vec<u64>,
    pub filtered_count: usize,
    pub filtered_fraction: f64,
    pub candidates: Vec<CandidateReport>,
    pub gains: Vec<GainReport>,
}

/// Compares candidates to a reference second by second.
///
/// Throughput: seconds with a zero reference are dropped and errors are
/// relative (percent). RTT: only seconds where every series has a sample
/// are kept and errors are absolute (ms). In both modes a second missing
/// from any series is dropped. The filtered fraction is taken over the
/// union of seconds present in any series.
pub fn compare_runs(
    reference: &PerSecondSeries,
    candidates: &[PerSecondSeries],
    metric: MetricKind,
) -> Result<ComparisonReport, AnalysisError> {
    if candidates.is_empty() {
        return Err(AnalysisError::NoCandidates);
    }
    for s in std::iter::once(reference).chain(candidates) {
        if s.kind != metric {
            return Err(AnalysisError::KindMismatch {
                expected: metric,
                found: s.kind,
                label: s.label.clone(),
            });
        }
    }
    let union: BTreeSet<u64> = std::iter::once(reference)
        .chain(candidates)
        .flat_map(|s| s.values.keys().copied())
        .collect();
    let kept: Vec<u64> = union
        .iter()
        .copied()
        .filter(|k| {
            let Some(r) = reference.get(*k) else { return false };
            if metric == MetricKind::ThroughputKbps && r == 0.0 {
                return false;
            }
            candidates.iter().all(|c| c.values.contains_key(k))
        })
        .collect();
    if kept.is_empty() {
        return Err(AnalysisError::NoOverlap);
    }
    let mut reports = Vec::with_capacity(candidates.len());
    for c in candidates {
        let errors = kept
            .iter()
            .map(|k| {
                let (pm_i, pm_e) = (c.values[k], reference.values[k]);
                match metric {
                    MetricKind::ThroughputKbps => relative_error(pm_i, pm_e),
                    MetricKind::RttMedianMs => Ok(absolute_error(pm_i, pm_e)),
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        reports.push(CandidateReport {
            label: c.label.clone(),
            cdf: empirical_cdf(&errors)?,
            summary: ErrorSummary::of(&errors)?,
            errors,
        });
    }
    let ts = reports[0].summary;
    let gains = reports[1..]
        .iter()
        .map(|b| GainReport {
            baseline: b.label.clone(),
            p90: accuracy_gain(ts.p90, b.summary.p90).ok(),
            p50: accuracy_gain(ts.p50, b.summary.p50).ok(),
            mean: accuracy_gain(ts.mean, b.summary.mean).ok(),
        })
        .collect();
    let filtered = union.len() - kept.len();
    Ok(ComparisonReport {
        metric,
        error_measure: match metric {
            MetricKind::ThroughputKbps => "relative_percent",
            MetricKind::RttMedianMs => "absolute_ms",
        },
        reference: reference.label.clone(),
        seconds_total: union.len(),
        filtered_count: filtered,
        filtered_fraction: filtered as f64 / union.len() as f64,
        seconds_kept: kept,
        candidates: reports,
        gains,
    })
}

impl ComparisonReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is serializable")
    }

    /// Plain-text table: one row per candidate with its 90th percentile,
    /// median and mean error.
    pub fn to_table(&self) -> String {
        let unit = match self.metric {
            MetricKind::ThroughputKbps => "%",
            MetricKind::RttMedianMs => "ms",
        };
        let width = self
            .candidates
            .iter()
            .map(|c| c.label.len())
            .max()
            .unwrap_or(0)
            .max("Approach".len());
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>12}  {:>12}  {:>12}",
            "Approach", "90th Perc.", "Median", "Average"
        );
        for c in &self.candidates {
            let s = c.summary;
            let _ = writeln!(
                out,
                "{:<width$}  {:>12}  {:>12}  {:>12}",
                c.label,
                format!("{:.2}{unit}", s.p90),
                format!("{:.2}{unit}", s.p50),
                format!("{:.2}{unit}", s.mean)
            );
        }
        let _ = writeln!(
            out,
            "filtered {} of {} seconds ({:.2}%)",
            self.filtered_count,
            self.seconds_total,
            self.filtered_fraction * 100.0
        );
        let fmt_gain = |g: Option<f64>| g.map(|g| format!("{g:.1}%")).unwrap_or_else(|| "n/a".into());
        for g in &self.gains {
            let _ = writeln!(
                out,
                "gain of {} over {}: p90 {}, median {}, average {}",
                self.candidates[0].label,
                g.baseline,
                fmt_gain(g.p90),
                fmt_gain(g.p50),
                fmt_gain(g.mean)
            );
        }
        out
    }
}

pub fn cdf_to_csv(points: &[CdfPoint]) -> String {
    let mut out = String::from("error,fraction\n");
    for p in points {
        let _ = writeln!(out, "{},{}", p.value, p.fraction);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rx(t: TimeUs, bytes: usize) -> RxRecord {
        RxRecord {
            rx_time_us: t,
            payload_bytes: bytes,
            seq: 0,
        }
    }

    fn rtt(sent_us: TimeUs, rtt_us: TimeUs) -> RttSample {
        RttSample { seq: 0, sent_us, rtt_us }
    }

    #[test]
    fn throughput_bins() {
        // 3e6 bits in second 5 as 250 packets of 1500 B
        let log: Vec<_> = (0..250).map(|i| rx(5_000_000 + i * 1000, 1500)).collect();
        let s = throughput_series(&log, 300_400_000, "x");
        assert_eq!(s.len(), 300);
        assert_eq!(s.get(5), Some(3000.0));
        assert_eq!(s.get(4), Some(0.0));
        assert_eq!(s.get(300), None);
    }

    #[test]
    fn rtt_medians() {
        let samples = [
            rtt(1_000, 1_100),
            rtt(2_000, 1_300),
            rtt(3_000, 9_000),
            rtt(1_000_100, 1_000),
            rtt(1_000_200, 2_000),
        ];
        let s = rtt_median_series(&samples, 10_000_000, "x");
        assert_eq!(s.get(0), Some(1.3));
        assert_eq!(s.get(1), Some(1.0));
        assert_eq!(s.get(7), None);
    }

    #[test]
    fn error_formulas() {
        assert_eq!(absolute_error(25.0, 28.0), 3.0);
        assert_eq!(absolute_error(4.5, 4.5), 0.0);
        assert!((relative_error(26_000.0, 28_000.0).unwrap() - 7.142857142857143).abs() < 1e-12);
        assert_eq!(relative_error(0.0, 28_000.0).unwrap(), 100.0);
        assert_eq!(relative_error(5.0, 5.0).unwrap(), 0.0);
        assert!(matches!(relative_error(1.0, 0.0), Err(AnalysisError::ZeroReference(_))));
        assert_eq!(accuracy_gain(7.0, 16.0).unwrap(), 56.25);
        assert!((accuracy_gain(14.0, 46.0).unwrap() - 69.565).abs() < 1e-3);
        assert!((accuracy_gain(5.0, 6.0).unwrap() - 16.667).abs() < 1e-3);
        assert_eq!(accuracy_gain(3.0, 3.0).unwrap(), 0.0);
        assert_eq!(accuracy_gain(1.0, 0.0), Err(AnalysisError::ZeroBaseline));
    }

    #[test]
    fn percentiles_and_cdf() {
        assert_eq!(percentile(&[3.0, 1.0, 2.0], 0.5).unwrap(), 2.0);
        let ten: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(percentile(&ten, 0.9).unwrap(), 9.0);
        assert_eq!(percentile(&[], 0.5), Err(AnalysisError::Empty));
        let c = empirical_cdf(&[4.0; 5]).unwrap();
        assert_eq!(c, vec![CdfPoint { value: 4.0, fraction: 1.0 }]);
        for p in [0.0, 0.1, 0.5, 0.9, 1.0] {
            assert_eq!(percentile(&[4.0; 5], p).unwrap(), 4.0);
        }
        assert_eq!(empirical_cdf(&[]), Err(AnalysisError::Empty));
    }

    fn thr(label: &str, v: &[f64]) -> PerSecondSeries {
        PerSecondSeries::from_values(
            MetricKind::ThroughputKbps,
            label,
            v.iter().enumerate().map(|(i, x)| (i as u64, *x)),
        )
    }

    #[test]
    fn compare_filters_zero_reference() {
        let mut r = vec![0.0, 0.0, 0.0];
        r.extend(std::iter::repeat_n(1000.0, 297));
        let reference = thr("real", &r);
        let same = thr("ts", &r);
        let off = thr("ps", &vec![900.0; 300]);
        let rep = compare_runs(&reference, &[same, off], MetricKind::ThroughputKbps).unwrap();
        assert_eq!(rep.filtered_count, 3);
        assert!((rep.filtered_fraction - 0.01).abs() < 1e-12);
        assert!(rep.candidates[0].errors.iter().all(|e| *e == 0.0));
        assert!((rep.candidates[1].summary.mean - 10.0).abs() < 1e-9);
        assert_eq!(rep.gains[0].mean, Some(100.0));
        assert_eq!(rep.gains[0].p90, Some(100.0));
    }

    #[test]
    fn compare_rtt_uses_intersection() {
        let mk = |label: &str, skip: Option<u64>| {
            PerSecondSeries::from_values(
                MetricKind::RttMedianMs,
                label,
                (0..20u64).filter(|k| Some(*k) != skip).map(|k| (k, 1.0 + k as f64 / 10.0)),
            )
        };
        let rep = compare_runs(&mk("real", None), &[mk("ts", None), mk("ps", Some(10))], MetricKind::RttMedianMs)
            .unwrap();
        assert!(!rep.seconds_kept.contains(&10));
        assert_eq!(rep.seconds_kept.len(), 19);
        assert_eq!(rep.candidates[0].errors.len(), 19);
        // both candidates equal the reference: baseline error is zero, gain undefined
        assert_eq!(rep.gains[0].mean, None);
    }

    #[test]
    fn compare_errors() {
        let r = thr("real", &[0.0, 0.0]);
        assert_eq!(
            compare_runs(&r, &[thr("c", &[1.0, 1.0])], MetricKind::ThroughputKbps),
            Err(AnalysisError::NoOverlap)
        );
        assert_eq!(compare_runs(&r, &[], MetricKind::ThroughputKbps), Err(AnalysisError::NoCandidates));
        assert!(matches!(
            compare_runs(&r, &[thr("c", &[1.0])], MetricKind::RttMedianMs),
            Err(AnalysisError::KindMismatch { .. })
        ));
    }

    #[test]
    fn series_csv_round_trip() {
        let s = PerSecondSeries::from_values(MetricKind::RttMedianMs, "ts run 1", [(0, 0.624), (3, 1.5)]);
        let back = parse_series(s.to_csv().as_bytes()).unwrap();
        assert_eq!(back, s);
        assert!(parse_series(b"second,value\n0,1\n").is_err());
        assert!(parse_series(b"# kind=rtt_median_ms label=x\n0,1\n0,2\n").is_err());
        assert!(parse_series(b"# kind=bogus\n").is_err());
    }

    #[test]
    fn shift_aligns() {
        let s = thr("x", &[1.0, 2.0, 3.0]);
        let t = s.shifted(-1);
        assert_eq!(t.values.into_iter().collect::<Vec<_>>(), vec![(0, 2.0), (1, 3.0)]);
    }

    proptest! {
        #[test]
        fn gain_sign(a in 0.0f64..100.0, b in 0.001f64..100.0) {
            let g = accuracy_gain(a, b).unwrap();
            prop_assert!((g - (1.0 - a / b) * 100.0).abs() < 1e-9);
            prop_assert_eq!(g < 0.0, a > b);
        }

        #[test]
        fn median_matches_percentile(v in proptest::collection::vec(0.01f64..50.0, 1..40)) {
            let samples: Vec<RttSample> = v.iter().enumerate()
                .map(|(i, ms)| rtt(i as u64, (ms * 1000.0).round() as u64)).collect();
            let s = rtt_median_series(&samples, 1_000_000, "x");
            let ms: Vec<f64> = samples.iter().map(|s| s.rtt_us as f64 / 1000.0).collect();
            prop_assert_eq!(s.get(0).unwrap(), percentile(&ms, 0.5).unwrap());
        }

        #[test]
        fn cdf_is_monotone(v in proptest::collection::vec(-1e3f64..1e3, 1..100)) {
            let c = empirical_cdf(&v).unwrap();
            prop_assert!(c.windows(2).all(|w| w[0].value < w[1].value && w[0].fraction < w[1].fraction));
            prop_assert_eq!(c.last().unwrap().fraction, 1.0);
            prop_assert!(c[0].fraction > 0.0);
        }

        #[test]
        fn candidate_order_does_not_change_tables(
            r in proptest::collection::vec(1.0f64..100.0, 5..30),
            a in proptest::collection::vec(1.0f64..100.0, 30),
            b in proptest::collection::vec(1.0f64..100.0, 30),
        ) {
            let n = r.len();
            let reference = thr("r", &r);
            let ca = thr("a", &a[..n]);
            let cb = thr("b", &b[..n]);
            let ab = compare_runs(&reference, &[ca.clone(), cb.clone()], MetricKind::ThroughputKbps).unwrap();
            let ba = compare_runs(&reference, &[cb, ca], MetricKind::ThroughputKbps).unwrap();
            prop_assert_eq!(&ab.candidates[0], &ba.candidates[1]);
            prop_assert_eq!(&ab.candidates[1], &ba.candidates[0]);
        }
    }
}
