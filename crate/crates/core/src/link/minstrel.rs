//! Minstrel-style rate control: per-mode EWMA delivery probability, periodic
//! updates, throughput-maximizing selection and lookaround probing.

use crate::engine::{RngStream, TimeUs};
use crate::link::dcf::DcfParams;
use crate::phy::PhyMode;

#[derive(Debug, Clone, PartialEq)]
pub struct MinstrelParams {
    /// Weight of the previous estimate in the EWMA.
    pub ewma_weight: f64,
    pub update_interval_us: TimeUs,
    /// One data frame in `probe_every` is a lookaround probe.
    pub probe_every: u64,
    /// Probes skip modes already delivering above this probability.
    pub probe_skip_above: f64,
}

impl Default for MinstrelParams {
    fn default() -> Self {
        Self {
            ewma_weight: 0.75,
            update_interval_us: 100_000,
            probe_every: 10,
            probe_skip_above: 0.95,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RateStats {
    pub ewma: f64,
    /// Whether `ewma` has absorbed at least one non-empty window.
    pub has_estimate: bool,
    pub window_attempts: u64,
    pub window_successes: u64,
    pub total_attempts: u64,
    pub total_successes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RateChoice {
    pub mode: PhyMode,
    pub probe: bool,
}

#[derive(Debug, Clone)]
pub struct MinstrelState {
    modes: Vec<PhyMode>,
    stats: Vec<RateStats>,
    best: usize,
    data_frames: u64,
    next_update_us: TimeUs,
    params: MinstrelParams,
    dcf: DcfParams,
    frame_bytes: usize,
    /// Shuffled mode indices walked by lookaround probes.
    sample_order: Vec<usize>,
    sample_pos: usize,
}

/// One EWMA step.
pub fn ewma_step(prev: f64, sample: f64, weight: f64) -> f64 {
    (1.0 - weight) * sample + weight * prev
}

impl MinstrelState {
    /// `modes` must be non-empty and sorted by ascending rate. `frame_bytes`
    /// is the MPDU size used to rank modes until `select` supplies another.
    pub fn new(modes: Vec<PhyMode>, params: MinstrelParams, dcf: DcfParams, frame_bytes: usize) -> Self {
        assert!(!modes.is_empty(), "rate table must not be empty");
        let stats = vec![RateStats::default(); modes.len()];
        let next_update_us = params.update_interval_us;
        let n = modes.len();
        Self {
            sample_order: (0..n).collect(),
            sample_pos: n,
            modes,
            stats,
            best: 0,
            data_frames: 0,
            next_update_us,
            params,
            dcf,
            frame_bytes,
        }
    }

    pub fn modes(&self) -> &[PhyMode] {
        &self.modes
    }

    pub fn stats(&self) -> &[RateStats] {
        &self.stats
    }

    pub fn best_mode(&self) -> PhyMode {
        self.modes[self.best]
    }

    fn index_of(&self, mode: PhyMode) -> Option<usize> {
        self.modes.iter().position(|m| *m == mode)
    }

    /// Overrides a mode's estimate; used to warm-start the table.
    pub fn seed_ewma(&mut self, mode: PhyMode, p: f64) {
        if let Some(i) = self.index_of(mode) {
            self.stats[i].ewma = p.clamp(0.0, 1.0);
            self.stats[i].has_estimate = true;
            self.stats[i].total_attempts = self.stats[i].total_attempts.max(1);
        }
        self.best = self.compute_best(self.frame_bytes);
    }

    /// Folds a window of `attempts`/`successes` for `mode` into its EWMA.
    /// Empty windows leave the estimate unchanged.
    pub fn update(&mut self, mode: PhyMode, attempts: u64, successes: u64) {
        assert!(attempts >= successes, "more successes than attempts");
        let Some(i) = self.index_of(mode) else { return };
        if attempts == 0 {
            return;
        }
        let sample = successes as f64 / attempts as f64;
        let s = &mut self.stats[i];
        s.ewma = ewma_step(s.ewma, sample, self.params.ewma_weight);
        s.has_estimate = true;
    }

    /// Records the outcome of one PHY attempt at `mode`.
    pub fn record(&mut self, mode: PhyMode, success: bool) {
        if let Some(i) = self.index_of(mode) {
            let s = &mut self.stats[i];
            s.window_attempts += 1;
            s.total_attempts += 1;
            if success {
                s.window_successes += 1;
                s.total_successes += 1;
            }
        }
    }

    /// Closes the current statistics window: updates every EWMA, resets the
    /// counters and re-ranks the modes.
    pub fn end_window(&mut self) {
        for i in 0..self.modes.len() {
            let (a, s) = (self.stats[i].window_attempts, self.stats[i].window_successes);
            self.update(self.modes[i], a, s);
            self.stats[i].window_attempts = 0;
            self.stats[i].window_successes = 0;
        }
        self.best = self.compute_best(self.frame_bytes);
    }

    fn roll_windows(&mut self, now_us: TimeUs) {
        if now_us < self.next_update_us {
            return;
        }
        self.end_window();
        let interval = self.params.update_interval_us;
        let behind = (now_us - self.next_update_us) / interval + 1;
        self.next_update_us += behind * interval;
    }

    /// Estimated goodput in bit/us for `mode` carrying `frame_bytes`.
    pub fn expected_throughput(&self, mode: PhyMode, frame_bytes: usize) -> f64 {
        let Some(i) = self.index_of(mode) else { return 0.0 };
        self.stats[i].ewma * (8 * frame_bytes) as f64 / self.dcf.expected_exchange_us(frame_bytes, mode)
    }

    fn compute_best(&self, frame_bytes: usize) -> usize {
        let mut best = 0;
        let mut best_tp = 0.0;
        for (i, m) in self.modes.iter().enumerate() {
            if !self.stats[i].has_estimate {
                continue;
            }
            let tp = self.expected_throughput(*m, frame_bytes);
            if tp > best_tp {
                best = i;
                best_tp = tp;
            }
        }
        best
    }

    /// Next non-best mode from the sample table. Every mode is visited once
    /// per pass; the order is reshuffled between passes.
    fn next_sample(&mut self, rng: &mut RngStream) -> usize {
        loop {
            if self.sample_pos >= self.sample_order.len() {
                for i in (1..self.sample_order.len()).rev() {
                    let j = rng.uniform_inclusive(i as u32) as usize;
                    self.sample_order.swap(i, j);
                }
                self.sample_pos = 0;
            }
            let i = self.sample_order[self.sample_pos];
            self.sample_pos += 1;
            if i != self.best {
                return i;
            }
        }
    }

    /// Picks the mode for the first attempt of the next data frame.
    pub fn select(&mut self, now_us: TimeUs, frame_bytes: usize, rng: &mut RngStream) -> RateChoice {
        if frame_bytes != self.frame_bytes {
            self.frame_bytes = frame_bytes;
            self.best = self.compute_best(frame_bytes);
        }
        self.roll_windows(now_us);
        self.data_frames += 1;
        let best = self.best;

        if let Some(i) = (0..self.modes.len()).find(|&i| i != best && self.stats[i].total_attempts == 0) {
            return RateChoice {
                mode: self.modes[i],
                probe: true,
            };
        }

        let n = self.modes.len();
        if n > 1 && self.data_frames.is_multiple_of(self.params.probe_every) {
            let pick = self.next_sample(rng);
            if self.stats[pick].ewma <= self.params.probe_skip_above {
                return RateChoice {
                    mode: self.modes[pick],
                    probe: true,
                };
            }
        }
        RateChoice {
            mode: self.modes[best],
            probe: false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::derive_stream;
    use crate::phy::OFDM_MODES;
    use proptest::prelude::*;

    fn m(mbps: u32) -> PhyMode {
        PhyMode::from_mbps(mbps).unwrap()
    }

    fn state(modes: Vec<PhyMode>) -> MinstrelState {
        MinstrelState::new(modes, MinstrelParams::default(), DcfParams::default(), 1528)
    }

    #[test]
    fn ewma_arithmetic() {
        let mut s = state(vec![m(6)]);
        s.seed_ewma(m(6), 1.0);
        s.update(m(6), 4, 0);
        assert_eq!(s.stats()[0].ewma, 0.75);
        s.update(m(6), 10, 0);
        assert_eq!(s.stats()[0].ewma, 0.5625);
        s.update(m(6), 0, 0);
        assert_eq!(s.stats()[0].ewma, 0.5625);
    }

    #[test]
    fn prefers_fast_lossy_mode_when_it_pays() {
        let mut s = state(vec![m(6), m(54)]);
        s.seed_ewma(m(6), 1.0);
        s.seed_ewma(m(54), 0.5);
        assert_eq!(s.best_mode(), m(54));
        let ratio = s.expected_throughput(m(54), 1528) / s.expected_throughput(m(6), 1528);
        assert!((2.4..2.9).contains(&ratio), "{ratio}");
    }

    #[test]
    fn all_zero_falls_back_to_lowest() {
        let mut s = state(OFDM_MODES.to_vec());
        for mode in OFDM_MODES {
            s.seed_ewma(mode, 0.0);
        }
        assert_eq!(s.best_mode(), m(6));
        let fresh = state(OFDM_MODES.to_vec());
        assert_eq!(fresh.best_mode(), m(6));
    }

    #[test]
    fn single_mode_always_selected() {
        let mut s = state(vec![m(24)]);
        let mut rng = derive_stream(1, "minstrel");
        for t in 0..1000u64 {
            let c = s.select(t * 1000, 1528, &mut rng);
            assert_eq!(c.mode, m(24));
            s.record(c.mode, t % 3 != 0);
        }
    }

    #[test]
    fn unprobed_modes_are_forced_first() {
        let mut s = state(OFDM_MODES.to_vec());
        let mut rng = derive_stream(1, "minstrel");
        let mut probed = Vec::new();
        for _ in 0..7 {
            let c = s.select(0, 1528, &mut rng);
            assert!(c.probe);
            s.record(c.mode, true);
            probed.push(c.mode.data_rate_mbps);
        }
        assert_eq!(probed, vec![9, 12, 18, 24, 36, 48, 54]);
    }

    #[test]
    fn well_known_modes_are_not_probed() {
        let mut s = state(OFDM_MODES.to_vec());
        for mode in OFDM_MODES {
            s.seed_ewma(mode, 1.0);
        }
        let mut rng = derive_stream(1, "minstrel");
        for i in 0..1000 {
            let c = s.select(i * 10, 1528, &mut rng);
            assert!(!c.probe);
            assert_eq!(c.mode, m(54));
        }
    }

    #[test]
    fn lookaround_rate_is_one_in_ten() {
        let mut s = state(OFDM_MODES.to_vec());
        for mode in OFDM_MODES {
            s.seed_ewma(mode, if mode.data_rate_mbps <= 12 { 1.0 } else { 0.0 });
        }
        let mut rng = derive_stream(1, "minstrel");
        let probes = (0..10_000).filter(|_| s.select(0, 1528, &mut rng).probe).count();
        // 1 frame in 10 draws a candidate; 5 of the 7 non-best modes are eligible
        assert!((600..830).contains(&probes), "{probes}");
    }

    proptest! {
        #[test]
        fn converges_after_step_change(
            seed in 0u64..1000,
            a in 0usize..8,
            b in 0usize..8,
            warm in 5u32..40,
        ) {
            prop_assume!(a != b);
            // every mode up to `good` delivers, above it nothing does
            let run = |s: &mut MinstrelState, rng: &mut RngStream, good: usize, windows: u32, t0: u64| {
                let mut t = t0;
                for _ in 0..windows {
                    // about the frame rate of a saturated link
                    for _ in 0..250 {
                        let c = s.select(t, 1528, rng);
                        s.record(c.mode, c.mode.id as usize <= good);
                        t += 400;
                    }
                }
                // close the last window
                s.roll_windows(t);
                t
            };
            let mut s = state(OFDM_MODES.to_vec());
            let mut rng = derive_stream(seed, "minstrel");
            let t = run(&mut s, &mut rng, a, warm, 0);
            prop_assert_eq!(s.best_mode().id as usize, a);
            run(&mut s, &mut rng, b, 10, t);
            prop_assert_eq!(s.best_mode().id as usize, b);
        }

        #[test]
        fn probabilities_stay_in_unit_interval(
            outcomes in proptest::collection::vec((0usize..8, any::<bool>()), 1..500)
        ) {
            let mut s = state(OFDM_MODES.to_vec());
            for (i, (mode, ok)) in outcomes.iter().enumerate() {
                s.record(OFDM_MODES[*mode], *ok);
                if i % 17 == 0 {
                    s.end_window();
                }
            }
            s.end_window();
            for st in s.stats() {
                prop_assert!((0.0..=1.0).contains(&st.ewma));
            }
            let best = s.best_mode();
            let best_tp = s.expected_throughput(best, 1528);
            for (mode, st) in OFDM_MODES.iter().zip(s.stats()) {
                if st.has_estimate {
                    prop_assert!(s.expected_throughput(*mode, 1528) <= best_tp);
                }
            }
        }
    }
}
