//! 802.11a OFDM PHY abstraction: mode table, airtime, SNR to frame success,
//! and the per-frame reception draw.

use std::fmt;

use crate::engine::RngStream;

/// PLCP preamble plus SIGNAL field.
pub const PREAMBLE_US: u64 = 20;
pub const SYMBOL_US: u64 = 4;
const SERVICE_BITS: u64 = 16;
const TAIL_BITS: u64 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modulation {
    Bpsk,
    Qpsk,
    Qam16,
    Qam64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CodingRate {
    Half,
    TwoThirds,
    ThreeQuarters,
}

impl CodingRate {
    /// Puncturing period `b` of the rate-`b/(b+1)` code.
    fn period(self) -> f64 {
        match self {
            CodingRate::Half => 1.0,
            CodingRate::TwoThirds => 2.0,
            CodingRate::ThreeQuarters => 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PhyMode {
    pub id: u8,
    pub modulation: Modulation,
    pub coding: CodingRate,
    pub data_rate_mbps: u32,
    /// Data bits per OFDM symbol.
    pub n_dbps: u32,
}

impl fmt::Display for PhyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}Mbps", self.data_rate_mbps)
    }
}

const fn mode(id: u8, modulation: Modulation, coding: CodingRate, mbps: u32) -> PhyMode {
    PhyMode {
        id,
        modulation,
        coding,
        data_rate_mbps: mbps,
        n_dbps: mbps * 4,
    }
}

pub const OFDM_MODES: [PhyMode; 8] = [
    mode(0, Modulation::Bpsk, CodingRate::Half, 6),
    mode(1, Modulation::Bpsk, CodingRate::ThreeQuarters, 9),
    mode(2, Modulation::Qpsk, CodingRate::Half, 12),
    mode(3, Modulation::Qpsk, CodingRate::ThreeQuarters, 18),
    mode(4, Modulation::Qam16, CodingRate::Half, 24),
    mode(5, Modulation::Qam16, CodingRate::ThreeQuarters, 36),
    mode(6, Modulation::Qam64, CodingRate::TwoThirds, 48),
    mode(7, Modulation::Qam64, CodingRate::ThreeQuarters, 54),
];

impl PhyMode {
    pub fn from_mbps(mbps: u32) -> Option<PhyMode> {
        OFDM_MODES.iter().copied().find(|m| m.data_rate_mbps == mbps)
    }

    pub fn lowest() -> PhyMode {
        OFDM_MODES[0]
    }
}

/// PPDU airtime in microseconds for an MPDU of `payload_bytes`.
pub fn frame_duration_us(payload_bytes: usize, mode: PhyMode) -> u64 {
    let bits = SERVICE_BITS + 8 * payload_bytes as u64 + TAIL_BITS;
    PREAMBLE_US + SYMBOL_US * bits.div_ceil(mode.n_dbps as u64)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("negative SNR {0}")]
pub struct NegativeSnr(pub f64);

/// Uncoded bit error probability for a linear SNR.
pub fn bit_error_rate(snr_linear: f64, modulation: Modulation) -> Result<f64, NegativeSnr> {
    if snr_linear < 0.0 || snr_linear.is_nan() {
        return Err(NegativeSnr(snr_linear));
    }
    Ok(ber_unchecked(snr_linear, modulation))
}

fn ber_unchecked(snr: f64, modulation: Modulation) -> f64 {
    let ber = match modulation {
        Modulation::Bpsk => 0.5 * libm::erfc(snr.sqrt()),
        Modulation::Qpsk => 0.5 * libm::erfc((snr / 2.0).sqrt()),
        Modulation::Qam16 => 0.375 * libm::erfc((snr / 10.0).sqrt()),
        Modulation::Qam64 => 7.0 / 24.0 * libm::erfc((snr / 42.0).sqrt()),
    };
    ber.clamp(0.0, 0.5)
}

/// Free distance and distance-spectrum weights of the K=7 (133,171)
/// convolutional code and its punctured variants, as tabulated for the NIST
/// OFDM error-rate model (Pei & Henderson, "Validation of OFDM error rate
/// model in ns-3", tables 3.1.1 and 3.1.2). Entries are `(distance, weight)`.
pub struct DistanceSpectrum {
    pub d_free: u32,
    pub terms: &'static [(u32, f64)],
}

pub const SPECTRUM_R12: DistanceSpectrum = DistanceSpectrum {
    d_free: 10,
    terms: &[
        (10, 36.0),
        (12, 211.0),
        (14, 1404.0),
        (16, 11633.0),
        (18, 77433.0),
        (20, 502690.0),
        (22, 3322763.0),
        (24, 21292910.0),
        (26, 134365911.0),
    ],
};

pub const SPECTRUM_R23: DistanceSpectrum = DistanceSpectrum {
    d_free: 6,
    terms: &[
        (6, 3.0),
        (7, 70.0),
        (8, 285.0),
        (9, 1276.0),
        (10, 6160.0),
        (11, 27128.0),
        (12, 117019.0),
        (13, 498860.0),
        (14, 2103891.0),
        (15, 8784123.0),
    ],
};

pub const SPECTRUM_R34: DistanceSpectrum = DistanceSpectrum {
    d_free: 5,
    terms: &[
        (5, 42.0),
        (6, 201.0),
        (7, 1492.0),
        (8, 10469.0),
        (9, 62935.0),
        (10, 379644.0),
        (11, 2253373.0),
        (12, 13073811.0),
        (13, 75152755.0),
        (14, 428005675.0),
    ],
};

pub fn spectrum(coding: CodingRate) -> &'static DistanceSpectrum {
    match coding {
        CodingRate::Half => &SPECTRUM_R12,
        CodingRate::TwoThirds => &SPECTRUM_R23,
        CodingRate::ThreeQuarters => &SPECTRUM_R34,
    }
}

/// Post-decoding bit error probability via the union bound, with the
/// Bhattacharyya pairwise term `D^d`, `D = sqrt(4p(1-p))`.
pub fn decoded_bit_error(ber: f64, coding: CodingRate) -> f64 {
    let d = (4.0 * ber * (1.0 - ber)).sqrt();
    let sum: f64 = spectrum(coding)
        .terms
        .iter()
        .map(|&(dist, w)| w * d.powi(dist as i32))
        .sum();
    (sum / (2.0 * coding.period())).min(1.0)
}

/// Probability that an MPDU of `payload_bytes` is received without error.
pub fn frame_success_probability(snr_db: f64, mode: PhyMode, payload_bytes: usize) -> f64 {
    if snr_db.is_nan() {
        return 0.0;
    }
    let snr = 10f64.powf(snr_db / 10.0);
    let ber = ber_unchecked(snr, mode.modulation);
    if ber == 0.0 {
        return 1.0;
    }
    let pe = decoded_bit_error(ber, mode.coding);
    let bits = 8.0 * payload_bytes as f64;
    // (1 - pe)^bits, computed in log space to keep precision for tiny pe
    (bits * (-pe).ln_1p()).exp().clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RxOutcome {
    Delivered,
    Corrupted,
}

/// Bernoulli reception draw; consumes exactly one uniform from `rng`.
pub fn receive(frame_bytes: usize, mode: PhyMode, snr_db: f64, rng: &mut RngStream) -> RxOutcome {
    let p = frame_success_probability(snr_db, mode, frame_bytes);
    if rng.uniform() < p {
        RxOutcome::Delivered
    } else {
        RxOutcome::Corrupted
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::derive_stream;

    fn m(mbps: u32) -> PhyMode {
        PhyMode::from_mbps(mbps).unwrap()
    }

    #[test]
    fn mode_table_is_80211a() {
        let rates: Vec<u32> = OFDM_MODES.iter().map(|m| m.data_rate_mbps).collect();
        assert_eq!(rates, vec![6, 9, 12, 18, 24, 36, 48, 54]);
        let ndbps: Vec<u32> = OFDM_MODES.iter().map(|m| m.n_dbps).collect();
        assert_eq!(ndbps, vec![24, 36, 48, 72, 96, 144, 192, 216]);
        for (i, mode) in OFDM_MODES.iter().enumerate() {
            assert_eq!(mode.id as usize, i);
        }
    }

    #[test]
    fn airtimes() {
        assert_eq!(frame_duration_us(1500, m(54)), 244);
        assert_eq!(frame_duration_us(1500, m(6)), 2024);
        assert_eq!(frame_duration_us(0, m(54)), 24);
        assert_eq!(frame_duration_us(0, m(6)), 24);
    }

    #[test]
    fn airtime_orderings() {
        for bytes in [0usize, 14, 100, 1528, 2300] {
            for w in OFDM_MODES.windows(2) {
                assert!(frame_duration_us(bytes, w[0]) >= frame_duration_us(bytes, w[1]));
            }
        }
        for mode in OFDM_MODES {
            let mut prev = 0;
            for bytes in (0..3000).step_by(1) {
                let d = frame_duration_us(bytes, mode);
                assert!(d >= prev);
                prev = d;
            }
            // strictly increasing once the payload grows by a full symbol
            let step = (mode.n_dbps / 8 + 1) as usize;
            assert!(frame_duration_us(1000 + step, mode) > frame_duration_us(1000, mode));
        }
    }

    #[test]
    fn ber_limits() {
        assert_eq!(bit_error_rate(0.0, Modulation::Bpsk).unwrap(), 0.5);
        let b4 = bit_error_rate(4.0, Modulation::Bpsk).unwrap();
        assert!((b4 - 2.339e-3).abs() < 1e-5, "{b4}");
        for md in [Modulation::Bpsk, Modulation::Qpsk, Modulation::Qam16, Modulation::Qam64] {
            assert!(bit_error_rate(1e6, md).unwrap() < 1e-12);
            assert!(bit_error_rate(0.0, md).unwrap() <= 0.5);
        }
        assert!(bit_error_rate(-1.0, Modulation::Bpsk).is_err());
    }

    #[test]
    fn spectra_are_ordered() {
        let d_free = [SPECTRUM_R12.d_free, SPECTRUM_R23.d_free, SPECTRUM_R34.d_free];
        assert!(d_free.windows(2).all(|w| w[0] > w[1]));
        for s in [&SPECTRUM_R12, &SPECTRUM_R23, &SPECTRUM_R34] {
            assert_eq!(s.terms[0].0, s.d_free);
            assert!(s.terms.iter().all(|&(_, w)| w >= 0.0));
        }
    }

    #[test]
    fn frame_success_limits() {
        for mode in OFDM_MODES {
            assert!(frame_success_probability(60.0, mode, 1472) >= 0.999999);
        }
        assert!(frame_success_probability(-10.0, m(54), 1472) <= 1e-6);
    }

    #[test]
    fn length_identity() {
        for mode in OFDM_MODES {
            for snr in [3.5, 6.3, 9.3, 13.0, 16.0, 20.8, 22.0] {
                let one = frame_success_probability(snr, mode, 1472);
                let two = frame_success_probability(snr, mode, 2944);
                if one > 0.0 {
                    assert!(((two - one * one) / (one * one)).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn receive_extremes() {
        let mut rng = derive_stream(3, "phy.rx.A->B");
        for _ in 0..1000 {
            assert_eq!(receive(1500, m(54), 60.0, &mut rng), RxOutcome::Delivered);
            assert_eq!(receive(1500, m(54), -10.0, &mut rng), RxOutcome::Corrupted);
        }
    }

    #[test]
    fn receive_is_reproducible() {
        let draw = || {
            let mut rng = derive_stream(11, "phy.rx.A->B");
            (0..500)
                .map(|_| receive(1500, m(54), 22.0, &mut rng))
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(), draw());
    }
}
