//! Receiver SNR for a transmission: either replayed from a trace or computed
//! from a propagation model, RF gains and thermal noise.

// `!(x >= lo)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use rand_distr::{Distribution, Gamma};
use thiserror::Error;

use crate::engine::{RngStream, TimeUs};
use crate::traces::{DirectedLink, MobilityTrace, SnrTrace, TraceError};

pub const SPEED_OF_LIGHT_M_S: f64 = 299_792_458.0;
/// Near-field guard for the free-space model.
pub const MIN_FRIIS_DISTANCE_M: f64 = 0.5;
pub const THERMAL_NOISE_DBM_PER_HZ: f64 = -174.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("distance {d_m} m is below reference distance {min_m} m")]
    BelowReferenceDistance { d_m: f64, min_m: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Trace(#[from] TraceError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadioParams {
    pub tx_power_dbm: f64,
    pub rf_gain_db_per_end: f64,
    pub bandwidth_hz: f64,
    pub center_freq_hz: f64,
    pub noise_figure_db: f64,
}

impl Default for RadioParams {
    fn default() -> Self {
        Self {
            tx_power_dbm: 17.0,
            rf_gain_db_per_end: -7.0,
            bandwidth_hz: 20e6,
            center_freq_hz: 5.22e9,
            noise_figure_db: 7.0,
        }
    }
}

impl RadioParams {
    pub const TX_POWER_RANGE_DBM: (f64, f64) = (0.0, 17.0);

    pub fn validate(&self) -> Result<(), ChannelError> {
        let (lo, hi) = Self::TX_POWER_RANGE_DBM;
        if !(lo..=hi).contains(&self.tx_power_dbm) {
            return Err(ChannelError::InvalidParameter(format!(
                "tx_power_dbm {} outside [{lo}, {hi}]",
                self.tx_power_dbm
            )));
        }
        if !(self.bandwidth_hz > 0.0 && self.center_freq_hz > 0.0) {
            return Err(ChannelError::InvalidParameter(
                "bandwidth and center frequency must be positive".into(),
            ));
        }
        if !self.rf_gain_db_per_end.is_finite() || !self.noise_figure_db.is_finite() {
            return Err(ChannelError::InvalidParameter("non-finite gain or noise figure".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PathLoss {
    Friis,
    LogDistance { gamma: f64, ref_distance_m: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum PropagationSpec {
    TraceReplay(SnrTrace),
    Analytic {
        path_loss: PathLoss,
        /// Nakagami-m shape, when fast fading is enabled.
        nakagami_m: Option<f64>,
    },
}

impl PropagationSpec {
    pub fn validate(&self) -> Result<(), ChannelError> {
        match self {
            PropagationSpec::TraceReplay(_) => Ok(()),
            PropagationSpec::Analytic {
                path_loss,
                nakagami_m,
            } => {
                if let PathLoss::LogDistance {
                    gamma,
                    ref_distance_m,
                } = path_loss
                {
                    if !(*gamma > 0.0 && gamma.is_finite()) {
                        return Err(ChannelError::InvalidParameter(format!(
                            "gamma must be > 0, got {gamma}"
                        )));
                    }
                    if !(*ref_distance_m > 0.0 && ref_distance_m.is_finite()) {
                        return Err(ChannelError::InvalidParameter(format!(
                            "reference distance must be > 0, got {ref_distance_m}"
                        )));
                    }
                }
                if let Some(m) = nakagami_m {
                    if !(*m >= 0.5 && m.is_finite()) {
                        return Err(ChannelError::InvalidParameter(format!(
                            "nakagami m must be >= 0.5, got {m}"
                        )));
                    }
                }
                Ok(())
            }
        }
    }

    pub fn is_trace(&self) -> bool {
        matches!(self, PropagationSpec::TraceReplay(_))
    }
}

/// Free-space path loss in dB.
pub fn friis_path_loss(d_m: f64, f_hz: f64) -> Result<f64, ChannelError> {
    if !(d_m >= MIN_FRIIS_DISTANCE_M) {
        return Err(ChannelError::BelowReferenceDistance {
            d_m,
            min_m: MIN_FRIIS_DISTANCE_M,
        });
    }
    if !(f_hz > 0.0) {
        return Err(ChannelError::InvalidParameter(format!("frequency {f_hz} Hz")));
    }
    Ok(20.0 * (4.0 * std::f64::consts::PI * d_m * f_hz / SPEED_OF_LIGHT_M_S).log10())
}

/// Log-distance path loss anchored on free-space loss at the reference distance.
pub fn log_distance_path_loss(
    d_m: f64,
    gamma: f64,
    ref_distance_m: f64,
    f_hz: f64,
) -> Result<f64, ChannelError> {
    if !(ref_distance_m > 0.0) {
        return Err(ChannelError::InvalidParameter(format!(
            "reference distance {ref_distance_m} m"
        )));
    }
    if !(d_m >= ref_distance_m) {
        return Err(ChannelError::BelowReferenceDistance {
            d_m,
            min_m: ref_distance_m,
        });
    }
    let pl0 = if ref_distance_m >= MIN_FRIIS_DISTANCE_M {
        friis_path_loss(ref_distance_m, f_hz)?
    } else {
        // reference inside the near-field guard: evaluate the same expression directly
        20.0 * (4.0 * std::f64::consts::PI * ref_distance_m * f_hz / SPEED_OF_LIGHT_M_S).log10()
    };
    Ok(pl0 + 10.0 * gamma * (d_m / ref_distance_m).log10())
}

/// Nakagami-m fading on received power: a Gamma(m, power/m) draw.
pub fn apply_nakagami(power_w: f64, m: f64, rng: &mut RngStream) -> f64 {
    if power_w <= 0.0 {
        return 0.0;
    }
    let gamma = Gamma::new(m, power_w / m).expect("shape and scale are positive");
    gamma.sample(rng)
}

pub fn noise_power_dbm(bandwidth_hz: f64, noise_figure_db: f64) -> f64 {
    THERMAL_NOISE_DBM_PER_HZ + 10.0 * bandwidth_hz.log10() + noise_figure_db
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

/// Path loss of an analytic model at distance `d_m`.
pub fn path_loss_db(model: &PathLoss, d_m: f64, f_hz: f64) -> Result<f64, ChannelError> {
    match model {
        PathLoss::Friis => friis_path_loss(d_m, f_hz),
        PathLoss::LogDistance {
            gamma,
            ref_distance_m,
        } => log_distance_path_loss(d_m, *gamma, *ref_distance_m, f_hz),
    }
}

/// Receiver SNR for a transmission on `link` starting at `t_us`.
///
/// Trace replay ignores `params` and the fading stream. Analytic models draw
/// one fading sample per call when fading is configured.
pub fn link_snr(
    spec: &PropagationSpec,
    params: &RadioParams,
    link: &DirectedLink,
    mob: &MobilityTrace,
    t_us: TimeUs,
    fading_rng: &mut RngStream,
) -> Result<f64, ChannelError> {
    match spec {
        PropagationSpec::TraceReplay(trace) => Ok(trace.snr_at(link, t_us)?),
        PropagationSpec::Analytic {
            path_loss,
            nakagami_m,
        } => {
            let d = mob.link_distance(&link.tx, &link.rx, t_us)?;
            let loss = path_loss_db(path_loss, d, params.center_freq_hz)?;
            let rx_dbm = params.tx_power_dbm + 2.0 * params.rf_gain_db_per_end - loss;
            let noise = noise_power_dbm(params.bandwidth_hz, params.noise_figure_db);
            match nakagami_m {
                None => Ok(rx_dbm - noise),
                Some(m) => {
                    let faded = apply_nakagami(dbm_to_watts(rx_dbm), *m, fading_rng);
                    // a zero draw would give -inf dB; keep the SNR finite
                    let faded = faded.max(f64::MIN_POSITIVE);
                    Ok(watts_to_dbm(faded) - noise)
                }
            }
        }
    }
}
