//! Time-tagged photon streams and the correlation analyses run on them.
//!
//! [`simulate_stream`] turns a source and detector description into detector
//! clicks. The remaining functions work on recorded clicks: HBT and cross
//! correlation histograms, g²(0), Hong–Ou–Mandel interference and rate
//! bookkeeping.

mod correlation;
mod hom;
mod io;
mod rates;
mod simulate;

pub use correlation::{
    cross_correlation, expected_g2_zero, g2_zero, hbt_histogram, CorrelationHistogram, G2Estimate,
};
pub use hom::{
    fit_peak_cluster, hom_simulate, hom_upper_bound, hom_visibility, indistinguishability_from_hom, HomSetup,
    HomVisibility, PeakClusterFit,
};
pub use rates::{arriving_rate, expected_click_rate, extraction_efficiency};
pub use simulate::{simulate_stream, Telegraph};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fit::FitError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StreamError {
    #[error("malformed stream data: {0}")]
    Format(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no detectors configured")]
    NoDetectors,
    #[error("stream has no channel {0}")]
    MissingChannel(u8),
    #[error("histogram covers {found} side peaks per side, need at least {needed}")]
    TooFewSidePeaks { found: usize, needed: usize },
    #[error("side peaks are empty")]
    EmptySidePeaks,
    #[error("HOM peak fit failed for the {which} histogram: {source}")]
    PeakFit {
        which: &'static str,
        #[source]
        source: FitError,
    },
    #[error("detector saturated: measured rate × deadtime = {0} (must be < 1)")]
    Saturated(f64),
    #[error("extraction efficiency {0} exceeds 1; calibration inputs are inconsistent")]
    InconsistentCalibration(f64),
}

/// Which cascade photon a detector looks at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Line {
    #[default]
    X,
    XX,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PhotonStatistics {
    /// One XX–X pair per successful excitation plus optional extra photons.
    #[default]
    Cascade,
    /// Poisson-distributed photon number per pulse and line (laser-like).
    Poissonian,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceConfig {
    /// Hz
    pub rep_rate: f64,
    /// ns
    pub tau_x: f64,
    /// ns
    pub tau_xx: f64,
    pub prep_fidelity: f64,
    /// Probability per pulse and line of one extra photon.
    pub multiphoton_prob: f64,
    /// OFF → ON switching rate, 1/s.
    pub blink_on_rate: f64,
    /// ON → OFF switching rate, 1/s. Zero disables blinking.
    pub blink_off_rate: f64,
    pub extraction_eff: f64,
    /// Optics transmission between the lens and the detectors.
    pub setup_transmission: f64,
    /// When set, every laser period carries a second excitation pulse this
    /// many ns after the first (used for HOM measurements).
    pub pulse_pair_delay: Option<f64>,
    pub statistics: PhotonStatistics,
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self {
            rep_rate: 80e6,
            tau_x: 0.023,
            tau_xx: 0.014,
            prep_fidelity: 0.9,
            multiphoton_prob: 0.0,
            blink_on_rate: 0.0,
            blink_off_rate: 0.0,
            extraction_eff: 0.69,
            setup_transmission: 1.0,
            pulse_pair_delay: None,
            statistics: PhotonStatistics::Cascade,
        }
    }
}

impl SourceConfig {
    pub fn rep_period_ns(&self) -> f64 {
        1e9 / self.rep_rate
    }

    /// Long-run fraction of time the emitter is bright.
    pub fn duty_cycle(&self) -> f64 {
        if self.blink_off_rate == 0.0 {
            1.0
        } else {
            self.blink_on_rate / (self.blink_on_rate + self.blink_off_rate)
        }
    }

    pub fn validate(&self) -> Result<(), StreamError> {
        let bad = |m: String| Err(StreamError::InvalidConfig(m));
        if !(self.rep_rate.is_finite() && self.rep_rate > 0.0) {
            return bad(format!("rep_rate must be > 0, got {}", self.rep_rate));
        }
        for (name, v) in [("tau_x", self.tau_x), ("tau_xx", self.tau_xx)] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be > 0 ns, got {v}"));
            }
        }
        for (name, v) in [
            ("prep_fidelity", self.prep_fidelity),
            ("multiphoton_prob", self.multiphoton_prob),
            ("extraction_eff", self.extraction_eff),
            ("setup_transmission", self.setup_transmission),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        for (name, v) in [("blink_on_rate", self.blink_on_rate), ("blink_off_rate", self.blink_off_rate)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be >= 0, got {v}"));
            }
        }
        if self.blink_off_rate > 0.0 && self.blink_on_rate == 0.0 {
            return bad("blink_on_rate must be > 0 when blinking is enabled".into());
        }
        if let Some(d) = self.pulse_pair_delay {
            if !(d > 0.0 && d < self.rep_period_ns()) {
                return bad(format!("pulse_pair_delay must lie in (0, rep period), got {d}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    /// ns
    pub jitter_fwhm: f64,
    pub efficiency: f64,
    /// Non-paralyzable dead time, ns.
    pub deadtime: f64,
    pub line: Line,
    /// Hz
    pub dark_count_rate: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            jitter_fwhm: 0.35,
            efficiency: 1.0,
            deadtime: 0.0,
            line: Line::X,
            dark_count_rate: 0.0,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<(), StreamError> {
        let bad = |m: String| Err(StreamError::InvalidConfig(m));
        if !(self.jitter_fwhm.is_finite() && self.jitter_fwhm >= 0.0) {
            return bad(format!("jitter_fwhm must be >= 0, got {}", self.jitter_fwhm));
        }
        if !(self.deadtime.is_finite() && self.deadtime >= 0.0) {
            return bad(format!("deadtime must be >= 0, got {}", self.deadtime));
        }
        if !(0.0..=1.0).contains(&self.efficiency) {
            return bad(format!("efficiency must lie in [0, 1], got {}", self.efficiency));
        }
        if !(self.dark_count_rate.is_finite() && self.dark_count_rate >= 0.0) {
            return bad(format!("dark_count_rate must be >= 0, got {}", self.dark_count_rate));
        }
        Ok(())
    }

    pub fn jitter_sigma(&self) -> f64 {
        fwhm_to_sigma(self.jitter_fwhm)
    }
}

pub(crate) fn fwhm_to_sigma(fwhm: f64) -> f64 {
    fwhm / (8.0 * std::f64::consts::LN_2).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TruthTag {
    Signal,
    Multiphoton,
    Background,
}

impl TruthTag {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(TruthTag::Signal),
            1 => Some(TruthTag::Multiphoton),
            2 => Some(TruthTag::Background),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TruthTag::Signal => "signal",
            TruthTag::Multiphoton => "multiphoton",
            TruthTag::Background => "background",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub timestamp_ns: f64,
    pub channel: u8,
    pub tag: TruthTag,
}

/// Time-ordered clicks.
#[derive(Debug, Clone, PartialEq)]
pub struct EventStream {
    pub events: Vec<Event>,
    pub channels: u8,
    pub rep_period_ns: f64,
}

impl EventStream {
    pub fn channel_times(&self, channel: u8) -> Vec<f64> {
        self.events.iter().filter(|e| e.channel == channel).map(|e| e.timestamp_ns).collect()
    }

    pub fn count(&self, channel: u8) -> usize {
        self.events.iter().filter(|e| e.channel == channel).count()
    }

    pub fn is_sorted(&self) -> bool {
        self.events.windows(2).all(|w| w[0].timestamp_ns <= w[1].timestamp_ns)
    }
}
