//! Frequency weightings and equivalent continuous level (Leq).
//!
//! Weightings are applied as per-bin gains on power spectra, so the curve is
//! exact at every bin centre and there is no bilinear warping near Nyquist.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::audio_io::{
    dbfs_to_dbspl, mean_square_to_dbfs, AudioBuffer, CalibrationProfile, SILENCE_FLOOR_DBFS,
};
use crate::error::{Error, Result};
use crate::spectrum::{self, DEFAULT_WINDOW};

/// Default corner of the high-pass analogue.
pub const DEFAULT_HP_CUTOFF_HZ: f64 = 16_000.0;
pub const HP_CUTOFF_RANGE_HZ: (f64, f64) = (10_000.0, 22_000.0);

/// Attenuation slope of [`WeightingKind::Hp`] below its corner: 80 dB per
/// decade (a 4th-order asymptote, ~24.1 dB/octave).
const HP_DB_PER_DECADE: f64 = 80.0;

// IEC 61672-1 A-weighting pole frequencies (Hz).
const A_F1: f64 = 20.598_997;
const A_F2: f64 = 107.652_65;
const A_F3: f64 = 737.862_23;
const A_F4: f64 = 12_194.217;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightingKind {
    /// Flat.
    Z,
    A,
    /// High-pass analogue of a meter's "high-pass extended" weighting: unity
    /// at and above `cutoff_hz`, 4th-order rolloff below.
    Hp { cutoff_hz: f64 },
}

impl WeightingKind {
    pub fn hp(cutoff_hz: f64) -> Result<Self> {
        let (lo, hi) = HP_CUTOFF_RANGE_HZ;
        if !(lo..=hi).contains(&cutoff_hz) {
            return Err(Error::domain(format!(
                "HP cutoff {cutoff_hz} Hz outside [{lo}, {hi}] Hz"
            )));
        }
        Ok(WeightingKind::Hp { cutoff_hz })
    }

    /// Gain in dB at `frequency_hz`.
    pub fn gain_db(&self, frequency_hz: f64) -> Result<f64> {
        if !(frequency_hz > 0.0) || !frequency_hz.is_finite() {
            return Err(Error::domain(format!(
                "weighting needs a positive frequency, got {frequency_hz}"
            )));
        }
        Ok(self.gain_db_unchecked(frequency_hz))
    }

    fn gain_db_unchecked(&self, f: f64) -> f64 {
        match *self {
            WeightingKind::Z => 0.0,
            WeightingKind::A => 20.0 * (a_response(f) / a_response(1000.0)).log10(),
            WeightingKind::Hp { cutoff_hz } => {
                if f >= cutoff_hz {
                    0.0
                } else {
                    HP_DB_PER_DECADE * (f / cutoff_hz).log10()
                }
            }
        }
    }

    /// Linear power gain; zero at DC.
    pub fn power_gain(&self, frequency_hz: f64) -> f64 {
        if frequency_hz <= 0.0 {
            return match self {
                WeightingKind::Z => 1.0,
                _ => 0.0,
            };
        }
        match self {
            WeightingKind::Z => 1.0,
            _ => 10f64.powf(self.gain_db_unchecked(frequency_hz) / 10.0),
        }
    }

    /// Whether levels measured with `self` may be compared against limits
    /// that require `required`.
    ///
    /// An HP measurement is flat wherever it passes, so it stands in for Z in
    /// the ultrasonic bands it is used for.
    pub fn satisfies(&self, required: WeightingKind) -> bool {
        match (self, required) {
            (WeightingKind::Z, WeightingKind::Z) | (WeightingKind::A, WeightingKind::A) => true,
            (WeightingKind::Hp { .. }, WeightingKind::Z) => true,
            (WeightingKind::Hp { cutoff_hz: a }, WeightingKind::Hp { cutoff_hz: b }) => *a == b,
            _ => false,
        }
    }
}

/// Unnormalized A-weighting magnitude response.
fn a_response(f: f64) -> f64 {
    let f2 = f * f;
    (A_F4 * A_F4 * f2 * f2)
        / ((f2 + A_F1 * A_F1)
            * ((f2 + A_F2 * A_F2) * (f2 + A_F3 * A_F3)).sqrt()
            * (f2 + A_F4 * A_F4))
}

pub fn weighting_gain_db(kind: WeightingKind, frequency_hz: f64) -> Result<f64> {
    kind.gain_db(frequency_hz)
}

impl fmt::Display for WeightingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WeightingKind::Z => f.write_str("z"),
            WeightingKind::A => f.write_str("a"),
            WeightingKind::Hp { cutoff_hz } => write!(f, "hp:{cutoff_hz}"),
        }
    }
}

impl FromStr for WeightingKind {
    type Err = Error;

    /// Accepts `z`, `a`, `hp` or `hp:<cutoff_hz>`.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        match lower.as_str() {
            "z" => Ok(WeightingKind::Z),
            "a" => Ok(WeightingKind::A),
            "hp" => WeightingKind::hp(DEFAULT_HP_CUTOFF_HZ),
            other => match other.strip_prefix("hp:") {
                Some(cut) => {
                    let cutoff = cut
                        .parse::<f64>()
                        .map_err(|_| Error::domain(format!("bad HP cutoff '{cut}'")))?;
                    WeightingKind::hp(cutoff)
                }
                None => Err(Error::domain(format!(
                    "unknown weighting '{s}' (expected z, a, hp or hp:<cutoff>)"
                ))),
            },
        }
    }
}

impl Serialize for WeightingKind {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for WeightingKind {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeqResult {
    /// dB SPL under the supplied calibration.
    pub level_db: f64,
    pub weighting: WeightingKind,
    pub duration_s: f64,
    /// True when the signal sat at or below the silence floor.
    pub at_floor: bool,
}

/// Equivalent continuous level of the whole buffer.
///
/// Z is computed directly from the mean square of the samples; other
/// weightings go through a Welch power spectrum with per-bin gains.
pub fn compute_leq(
    buffer: &AudioBuffer,
    kind: WeightingKind,
    cal: CalibrationProfile,
) -> Result<LeqResult> {
    if buffer.is_empty() {
        return Err(Error::domain("cannot compute Leq of an empty buffer"));
    }
    let mean_square = match kind {
        WeightingKind::Z => {
            let sum: f64 = buffer.samples().iter().map(|&s| (s as f64) * (s as f64)).sum();
            sum / buffer.len() as f64
        }
        _ => {
            let window = buffer.len().min(DEFAULT_WINDOW);
            let power = spectrum::welch(buffer.samples(), buffer.sample_rate(), window, window / 2)?;
            power
                .bins
                .iter()
                .enumerate()
                .map(|(k, p)| p * kind.power_gain(k as f64 * power.bin_hz))
                .sum()
        }
    };
    let dbfs = mean_square_to_dbfs(mean_square);
    Ok(LeqResult {
        level_db: dbfs_to_dbspl(dbfs, cal),
        weighting: kind,
        duration_s: buffer.duration_s(),
        at_floor: dbfs <= SILENCE_FLOOR_DBFS,
    })
}
