//! Third-octave band (TOB) series, band-resolved spectra, spectrograms and
//! incoherent level summation.
//!
//! Bands follow the base-10 definition: exact centres `1000·10^(n/10)` Hz,
//! edges a factor `10^(1/20)` either side, labelled with the familiar
//! nominal values (12.5, 31.5, 63, ...).

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::audio_io::{dbfs_to_dbspl, mean_square_to_dbfs, AudioBuffer, CalibrationProfile};
use crate::error::{Error, Result};
use crate::spectrum::{self, SegmentAnalyzer, DEFAULT_WINDOW};
use crate::weighting::WeightingKind;

/// Nominal labels for band indices `MIN_INDEX..=MAX_INDEX` (10 Hz to 50 kHz).
const NOMINAL_HZ: [f64; 38] = [
    10.0, 12.5, 16.0, 20.0, 25.0, 31.5, 40.0, 50.0, 63.0, 80.0, //
    100.0, 125.0, 160.0, 200.0, 250.0, 315.0, 400.0, 500.0, 630.0, 800.0, //
    1000.0, 1250.0, 1600.0, 2000.0, 2500.0, 3150.0, 4000.0, 5000.0, 6300.0, 8000.0, //
    10000.0, 12500.0, 16000.0, 20000.0, 25000.0, 31500.0, 40000.0, 50000.0,
];
const MIN_INDEX: i32 = -20;
const MAX_INDEX: i32 = 17;

/// Analysis refuses bands whose upper edge is above this fraction of the
/// sample rate.
pub const ALIAS_LIMIT_FRACTION: f64 = 0.45;

/// One third-octave band, identified by its offset `n` from the 1 kHz band.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Band(i32);

impl Band {
    pub const KHZ_1: Band = Band(0);

    pub fn from_index(n: i32) -> Result<Self> {
        if (MIN_INDEX..=MAX_INDEX).contains(&n) {
            Ok(Band(n))
        } else {
            Err(Error::domain(format!("band index {n} outside the supported series")))
        }
    }

    /// Looks up a band by its nominal label, e.g. `12500.0`.
    pub fn from_nominal(hz: f64) -> Result<Self> {
        NOMINAL_HZ
            .iter()
            .position(|&nom| (hz - nom).abs() <= nom * 1e-9)
            .map(|i| Band(i as i32 + MIN_INDEX))
            .ok_or_else(|| Error::domain(format!("{hz} Hz is not a nominal third-octave centre")))
    }

    /// The band whose half-open range `[lo, hi)` contains `frequency_hz`.
    pub fn containing(frequency_hz: f64) -> Result<Self> {
        let (series_lo, _) = Band(MIN_INDEX).edges();
        let (_, series_hi) = Band(MAX_INDEX).edges();
        if !(frequency_hz >= series_lo && frequency_hz < series_hi) {
            return Err(Error::domain(format!(
                "{frequency_hz} Hz is outside the supported band range \
                 [{series_lo:.2}, {series_hi:.1}) Hz"
            )));
        }
        let mut n = ((10.0 * (frequency_hz / 1000.0).log10() + 0.5).floor() as i32)
            .clamp(MIN_INDEX, MAX_INDEX);
        // Settle rounding against the same edge arithmetic `edges` uses.
        while n > MIN_INDEX && frequency_hz < Band(n).edges().0 {
            n -= 1;
        }
        while n < MAX_INDEX && frequency_hz >= Band(n + 1).edges().0 {
            n += 1;
        }
        Ok(Band(n))
    }

    pub fn index(self) -> i32 {
        self.0
    }

    pub fn nominal_hz(self) -> f64 {
        NOMINAL_HZ[(self.0 - MIN_INDEX) as usize]
    }

    pub fn exact_center_hz(self) -> f64 {
        1000.0 * 10f64.powf(self.0 as f64 / 10.0)
    }

    /// `[lo, hi)`; the upper edge of one band is bit-identical to the lower
    /// edge of the next.
    pub fn edges(self) -> (f64, f64) {
        let edge = |half_steps: i32| 1000.0 * 10f64.powf(half_steps as f64 / 20.0);
        (edge(2 * self.0 - 1), edge(2 * self.0 + 1))
    }

    pub fn width_hz(self) -> f64 {
        let (lo, hi) = self.edges();
        hi - lo
    }

    pub fn next(self) -> Option<Band> {
        Band::from_index(self.0 + 1).ok()
    }

    pub fn prev(self) -> Option<Band> {
        Band::from_index(self.0 - 1).ok()
    }

    pub fn all() -> impl Iterator<Item = Band> {
        (MIN_INDEX..=MAX_INDEX).map(Band)
    }

    /// Errors when the band cannot be analyzed without aliasing at `sample_rate`.
    pub fn check_alias(self, sample_rate: u32) -> Result<()> {
        let (_, hi) = self.edges();
        let limit = ALIAS_LIMIT_FRACTION * sample_rate as f64;
        if hi > limit {
            return Err(Error::Aliasing {
                band_hz: self.nominal_hz(),
                upper_edge_hz: hi,
                limit_hz: limit,
                sample_rate,
            });
        }
        Ok(())
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.nominal_hz())
    }
}

impl Serialize for Band {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.nominal_hz())
    }
}

impl<'de> Deserialize<'de> for Band {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let hz = f64::deserialize(deserializer)?;
        Band::from_nominal(hz).map_err(serde::de::Error::custom)
    }
}

/// Bands whose nominal label lies in `[lo, hi]`.
pub fn tob_centers(lo_hz: f64, hi_hz: f64) -> Result<Vec<Band>> {
    if !(lo_hz > 0.0) || !(hi_hz >= lo_hz) {
        return Err(Error::domain(format!("invalid band range [{lo_hz}, {hi_hz}]")));
    }
    let tol = 1e-9;
    Ok(Band::all()
        .filter(|b| {
            let nom = b.nominal_hz();
            nom >= lo_hz * (1.0 - tol) && nom <= hi_hz * (1.0 + tol)
        })
        .collect())
}

pub fn band_edges(center_hz: f64) -> Result<(f64, f64)> {
    Band::from_nominal(center_hz).map(Band::edges)
}

pub fn band_for_frequency(frequency_hz: f64) -> Result<Band> {
    Band::containing(frequency_hz)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandLevel {
    pub center_hz: Band,
    pub level_db: f64,
}

/// Energy outside the analyzed band range, same units as the band levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutOfRange {
    pub below_db: f64,
    pub above_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThirdOctaveSpectrum {
    pub weighting: WeightingKind,
    pub duration_s: f64,
    pub calibration_db: f64,
    /// Ascending by band.
    pub bands: Vec<BandLevel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_of_range: Option<OutOfRange>,
    #[serde(default)]
    pub clipped_samples: usize,
}

impl ThirdOctaveSpectrum {
    /// Builds a spectrum from externally obtained levels, e.g. published
    /// measurements. Centres are nominal labels.
    pub fn from_levels(
        weighting: WeightingKind,
        calibration_db: f64,
        duration_s: f64,
        levels: &[(f64, f64)],
    ) -> Result<Self> {
        let mut bands = levels
            .iter()
            .map(|&(hz, level_db)| {
                if !level_db.is_finite() {
                    return Err(Error::domain(format!("level at {hz} Hz is not finite")));
                }
                Ok(BandLevel {
                    center_hz: Band::from_nominal(hz)?,
                    level_db,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        bands.sort_by_key(|b| b.center_hz);
        if let Some(w) = bands.windows(2).find(|w| w[0].center_hz == w[1].center_hz) {
            return Err(Error::domain(format!("band {} listed twice", w[0].center_hz)));
        }
        Ok(Self {
            weighting,
            duration_s,
            calibration_db,
            bands,
            out_of_range: None,
            clipped_samples: 0,
        })
    }

    pub fn level(&self, band: Band) -> Option<f64> {
        self.bands
            .binary_search_by_key(&band, |b| b.center_hz)
            .ok()
            .map(|i| self.bands[i].level_db)
    }

    /// Power sum of all band levels.
    pub fn total_db(&self) -> Result<f64> {
        let levels: Vec<f64> = self.bands.iter().map(|b| b.level_db).collect();
        combine_levels(&levels)
    }

    /// Returns a copy with one band's level replaced or inserted.
    pub fn with_level(&self, band: Band, level_db: f64) -> Self {
        let mut out = self.clone();
        match out.bands.binary_search_by_key(&band, |b| b.center_hz) {
            Ok(i) => out.bands[i].level_db = level_db,
            Err(i) => out.bands.insert(
                i,
                BandLevel {
                    center_hz: band,
                    level_db,
                },
            ),
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let mut spectrum: Self = serde_json::from_str(s)?;
        spectrum.bands.sort_by_key(|b| b.center_hz);
        Ok(spectrum)
    }

    /// `center_hz,level_db` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("center_hz,level_db\n");
        for b in &self.bands {
            out.push_str(&format!("{},{:.2}\n", b.center_hz.nominal_hz(), b.level_db));
        }
        out
    }
}

/// Knobs for [`band_spectrum_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisOptions {
    pub window: usize,
    /// `None` means half the window.
    pub hop: Option<usize>,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            hop: None,
        }
    }
}

/// Third-octave Leq over the whole buffer for every band in `[lo, hi]`.
pub fn band_spectrum(
    buffer: &AudioBuffer,
    kind: WeightingKind,
    cal: CalibrationProfile,
    lo_hz: f64,
    hi_hz: f64,
) -> Result<ThirdOctaveSpectrum> {
    let bands = tob_centers(lo_hz, hi_hz)?;
    band_spectrum_with(buffer, kind, cal, &bands, AnalysisOptions::default())
}

/// Picks the Welch window for `bands`, escalating when the lowest band needs
/// finer resolution than `preferred` gives.
pub(crate) fn choose_window(bands: &[Band], sample_rate: u32, preferred: usize) -> usize {
    let needed = bands
        .iter()
        .map(|&b| spectrum::required_window(b, sample_rate))
        .max()
        .unwrap_or(0);
    preferred.max(needed)
}

pub fn band_spectrum_with(
    buffer: &AudioBuffer,
    kind: WeightingKind,
    cal: CalibrationProfile,
    bands: &[Band],
    opts: AnalysisOptions,
) -> Result<ThirdOctaveSpectrum> {
    let mut bands = bands.to_vec();
    bands.sort();
    bands.dedup();
    let (Some(&lowest), Some(&highest)) = (bands.first(), bands.last()) else {
        return Err(Error::domain("no third-octave bands in the requested range"));
    };
    let rate = buffer.sample_rate();
    highest.check_alias(rate)?;

    let required = spectrum::required_window(lowest, rate);
    if buffer.len() < required {
        return Err(Error::Resolution {
            band_hz: lowest.nominal_hz(),
            min_samples: required,
            min_duration_s: required as f64 / rate as f64,
        });
    }
    let window = opts.window.min(buffer.len()).max(required);
    let hop = opts.hop.unwrap_or(window / 2).max(1);
    let power = spectrum::welch(buffer.samples(), rate, window, hop)?;

    let to_db = |ms: f64| dbfs_to_dbspl(mean_square_to_dbfs(ms), cal);
    let levels = bands
        .iter()
        .map(|&band| {
            let (lo, hi) = band.edges();
            BandLevel {
                center_hz: band,
                level_db: to_db(power.weighted_sum(power.bin_range(lo, hi), kind)),
            }
        })
        .collect();

    let (range_lo, _) = lowest.edges();
    let (_, range_hi) = highest.edges();
    let below = power.weighted_sum(power.bin_range(0.0, range_lo), kind);
    let above = power.weighted_sum(power.bin_range(range_hi, f64::INFINITY), kind);

    Ok(ThirdOctaveSpectrum {
        weighting: kind,
        duration_s: buffer.duration_s(),
        calibration_db: cal.fullscale_spl_db,
        bands: levels,
        out_of_range: Some(OutOfRange {
            below_db: to_db(below),
            above_db: to_db(above),
        }),
        clipped_samples: buffer.clipped_samples(),
    })
}

/// Short-time magnitude spectra in dBFS per bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrogramMatrix {
    pub frames: Vec<Vec<f64>>,
    pub hop_s: f64,
    pub bin_hz: f64,
}

impl SpectrogramMatrix {
    pub fn bin_count(&self) -> usize {
        self.frames.first().map_or(0, Vec::len)
    }

    /// Index of the loudest bin in every frame.
    pub fn peak_bins(&self) -> Vec<usize> {
        self.frames
            .iter()
            .map(|frame| {
                frame
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map_or(0, |(i, _)| i)
            })
            .collect()
    }
}

pub const MIN_SPECTROGRAM_WINDOW: usize = 256;

pub fn spectrogram(buffer: &AudioBuffer, window_length: usize, hop: usize) -> Result<SpectrogramMatrix> {
    if window_length < MIN_SPECTROGRAM_WINDOW {
        return Err(Error::domain(format!(
            "spectrogram window must be at least {MIN_SPECTROGRAM_WINDOW} samples"
        )));
    }
    if hop == 0 {
        return Err(Error::domain("spectrogram hop must be at least one sample"));
    }
    if buffer.len() < window_length {
        return Err(Error::domain(format!(
            "buffer of {} samples is shorter than one {window_length}-sample window",
            buffer.len()
        )));
    }
    let mut analyzer = SegmentAnalyzer::new(window_length)?;
    let count = (buffer.len() - window_length) / hop + 1;
    let samples = buffer.samples();
    let frames = (0..count)
        .map(|i| {
            let start = i * hop;
            analyzer
                .power(&samples[start..start + window_length])
                .into_iter()
                .map(mean_square_to_dbfs)
                .collect()
        })
        .collect();
    Ok(SpectrogramMatrix {
        frames,
        hop_s: hop as f64 / buffer.sample_rate() as f64,
        bin_hz: buffer.sample_rate() as f64 / window_length as f64,
    })
}

/// Incoherent (power) sum of levels: `10·log10(Σ 10^(L/10))`.
pub fn combine_levels(levels: &[f64]) -> Result<f64> {
    if levels.is_empty() {
        return Err(Error::domain("cannot combine an empty list of levels"));
    }
    if let Some(bad) = levels.iter().find(|l| !l.is_finite()) {
        return Err(Error::domain(format!("level {bad} is not finite")));
    }
    let max = levels.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = levels.iter().map(|l| 10f64.powf((l - max) / 10.0)).sum();
    Ok(max + 10.0 * sum.log10())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nominal(bands: &[Band]) -> Vec<f64> {
        bands.iter().map(|b| b.nominal_hz()).collect()
    }

    #[test]
    fn centers_match_table_headers() {
        assert_eq!(
            nominal(&tob_centers(50.0, 200.0).unwrap()),
            [50.0, 63.0, 80.0, 100.0, 125.0, 160.0, 200.0]
        );
        assert_eq!(
            nominal(&tob_centers(8000.0, 50000.0).unwrap()),
            [8000.0, 10000.0, 12500.0, 16000.0, 20000.0, 25000.0, 31500.0, 40000.0, 50000.0]
        );
        assert_eq!(nominal(&tob_centers(1000.0, 1000.0).unwrap()), [1000.0]);
        assert_eq!(
            nominal(&tob_centers(10.0, 160.0).unwrap()),
            [10.0, 12.5, 16.0, 20.0, 25.0, 31.5, 40.0, 50.0, 63.0, 80.0, 100.0, 125.0, 160.0]
        );
        assert!(tob_centers(200.0, 50.0).is_err());
        assert!(tob_centers(0.0, 50.0).is_err());
    }

    #[test]
    fn edges_closed_form() {
        let (lo, hi) = band_edges(1000.0).unwrap();
        assert!((lo - 891.25).abs() <= 0.01 && (hi - 1122.02).abs() <= 0.01);
        let (lo, hi) = band_edges(16000.0).unwrap();
        assert!((lo - 14125.4).abs() <= 0.1 && (hi - 17782.8).abs() <= 0.1);
        for b in Band::all() {
            let (lo, hi) = b.edges();
            assert!((hi / lo - 10f64.powf(0.1)).abs() < 1e-12);
        }
        assert!(band_edges(17000.0).is_err());
    }

    #[test]
    fn frequency_to_band() {
        for (f, expect) in [(17000.0, 16000.0), (21000.0, 20000.0), (19000.0, 20000.0), (60.0, 63.0), (1000.0, 1000.0), (40000.0, 40000.0)] {
            assert_eq!(band_for_frequency(f).unwrap().nominal_hz(), expect, "{f}");
        }
        assert!(band_for_frequency(5.0).is_err());
        assert!(band_for_frequency(60000.0).is_err());
        assert!(band_for_frequency(0.0).is_err());
    }

    #[test]
    fn band_edges_are_exact_at_boundaries() {
        for b in Band::all() {
            let (lo, hi) = b.edges();
            assert_eq!(Band::containing(lo).unwrap(), b);
            if let Some(next) = b.next() {
                assert_eq!(Band::containing(hi).unwrap(), next);
                assert_eq!(next.edges().0, hi);
            }
        }
    }

    #[test]
    fn combine_examples() {
        assert!((combine_levels(&[86.0]).unwrap() - 86.0).abs() < 1e-12);
        assert!((combine_levels(&[60.0, 60.0]).unwrap() - 63.01).abs() <= 0.01);
        let oracle = 10.0 * (10f64.powf(6.0) + 10f64.powf(7.0)).log10();
        let got = combine_levels(&[60.0, 70.0]).unwrap();
        assert!((got - oracle).abs() < 1e-9 && (got - 70.41).abs() <= 0.01);
        assert!(combine_levels(&[]).is_err());
        assert!(combine_levels(&[f64::NAN]).is_err());
    }

    #[test]
    fn spectrum_json_and_csv() {
        let s = ThirdOctaveSpectrum::from_levels(
            WeightingKind::Z,
            94.0,
            600.0,
            &[(20000.0, 97.1), (16000.0, 86.0)],
        )
        .unwrap();
        assert_eq!(s.bands[0].center_hz.nominal_hz(), 16000.0);
        let back = ThirdOctaveSpectrum::from_json(&s.to_json().unwrap()).unwrap();
        assert_eq!(back, s);
        assert_eq!(s.to_csv(), "center_hz,level_db\n16000,86.00\n20000,97.10\n");
        assert!(ThirdOctaveSpectrum::from_levels(WeightingKind::Z, 94.0, 1.0, &[(16000.0, 1.0), (16000.0, 2.0)]).is_err());
        assert!(ThirdOctaveSpectrum::from_levels(WeightingKind::Z, 94.0, 1.0, &[(17000.0, 1.0)]).is_err());
    }

    #[test]
    fn aliasing_and_resolution_errors() {
        let buf = AudioBuffer::silence(44100 * 2, 44100).unwrap();
        let cal = CalibrationProfile::default();
        let err = band_spectrum(&buf, WeightingKind::Z, cal, 16000.0, 20000.0).unwrap_err();
        assert!(matches!(err, Error::Aliasing { .. }), "{err}");
        assert!(band_spectrum(&buf, WeightingKind::Z, cal, 8000.0, 16000.0).is_ok());

        let short = AudioBuffer::silence(4096, 44100).unwrap();
        match band_spectrum(&short, WeightingKind::Z, cal, 63.0, 1000.0).unwrap_err() {
            Error::Resolution { band_hz, min_samples, min_duration_s } => {
                assert_eq!(band_hz, 63.0);
                assert_eq!(min_samples, 32768);
                assert!((min_duration_s - 32768.0 / 44100.0).abs() < 1e-12);
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn silence_sits_at_floor() {
        let buf = AudioBuffer::silence(70000, 44100).unwrap();
        let cal = CalibrationProfile::default();
        let s = band_spectrum(&buf, WeightingKind::Z, cal, 50.0, 16000.0).unwrap();
        assert!(s.bands.iter().all(|b| b.level_db == cal.floor_db()));
    }

    #[test]
    fn spectrogram_validation() {
        let buf = AudioBuffer::silence(1000, 8000).unwrap();
        assert!(spectrogram(&buf, 128, 64).is_err());
        assert!(spectrogram(&buf, 256, 0).is_err());
        assert!(spectrogram(&buf, 2048, 64).is_err());
        let s = spectrogram(&buf, 256, 100).unwrap();
        assert_eq!(s.frames.len(), (1000 - 256) / 100 + 1);
        assert_eq!(s.bin_count(), 129);
        assert!(s.frames.iter().flatten().all(|&v| v == crate::SILENCE_FLOOR_DBFS));
    }
}
