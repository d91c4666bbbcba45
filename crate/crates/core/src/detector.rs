//! Streaming band-level monitor that raises alerts when monitored
//! third-octave bands stay above their thresholds.
//!
//! Samples are pushed in arbitrary chunks. Internally they are cut into
//! windows at fixed absolute positions (`k·hop`), so the alerts depend only
//! on the sample stream, never on how it was chunked.
//!
//! Per band, an alert opens after `persistence` consecutive windows above
//! threshold and closes after `release` consecutive windows at or below it.
//! Times are stream seconds measured at the *end* of a window, i.e. the
//! moment that window's level became known.

use serde::{Deserialize, Serialize};

use crate::audio_io::{dbfs_to_dbspl, mean_square_to_dbfs, AudioBuffer, CalibrationProfile};
use crate::error::{Error, Result};
use crate::guidelines::GuidelineTable;
use crate::spectrum::SegmentAnalyzer;
use crate::tob::{choose_window, Band};
use crate::weighting::WeightingKind;

pub const DEFAULT_WINDOW: usize = 16_384;
/// Window used once a monitored band is too narrow for [`DEFAULT_WINDOW`].
pub const LFN_WINDOW: usize = 65_536;
pub const DEFAULT_PERSISTENCE: u32 = 3;
pub const DEFAULT_RELEASE: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandThreshold {
    pub band: Band,
    pub threshold_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub bands: Vec<BandThreshold>,
    pub window_length: usize,
    /// `None` means half the effective window.
    pub hop: Option<usize>,
    pub persistence: u32,
    pub release: u32,
    pub weighting: WeightingKind,
    pub cal: CalibrationProfile,
}

impl DetectorConfig {
    pub fn new(bands: Vec<BandThreshold>) -> Self {
        Self {
            bands,
            window_length: DEFAULT_WINDOW,
            hop: None,
            persistence: DEFAULT_PERSISTENCE,
            release: DEFAULT_RELEASE,
            weighting: WeightingKind::Z,
            cal: CalibrationProfile::default(),
        }
    }

    /// One band with one threshold, from a nominal centre frequency.
    pub fn single(band_hz: f64, threshold_db: f64) -> Result<Self> {
        Ok(Self::new(vec![BandThreshold {
            band: Band::from_nominal(band_hz)?,
            threshold_db,
        }]))
    }

    /// Thresholds taken from a guideline table's limits, restricted to bands
    /// that can be analyzed at `sample_rate`.
    pub fn from_table(table: &GuidelineTable, sample_rate: u32) -> Self {
        let bands = table
            .rows()
            .iter()
            .filter(|r| r.center_hz.check_alias(sample_rate).is_ok())
            .map(|r| BandThreshold {
                band: r.center_hz,
                threshold_db: r.limit_db,
            })
            .collect();
        Self {
            weighting: table.weighting_required,
            ..Self::new(bands)
        }
    }

    pub fn persistence(mut self, windows: u32) -> Self {
        self.persistence = windows;
        self
    }

    pub fn release(mut self, windows: u32) -> Self {
        self.release = windows;
        self
    }

    pub fn weighting(mut self, weighting: WeightingKind) -> Self {
        self.weighting = weighting;
        self
    }

    pub fn calibration(mut self, cal: CalibrationProfile) -> Self {
        self.cal = cal;
        self
    }

    pub fn window(mut self, window_length: usize, hop: Option<usize>) -> Self {
        self.window_length = window_length;
        self.hop = hop;
        self
    }

    fn validate(&self, sample_rate: u32) -> Result<()> {
        if sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if self.bands.is_empty() {
            return Err(Error::Config("no bands to monitor".into()));
        }
        if self.persistence < 1 || self.release < 1 {
            return Err(Error::Config("persistence and release must be at least 1".into()));
        }
        if self.window_length < 2 || self.hop == Some(0) {
            return Err(Error::Config("window and hop must be positive".into()));
        }
        for (i, bt) in self.bands.iter().enumerate() {
            if !bt.threshold_db.is_finite() {
                return Err(Error::Config(format!("threshold for band {} is not finite", bt.band)));
            }
            if self.bands[..i].iter().any(|o| o.band == bt.band) {
                return Err(Error::Config(format!("band {} configured twice", bt.band)));
            }
            bt.band
                .check_alias(sample_rate)
                .map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    #[serde(rename = "band_hz")]
    pub band: Band,
    pub onset_s: f64,
    pub end_s: f64,
    #[serde(rename = "peak_db")]
    pub peak_level_db: f64,
    pub threshold_db: f64,
}

impl Alert {
    /// One JSON-lines record.
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("alert serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DetectorEvent {
    Opened {
        band: Band,
        onset_s: f64,
        level_db: f64,
        threshold_db: f64,
    },
    Closed(Alert),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandState {
    pub band: Band,
    pub current_level_db: f64,
    pub windows_above: u32,
    pub alert_open: bool,
}

#[derive(Debug, Clone)]
struct Tracker {
    threshold: BandThreshold,
    /// Half-open bin range of the band.
    bins: std::ops::Range<usize>,
    level_db: f64,
    above: u32,
    below: u32,
    run_onset_s: f64,
    run_peak_db: f64,
    last_above_end_s: f64,
    open: bool,
}

impl Tracker {
    /// Updates with one window's level; returns any state transitions.
    fn step(&mut self, level_db: f64, end_s: f64, persistence: u32, release: u32) -> Option<DetectorEvent> {
        self.level_db = level_db;
        let threshold_db = self.threshold.threshold_db;
        if level_db > threshold_db {
            if self.above == 0 && !self.open {
                self.run_onset_s = end_s;
                self.run_peak_db = level_db;
            }
            self.above += 1;
            self.below = 0;
            self.run_peak_db = self.run_peak_db.max(level_db);
            self.last_above_end_s = end_s;
            if !self.open && self.above >= persistence {
                self.open = true;
                return Some(DetectorEvent::Opened {
                    band: self.threshold.band,
                    onset_s: self.run_onset_s,
                    level_db,
                    threshold_db,
                });
            }
            None
        } else {
            self.above = 0;
            if !self.open {
                return None;
            }
            self.below += 1;
            if self.below >= release {
                return Some(DetectorEvent::Closed(self.close()));
            }
            None
        }
    }

    fn close(&mut self) -> Alert {
        self.open = false;
        self.below = 0;
        self.above = 0;
        Alert {
            band: self.threshold.band,
            onset_s: self.run_onset_s,
            end_s: self.last_above_end_s,
            peak_level_db: self.run_peak_db,
            threshold_db: self.threshold.threshold_db,
        }
    }
}

/// Single-producer streaming detector. Movable between threads, not shared.
pub struct Detector {
    config: DetectorConfig,
    sample_rate: u32,
    window: usize,
    hop: usize,
    analyzer: SegmentAnalyzer,
    bin_weights: Vec<f64>,
    power: Vec<f64>,
    trackers: Vec<Tracker>,
    pending: Vec<f32>,
    /// Absolute index of `pending[0]`.
    pending_start: u64,
    consumed: u64,
    windows: u64,
}

impl Detector {
    pub fn new(config: DetectorConfig, sample_rate: u32) -> Result<Self> {
        config.validate(sample_rate)?;
        let bands: Vec<Band> = config.bands.iter().map(|b| b.band).collect();
        let window = if choose_window(&bands, sample_rate, config.window_length) > config.window_length {
            choose_window(&bands, sample_rate, LFN_WINDOW)
        } else {
            config.window_length
        };
        let hop = config.hop.unwrap_or(window / 2).max(1);
        let analyzer = SegmentAnalyzer::new(window)?;
        let bin_hz = sample_rate as f64 / window as f64;
        let bin_weights = (0..analyzer.bin_count())
            .map(|k| config.weighting.power_gain(k as f64 * bin_hz))
            .collect();
        let floor = config.cal.floor_db();
        let trackers = config
            .bands
            .iter()
            .map(|&threshold| {
                let (lo, hi) = threshold.band.edges();
                let bins = (lo / bin_hz).ceil() as usize..(hi / bin_hz).ceil() as usize;
                Tracker {
                    threshold,
                    bins,
                    level_db: floor,
                    above: 0,
                    below: 0,
                    run_onset_s: 0.0,
                    run_peak_db: floor,
                    last_above_end_s: 0.0,
                    open: false,
                }
            })
            .collect();
        let power = vec![0.0; analyzer.bin_count()];
        Ok(Self {
            config,
            sample_rate,
            window,
            hop,
            analyzer,
            bin_weights,
            power,
            trackers,
            pending: Vec::new(),
            pending_start: 0,
            consumed: 0,
            windows: 0,
        })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    /// Effective window after any low-frequency escalation.
    pub fn window_length(&self) -> usize {
        self.window
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn window_duration_s(&self) -> f64 {
        self.window as f64 / self.sample_rate as f64
    }

    pub fn windows_processed(&self) -> u64 {
        self.windows
    }

    /// Stream time of everything pushed so far.
    pub fn stream_time_s(&self) -> f64 {
        self.consumed as f64 / self.sample_rate as f64
    }

    /// Pushes a chunk whose sample rate must match the stream's.
    pub fn push_buffer(&mut self, chunk: &AudioBuffer) -> Result<Vec<DetectorEvent>> {
        if chunk.sample_rate() != self.sample_rate {
            return Err(Error::Contract(format!(
                "chunk sample rate {} Hz differs from stream rate {} Hz",
                chunk.sample_rate(),
                self.sample_rate
            )));
        }
        Ok(self.push(chunk.samples()))
    }

    /// Pushes raw samples at the stream's rate.
    pub fn push(&mut self, samples: &[f32]) -> Vec<DetectorEvent> {
        self.consumed += samples.len() as u64;
        self.pending.extend_from_slice(samples);
        let mut events = Vec::new();
        loop {
            let next_start = self.windows * self.hop as u64;
            let offset = (next_start - self.pending_start) as usize;
            if offset + self.window > self.pending.len() {
                break;
            }
            self.analyze_window(offset, next_start, &mut events);
            self.windows += 1;
        }
        // Drop samples no future window needs.
        let next_start = self.windows * self.hop as u64;
        let keep_from = (next_start - self.pending_start) as usize;
        let keep_from = keep_from.min(self.pending.len());
        if keep_from > 0 {
            self.pending.drain(..keep_from);
            self.pending_start += keep_from as u64;
        }
        events
    }

    fn analyze_window(&mut self, offset: usize, start: u64, events: &mut Vec<DetectorEvent>) {
        self.power.iter_mut().for_each(|p| *p = 0.0);
        let segment = &self.pending[offset..offset + self.window];
        self.analyzer.accumulate(segment, &mut self.power);
        let end_s = (start + self.window as u64) as f64 / self.sample_rate as f64;
        let cal = self.config.cal;
        for tracker in &mut self.trackers {
            let ms: f64 = tracker
                .bins
                .clone()
                .map(|k| self.power[k] * self.bin_weights[k])
                .sum();
            let level = dbfs_to_dbspl(mean_square_to_dbfs(ms), cal);
            if let Some(ev) = tracker.step(level, end_s, self.config.persistence, self.config.release) {
                events.push(ev);
            }
        }
    }

    /// Ends the stream, closing any open alert at its last above-threshold
    /// window. Trailing samples shorter than a window are not analyzed.
    pub fn finish(&mut self) -> Vec<DetectorEvent> {
        self.trackers
            .iter_mut()
            .filter(|t| t.open)
            .map(|t| DetectorEvent::Closed(t.close()))
            .collect()
    }

    pub fn snapshot(&self) -> Vec<BandState> {
        self.trackers
            .iter()
            .map(|t| BandState {
                band: t.threshold.band,
                current_level_db: t.level_db,
                windows_above: t.above,
                alert_open: t.open,
            })
            .collect()
    }
}

/// Runs a whole chunked stream through a fresh detector and returns the
/// completed alerts ordered by onset (then band).
pub fn feed<'a>(
    chunks: impl IntoIterator<Item = &'a AudioBuffer>,
    config: &DetectorConfig,
) -> Result<Vec<Alert>> {
    let mut chunks = chunks.into_iter().peekable();
    let Some(first) = chunks.peek() else {
        return Ok(Vec::new());
    };
    let mut detector = Detector::new(config.clone(), first.sample_rate())?;
    let mut alerts = Vec::new();
    let collect = |events: Vec<DetectorEvent>, alerts: &mut Vec<Alert>| {
        alerts.extend(events.into_iter().filter_map(|e| match e {
            DetectorEvent::Closed(a) => Some(a),
            DetectorEvent::Opened { .. } => None,
        }))
    };
    for chunk in chunks {
        collect(detector.push_buffer(chunk)?, &mut alerts);
    }
    collect(detector.finish(), &mut alerts);
    alerts.sort_by(|a, b| a.onset_s.total_cmp(&b.onset_s).then(a.band.cmp(&b.band)));
    Ok(alerts)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tracker(persistence: u32, release: u32) -> (Tracker, u32, u32) {
        let band = Band::from_nominal(20000.0).unwrap();
        (
            Tracker {
                threshold: BandThreshold { band, threshold_db: 70.0 },
                bins: 0..0,
                level_db: -26.0,
                above: 0,
                below: 0,
                run_onset_s: 0.0,
                run_peak_db: -26.0,
                last_above_end_s: 0.0,
                open: false,
            },
            persistence,
            release,
        )
    }

    #[test]
    fn hysteresis_state_machine() {
        let (mut t, p, r) = tracker(2, 2);
        let script = [60.0, 75.0, 80.0, 65.0, 78.0, 60.0, 60.0, 60.0];
        let mut events = Vec::new();
        for (i, &lvl) in script.iter().enumerate() {
            if let Some(e) = t.step(lvl, i as f64, p, r) {
                events.push((i, e));
            }
        }
        assert_eq!(events.len(), 2);
        assert!(matches!(events[0], (2, DetectorEvent::Opened { onset_s, .. }) if onset_s == 1.0));
        match events[1] {
            (6, DetectorEvent::Closed(a)) => {
                assert_eq!(a.onset_s, 1.0);
                assert_eq!(a.end_s, 4.0);
                assert_eq!(a.peak_level_db, 80.0);
            }
            other => panic!("{other:?}"),
        }
        assert!(!t.open && t.above == 0 && t.below == 0);
    }

    #[test]
    fn threshold_equality_is_not_above() {
        let (mut t, p, r) = tracker(1, 1);
        assert!(t.step(70.0, 0.0, p, r).is_none());
        assert_eq!(t.above, 0);
    }

    #[test]
    fn config_validation() {
        let ok = DetectorConfig::single(16000.0, 70.0).unwrap();
        assert!(Detector::new(ok.clone(), 44_100).is_ok());
        assert!(matches!(Detector::new(ok.clone().persistence(0), 44_100), Err(Error::Config(_))));
        assert!(matches!(Detector::new(ok.clone().release(0), 44_100), Err(Error::Config(_))));
        let beyond = DetectorConfig::single(20000.0, 70.0).unwrap();
        assert!(matches!(Detector::new(beyond.clone(), 44_100), Err(Error::Config(_))));
        assert!(Detector::new(beyond, 96_000).is_ok());
        let nan = DetectorConfig::single(16000.0, f64::NAN).unwrap();
        assert!(Detector::new(nan, 44_100).is_err());
        assert!(Detector::new(DetectorConfig::new(vec![]), 44_100).is_err());
        assert!(DetectorConfig::single(17000.0, 70.0).is_err());
    }

    #[test]
    fn low_bands_escalate_window() {
        let hfn = Detector::new(DetectorConfig::single(16000.0, 70.0).unwrap(), 44_100).unwrap();
        assert_eq!(hfn.window_length(), DEFAULT_WINDOW);
        assert_eq!(hfn.hop(), DEFAULT_WINDOW / 2);
        let at100 = Detector::new(DetectorConfig::single(100.0, 38.0).unwrap(), 44_100).unwrap();
        assert_eq!(at100.window_length(), DEFAULT_WINDOW);
        let at63 = Detector::new(DetectorConfig::single(63.0, 42.0).unwrap(), 44_100).unwrap();
        assert_eq!(at63.window_length(), LFN_WINDOW);
    }

    #[test]
    fn rate_change_is_contract_error() {
        let mut d = Detector::new(DetectorConfig::single(16000.0, 70.0).unwrap(), 44_100).unwrap();
        let chunk = AudioBuffer::silence(100, 48_000).unwrap();
        assert!(matches!(d.push_buffer(&chunk), Err(Error::Contract(_))));
    }

    #[test]
    fn alert_json_line_shape() {
        let a = Alert {
            band: Band::from_nominal(20000.0).unwrap(),
            onset_s: 2.1,
            end_s: 9.9,
            peak_level_db: 80.0,
            threshold_db: 70.0,
        };
        let v: serde_json::Value = serde_json::from_str(&a.to_json_line()).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(keys.len(), 5);
        for k in ["band_hz", "onset_s", "end_s", "peak_db", "threshold_db"] {
            assert!(keys.contains(&k), "{k}");
        }
        assert_eq!(v["band_hz"], 20000.0);
    }
}
