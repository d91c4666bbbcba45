//! Helpers shared by the integration test binaries.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;

use tobmeter_core::{
    assess, builtin_tables_for, generate_tone, AudioBuffer, CalibrationProfile, ThirdOctaveSpectrum,
    ToneSpec, WeightingKind,
};

/// One measured trial: a device driven with one stimulus, reduced to the
/// band levels that were published for it.
#[derive(Debug, Clone)]
pub struct Trial {
    pub device: String,
    pub trial_hz: u32,
    pub weighting: WeightingKind,
    pub levels: Vec<(f64, f64)>,
}

impl Trial {
    pub fn spectrum(&self) -> ThirdOctaveSpectrum {
        ThirdOctaveSpectrum::from_levels(self.weighting, 94.0, 0.0, &self.levels).unwrap()
    }
}

pub fn load_trials(name: &str) -> Vec<Trial> {
    let path = format!("{}/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"));
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"));
    let mut grouped: BTreeMap<(String, u32), Trial> = BTreeMap::new();
    for line in text.lines().filter(|l| !l.starts_with('#')).skip(1) {
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        let [device, trial, band, weighting, level] = cols[..] else {
            panic!("malformed fixture row: {line}");
        };
        let trial_hz: u32 = trial.parse().unwrap();
        let weighting: WeightingKind = weighting.parse().unwrap();
        let entry = grouped
            .entry((device.to_string(), trial_hz))
            .or_insert_with(|| Trial {
                device: device.to_string(),
                trial_hz,
                weighting,
                levels: Vec::new(),
            });
        assert_eq!(entry.weighting, weighting, "mixed weightings in one trial");
        entry.levels.push((band.parse().unwrap(), level.parse().unwrap()));
    }
    grouped.into_values().collect()
}

/// `(device, trial, band, table)` for every exceedance across the trials,
/// assessing each against the builtin tables its weighting qualifies for.
pub fn exceedances(trials: &[Trial]) -> BTreeSet<(String, u32, u32, String)> {
    let mut out = BTreeSet::new();
    for trial in trials {
        let tables = builtin_tables_for(trial.weighting);
        let report = assess(&trial.spectrum(), &tables).unwrap();
        for entry in &report.entries {
            for check in entry.limits.iter().filter(|c| c.exceeded) {
                out.insert((
                    trial.device.clone(),
                    trial.trial_hz,
                    entry.center_hz.nominal_hz() as u32,
                    check.table.clone(),
                ));
            }
        }
    }
    out
}

pub fn key(device: &str, trial: u32, band: u32, table: &str) -> (String, u32, u32, String) {
    (device.to_string(), trial, band, table.to_string())
}

/// Steady sine at a calibrated SPL (default 94 dB full-scale calibration).
pub fn calibrated_tone(frequency_hz: f64, spl_db: f64, duration_s: f64, sample_rate: u32) -> AudioBuffer {
    let amplitude = CalibrationProfile::default().sine_amplitude_for(spl_db);
    generate_tone(
        &ToneSpec::new(frequency_hz, duration_s)
            .amplitude(amplitude)
            .sample_rate(sample_rate),
    )
    .unwrap()
}

pub fn mean_square(x: &[f32]) -> f64 {
    x.iter().map(|&s| (s as f64).powi(2)).sum::<f64>() / x.len() as f64
}

/// Concatenates buffers of equal rate.
pub fn concat(parts: &[&AudioBuffer]) -> AudioBuffer {
    let rate = parts[0].sample_rate();
    let samples = parts.iter().flat_map(|p| p.samples().iter().copied()).collect();
    AudioBuffer::new(samples, rate).unwrap()
}

/// Adds two equal-rate buffers, truncated to the shorter.
pub fn mix(a: &AudioBuffer, b: &AudioBuffer) -> AudioBuffer {
    let samples = a.samples().iter().zip(b.samples()).map(|(x, y)| x + y).collect();
    AudioBuffer::new(samples, a.sample_rate()).unwrap()
}

/// Splits `buffer` at the given cut points.
pub fn chunk_at(buffer: &AudioBuffer, cuts: &[usize]) -> Vec<AudioBuffer> {
    let mut bounds = vec![0];
    bounds.extend(cuts.iter().copied().filter(|&c| c > 0 && c < buffer.len()));
    bounds.push(buffer.len());
    bounds.sort_unstable();
    bounds.dedup();
    bounds
        .windows(2)
        .map(|w| buffer.slice(w[0], w[1]).unwrap())
        .collect()
}

/// Direct-form biquad, RBJ lowpass design.
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
    z: [f64; 2],
}

impl Biquad {
    fn lowpass(cutoff_hz: f64, q: f64, sample_rate: f64) -> Self {
        let w0 = 2.0 * PI * cutoff_hz / sample_rate;
        let alpha = w0.sin() / (2.0 * q);
        let cos = w0.cos();
        let a0 = 1.0 + alpha;
        Self {
            b: [(1.0 - cos) / 2.0 / a0, (1.0 - cos) / a0, (1.0 - cos) / 2.0 / a0],
            a: [-2.0 * cos / a0, (1.0 - alpha) / a0],
            z: [0.0; 2],
        }
    }

    fn run(&mut self, x: f64) -> f64 {
        let y = self.b[0] * x + self.z[0];
        self.z[0] = self.b[1] * x - self.a[0] * y + self.z[1];
        self.z[1] = self.b[2] * x - self.a[1] * y;
        y
    }
}

/// Butterworth lowpass of even `order` as a cascade of biquads.
pub fn butterworth_lowpass(buffer: &AudioBuffer, cutoff_hz: f64, order: usize) -> AudioBuffer {
    assert!(order % 2 == 0 && order > 0);
    let rate = buffer.sample_rate() as f64;
    let mut stages: Vec<Biquad> = (0..order / 2)
        .map(|k| {
            let theta = (2 * k + 1) as f64 * PI / (2 * order) as f64;
            Biquad::lowpass(cutoff_hz, 1.0 / (2.0 * theta.cos()), rate)
        })
        .collect();
    let samples = buffer
        .samples()
        .iter()
        .map(|&s| stages.iter_mut().fold(s as f64, |x, st| st.run(x)) as f32)
        .collect();
    AudioBuffer::new(samples, buffer.sample_rate()).unwrap()
}
