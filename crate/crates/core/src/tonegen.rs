//! Sine stimuli and tone injection into existing program material.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio_io::AudioBuffer;
use crate::error::{Error, Result};

pub const DEFAULT_SAMPLE_RATE: u32 = 44_100;
pub const DEFAULT_FADE_MS: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToneSpec {
    pub frequency_hz: f64,
    pub duration_s: f64,
    /// Peak amplitude as a fraction of full scale.
    pub amplitude: f64,
    pub sample_rate: u32,
    /// Raised-cosine ramp applied at both ends.
    pub fade_ms: f64,
}

impl ToneSpec {
    /// Full-scale tone at the default rate and fade.
    pub fn new(frequency_hz: f64, duration_s: f64) -> Self {
        Self {
            frequency_hz,
            duration_s,
            amplitude: 1.0,
            sample_rate: DEFAULT_SAMPLE_RATE,
            fade_ms: DEFAULT_FADE_MS,
        }
    }

    pub fn amplitude(mut self, amplitude: f64) -> Self {
        self.amplitude = amplitude;
        self
    }

    pub fn sample_rate(mut self, sample_rate: u32) -> Self {
        self.sample_rate = sample_rate;
        self
    }

    pub fn fade_ms(mut self, fade_ms: f64) -> Self {
        self.fade_ms = fade_ms;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::domain("sample rate must be positive"));
        }
        let nyquist = self.sample_rate as f64 / 2.0;
        if !(self.frequency_hz > 0.0 && self.frequency_hz < nyquist) {
            return Err(Error::domain(format!(
                "tone frequency {} Hz must lie in (0, {nyquist}) Hz at {} Hz sample rate",
                self.frequency_hz, self.sample_rate
            )));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(Error::domain("tone duration must be positive"));
        }
        if !(self.amplitude > 0.0 && self.amplitude <= 1.0) {
            return Err(Error::domain(format!(
                "tone amplitude {} must lie in (0, 1]",
                self.amplitude
            )));
        }
        if !(self.fade_ms >= 0.0 && self.fade_ms.is_finite()) {
            return Err(Error::domain("fade length must be non-negative"));
        }
        Ok(())
    }

    pub fn sample_count(&self) -> usize {
        (self.duration_s * self.sample_rate as f64).round() as usize
    }

    /// Samples in each fade ramp, capped at half the tone.
    pub fn fade_samples(&self) -> usize {
        let fade = (self.fade_ms / 1000.0 * self.sample_rate as f64).round() as usize;
        fade.min(self.sample_count() / 2)
    }
}

/// `amplitude·sin(2π·f·n/rate)` with raised-cosine fades, phase starting at 0.
pub fn generate_tone(spec: &ToneSpec) -> Result<AudioBuffer> {
    spec.validate()?;
    let len = spec.sample_count();
    let fade = spec.fade_samples();
    let rate = spec.sample_rate as f64;
    let cycles_per_sample = spec.frequency_hz / rate;

    let samples = (0..len)
        .map(|n| {
            // Reduce the phase to one cycle before scaling so long tones keep
            // full precision.
            let phase = (cycles_per_sample * n as f64).fract();
            let mut s = spec.amplitude * (std::f64::consts::TAU * phase).sin();
            let from_edge = n.min(len - 1 - n);
            if from_edge < fade {
                s *= 0.5 * (1.0 - (std::f64::consts::PI * from_edge as f64 / fade as f64).cos());
            }
            s as f32
        })
        .collect();
    AudioBuffer::new(samples, spec.sample_rate)
}

/// Attenuates `track` by `track_attenuation_db` and adds the tone described
/// by `spec`, aligned at sample 0. The tone is truncated or zero-padded to
/// the track length.
pub fn inject_tone(
    track: &AudioBuffer,
    spec: &ToneSpec,
    track_attenuation_db: f64,
) -> Result<AudioBuffer> {
    if spec.sample_rate != track.sample_rate() {
        return Err(Error::Contract(format!(
            "tone sample rate {} Hz differs from track sample rate {} Hz",
            spec.sample_rate,
            track.sample_rate()
        )));
    }
    if !(track_attenuation_db >= 0.0 && track_attenuation_db.is_finite()) {
        return Err(Error::domain("track attenuation must be a non-negative dB value"));
    }
    let tone = generate_tone(spec)?;
    let gain = 10f64.powf(-track_attenuation_db / 20.0);
    let tone = tone.samples();

    let mut peak = 0.0f64;
    let mixed: Vec<f32> = track
        .samples()
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let t = tone.get(i).copied().unwrap_or(0.0);
            let v = if gain == 1.0 { s + t } else { (s as f64 * gain) as f32 + t };
            peak = peak.max(v.abs() as f64);
            v
        })
        .collect();
    if peak > 1.0 {
        return Err(Error::Mixing {
            peak,
            headroom_db: 20.0 * peak.log10(),
        });
    }
    AudioBuffer::new(mixed, track.sample_rate())
}

/// Pink (−3 dB/octave) noise confined to `[lo_hz, hi_hz]`, scaled to the
/// given RMS. Built in the frequency domain with seeded random phases, so it
/// is exactly band-limited and reproducible; useful as stand-in program
/// material and as a masker in detector corpora.
pub fn pink_noise(
    lo_hz: f64,
    hi_hz: f64,
    rms: f64,
    len: usize,
    sample_rate: u32,
    seed: u64,
) -> Result<AudioBuffer> {
    let nyquist = sample_rate as f64 / 2.0;
    if !(lo_hz > 0.0 && hi_hz > lo_hz && hi_hz < nyquist) {
        return Err(Error::domain(format!(
            "noise band [{lo_hz}, {hi_hz}] Hz must lie inside (0, {nyquist}) Hz"
        )));
    }
    if !(rms > 0.0 && rms <= 1.0) || len < 2 {
        return Err(Error::domain("noise needs 0 < rms <= 1 and at least two samples"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bin_hz = sample_rate as f64 / len as f64;
    let mut spectrum = vec![Complex::new(0.0, 0.0); len];
    for k in 1..len.div_ceil(2) {
        let f = k as f64 * bin_hz;
        let phase = rng.gen::<f64>() * std::f64::consts::TAU;
        if f >= lo_hz && f <= hi_hz {
            let c = Complex::from_polar(1.0 / f.sqrt(), phase);
            spectrum[k] = c;
            spectrum[len - k] = c.conj();
        }
    }
    FftPlanner::<f64>::new()
        .plan_fft_inverse(len)
        .process(&mut spectrum);
    let ms = spectrum.iter().map(|c| c.re * c.re).sum::<f64>() / len as f64;
    if ms == 0.0 {
        return Err(Error::domain("noise band contains no frequency bins"));
    }
    let gain = rms / ms.sqrt();
    let samples = spectrum.iter().map(|c| (c.re * gain) as f32).collect();
    AudioBuffer::new(samples, sample_rate)
}
