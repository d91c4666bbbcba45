//! Hann-windowed power spectra and Welch averaging.
//!
//! Bin powers are in mean-square sample units, one-sided, normalized so that
//! summing every bin of a segment gives the window-weighted mean square of
//! that segment. Summing bins inside a band therefore yields the band's
//! contribution to the total mean square directly.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::tob::Band;
use crate::weighting::WeightingKind;

/// Default analysis window for file analysis (≈1.5 s at 44.1 kHz).
pub const DEFAULT_WINDOW: usize = 65_536;

/// A band narrower than this many FFT bins is considered unresolved.
pub const MIN_BINS_PER_BAND: f64 = 8.0;

/// Periodic Hann window.
pub fn hann(len: usize) -> Vec<f64> {
    let n = len as f64;
    (0..len)
        .map(|i| 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / n).cos())
        .collect()
}

/// Single-segment spectrum engine; reusable across segments of equal length.
pub struct SegmentAnalyzer {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    norm: f64,
    buf: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
}

impl SegmentAnalyzer {
    pub fn new(len: usize) -> Result<Self> {
        if len < 2 {
            return Err(Error::domain(format!("analysis window of {len} samples is too short")));
        }
        let fft = FftPlanner::new().plan_fft_forward(len);
        let window = hann(len);
        let norm = len as f64 * window.iter().map(|w| w * w).sum::<f64>();
        let scratch = vec![Complex::default(); fft.get_inplace_scratch_len()];
        Ok(Self {
            fft,
            window,
            norm,
            buf: vec![Complex::default(); len],
            scratch,
        })
    }

    pub fn len(&self) -> usize {
        self.window.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window.is_empty()
    }

    /// Number of one-sided bins (DC through Nyquist).
    pub fn bin_count(&self) -> usize {
        self.len() / 2 + 1
    }

    /// Adds the one-sided bin powers of `segment` into `acc`.
    pub fn accumulate(&mut self, segment: &[f32], acc: &mut [f64]) {
        debug_assert_eq!(segment.len(), self.len());
        debug_assert_eq!(acc.len(), self.bin_count());
        for ((slot, &s), &w) in self.buf.iter_mut().zip(segment).zip(&self.window) {
            *slot = Complex::new(s as f64 * w, 0.0);
        }
        self.fft.process_with_scratch(&mut self.buf, &mut self.scratch);
        let n = self.len();
        for (k, a) in acc.iter_mut().enumerate() {
            let one_sided = if k == 0 || (n % 2 == 0 && k == n / 2) { 1.0 } else { 2.0 };
            *a += one_sided * self.buf[k].norm_sqr() / self.norm;
        }
    }

    pub fn power(&mut self, segment: &[f32]) -> Vec<f64> {
        let mut acc = vec![0.0; self.bin_count()];
        self.accumulate(segment, &mut acc);
        acc
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerSpectrum {
    /// Mean-square power per one-sided bin.
    pub bins: Vec<f64>,
    pub bin_hz: f64,
    pub window_len: usize,
    pub segments: usize,
}

impl PowerSpectrum {
    pub fn total(&self) -> f64 {
        self.bins.iter().sum()
    }

    /// Half-open bin index range whose centre frequencies lie in `[lo, hi)`.
    pub fn bin_range(&self, lo_hz: f64, hi_hz: f64) -> std::ops::Range<usize> {
        let start = ((lo_hz / self.bin_hz).ceil().max(0.0) as usize).min(self.bins.len());
        let end = ((hi_hz / self.bin_hz).ceil().max(0.0) as usize).min(self.bins.len());
        start..end.max(start)
    }

    pub fn weighted_sum(&self, range: std::ops::Range<usize>, weighting: WeightingKind) -> f64 {
        range
            .map(|k| self.bins[k] * weighting.power_gain(k as f64 * self.bin_hz))
            .sum()
    }
}

/// Averaged Hann periodogram over the whole signal.
///
/// Segments start every `hop` samples; when the regular grid leaves a tail,
/// one extra segment is anchored to the end of the signal so every sample
/// contributes.
pub fn welch(samples: &[f32], sample_rate: u32, window_len: usize, hop: usize) -> Result<PowerSpectrum> {
    if hop == 0 {
        return Err(Error::domain("hop must be at least one sample"));
    }
    if samples.len() < window_len {
        return Err(Error::domain(format!(
            "signal of {} samples is shorter than the {window_len}-sample window",
            samples.len()
        )));
    }
    let mut analyzer = SegmentAnalyzer::new(window_len)?;
    let mut acc = vec![0.0; analyzer.bin_count()];
    let mut segments = 0;
    let mut start = 0;
    while start + window_len <= samples.len() {
        analyzer.accumulate(&samples[start..start + window_len], &mut acc);
        segments += 1;
        start += hop;
    }
    let last_end = (start - hop) + window_len;
    if last_end < samples.len() {
        let tail = samples.len() - window_len;
        analyzer.accumulate(&samples[tail..], &mut acc);
        segments += 1;
    }
    for a in &mut acc {
        *a /= segments as f64;
    }
    Ok(PowerSpectrum {
        bins: acc,
        bin_hz: sample_rate as f64 / window_len as f64,
        window_len,
        segments,
    })
}

/// Smallest power-of-two window that resolves `band` at `sample_rate`.
pub fn required_window(band: Band, sample_rate: u32) -> usize {
    let (lo, hi) = band.edges();
    let max_bin_hz = (hi - lo) / MIN_BINS_PER_BAND;
    let min_len = (sample_rate as f64 / max_bin_hz).ceil() as usize;
    min_len.next_power_of_two()
}
