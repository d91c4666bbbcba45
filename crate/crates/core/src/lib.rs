//! Acoustic exposure analysis for high- and low-frequency noise.
//!
//! The crate turns audio into calibrated third-octave band levels under Z, A
//! or a high-pass weighting, checks them against embedded exposure
//! guidelines, watches streams for inaudible tones above user thresholds,
//! synthesizes the test stimuli, and compares before/after recordings of a
//! speaker for lost high-frequency reproduction.

pub mod audio_io;
pub mod degradation;
pub mod detector;
mod error;
pub mod guidelines;
pub mod spectrum;
pub mod tob;
pub mod tonegen;
pub mod weighting;

pub use audio_io::{
    dbfs_to_dbspl, read_wav, write_wav, AudioBuffer, CalibrationProfile, ChannelSelect,
    SampleFormat, SILENCE_FLOOR_DBFS,
};
pub use degradation::{compare_response, CompareOptions, DegradationReport};
pub use detector::{feed, Alert, Detector, DetectorConfig};
pub use error::{Error, Result};
pub use guidelines::{assess, builtin_tables, builtin_tables_for, ExposureReport, GuidelineTable, Statistic};
pub use tob::{band_spectrum, combine_levels, Band, ThirdOctaveSpectrum};
pub use tonegen::{generate_tone, inject_tone, ToneSpec};
pub use weighting::{compute_leq, weighting_gain_db, LeqResult, WeightingKind};
