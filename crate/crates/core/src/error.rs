use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    /// Malformed RIFF/WAVE structure. `offset` is the byte position where
    /// decoding gave up.
    #[error("malformed WAV at byte offset {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error("unsupported WAV format: {0}")]
    UnsupportedFormat(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error(
        "insufficient frequency resolution for the {band_hz} Hz band: \
         need at least {min_duration_s:.3} s ({min_samples} samples) of audio"
    )]
    Resolution {
        band_hz: f64,
        min_samples: usize,
        min_duration_s: f64,
    },

    #[error(
        "band {band_hz} Hz (upper edge {upper_edge_hz:.1} Hz) exceeds the \
         anti-aliasing limit of {limit_hz:.1} Hz at {sample_rate} Hz sample rate"
    )]
    Aliasing {
        band_hz: f64,
        upper_edge_hz: f64,
        limit_hz: f64,
        sample_rate: u32,
    },

    #[error("table '{table}' requires {required}-weighted levels, got {found}")]
    WeightingMismatch {
        table: String,
        required: String,
        found: String,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("mixed signal peaks at {peak:.4} full scale; needs {headroom_db:.2} dB more headroom")]
    Mixing { peak: f64, headroom_db: f64 },

    #[error("line {line}: {message}")]
    Csv { line: usize, message: String },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short stable identifier used in machine-readable error lines.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io(_) => "io",
            Error::Parse { .. } => "parse",
            Error::UnsupportedFormat(_) => "unsupported-format",
            Error::Domain(_) => "domain",
            Error::Resolution { .. } => "resolution",
            Error::Aliasing { .. } => "aliasing",
            Error::WeightingMismatch { .. } => "weighting-mismatch",
            Error::Contract(_) => "contract",
            Error::Config(_) => "config",
            Error::Mixing { .. } => "mixing",
            Error::Csv { .. } => "csv",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn parse(offset: u64, msg: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            message: msg.into(),
        }
    }
}
