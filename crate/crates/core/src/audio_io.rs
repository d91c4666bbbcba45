//! WAV ingestion/emission and the mapping from digital full scale to
//! sound pressure level.
//!
//! Levels in this crate are expressed relative to the RMS of a full-scale
//! sine (0 dBFS = mean square 0.5). A [`CalibrationProfile`] pins that
//! reference to an absolute dB SPL value, which is how the meter-style
//! figures (dB re 20 µPa) come out of plain sample data.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reference sound pressure p₀ for dB SPL, in pascals.
pub const REFERENCE_PRESSURE_PA: f64 = 20e-6;

/// dB SPL of a full-scale sine unless overridden (standard 1 kHz
/// acoustic-calibrator level).
pub const DEFAULT_FULLSCALE_SPL_DB: f64 = 94.0;

/// Mean square of a full-scale sine: the 0 dBFS reference.
pub const FULLSCALE_SINE_MEAN_SQUARE: f64 = 0.5;

/// Lowest level ever reported, before the calibration offset is applied.
pub const SILENCE_FLOOR_DBFS: f64 = -120.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationProfile {
    pub fullscale_spl_db: f64,
}

impl CalibrationProfile {
    pub fn new(fullscale_spl_db: f64) -> Result<Self> {
        if !fullscale_spl_db.is_finite() {
            return Err(Error::domain("calibration level must be finite"));
        }
        Ok(Self { fullscale_spl_db })
    }

    /// Fixed p₀ = 20 µPa.
    pub const fn reference_pressure_pa(&self) -> f64 {
        REFERENCE_PRESSURE_PA
    }

    /// RMS sound pressure, in pascals, that a full-scale sine represents.
    pub fn fullscale_rms_pressure_pa(&self) -> f64 {
        REFERENCE_PRESSURE_PA * 10f64.powf(self.fullscale_spl_db / 20.0)
    }

    /// Silence floor expressed in calibrated units.
    pub fn floor_db(&self) -> f64 {
        dbfs_to_dbspl(SILENCE_FLOOR_DBFS, *self)
    }

    /// Peak amplitude (full-scale fraction) of a sine whose unweighted level
    /// is `spl_db` under this calibration.
    pub fn sine_amplitude_for(&self, spl_db: f64) -> f64 {
        10f64.powf((spl_db - self.fullscale_spl_db) / 20.0)
    }
}

impl Default for CalibrationProfile {
    fn default() -> Self {
        Self {
            fullscale_spl_db: DEFAULT_FULLSCALE_SPL_DB,
        }
    }
}

pub fn dbfs_to_dbspl(level_dbfs: f64, cal: CalibrationProfile) -> f64 {
    level_dbfs + cal.fullscale_spl_db
}

/// Converts a mean-square sample power to dBFS, clamped at the silence floor.
pub fn mean_square_to_dbfs(mean_square: f64) -> f64 {
    if mean_square <= 0.0 {
        return SILENCE_FLOOR_DBFS;
    }
    (10.0 * (mean_square / FULLSCALE_SINE_MEAN_SQUARE).log10()).max(SILENCE_FLOOR_DBFS)
}

/// Mono sample sequence in full-scale units.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f32>,
    sample_rate: u32,
    clipped: usize,
}

impl AudioBuffer {
    /// Builds a buffer from samples already inside [-1, 1].
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        check_rate(sample_rate)?;
        let mut clipped = 0;
        for (i, &s) in samples.iter().enumerate() {
            if !s.is_finite() {
                return Err(Error::domain(format!("sample {i} is not finite")));
            }
            if s.abs() > 1.0 {
                return Err(Error::domain(format!(
                    "sample {i} = {s} is outside [-1, 1]"
                )));
            }
            if s.abs() == 1.0 {
                clipped += 1;
            }
        }
        Ok(Self {
            samples,
            sample_rate,
            clipped,
        })
    }

    /// Like [`AudioBuffer::new`] but clamps out-of-range samples to ±1 and
    /// records them in [`AudioBuffer::clipped_samples`].
    pub fn from_clipping(mut samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        check_rate(sample_rate)?;
        let mut clipped = 0;
        for (i, s) in samples.iter_mut().enumerate() {
            if !s.is_finite() {
                return Err(Error::domain(format!("sample {i} is not finite")));
            }
            if s.abs() >= 1.0 {
                *s = s.clamp(-1.0, 1.0);
                clipped += 1;
            }
        }
        Ok(Self {
            samples,
            sample_rate,
            clipped,
        })
    }

    pub fn silence(len: usize, sample_rate: u32) -> Result<Self> {
        Self::new(vec![0.0; len], sample_rate)
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Samples sitting at full scale, i.e. likely clipped upstream.
    pub fn clipped_samples(&self) -> usize {
        self.clipped
    }

    /// Multiplies every sample by `gain`; errors if the result leaves [-1, 1].
    pub fn scaled(&self, gain: f64) -> Result<Self> {
        let samples = self
            .samples
            .iter()
            .map(|&s| (s as f64 * gain) as f32)
            .collect();
        Self::new(samples, self.sample_rate)
    }

    /// Copies out `[start, end)` as a new buffer.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start > end || end > self.samples.len() {
            return Err(Error::domain(format!(
                "slice {start}..{end} out of bounds for {} samples",
                self.samples.len()
            )));
        }
        Self::new(self.samples[start..end].to_vec(), self.sample_rate)
    }
}

fn check_rate(sample_rate: u32) -> Result<()> {
    if sample_rate == 0 {
        return Err(Error::domain("sample rate must be positive"));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelSelect {
    Index(usize),
    /// Equal-weight average of all channels.
    Mixdown,
    #[default]
    First,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleFormat {
    Pcm16,
    Float32,
}

impl SampleFormat {
    fn bits(self) -> u16 {
        match self {
            SampleFormat::Pcm16 => 16,
            SampleFormat::Float32 => 32,
        }
    }

    fn tag(self) -> u16 {
        match self {
            SampleFormat::Pcm16 => WAVE_FORMAT_PCM,
            SampleFormat::Float32 => WAVE_FORMAT_IEEE_FLOAT,
        }
    }
}

impl std::str::FromStr for SampleFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pcm16" | "s16" | "i16" => Ok(SampleFormat::Pcm16),
            "float32" | "f32" => Ok(SampleFormat::Float32),
            other => Err(Error::domain(format!("unknown sample format '{other}'"))),
        }
    }
}

/// Quantization noise shaping for 16-bit export.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Dither {
    #[default]
    None,
    /// ±1 LSB triangular-PDF dither from a seeded generator.
    Triangular { seed: u64 },
}

/// Header facts of a decoded file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WavInfo {
    pub sample_rate: u32,
    pub channels: u16,
    pub format: SampleFormat,
    pub frames: usize,
}

const WAVE_FORMAT_PCM: u16 = 0x0001;
const WAVE_FORMAT_IEEE_FLOAT: u16 = 0x0003;
const WAVE_FORMAT_EXTENSIBLE: u16 = 0xFFFE;
const MAX_CHANNELS: u16 = 8;

pub fn read_wav(path: impl AsRef<Path>, channel: ChannelSelect) -> Result<AudioBuffer> {
    let bytes = fs::read(path)?;
    decode_wav(&bytes, channel)
}

pub fn decode_wav(bytes: &[u8], channel: ChannelSelect) -> Result<AudioBuffer> {
    let (info, data) = parse_wav(bytes)?;
    let channels = info.channels as usize;
    let pick = match channel {
        ChannelSelect::First => Some(0),
        ChannelSelect::Index(i) if i < channels => Some(i),
        ChannelSelect::Index(i) => {
            return Err(Error::domain(format!(
                "channel {i} requested but file has {channels} channel(s)"
            )))
        }
        ChannelSelect::Mixdown => None,
    };

    let raw: Vec<f32> = match info.format {
        SampleFormat::Pcm16 => data
            .chunks_exact(2)
            .map(|b| i16::from_le_bytes([b[0], b[1]]) as f32 / 32768.0)
            .collect(),
        SampleFormat::Float32 => data
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect(),
    };
    if let Some((i, _)) = raw.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::domain(format!("sample {i} is not finite")));
    }

    let samples: Vec<f32> = match pick {
        Some(c) => raw.chunks_exact(channels).map(|frame| frame[c]).collect(),
        None => raw
            .chunks_exact(channels)
            .map(|frame| {
                let sum: f64 = frame.iter().map(|&v| v as f64).sum();
                (sum / channels as f64) as f32
            })
            .collect(),
    };

    let mut buffer = AudioBuffer::from_clipping(samples, info.sample_rate)?;
    if info.format == SampleFormat::Pcm16 {
        // 16-bit full scale is asymmetric: +32767 is the positive rail.
        let rail = 32767.0 / 32768.0;
        buffer.clipped = buffer
            .samples
            .iter()
            .filter(|s| s.abs() >= rail)
            .count();
    }
    Ok(buffer)
}

/// Reads header information without decoding samples.
pub fn wav_info(bytes: &[u8]) -> Result<WavInfo> {
    parse_wav(bytes).map(|(info, _)| info)
}

fn read_u16(bytes: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([bytes[at], bytes[at + 1]])
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

struct FmtChunk {
    channels: u16,
    sample_rate: u32,
    format: SampleFormat,
    block_align: u16,
}

fn parse_fmt(body: &[u8], offset: usize) -> Result<FmtChunk> {
    if body.len() < 16 {
        return Err(Error::parse(
            offset as u64,
            format!("fmt chunk is {} bytes, need at least 16", body.len()),
        ));
    }
    let mut tag = read_u16(body, 0);
    let channels = read_u16(body, 2);
    let sample_rate = read_u32(body, 4);
    let block_align = read_u16(body, 12);
    let bits = read_u16(body, 14);

    if tag == WAVE_FORMAT_EXTENSIBLE {
        if body.len() < 40 {
            return Err(Error::parse(
                offset as u64,
                "extensible fmt chunk shorter than 40 bytes",
            ));
        }
        // First two bytes of the sub-format GUID carry the real format tag.
        tag = read_u16(body, 24);
    }

    let format = match (tag, bits) {
        (WAVE_FORMAT_PCM, 16) => SampleFormat::Pcm16,
        (WAVE_FORMAT_IEEE_FLOAT, 32) => SampleFormat::Float32,
        (WAVE_FORMAT_PCM, b) => {
            return Err(Error::UnsupportedFormat(format!("{b}-bit integer PCM")))
        }
        (WAVE_FORMAT_IEEE_FLOAT, b) => {
            return Err(Error::UnsupportedFormat(format!("{b}-bit float")))
        }
        (t, _) => return Err(Error::UnsupportedFormat(format!("codec tag 0x{t:04x}"))),
    };
    if channels == 0 || channels > MAX_CHANNELS {
        return Err(Error::UnsupportedFormat(format!(
            "{channels} channels (supported: 1..={MAX_CHANNELS})"
        )));
    }
    if sample_rate == 0 {
        return Err(Error::parse(offset as u64 + 4, "sample rate is zero"));
    }
    let expected_align = channels * bits / 8;
    if block_align != expected_align {
        return Err(Error::parse(
            offset as u64 + 12,
            format!("block align {block_align} does not match {channels} x {bits}-bit frames"),
        ));
    }
    Ok(FmtChunk {
        channels,
        sample_rate,
        format,
        block_align,
    })
}

fn parse_wav(bytes: &[u8]) -> Result<(WavInfo, &[u8])> {
    if bytes.len() < 12 {
        return Err(Error::parse(0, "file shorter than the 12-byte RIFF header"));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(Error::parse(0, "missing RIFF signature"));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(Error::parse(8, "RIFF form type is not WAVE"));
    }
    let riff_end = 8 + read_u32(bytes, 4) as usize;
    if riff_end > bytes.len() {
        return Err(Error::parse(
            4,
            format!(
                "RIFF size declares {} bytes but the file has {}",
                riff_end,
                bytes.len()
            ),
        ));
    }

    let mut fmt: Option<FmtChunk> = None;
    let mut pos = 12;
    while pos + 8 <= riff_end {
        let id = &bytes[pos..pos + 4];
        let size = read_u32(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|&end| end <= riff_end)
            .ok_or_else(|| {
                Error::parse(
                    pos as u64 + 4,
                    format!(
                        "chunk '{}' declares {size} bytes but only {} remain",
                        String::from_utf8_lossy(id),
                        riff_end - body_start
                    ),
                )
            })?;
        let body = &bytes[body_start..body_end];

        match id {
            b"fmt " => fmt = Some(parse_fmt(body, body_start)?),
            b"data" => {
                let fmt = fmt.ok_or_else(|| {
                    Error::parse(pos as u64, "data chunk appears before fmt chunk")
                })?;
                if size % fmt.block_align as usize != 0 {
                    return Err(Error::parse(
                        pos as u64 + 4,
                        format!(
                            "data length {size} is not a multiple of the {}-byte frame",
                            fmt.block_align
                        ),
                    ));
                }
                let info = WavInfo {
                    sample_rate: fmt.sample_rate,
                    channels: fmt.channels,
                    format: fmt.format,
                    frames: size / fmt.block_align as usize,
                };
                return Ok((info, body));
            }
            _ => {}
        }
        // Chunks are word aligned.
        pos = body_end + (size & 1);
    }
    Err(Error::parse(pos as u64, "no data chunk found"))
}

/// Serializes a mono buffer as a RIFF/WAVE byte stream.
pub fn encode_wav(buffer: &AudioBuffer, format: SampleFormat, dither: Dither) -> Vec<u8> {
    encode_channels(&[buffer.samples()], buffer.sample_rate(), format, dither)
        .expect("single channel always encodes")
}

/// Interleaves equally long channels into a RIFF/WAVE byte stream.
pub fn encode_wav_channels(
    channels: &[&[f32]],
    sample_rate: u32,
    format: SampleFormat,
    dither: Dither,
) -> Result<Vec<u8>> {
    check_rate(sample_rate)?;
    if channels.is_empty() || channels.len() > MAX_CHANNELS as usize {
        return Err(Error::UnsupportedFormat(format!(
            "{} channels (supported: 1..={MAX_CHANNELS})",
            channels.len()
        )));
    }
    let frames = channels[0].len();
    if channels.iter().any(|c| c.len() != frames) {
        return Err(Error::domain("channels differ in length"));
    }
    encode_channels(channels, sample_rate, format, dither)
}

fn encode_channels(
    channels: &[&[f32]],
    sample_rate: u32,
    format: SampleFormat,
    dither: Dither,
) -> Result<Vec<u8>> {
    let n_channels = channels.len() as u16;
    let frames = channels[0].len();
    let bytes_per_sample = (format.bits() / 8) as usize;
    let block_align = n_channels as usize * bytes_per_sample;
    let data_len = frames * block_align;
    let float = format == SampleFormat::Float32;
    // Float files carry cbSize and a fact chunk.
    let fmt_len: u32 = if float { 18 } else { 16 };
    let fact_len: usize = if float { 12 } else { 0 };
    let riff_len = 4 + (8 + fmt_len as usize) + fact_len + 8 + data_len;

    let mut out = Vec::with_capacity(8 + riff_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(riff_len as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&fmt_len.to_le_bytes());
    out.extend_from_slice(&format.tag().to_le_bytes());
    out.extend_from_slice(&n_channels.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * block_align as u32).to_le_bytes());
    out.extend_from_slice(&(block_align as u16).to_le_bytes());
    out.extend_from_slice(&format.bits().to_le_bytes());
    if float {
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(b"fact");
        out.extend_from_slice(&4u32.to_le_bytes());
        out.extend_from_slice(&(frames as u32).to_le_bytes());
    }
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());

    let mut rng = match dither {
        Dither::Triangular { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        Dither::None => None,
    };
    for frame in 0..frames {
        for channel in channels {
            let s = channel[frame];
            match format {
                SampleFormat::Float32 => out.extend_from_slice(&s.to_le_bytes()),
                SampleFormat::Pcm16 => {
                    let mut scaled = s as f64 * 32768.0;
                    if let Some(rng) = rng.as_mut() {
                        scaled += rng.gen::<f64>() - rng.gen::<f64>();
                    }
                    let q = scaled.round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
                    out.extend_from_slice(&q.to_le_bytes());
                }
            }
        }
    }
    Ok(out)
}

pub fn write_wav(buffer: &AudioBuffer, path: impl AsRef<Path>, format: SampleFormat) -> Result<()> {
    write_wav_dithered(buffer, path, format, Dither::None)
}

pub fn write_wav_dithered(
    buffer: &AudioBuffer,
    path: impl AsRef<Path>,
    format: SampleFormat,
    dither: Dither,
) -> Result<()> {
    fs::write(path, encode_wav(buffer, format, dither))?;
    Ok(())
}
