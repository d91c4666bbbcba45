//! `monitor`: feeds a WAV file or a raw stdin stream to the detector and
//! reports alerts as they open and close.

use std::fs::File;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};
use tobmeter_core::detector::{BandThreshold, DetectorConfig, DetectorEvent};
use tobmeter_core::{Alert, Band, CalibrationProfile, ChannelSelect, Detector, Error, WeightingKind};

use crate::commands::{emit, load_wav, resolve_table};
use crate::report::{Envelope, InputDigest, RunConfig};
use crate::{CliError, CliResult, MonitorArgs, EXIT_CLEAN, EXIT_FOUND};

const HEADER_LIMIT: usize = 256;

/// Parsed `f32le <sample_rate> <channels>` header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct StreamHeader {
    pub sample_rate: u32,
    pub channels: usize,
}

pub(crate) fn parse_header(line: &str) -> Result<StreamHeader, Error> {
    let bad = |message: String| Error::Parse { offset: 0, message };
    let mut parts = line.split_whitespace();
    match parts.next() {
        Some("f32le") => {}
        other => return Err(bad(format!("expected stream header 'f32le <rate> <channels>', got {other:?}"))),
    }
    let sample_rate: u32 = parts
        .next()
        .and_then(|s| s.parse().ok())
        .filter(|&r| r > 0)
        .ok_or_else(|| bad("stream header needs a positive sample rate".into()))?;
    let channels: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .filter(|c| (1..=8).contains(c))
        .ok_or_else(|| bad("stream header needs 1 to 8 channels".into()))?;
    if parts.next().is_some() {
        return Err(bad("trailing fields in stream header".into()));
    }
    Ok(StreamHeader { sample_rate, channels })
}

fn read_header(reader: &mut impl BufRead, hasher: &mut Sha256) -> Result<(StreamHeader, u64), Error> {
    let mut line = Vec::new();
    reader.by_ref().take(HEADER_LIMIT as u64).read_until(b'\n', &mut line)?;
    hasher.update(&line);
    if line.last() != Some(&b'\n') {
        return Err(Error::Parse {
            offset: line.len() as u64,
            message: "stream header line is missing or too long".into(),
        });
    }
    let text = std::str::from_utf8(&line).map_err(|_| Error::Parse {
        offset: 0,
        message: "stream header is not text".into(),
    })?;
    Ok((parse_header(text.trim_end())?, line.len() as u64))
}

/// Picks or mixes one channel from interleaved frames, clamping to full scale.
fn select(frames: &[f32], channels: usize, channel: ChannelSelect, clipped: &mut usize) -> Result<Vec<f32>, Error> {
    let pick = |frame: &[f32]| -> Result<f32, Error> {
        match channel {
            ChannelSelect::First => Ok(frame[0]),
            ChannelSelect::Index(i) => frame
                .get(i)
                .copied()
                .ok_or_else(|| Error::Domain(format!("channel {i} requested from a {channels}-channel stream"))),
            ChannelSelect::Mixdown => Ok(frame.iter().sum::<f32>() / channels as f32),
        }
    };
    frames
        .chunks_exact(channels)
        .map(|frame| {
            let s = pick(frame)?;
            if s.abs() >= 1.0 {
                *clipped += 1;
            }
            Ok(s.clamp(-1.0, 1.0))
        })
        .collect()
}

fn build_config(a: &MonitorArgs, sample_rate: u32) -> CliResult<(DetectorConfig, Vec<String>)> {
    let mut tables = Vec::new();
    let config = match (&a.preset, a.bands.is_empty()) {
        (Some(_), false) => {
            return Err(CliError::Usage("use either --preset or --band/--threshold, not both".into()));
        }
        (None, true) => return Err(CliError::Usage("nothing to monitor: give --preset or --band".into())),
        (Some(preset), true) => {
            let table = resolve_table(preset)?;
            tables.push(table.name.clone());
            let config = DetectorConfig::from_table(&table, sample_rate);
            if config.bands.is_empty() {
                return Err(CliError::Core(Error::Config(format!(
                    "table '{}' has no band that can be monitored at {sample_rate} Hz",
                    table.name
                ))));
            }
            config
        }
        (None, false) => {
            let thresholds = match a.thresholds.len() {
                1 => vec![a.thresholds[0]; a.bands.len()],
                n if n == a.bands.len() => a.thresholds.clone(),
                n => {
                    return Err(CliError::Usage(format!(
                        "{} band(s) but {n} threshold(s); give one threshold or one per band",
                        a.bands.len()
                    )))
                }
            };
            let bands = a
                .bands
                .iter()
                .zip(thresholds)
                .map(|(&hz, threshold_db)| Ok(BandThreshold { band: Band::from_nominal(hz)?, threshold_db }))
                .collect::<Result<Vec<_>, Error>>()?;
            DetectorConfig::new(bands)
        }
    };
    let weighting = a.weighting.unwrap_or(if tables.is_empty() { WeightingKind::Z } else { config.weighting });
    let config = config
        .weighting(weighting)
        .persistence(a.persistence)
        .release(a.release)
        .calibration(CalibrationProfile::new(a.calibration)?)
        .window(a.window, None);
    Ok((config, tables))
}

struct Sink {
    log: Option<File>,
    alerts: Vec<Alert>,
}

impl Sink {
    fn handle(&mut self, events: Vec<DetectorEvent>) -> CliResult<()> {
        for event in events {
            match event {
                DetectorEvent::Opened { band, onset_s, level_db, threshold_db } => {
                    eprintln!("alert band={band} onset={onset_s:.3}s level={level_db:.1}dB threshold={threshold_db:.1}dB");
                }
                DetectorEvent::Closed(alert) => {
                    eprintln!(
                        "cleared band={} end={:.3}s peak={:.1}dB",
                        alert.band, alert.end_s, alert.peak_level_db
                    );
                    if let Some(log) = self.log.as_mut() {
                        writeln!(log, "{}", alert.to_json_line())?;
                    }
                    self.alerts.push(alert);
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Serialize)]
struct MonitorResult {
    sample_rate: u32,
    window_length: usize,
    hop: usize,
    windows: u64,
    duration_s: f64,
    clipped_samples: usize,
    alerts: Vec<Alert>,
}

pub(crate) fn monitor(a: MonitorArgs) -> CliResult<i32> {
    if a.chunk == 0 {
        return Err(CliError::Usage("--chunk must be at least 1".into()));
    }
    let from_stdin = a.input == Path::new("-");
    let stdin = io::stdin();
    let mut stdin_reader = BufReader::new(stdin.lock());
    let mut hasher = Sha256::new();

    enum Source {
        Wav(tobmeter_core::AudioBuffer),
        Stream(StreamHeader, u64),
    }
    let (source, wav_digest) = if from_stdin {
        let (header, len) = read_header(&mut stdin_reader, &mut hasher)?;
        (Source::Stream(header, len), None)
    } else {
        let (buffer, digest) = load_wav(&a.input, a.channel)?;
        (Source::Wav(buffer), Some(digest))
    };
    let sample_rate = match &source {
        Source::Wav(b) => b.sample_rate(),
        Source::Stream(h, _) => h.sample_rate,
    };

    let (config, tables) = build_config(&a, sample_rate)?;
    let mut detector = Detector::new(config.clone(), sample_rate)?;
    let mut sink = Sink {
        log: a.log.as_deref().map(File::create).transpose()?,
        alerts: Vec::new(),
    };
    let mut clipped = 0;

    let digest = match source {
        Source::Wav(buffer) => {
            clipped = buffer.clipped_samples();
            for chunk in buffer.samples().chunks(a.chunk) {
                sink.handle(detector.push(chunk))?;
            }
            wav_digest.expect("wav input has a digest")
        }
        Source::Stream(header, mut offset) => {
            let frame_bytes = 4 * header.channels;
            let mut raw = vec![0u8; a.chunk * frame_bytes];
            let mut carry = 0;
            loop {
                let n = stdin_reader.read(&mut raw[carry..])?;
                if n == 0 {
                    break;
                }
                hasher.update(&raw[carry..carry + n]);
                let filled = carry + n;
                let whole = filled - filled % frame_bytes;
                let mut frames = Vec::with_capacity(whole / 4);
                for (i, b) in raw[..whole].chunks_exact(4).enumerate() {
                    let v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
                    if !v.is_finite() {
                        return Err(CliError::Core(Error::Parse {
                            offset: offset + 4 * i as u64,
                            message: "non-finite sample in stream".into(),
                        }));
                    }
                    frames.push(v);
                }
                let mono = select(&frames, header.channels, a.channel, &mut clipped)?;
                sink.handle(detector.push(&mono))?;
                offset += whole as u64;
                raw.copy_within(whole..filled, 0);
                carry = filled - whole;
            }
            if carry != 0 {
                return Err(CliError::Core(Error::Parse {
                    offset,
                    message: format!("stream ends inside a frame ({carry} stray bytes)"),
                }));
            }
            InputDigest {
                path: "-".into(),
                sha256: hex::encode(hasher.finalize()),
                bytes: offset,
            }
        }
    };
    sink.handle(detector.finish())?;

    let run_config = RunConfig {
        output: a.output.as_deref().map(|p| p.display().to_string()),
        weighting: Some(config.weighting.to_string()),
        calibration_db: Some(config.cal.fullscale_spl_db),
        tables,
        ..RunConfig::new("monitor").input(&a.input)
    }
    .param("bands", &config.bands)
    .param("persistence", config.persistence)
    .param("release", config.release)
    .param("window", a.window)
    .param("chunk", a.chunk)
    .param("channel", a.channel)
    .param("log", a.log.as_deref().map(|p| p.display().to_string()));
    let result = MonitorResult {
        sample_rate,
        window_length: detector.window_length(),
        hop: detector.hop(),
        windows: detector.windows_processed(),
        duration_s: detector.stream_time_s(),
        clipped_samples: clipped,
        alerts: sink.alerts,
    };
    let found = !result.alerts.is_empty();
    emit(&Envelope::new(&run_config, &[digest], &result).to_json()?, a.output.as_deref())?;
    Ok(if found { EXIT_FOUND } else { EXIT_CLEAN })
}
