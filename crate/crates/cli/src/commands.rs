use std::fs;
use std::path::Path;

use serde::Serialize;
use tobmeter_core::audio_io::{decode_wav, encode_wav, Dither};
use tobmeter_core::guidelines::{builtin_table, load_guideline_csv, ExposureReport, GuidelineTable};
use tobmeter_core::spectrum::required_window;
use tobmeter_core::tob::{band_spectrum_with, tob_centers, AnalysisOptions};
use tobmeter_core::{
    assess as assess_spectrum, builtin_tables_for, combine_levels, compare_response, generate_tone,
    inject_tone, AudioBuffer, Band, CalibrationProfile, ChannelSelect, CompareOptions, DegradationReport,
    SampleFormat, ThirdOctaveSpectrum, ToneSpec, WeightingKind,
};

use crate::report::{Envelope, InputDigest, RunConfig};
use crate::{
    AnalyzeArgs, AssessArgs, CliError, CliResult, CombineArgs, CompareArgs, InjectArgs, ReportFormat, ToneArgs,
    ToneShape, EXIT_CLEAN, EXIT_FOUND,
};

/// Default band search limits when the user gives none.
const AUTO_LO_HZ: f64 = 20.0;
const AUTO_HI_HZ: f64 = 20_000.0;

pub(crate) fn load_wav(path: &Path, channel: ChannelSelect) -> CliResult<(AudioBuffer, InputDigest)> {
    let bytes = fs::read(path).map_err(|e| {
        tobmeter_core::Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })?;
    let digest = InputDigest::of(&path.display().to_string(), &bytes);
    Ok((decode_wav(&bytes, channel)?, digest))
}

/// Builtin table by name, or a guideline CSV by path.
pub(crate) fn resolve_table(name: &str) -> CliResult<GuidelineTable> {
    if let Some(table) = builtin_table(name) {
        return Ok(table);
    }
    if Path::new(name).exists() || name.ends_with(".csv") {
        return Ok(load_guideline_csv(name)?);
    }
    Err(CliError::Usage(format!(
        "unknown table '{name}' (builtin: hfn-mean, hfn-median, lfn-curve, or a CSV path)"
    )))
}

pub(crate) fn emit(text: &str, output: Option<&Path>) -> CliResult<()> {
    let mut text = text.to_string();
    if !text.ends_with('\n') {
        text.push('\n');
    }
    match output {
        Some(path) => fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn path_string(path: Option<&Path>) -> Option<String> {
    path.map(|p| p.display().to_string())
}

/// Bands to analyze. Missing limits are filled from what the recording
/// supports: the lowest band it is long enough to resolve and the highest
/// band clear of aliasing.
fn resolve_bands(buffer: &AudioBuffer, lo: Option<f64>, hi: Option<f64>) -> CliResult<Vec<Band>> {
    let rate = buffer.sample_rate();
    let candidates = tob_centers(AUTO_LO_HZ, AUTO_HI_HZ)?;
    let hi = match hi {
        Some(hi) => hi,
        None => candidates
            .iter()
            .rev()
            .find(|b| b.check_alias(rate).is_ok())
            .map_or(AUTO_LO_HZ, |b| b.nominal_hz()),
    };
    let lo = match lo {
        Some(lo) => lo,
        None => candidates
            .iter()
            .find(|b| required_window(**b, rate) <= buffer.len())
            .map_or(hi, |b| b.nominal_hz().min(hi)),
    };
    let bands = tob_centers(lo, hi)?;
    if bands.is_empty() {
        return Err(CliError::Usage(format!("no third-octave bands between {lo} and {hi} Hz")));
    }
    Ok(bands)
}

fn range_of(bands: &[Band]) -> Option<(f64, f64)> {
    Some((bands.first()?.nominal_hz(), bands.last()?.nominal_hz()))
}

fn spectrum_table(spectrum: &ThirdOctaveSpectrum) -> String {
    let mut out = format!("{:>9}  {:>8}\n", "band_hz", format!("L{}eq", spectrum.weighting.to_string().to_uppercase()));
    for b in &spectrum.bands {
        out.push_str(&format!("{:>9}  {:>8.2}\n", b.center_hz.nominal_hz(), b.level_db));
    }
    out
}

pub(crate) fn analyze(a: AnalyzeArgs) -> CliResult<i32> {
    let (buffer, digest) = load_wav(&a.input, a.levels.channel)?;
    let weighting = a.levels.weighting.unwrap_or(WeightingKind::Z);
    let cal = CalibrationProfile::new(a.levels.calibration)?;
    let bands = resolve_bands(&buffer, a.levels.lo, a.levels.hi)?;
    let spectrum = band_spectrum_with(&buffer, weighting, cal, &bands, AnalysisOptions::default())?;

    let config = RunConfig {
        output: path_string(a.output.as_deref()),
        weighting: Some(weighting.to_string()),
        calibration_db: Some(cal.fullscale_spl_db),
        band_range_hz: range_of(&bands),
        format: Some(a.format.name().into()),
        ..RunConfig::new("analyze").input(&a.input)
    }
    .param("channel", a.levels.channel);
    let text = match a.format {
        ReportFormat::Json => Envelope::new(&config, &[digest], &spectrum).to_json()?,
        ReportFormat::Csv => spectrum.to_csv(),
        ReportFormat::Table => spectrum_table(&spectrum),
    };
    emit(&text, a.output.as_deref())?;
    Ok(EXIT_CLEAN)
}

#[derive(Debug, Serialize)]
struct AssessResult {
    report: ExposureReport,
    spectrum: ThirdOctaveSpectrum,
    /// Table bands that could not be measured at the input's sample rate.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    unmeasured_bands: Vec<Band>,
}

fn is_spectrum_json(path: &Path, bytes: &[u8]) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
        || bytes.iter().find(|b| !b.is_ascii_whitespace()) == Some(&b'{')
}

pub(crate) fn assess(a: AssessArgs) -> CliResult<i32> {
    let mut tables = a.tables.iter().map(|t| resolve_table(t)).collect::<CliResult<Vec<_>>>()?;
    let bytes = fs::read(&a.input).map_err(|e| {
        tobmeter_core::Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", a.input.display())))
    })?;
    let digest = InputDigest::of(&a.input.display().to_string(), &bytes);

    let mut unmeasured_bands = Vec::new();
    let spectrum = if is_spectrum_json(&a.input, &bytes) {
        let text = String::from_utf8(bytes).map_err(|_| CliError::Usage("spectrum file is not UTF-8".into()))?;
        ThirdOctaveSpectrum::from_json(&text)?
    } else {
        let buffer = decode_wav(&bytes, a.levels.channel)?;
        let weighting = a.levels.weighting.unwrap_or_else(|| match tables.split_first() {
            Some((first, rest)) if rest.iter().all(|t| t.weighting_required == first.weighting_required) => {
                first.weighting_required
            }
            _ => WeightingKind::Z,
        });
        if tables.is_empty() {
            tables = builtin_tables_for(weighting);
        }
        let cal = CalibrationProfile::new(a.levels.calibration)?;
        let bands = if a.levels.lo.is_some() || a.levels.hi.is_some() {
            resolve_bands(&buffer, a.levels.lo, a.levels.hi)?
        } else {
            let mut wanted: Vec<Band> = tables.iter().flat_map(|t| t.rows().iter().map(|r| r.center_hz)).collect();
            wanted.sort();
            wanted.dedup();
            let (ok, aliased): (Vec<Band>, Vec<Band>) =
                wanted.into_iter().partition(|b| b.check_alias(buffer.sample_rate()).is_ok());
            unmeasured_bands = aliased;
            if ok.is_empty() {
                return Err(CliError::Core(tobmeter_core::Error::Config(format!(
                    "no table band can be measured at {} Hz",
                    buffer.sample_rate()
                ))));
            }
            ok
        };
        band_spectrum_with(&buffer, weighting, cal, &bands, AnalysisOptions::default())?
    };
    if tables.is_empty() {
        tables = builtin_tables_for(spectrum.weighting);
    }
    let report = assess_spectrum(&spectrum, &tables)?;
    let found = report.any_exceedance();

    let config = RunConfig {
        output: path_string(a.output.as_deref()),
        weighting: Some(spectrum.weighting.to_string()),
        calibration_db: Some(spectrum.calibration_db),
        band_range_hz: range_of(&spectrum.bands.iter().map(|b| b.center_hz).collect::<Vec<_>>()),
        tables: tables.iter().map(|t| t.name.clone()).collect(),
        format: Some(a.format.name().into()),
        ..RunConfig::new("assess").input(&a.input)
    }
    .param("channel", a.levels.channel);
    let text = match a.format {
        ReportFormat::Json => {
            let result = AssessResult { report, spectrum, unmeasured_bands };
            Envelope::new(&config, &[digest], &result).to_json()?
        }
        ReportFormat::Csv => {
            let mut out = String::from("center_hz,measured_db,table,limit_db,exceeded\n");
            for e in &report.entries {
                for l in &e.limits {
                    out.push_str(&format!(
                        "{},{:.2},{},{:.2},{}\n",
                        e.center_hz.nominal_hz(),
                        e.measured_db,
                        l.table,
                        l.limit_db,
                        l.exceeded
                    ));
                }
            }
            out
        }
        ReportFormat::Table => {
            let mut out = format!("{:>9}  {:>8}  {:<12}  {:>8}  exceeded\n", "band_hz", "level", "table", "limit");
            for e in &report.entries {
                for l in &e.limits {
                    out.push_str(&format!(
                        "{:>9}  {:>8.2}  {:<12}  {:>8.2}  {}\n",
                        e.center_hz.nominal_hz(),
                        e.measured_db,
                        l.table,
                        l.limit_db,
                        if l.exceeded { "YES" } else { "no" }
                    ));
                }
            }
            out
        }
    };
    emit(&text, a.output.as_deref())?;
    Ok(if found { EXIT_FOUND } else { EXIT_CLEAN })
}

fn tone_amplitude(shape: &ToneShape) -> CliResult<f64> {
    let cal = CalibrationProfile::new(shape.calibration)?;
    Ok(match (shape.amplitude, shape.level) {
        (Some(amp), _) => amp,
        (None, Some(level)) => cal.sine_amplitude_for(level),
        (None, None) => 1.0,
    })
}

fn write_audio(buffer: &AudioBuffer, shape: &ToneShape, path: &Path) -> CliResult<InputDigest> {
    let dither = match shape.format {
        SampleFormat::Pcm16 => Dither::Triangular { seed: shape.seed },
        SampleFormat::Float32 => Dither::None,
    };
    let bytes = encode_wav(buffer, shape.format, dither);
    fs::write(path, &bytes)?;
    Ok(InputDigest::of(&path.display().to_string(), &bytes))
}

#[derive(Debug, Serialize)]
struct WrittenAudio {
    output: InputDigest,
    sample_rate: u32,
    samples: usize,
    amplitude: f64,
}

fn shape_config(mut config: RunConfig, shape: &ToneShape, amplitude: f64, output: &Path) -> RunConfig {
    config.output = Some(output.display().to_string());
    config.calibration_db = Some(shape.calibration);
    config.format = Some(format!("{:?}", shape.format).to_lowercase());
    config
        .param("frequency_hz", shape.frequency_hz)
        .param("amplitude", amplitude)
        .param("fade_ms", shape.fade_ms)
        .param("dither_seed", shape.seed)
}

pub(crate) fn tone(a: ToneArgs) -> CliResult<i32> {
    let amplitude = tone_amplitude(&a.shape)?;
    let spec = ToneSpec::new(a.shape.frequency_hz, a.duration_s)
        .amplitude(amplitude)
        .sample_rate(a.rate)
        .fade_ms(a.shape.fade_ms);
    let buffer = generate_tone(&spec)?;
    let written = write_audio(&buffer, &a.shape, &a.output)?;
    let config = shape_config(RunConfig::new("tone"), &a.shape, amplitude, &a.output)
        .param("duration_s", a.duration_s)
        .param("sample_rate", a.rate);
    let result = WrittenAudio {
        output: written,
        sample_rate: a.rate,
        samples: buffer.len(),
        amplitude,
    };
    emit(&Envelope::new(&config, &[], &result).to_json()?, None)?;
    Ok(EXIT_CLEAN)
}

pub(crate) fn inject(a: InjectArgs) -> CliResult<i32> {
    let (track, digest) = load_wav(&a.track, a.channel)?;
    let amplitude = tone_amplitude(&a.shape)?;
    let spec = ToneSpec::new(a.shape.frequency_hz, track.duration_s())
        .amplitude(amplitude)
        .sample_rate(track.sample_rate())
        .fade_ms(a.shape.fade_ms);
    let mixed = inject_tone(&track, &spec, a.attenuation)?;
    let written = write_audio(&mixed, &a.shape, &a.output)?;
    let config = shape_config(RunConfig::new("inject").input(&a.track), &a.shape, amplitude, &a.output)
        .param("attenuation_db", a.attenuation)
        .param("channel", a.channel);
    let result = WrittenAudio {
        output: written,
        sample_rate: mixed.sample_rate(),
        samples: mixed.len(),
        amplitude,
    };
    emit(&Envelope::new(&config, &[digest], &result).to_json()?, None)?;
    Ok(EXIT_CLEAN)
}

pub(crate) fn compare(a: CompareArgs) -> CliResult<i32> {
    let (pre, pre_digest) = load_wav(&a.pre, a.channel)?;
    let (post, post_digest) = load_wav(&a.post, a.channel)?;
    let opts = CompareOptions {
        damage_threshold_db: a.threshold,
        lo_hz: a.lo,
        hi_hz: a.hi,
        noise_floor_db: None,
    };
    let report: DegradationReport = compare_response(&pre, &post, &opts)?;
    let config = RunConfig {
        output: path_string(a.output.as_deref()),
        weighting: Some(WeightingKind::Z.to_string()),
        band_range_hz: Some((a.lo, a.hi)),
        format: Some(a.format.name().into()),
        ..RunConfig::new("compare").input(&a.pre).input(&a.post)
    }
    .param("damage_threshold_db", a.threshold)
    .param("channel", a.channel);
    let text = match a.format {
        ReportFormat::Json => Envelope::new(&config, &[pre_digest, post_digest], &report).to_json()?,
        ReportFormat::Table => report.to_table(),
        ReportFormat::Csv => {
            let mut out = String::from("center_hz,pre_db,post_db,delta_db,flagged\n");
            for b in &report.bands {
                let delta = b.delta_db.map_or_else(String::new, |d| format!("{d:.2}"));
                out.push_str(&format!(
                    "{},{:.2},{:.2},{delta},{}\n",
                    b.center_hz.nominal_hz(),
                    b.pre_db,
                    b.post_db,
                    b.flagged
                ));
            }
            out
        }
    };
    emit(&text, a.output.as_deref())?;
    Ok(EXIT_CLEAN)
}

pub(crate) fn combine(a: CombineArgs) -> CliResult<i32> {
    let total = combine_levels(&a.levels)?;
    println!("{total:.2}");
    Ok(EXIT_CLEAN)
}
