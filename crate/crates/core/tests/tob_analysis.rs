mod common;

use tobmeter_core::tob::{band_spectrum_with, spectrogram, tob_centers, AnalysisOptions};
use tobmeter_core::tonegen::pink_noise;
use tobmeter_core::{
    band_spectrum, compute_leq, weighting_gain_db, AudioBuffer, Band, CalibrationProfile, Error,
    ThirdOctaveSpectrum, WeightingKind,
};

const RATE: u32 = 44_100;

fn band(hz: f64) -> Band {
    Band::from_nominal(hz).unwrap()
}

#[test]
fn calibrated_tone_lands_in_its_band() {
    let tone = common::calibrated_tone(17_000.0, 86.0, 10.0, RATE);
    let s = band_spectrum(&tone, WeightingKind::Z, CalibrationProfile::default(), 20.0, 16_000.0).unwrap();
    let level = s.level(band(16_000.0)).unwrap();
    assert!((level - 86.0).abs() <= 0.2, "{level}");
    for b in &s.bands {
        if (b.center_hz.index() - band(16_000.0).index()).abs() >= 2 {
            assert!(b.level_db <= 46.0, "{} at {}", b.level_db, b.center_hz);
        }
    }
}

#[test]
fn a_weighted_low_tone() {
    let a100 = weighting_gain_db(WeightingKind::A, 100.0).unwrap();
    let tone = common::calibrated_tone(100.0, 71.6 - a100, 10.0, RATE);
    let s = band_spectrum(&tone, WeightingKind::A, CalibrationProfile::default(), 50.0, 1000.0).unwrap();
    let level = s.level(band(100.0)).unwrap();
    assert!((level - 71.6).abs() <= 0.3, "{level}");
}

#[test]
fn band_sum_matches_leq() {
    let cal = CalibrationProfile::default();
    let noise = pink_noise(60.0, 12_000.0, 0.1, 1 << 17, RATE, 5).unwrap();
    let s = band_spectrum(&noise, WeightingKind::Z, cal, 50.0, 16_000.0).unwrap();
    let leq = compute_leq(&noise, WeightingKind::Z, cal).unwrap();
    assert!((s.total_db().unwrap() - leq.level_db).abs() < 0.1);
}

#[test]
fn calibration_offsets_every_band() {
    let noise = pink_noise(60.0, 12_000.0, 0.1, 1 << 16, RATE, 6).unwrap();
    let at = |db| {
        band_spectrum(&noise, WeightingKind::Z, CalibrationProfile::new(db).unwrap(), 63.0, 10_000.0).unwrap()
    };
    let (a, b) = (at(94.0), at(104.0));
    for (x, y) in a.bands.iter().zip(&b.bands) {
        assert!((y.level_db - x.level_db - 10.0).abs() < 1e-9);
    }
}

#[test]
fn short_buffer_cannot_resolve_low_band() {
    let tone = common::calibrated_tone(1000.0, 80.0, 0.1, RATE);
    match band_spectrum(&tone, WeightingKind::Z, CalibrationProfile::default(), 20.0, 1000.0) {
        Err(Error::Resolution { band_hz, min_samples, .. }) => {
            assert_eq!(band_hz, 20.0);
            assert!(min_samples > tone.len());
        }
        other => panic!("expected a resolution error, got {other:?}"),
    }
}

#[test]
fn bands_near_nyquist_are_refused() {
    let tone = common::calibrated_tone(1000.0, 80.0, 2.0, RATE);
    let err = band_spectrum(&tone, WeightingKind::Z, CalibrationProfile::default(), 1000.0, 20_000.0).unwrap_err();
    assert!(matches!(err, Error::Aliasing { band_hz, .. } if band_hz == 20_000.0), "{err}");
    let tone96 = common::calibrated_tone(19_000.0, 80.0, 2.0, 96_000);
    assert!(band_spectrum(&tone96, WeightingKind::Z, CalibrationProfile::default(), 1000.0, 20_000.0).is_ok());
}

#[test]
fn silence_sits_at_the_floor() {
    let cal = CalibrationProfile::default();
    let s = band_spectrum(&AudioBuffer::silence(1 << 16, RATE).unwrap(), WeightingKind::Z, cal, 100.0, 10_000.0)
        .unwrap();
    assert!(s.bands.iter().all(|b| b.level_db == cal.floor_db()));
}

#[test]
fn explicit_window_is_honoured_above_the_minimum() {
    let cal = CalibrationProfile::default();
    let noise = pink_noise(200.0, 8_000.0, 0.1, 1 << 16, RATE, 2).unwrap();
    let bands = tob_centers(250.0, 8_000.0).unwrap();
    let small = AnalysisOptions { window: 8192, hop: Some(4096) };
    let s = band_spectrum_with(&noise, WeightingKind::Z, cal, &bands, small).unwrap();
    let d = band_spectrum_with(&noise, WeightingKind::Z, cal, &bands, AnalysisOptions::default()).unwrap();
    for (x, y) in s.bands.iter().zip(&d.bands) {
        assert!((x.level_db - y.level_db).abs() < 0.5, "{} vs {}", x.level_db, y.level_db);
    }
}

#[test]
fn json_and_csv_reports() {
    let tone = common::calibrated_tone(1000.0, 80.0, 2.0, RATE);
    let s = band_spectrum(&tone, WeightingKind::A, CalibrationProfile::default(), 500.0, 2000.0).unwrap();
    let back = ThirdOctaveSpectrum::from_json(&s.to_json().unwrap()).unwrap();
    assert_eq!(back, s);
    let csv = s.to_csv();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("center_hz,level_db"));
    assert!(lines.any(|l| l.starts_with("1000,")));
}

#[test]
fn spectrogram_tracks_a_tone() {
    let tone = common::calibrated_tone(3000.0, 80.0, 1.0, RATE);
    let m = spectrogram(&tone, 2048, 1024).unwrap();
    let expected = (3000.0 / m.bin_hz).round() as usize;
    assert!(m.peak_bins().iter().all(|&k| k == expected));
    assert_eq!(m.bin_count(), 1025);
}

#[test]
fn spectrogram_follows_a_chirp_upwards() {
    let len = RATE as usize * 2;
    let (f0, f1) = (500.0, 8000.0);
    let duration = len as f64 / RATE as f64;
    let samples = (0..len)
        .map(|n| {
            let t = n as f64 / RATE as f64;
            let phase = std::f64::consts::TAU * (f0 * t + (f1 - f0) * t * t / (2.0 * duration));
            (0.5 * phase.sin()) as f32
        })
        .collect();
    let chirp = AudioBuffer::new(samples, RATE).unwrap();
    let peaks = spectrogram(&chirp, 1024, 512).unwrap().peak_bins();
    assert!(peaks.windows(2).all(|w| w[1] >= w[0]), "{peaks:?}");
    assert!(peaks.last() > peaks.first());
}

#[test]
fn stationary_tone_frames_agree() {
    let tone = common::calibrated_tone(2000.0, 80.0, 1.0, RATE);
    let body = tone.slice(4096, tone.len() - 4096).unwrap();
    let m = spectrogram(&body, 4096, 2048).unwrap();
    let peaks: Vec<f64> = m
        .frames
        .iter()
        .map(|f| f.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let (lo, hi) = peaks.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &p| (a.min(p), b.max(p)));
    assert!(hi - lo <= 0.1, "{lo}..{hi}");
}

#[test]
fn spectrogram_rejects_bad_shapes() {
    let tone = common::calibrated_tone(2000.0, 80.0, 0.1, RATE);
    assert!(spectrogram(&tone, 128, 64).is_err());
    assert!(spectrogram(&tone, 1024, 0).is_err());
    assert!(spectrogram(&tone, 1 << 16, 1024).is_err());
}
