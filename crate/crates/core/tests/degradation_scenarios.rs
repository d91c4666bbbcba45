mod common;

use tobmeter_core::tonegen::pink_noise;
use tobmeter_core::{compare_response, AudioBuffer, Band, CompareOptions, Error};

const RATE: u32 = 44_100;

fn program(seed: u64) -> AudioBuffer {
    pink_noise(30.0, 18_000.0, 0.05, 4 * 65_536, RATE, seed).unwrap()
}

#[test]
fn lowpass_corner_is_found() {
    let pre = program(11);
    let post = common::butterworth_lowpass(&pre, 5_000.0, 8);
    let report = compare_response(&pre, &post, &CompareOptions::default()).unwrap();
    let cutoff = Band::from_nominal(report.cutoff_estimate_hz.unwrap()).unwrap();
    assert!((cutoff.index() - Band::from_nominal(5_000.0).unwrap().index()).abs() <= 1);
    assert!(report.flagged_bands.iter().all(|b| b.nominal_hz() > 5_000.0));
    assert!(report.to_table().contains("cutoff estimate"));
}

#[test]
fn cutoff_estimate_rises_with_the_corner() {
    let pre = program(12);
    let estimates: Vec<f64> = [2_000.0, 4_000.0, 8_000.0]
        .iter()
        .map(|&fc| {
            let post = common::butterworth_lowpass(&pre, fc, 8);
            compare_response(&pre, &post, &CompareOptions::default())
                .unwrap()
                .cutoff_estimate_hz
                .unwrap()
        })
        .collect();
    assert!(estimates.windows(2).all(|w| w[1] > w[0]), "{estimates:?}");
}

#[test]
fn unchanged_or_rescaled_recordings_are_clean() {
    let pre = program(13);
    let same = compare_response(&pre, &pre, &CompareOptions::default()).unwrap();
    assert!(same.is_clean() && same.cutoff_estimate_hz.is_none());
    let quieter = pre.scaled(0.5).unwrap();
    let report = compare_response(&pre, &quieter, &CompareOptions::default()).unwrap();
    assert!(report.is_clean());
    assert!((report.normalization_offset_db - 6.02).abs() < 0.01);
}

#[test]
fn swapping_the_recordings_flags_nothing() {
    let pre = program(14);
    let post = common::butterworth_lowpass(&pre, 5_000.0, 8);
    let report = compare_response(&post, &pre, &CompareOptions::default()).unwrap();
    assert!(report.is_clean());
}

#[test]
fn threshold_controls_sensitivity() {
    let pre = program(15);
    let post = common::butterworth_lowpass(&pre, 5_000.0, 2);
    let strict = CompareOptions { damage_threshold_db: 6.0, ..Default::default() };
    let lax = CompareOptions { damage_threshold_db: 40.0, ..Default::default() };
    let s = compare_response(&pre, &post, &strict).unwrap();
    let l = compare_response(&pre, &post, &lax).unwrap();
    assert!(s.flagged_bands.len() > l.flagged_bands.len());
}

#[test]
fn mismatched_recordings_are_rejected() {
    let pre = program(16);
    let short = pre.slice(0, pre.len() / 2).unwrap();
    assert!(matches!(compare_response(&pre, &short, &CompareOptions::default()), Err(Error::Contract(_))));
    let resampled = AudioBuffer::new(pre.samples().to_vec(), 48_000).unwrap();
    assert!(matches!(compare_response(&pre, &resampled, &CompareOptions::default()), Err(Error::Contract(_))));
}
