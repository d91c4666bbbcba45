//! Before/after comparison of a speaker's reproduction of the same program
//! material, looking for lost high-frequency output.

use serde::{Deserialize, Serialize};

use crate::audio_io::{AudioBuffer, CalibrationProfile};
use crate::error::{Error, Result};
use crate::tob::{band_spectrum_with, combine_levels, tob_centers, AnalysisOptions, Band};
use crate::weighting::WeightingKind;

pub const DEFAULT_DAMAGE_THRESHOLD_DB: f64 = 20.0;
/// Region assumed intact, used to cancel overall gain differences.
pub const NORMALIZATION_RANGE_HZ: (f64, f64) = (125.0, 1000.0);
/// Pre-recording bands closer than this to the noise floor are indeterminate.
pub const MIN_SNR_DB: f64 = 10.0;
/// Allowed relative difference between the two recordings' durations.
pub const DURATION_TOLERANCE: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompareOptions {
    pub damage_threshold_db: f64,
    pub lo_hz: f64,
    pub hi_hz: f64,
    /// Defaults to the analysis silence floor.
    pub noise_floor_db: Option<f64>,
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self {
            damage_threshold_db: DEFAULT_DAMAGE_THRESHOLD_DB,
            lo_hz: 125.0,
            hi_hz: 16_000.0,
            noise_floor_db: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandDelta {
    pub center_hz: Band,
    pub pre_db: f64,
    pub post_db: f64,
    /// Normalized `post − pre`; `None` when the pre recording is too close to
    /// the noise floor in this band.
    pub delta_db: Option<f64>,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationReport {
    pub bands: Vec<BandDelta>,
    pub flagged_bands: Vec<Band>,
    /// Highest band still reproduced below a run of (at least two) flagged
    /// bands that extends to the top of the analyzed range.
    pub cutoff_estimate_hz: Option<f64>,
    /// Gain added to the post recording to match the pre recording in the
    /// normalization region.
    pub normalization_offset_db: f64,
    pub damage_threshold_db: f64,
}

impl DegradationReport {
    pub fn is_clean(&self) -> bool {
        self.flagged_bands.is_empty()
    }

    /// Two aligned columns per band for terminal output.
    pub fn to_table(&self) -> String {
        let mut out = format!("{:>9}  {:>8}  {:>8}  {:>8}  flag\n", "band_hz", "pre_db", "post_db", "delta");
        for b in &self.bands {
            let delta = b.delta_db.map_or_else(|| "n/a".to_string(), |d| format!("{d:.1}"));
            out.push_str(&format!(
                "{:>9}  {:>8.1}  {:>8.1}  {:>8}  {}\n",
                b.center_hz.nominal_hz(),
                b.pre_db,
                b.post_db,
                delta,
                if b.flagged { "*" } else { "" }
            ));
        }
        match self.cutoff_estimate_hz {
            Some(hz) => out.push_str(&format!("cutoff estimate: {hz} Hz\n")),
            None => out.push_str("cutoff estimate: none\n"),
        }
        out
    }
}

pub fn compare_response(
    pre: &AudioBuffer,
    post: &AudioBuffer,
    opts: &CompareOptions,
) -> Result<DegradationReport> {
    if pre.sample_rate() != post.sample_rate() {
        return Err(Error::Contract(format!(
            "sample rates differ: {} Hz vs {} Hz",
            pre.sample_rate(),
            post.sample_rate()
        )));
    }
    if pre.is_empty() || post.is_empty() {
        return Err(Error::Contract("recordings must not be empty".into()));
    }
    let ratio = post.len() as f64 / pre.len() as f64;
    if (ratio - 1.0).abs() > DURATION_TOLERANCE {
        return Err(Error::Contract(format!(
            "durations differ by {:.1}% ({:.2} s vs {:.2} s); limit is {:.0}%",
            (ratio - 1.0).abs() * 100.0,
            pre.duration_s(),
            post.duration_s(),
            DURATION_TOLERANCE * 100.0
        )));
    }
    if !(opts.damage_threshold_db > 0.0) {
        return Err(Error::domain("damage threshold must be positive"));
    }

    let (norm_lo, norm_hi) = NORMALIZATION_RANGE_HZ;
    let bands = tob_centers(opts.lo_hz.min(norm_lo), opts.hi_hz.max(norm_hi))?;
    let cal = CalibrationProfile::default();
    let analysis = AnalysisOptions::default();
    let pre_s = band_spectrum_with(pre, WeightingKind::Z, cal, &bands, analysis)?;
    let post_s = band_spectrum_with(post, WeightingKind::Z, cal, &bands, analysis)?;
    let floor = opts.noise_floor_db.unwrap_or_else(|| cal.floor_db());

    let norm_bands = |levels: &[crate::tob::BandLevel]| -> Vec<f64> {
        levels
            .iter()
            .filter(|b| (norm_lo..=norm_hi).contains(&b.center_hz.nominal_hz()))
            .map(|b| b.level_db)
            .collect()
    };
    let (pre_norm, post_norm) = (norm_bands(&pre_s.bands), norm_bands(&post_s.bands));
    let audible = |levels: &[f64]| levels.iter().any(|&l| l >= floor + MIN_SNR_DB);
    if !audible(&pre_norm) || !audible(&post_norm) {
        return Err(Error::Contract(format!(
            "no usable signal in the {norm_lo}-{norm_hi} Hz normalization region"
        )));
    }
    let pre_norm = combine_levels(&pre_norm)?;
    let post_norm = combine_levels(&post_norm)?;
    let offset = pre_norm - post_norm;

    let deltas: Vec<BandDelta> = pre_s
        .bands
        .iter()
        .zip(&post_s.bands)
        .filter(|(b, _)| {
            let hz = b.center_hz.nominal_hz();
            hz >= opts.lo_hz && hz <= opts.hi_hz
        })
        .map(|(a, b)| {
            let delta_db = (a.level_db >= floor + MIN_SNR_DB).then_some(b.level_db + offset - a.level_db);
            BandDelta {
                center_hz: a.center_hz,
                pre_db: a.level_db,
                post_db: b.level_db,
                delta_db,
                flagged: delta_db.is_some_and(|d| d < -opts.damage_threshold_db),
            }
        })
        .collect();

    let flagged_bands = deltas.iter().filter(|d| d.flagged).map(|d| d.center_hz).collect();
    Ok(DegradationReport {
        cutoff_estimate_hz: estimate_cutoff(&deltas),
        bands: deltas,
        flagged_bands,
        normalization_offset_db: offset,
        damage_threshold_db: opts.damage_threshold_db,
    })
}

/// Walks down from the top band across flagged (or indeterminate) bands.
/// The first determinate unflagged band below that run is the cutoff; a run
/// covering the whole range reports the band just below it.
fn estimate_cutoff(deltas: &[BandDelta]) -> Option<f64> {
    let mut flagged_run = 0;
    let mut longest_consecutive = 0;
    let mut run_start = None;
    for d in deltas.iter().rev() {
        match (d.delta_db, d.flagged) {
            (Some(_), true) => {
                flagged_run += 1;
                longest_consecutive = longest_consecutive.max(flagged_run);
                run_start = Some(d.center_hz);
            }
            (None, _) => flagged_run = 0,
            (Some(_), false) => break,
        }
    }
    if longest_consecutive < 2 {
        return None;
    }
    let start = run_start?;
    Some(start.prev().unwrap_or(start).nominal_hz())
}
