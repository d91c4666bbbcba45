//! Embedded exposure guidelines and exceedance assessment.
//!
//! Two families of limits ship with the crate:
//!
//! * `hfn-mean` / `hfn-median`: mean and median of published maximum
//!   permissible sound pressure levels for airborne ultrasound, 8 to 50 kHz,
//!   to be compared with Z-weighted band levels.
//! * `lfn-curve`: a low-frequency noise disturbance reference curve,
//!   10 to 160 Hz, compared with A-weighted band levels.
//!
//! A band exceeds a limit only when the measured level is strictly greater.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tob::{Band, BandLevel, ThirdOctaveSpectrum};
use crate::weighting::WeightingKind;

pub const HFN_MEAN: &str = "hfn-mean";
pub const HFN_MEDIAN: &str = "hfn-median";
pub const LFN_CURVE: &str = "lfn-curve";

const HFN_MEAN_ROWS: [(f64, f64); 9] = [
    (8000.0, 80.00),
    (10000.0, 83.08),
    (12500.0, 82.67),
    (16000.0, 83.89),
    (20000.0, 96.91),
    (25000.0, 111.08),
    (31500.0, 113.91),
    (40000.0, 114.09),
    (50000.0, 115.28),
];

const HFN_MEDIAN_ROWS: [(f64, f64); 9] = [
    (8000.0, 80.0),
    (10000.0, 80.0),
    (12500.0, 80.0),
    (16000.0, 80.0),
    (20000.0, 105.0),
    (25000.0, 110.0),
    (31500.0, 110.0),
    (40000.0, 110.0),
    (50000.0, 110.0),
];

const LFN_CURVE_ROWS: [(f64, f64); 13] = [
    (10.0, 92.0),
    (12.5, 87.0),
    (16.0, 83.0),
    (20.0, 74.0),
    (25.0, 64.0),
    (31.5, 56.0),
    (40.0, 49.0),
    (50.0, 43.0),
    (63.0, 42.0),
    (80.0, 40.0),
    (100.0, 38.0),
    (125.0, 36.0),
    (160.0, 34.0),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Statistic {
    Mean,
    Median,
    Single,
}

impl fmt::Display for Statistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Statistic::Mean => "mean",
            Statistic::Median => "median",
            Statistic::Single => "single",
        })
    }
}

impl FromStr for Statistic {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mean" => Ok(Statistic::Mean),
            "median" => Ok(Statistic::Median),
            "single" => Ok(Statistic::Single),
            other => Err(Error::domain(format!("unknown statistic '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidelineRow {
    pub center_hz: Band,
    pub limit_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidelineTable {
    pub name: String,
    pub weighting_required: WeightingKind,
    pub statistic: Statistic,
    rows: Vec<GuidelineRow>,
}

impl GuidelineTable {
    /// Rows are `(nominal centre Hz, limit dB)`; order does not matter but
    /// each band may appear once.
    pub fn new(
        name: impl Into<String>,
        weighting_required: WeightingKind,
        statistic: Statistic,
        rows: &[(f64, f64)],
    ) -> Result<Self> {
        let mut parsed = rows
            .iter()
            .map(|&(hz, limit_db)| {
                if !limit_db.is_finite() {
                    return Err(Error::domain(format!("limit at {hz} Hz is not finite")));
                }
                Ok(GuidelineRow {
                    center_hz: Band::from_nominal(hz)?,
                    limit_db,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if parsed.is_empty() {
            return Err(Error::domain("guideline table has no rows"));
        }
        parsed.sort_by_key(|r| r.center_hz);
        if let Some(w) = parsed.windows(2).find(|w| w[0].center_hz == w[1].center_hz) {
            return Err(Error::domain(format!("band {} listed twice", w[0].center_hz)));
        }
        Ok(Self {
            name: name.into(),
            weighting_required,
            statistic,
            rows: parsed,
        })
    }

    pub fn rows(&self) -> &[GuidelineRow] {
        &self.rows
    }

    pub fn limit(&self, band: Band) -> Option<f64> {
        self.rows
            .binary_search_by_key(&band, |r| r.center_hz)
            .ok()
            .map(|i| self.rows[i].limit_db)
    }

    /// Limit lookup by nominal frequency label.
    pub fn limit_at(&self, nominal_hz: f64) -> Option<f64> {
        Band::from_nominal(nominal_hz).ok().and_then(|b| self.limit(b))
    }

    /// Serializes in the format [`parse_guideline_csv`] reads.
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# name={}\n# weighting={}\n# statistic={}\ncenter_hz,limit_db\n",
            self.name, self.weighting_required, self.statistic
        );
        for r in &self.rows {
            out.push_str(&format!("{},{}\n", r.center_hz.nominal_hz(), r.limit_db));
        }
        out
    }
}

pub fn builtin_tables() -> Vec<GuidelineTable> {
    let table = |name, weighting, statistic, rows: &[(f64, f64)]| {
        GuidelineTable::new(name, weighting, statistic, rows).expect("builtin table is valid")
    };
    vec![
        table(HFN_MEAN, WeightingKind::Z, Statistic::Mean, &HFN_MEAN_ROWS),
        table(HFN_MEDIAN, WeightingKind::Z, Statistic::Median, &HFN_MEDIAN_ROWS),
        table(LFN_CURVE, WeightingKind::A, Statistic::Single, &LFN_CURVE_ROWS),
    ]
}

pub fn builtin_table(name: &str) -> Option<GuidelineTable> {
    builtin_tables().into_iter().find(|t| t.name == name)
}

/// Builtin tables that a spectrum measured with `weighting` may be assessed
/// against.
pub fn builtin_tables_for(weighting: WeightingKind) -> Vec<GuidelineTable> {
    builtin_tables()
        .into_iter()
        .filter(|t| weighting.satisfies(t.weighting_required))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitCheck {
    pub table: String,
    pub statistic: Statistic,
    pub limit_db: f64,
    pub exceeded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureEntry {
    pub center_hz: Band,
    pub measured_db: f64,
    /// Weighting the measured level was taken with.
    pub weighting: WeightingKind,
    pub limits: Vec<LimitCheck>,
    /// Exceeds at least one of `limits`.
    pub exceeded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureReport {
    /// SHA-256 of the assessed spectrum's compact JSON form.
    pub spectrum_ref: String,
    pub entries: Vec<ExposureEntry>,
    /// Exceedance count per table name.
    pub summary: BTreeMap<String, usize>,
}

impl ExposureReport {
    pub fn any_exceedance(&self) -> bool {
        self.entries.iter().any(|e| e.exceeded)
    }

    /// Bands flagged against any table.
    pub fn exceeded_bands(&self) -> Vec<Band> {
        self.entries
            .iter()
            .filter(|e| e.exceeded)
            .map(|e| e.center_hz)
            .collect()
    }

    /// Bands flagged against the named table.
    pub fn exceeded_for(&self, table: &str) -> Vec<Band> {
        self.entries
            .iter()
            .filter(|e| e.limits.iter().any(|l| l.table == table && l.exceeded))
            .map(|e| e.center_hz)
            .collect()
    }

    pub fn entry(&self, band: Band) -> Option<&ExposureEntry> {
        self.entries.iter().find(|e| e.center_hz == band)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Compares every spectrum band with every table row for that band.
pub fn assess(spectrum: &ThirdOctaveSpectrum, tables: &[GuidelineTable]) -> Result<ExposureReport> {
    for table in tables {
        if !spectrum.weighting.satisfies(table.weighting_required) {
            return Err(Error::WeightingMismatch {
                table: table.name.clone(),
                required: table.weighting_required.to_string(),
                found: spectrum.weighting.to_string(),
            });
        }
    }

    let mut summary: BTreeMap<String, usize> =
        tables.iter().map(|t| (t.name.clone(), 0)).collect();
    let mut entries = Vec::new();
    for band in &spectrum.bands {
        let limits: Vec<LimitCheck> = tables
            .iter()
            .filter_map(|t| {
                t.limit(band.center_hz).map(|limit_db| LimitCheck {
                    table: t.name.clone(),
                    statistic: t.statistic,
                    limit_db,
                    exceeded: band.level_db > limit_db,
                })
            })
            .collect();
        if limits.is_empty() {
            continue;
        }
        for l in limits.iter().filter(|l| l.exceeded) {
            *summary.entry(l.table.clone()).or_default() += 1;
        }
        entries.push(ExposureEntry {
            center_hz: band.center_hz,
            measured_db: band.level_db,
            weighting: spectrum.weighting,
            exceeded: limits.iter().any(|l| l.exceeded),
            limits,
        });
    }

    let digest = Sha256::digest(serde_json::to_vec(spectrum)?);
    Ok(ExposureReport {
        spectrum_ref: hex::encode(digest),
        entries,
        summary,
    })
}

/// Loudest band in `[lo, hi]` other than the stimulus band.
///
/// When `target_band` itself lies inside the search range, it and its two
/// immediate neighbours are skipped so that skirts of the stimulus are not
/// reported as separate components. A range chosen to exclude the stimulus
/// band is searched in full.
pub fn audible_leakage(
    spectrum: &ThirdOctaveSpectrum,
    target_band: Band,
    lo_hz: f64,
    hi_hz: f64,
) -> Result<BandLevel> {
    let in_range = |b: Band| b.nominal_hz() >= lo_hz && b.nominal_hz() <= hi_hz;
    let guard = in_range(target_band);
    let excluded = |b: Band| guard && (b.index() - target_band.index()).abs() <= 1;
    spectrum
        .bands
        .iter()
        .filter(|b| in_range(b.center_hz) && !excluded(b.center_hz))
        .fold(None, |best: Option<BandLevel>, b| match best {
            Some(cur) if cur.level_db >= b.level_db => Some(cur),
            _ => Some(*b),
        })
        .ok_or_else(|| {
            Error::domain(format!(
                "spectrum has no bands in [{lo_hz}, {hi_hz}] Hz outside the stimulus band"
            ))
        })
}

/// Snaps `hz` to a band when it is within 2 % of a nominal label or exact centre.
fn snap_to_band(hz: f64) -> Option<Band> {
    Band::all().find(|b| {
        let close = |reference: f64| (hz - reference).abs() <= 0.02 * reference;
        close(b.nominal_hz()) || close(b.exact_center_hz())
    })
}

/// Parses the guideline CSV format:
///
/// ```text
/// # name=lfn-curve
/// # weighting=a
/// # statistic=single
/// center_hz,limit_db
/// 10,92
/// ...
/// ```
///
/// `statistic` defaults to `single`; `name` and `weighting` are required.
/// Rows must be in strictly increasing frequency order.
pub fn parse_guideline_csv(text: &str) -> Result<GuidelineTable> {
    let csv_err = |line: usize, message: String| Error::Csv { line, message };
    let mut name = None;
    let mut weighting = None;
    let mut statistic = Statistic::Single;
    let mut header_line = None;
    let mut rows: Vec<(usize, Band, f64)> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((key, value)) = comment.split_once('=') {
                let value = value.trim();
                match key.trim().to_ascii_lowercase().as_str() {
                    "name" => name = Some(value.to_string()),
                    "weighting" => {
                        weighting = Some(
                            value
                                .parse::<WeightingKind>()
                                .map_err(|e| csv_err(line_no, e.to_string()))?,
                        )
                    }
                    "statistic" => {
                        statistic = value.parse().map_err(|e: Error| csv_err(line_no, e.to_string()))?
                    }
                    _ => {}
                }
            }
            continue;
        }
        if header_line.is_none() {
            let normalized: String = line.chars().filter(|c| !c.is_whitespace()).collect();
            if !normalized.eq_ignore_ascii_case("center_hz,limit_db") {
                return Err(csv_err(
                    line_no,
                    format!("expected header 'center_hz,limit_db', found '{line}'"),
                ));
            }
            header_line = Some(line_no);
            continue;
        }

        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 2 {
            return Err(csv_err(line_no, format!("expected 2 fields, found {}", fields.len())));
        }
        let hz: f64 = fields[0]
            .parse()
            .map_err(|_| csv_err(line_no, format!("bad frequency '{}'", fields[0])))?;
        let limit: f64 = fields[1]
            .parse()
            .map_err(|_| csv_err(line_no, format!("bad limit '{}'", fields[1])))?;
        if !limit.is_finite() {
            return Err(csv_err(line_no, "limit is not finite".into()));
        }
        let band = snap_to_band(hz).ok_or_else(|| {
            csv_err(line_no, format!("{hz} Hz is not a nominal third-octave centre"))
        })?;
        if let Some(&(prev_line, prev_band, _)) = rows.last() {
            if band <= prev_band {
                return Err(csv_err(
                    line_no,
                    format!(
                        "band {band} Hz does not increase on line {prev_line} ({prev_band} Hz); \
                         rows must be unique and ascending"
                    ),
                ));
            }
        }
        rows.push((line_no, band, limit));
    }

    let header_line = header_line.ok_or_else(|| csv_err(1, "missing 'center_hz,limit_db' header".into()))?;
    let name = name.ok_or_else(|| csv_err(header_line, "missing '# name=' metadata".into()))?;
    let weighting =
        weighting.ok_or_else(|| csv_err(header_line, "missing '# weighting=' metadata".into()))?;
    if rows.is_empty() {
        return Err(csv_err(header_line, "table has no rows".into()));
    }
    Ok(GuidelineTable {
        name,
        weighting_required: weighting,
        statistic,
        rows: rows
            .into_iter()
            .map(|(_, center_hz, limit_db)| GuidelineRow { center_hz, limit_db })
            .collect(),
    })
}

pub fn load_guideline_csv(path: impl AsRef<Path>) -> Result<GuidelineTable> {
    parse_guideline_csv(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn z(levels: &[(f64, f64)]) -> ThirdOctaveSpectrum {
        ThirdOctaveSpectrum::from_levels(WeightingKind::Z, 94.0, 600.0, levels).unwrap()
    }

    fn a(levels: &[(f64, f64)]) -> ThirdOctaveSpectrum {
        ThirdOctaveSpectrum::from_levels(WeightingKind::A, 94.0, 600.0, levels).unwrap()
    }

    fn hfn() -> Vec<GuidelineTable> {
        vec![builtin_table(HFN_MEAN).unwrap(), builtin_table(HFN_MEDIAN).unwrap()]
    }

    fn lfn() -> Vec<GuidelineTable> {
        vec![builtin_table(LFN_CURVE).unwrap()]
    }

    fn band(hz: f64) -> Band {
        Band::from_nominal(hz).unwrap()
    }

    #[test]
    fn builtin_values() {
        let tables = builtin_tables();
        assert_eq!(tables.len(), 3);
        assert_eq!(builtin_table(HFN_MEAN).unwrap().limit_at(16000.0), Some(83.89));
        assert_eq!(builtin_table(HFN_MEDIAN).unwrap().limit_at(20000.0), Some(105.0));
        assert_eq!(builtin_table(LFN_CURVE).unwrap().limit_at(100.0), Some(38.0));
        assert_eq!(builtin_table(LFN_CURVE).unwrap().rows().len(), 13);
        assert_eq!(builtin_table(HFN_MEAN).unwrap().weighting_required, WeightingKind::Z);
        assert_eq!(builtin_table(LFN_CURVE).unwrap().weighting_required, WeightingKind::A);
    }

    #[test]
    fn hfn_examples() {
        let r = assess(&z(&[(16000.0, 86.0)]), &hfn()).unwrap();
        assert_eq!(r.exceeded_for(HFN_MEAN), [band(16000.0)]);
        assert_eq!(r.exceeded_for(HFN_MEDIAN), [band(16000.0)]);

        let r = assess(&z(&[(20000.0, 97.1)]), &hfn()).unwrap();
        assert_eq!(r.exceeded_for(HFN_MEAN), [band(20000.0)]);
        assert!(r.exceeded_for(HFN_MEDIAN).is_empty());
        assert!(r.entries[0].exceeded);

        let r = assess(&z(&[(16000.0, 63.0)]), &hfn()).unwrap();
        assert!(!r.any_exceedance());
        assert_eq!(r.summary[HFN_MEAN], 0);
    }

    #[test]
    fn lfn_examples() {
        let r = assess(&a(&[(63.0, 47.5), (80.0, 59.0), (100.0, 71.6)]), &lfn()).unwrap();
        assert_eq!(r.exceeded_bands().len(), 3);
        assert_eq!(r.summary[LFN_CURVE], 3);
        assert!(!assess(&a(&[(80.0, 39.9)]), &lfn()).unwrap().any_exceedance());
        assert!(!assess(&a(&[(63.0, 42.0)]), &lfn()).unwrap().any_exceedance());
    }

    #[test]
    fn weighting_mismatch_is_an_error() {
        let err = assess(&z(&[(63.0, 50.0)]), &lfn()).unwrap_err();
        match err {
            Error::WeightingMismatch { required, .. } => assert_eq!(required, "a"),
            other => panic!("{other}"),
        }
        assert!(assess(&a(&[(16000.0, 90.0)]), &hfn()).is_err());
        let hp = ThirdOctaveSpectrum::from_levels(
            WeightingKind::hp(16000.0).unwrap(),
            94.0,
            600.0,
            &[(20000.0, 97.1)],
        )
        .unwrap();
        let r = assess(&hp, &hfn()).unwrap();
        assert_eq!(r.entries[0].weighting.to_string(), "hp:16000");
        assert!(r.entries[0].exceeded);
    }

    #[test]
    fn bands_without_rows_are_skipped() {
        let r = assess(&z(&[(1000.0, 120.0), (16000.0, 50.0)]), &hfn()).unwrap();
        assert_eq!(r.entries.len(), 1);
        assert_eq!(r.entries[0].limits.len(), 2);
    }

    #[test]
    fn report_roundtrip_and_determinism() {
        let s = z(&[(16000.0, 86.0), (20000.0, 97.1)]);
        let r1 = assess(&s, &hfn()).unwrap();
        let r2 = assess(&s, &hfn()).unwrap();
        assert_eq!(r1.to_json().unwrap(), r2.to_json().unwrap());
        let back: ExposureReport = serde_json::from_str(&r1.to_json().unwrap()).unwrap();
        assert_eq!(back, r1);
        assert_eq!(r1.spectrum_ref.len(), 64);
    }

    #[test]
    fn leakage_examples() {
        // 17 kHz trial of the parametric speaker; audible range 125 Hz to 12.5 kHz.
        let trial = z(&[
            (125.0, 30.0),
            (1000.0, 40.2),
            (6300.0, 55.0),
            (12500.0, 74.3),
            (16000.0, 85.1),
            (20000.0, 60.0),
        ]);
        let hit = audible_leakage(&trial, band(16000.0), 125.0, 12500.0).unwrap();
        assert_eq!((hit.center_hz.nominal_hz(), hit.level_db), (12500.0, 74.3));

        // Pure tone in range: the tone and its skirts are excluded.
        let floor = -26.0;
        let mut levels: Vec<(f64, f64)> = crate::tob::tob_centers(125.0, 12500.0)
            .unwrap()
            .into_iter()
            .map(|b| (b.nominal_hz(), floor))
            .collect();
        levels.iter_mut().find(|l| l.0 == 1000.0).unwrap().1 = 80.0;
        levels.iter_mut().find(|l| l.0 == 1250.0).unwrap().1 = 20.0;
        let tone = z(&levels);
        let hit = audible_leakage(&tone, band(1000.0), 125.0, 12500.0).unwrap();
        assert_eq!(hit.level_db, floor);

        let loudspeaker = tone.with_level(band(1000.0), floor).with_level(band(250.0), 65.6);
        let hit = audible_leakage(&loudspeaker, band(80.0), 125.0, 12500.0).unwrap();
        assert_eq!((hit.center_hz.nominal_hz(), hit.level_db), (250.0, 65.6));

        assert!(audible_leakage(&z(&[(16000.0, 80.0)]), band(16000.0), 125.0, 12500.0).is_err());
    }

    const LFN_CSV: &str = "# name=lfn-curve\n# weighting=a\n# statistic=single\ncenter_hz,limit_db\n\
10,92\n12.5,87\n16,83\n20,74\n25,64\n31.5,56\n40,49\n50,43\n63,42\n80,40\n100,38\n125,36\n160,34\n";

    #[test]
    fn csv_replicates_builtin() {
        let t = parse_guideline_csv(LFN_CSV).unwrap();
        assert_eq!(t, builtin_table(LFN_CURVE).unwrap());
        for table in builtin_tables() {
            assert_eq!(parse_guideline_csv(&table.to_csv()).unwrap(), table);
        }
    }

    #[test]
    fn csv_snaps_exact_centres() {
        let t = parse_guideline_csv("# name=x\n# weighting=z\ncenter_hz,limit_db\n15848.9,80\n").unwrap();
        assert_eq!(t.rows()[0].center_hz, band(16000.0));
        assert_eq!(t.statistic, Statistic::Single);
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let cases = [
            ("# name=x\n# weighting=z\ncenter_hz,limit_db\n17000,80\n", 4),
            ("# name=x\n# weighting=z\ncenter_hz,limit_db\n", 3),
            ("# name=x\n# weighting=z\ncenter_hz,limit_db\n\n\n", 3),
            ("# weighting=z\ncenter_hz,limit_db\n16000,80\n", 2),
            ("# name=x\ncenter_hz,limit_db\n16000,80\n", 2),
            ("# name=x\n# weighting=z\ncenter_hz,limit_db\n16000,80\n16000,81\n", 5),
            ("# name=x\n# weighting=z\ncenter_hz,limit_db\n16000,80\n12500,81\n", 5),
            ("# name=x\n# weighting=q\ncenter_hz,limit_db\n16000,80\n", 2),
            ("# name=x\n# weighting=z\nfreq,level\n16000,80\n", 3),
            ("# name=x\n# weighting=z\ncenter_hz,limit_db\n16000,abc\n", 4),
        ];
        for (text, line) in cases {
            match parse_guideline_csv(text) {
                Err(Error::Csv { line: got, .. }) => assert_eq!(got, line, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }
}
