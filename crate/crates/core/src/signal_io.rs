//! Labelled 12-lead ECG records: validation, CSV ingestion and synthesis.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const N_LEADS: usize = 12;

/// Conventional 12-lead order. Lead `i` of every record is `LEAD_NAMES[i]`.
pub const LEAD_NAMES: [&str; N_LEADS] = [
    "I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6",
];

/// Decimal places written by [`save_record`].
pub const CSV_DECIMALS: usize = 6;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("{path}: expected 12 lead columns, found {found}")]
    MissingLead { path: String, found: usize },
    #[error("{path}: header must be `{}`", LEAD_NAMES.join(","))]
    BadHeader { path: String },
    #[error("non-finite sample in lead {lead} at index {index}")]
    NonFiniteSample { lead: String, index: usize },
    #[error("unknown label for record `{0}`")]
    UnknownLabel(String),
    #[error("record `{record_id}`: {found} samples, expected {expected} at {rate} Hz")]
    LengthMismatch {
        record_id: String,
        found: usize,
        expected: usize,
        rate: f64,
    },
    #[error("{path}: line {line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("invalid record: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> SignalError {
    SignalError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// The four rhythm classes. The discriminant is the integer encoding used in
/// files, tensors and confusion matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ArrhythmiaClass {
    #[serde(rename = "AFIB")]
    Afib = 0,
    #[serde(rename = "ST")]
    St = 1,
    #[serde(rename = "SB")]
    Sb = 2,
    #[serde(rename = "SR")]
    Sr = 3,
}

impl ArrhythmiaClass {
    pub const COUNT: usize = 4;
    pub const ALL: [ArrhythmiaClass; 4] = [
        ArrhythmiaClass::Afib,
        ArrhythmiaClass::St,
        ArrhythmiaClass::Sb,
        ArrhythmiaClass::Sr,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ArrhythmiaClass::Afib => "AFIB",
            ArrhythmiaClass::St => "ST",
            ArrhythmiaClass::Sb => "SB",
            ArrhythmiaClass::Sr => "SR",
        }
    }
}

impl fmt::Display for ArrhythmiaClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArrhythmiaClass {
    type Err = SignalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "AFIB" => Ok(ArrhythmiaClass::Afib),
            "ST" => Ok(ArrhythmiaClass::St),
            "SB" => Ok(ArrhythmiaClass::Sb),
            "SR" => Ok(ArrhythmiaClass::Sr),
            other => Err(SignalError::UnknownLabel(other.to_string())),
        }
    }
}

/// One labelled 12-lead recording, samples in millivolts.
#[derive(Debug, Clone, PartialEq)]
pub struct EcgRecord {
    record_id: String,
    sampling_rate_hz: f64,
    leads: Vec<Vec<f64>>,
    label: ArrhythmiaClass,
    duration_s: f64,
}

impl EcgRecord {
    /// Builds a record, checking lead count, equal lengths, finiteness and
    /// `len == round(rate * duration)`.
    pub fn new(
        record_id: impl Into<String>,
        sampling_rate_hz: f64,
        leads: Vec<Vec<f64>>,
        label: ArrhythmiaClass,
        duration_s: f64,
    ) -> Result<Self, SignalError> {
        let record_id = record_id.into();
        if !(sampling_rate_hz.is_finite() && sampling_rate_hz > 0.0) {
            return Err(SignalError::Invalid(format!(
                "sampling rate {sampling_rate_hz} must be positive"
            )));
        }
        if leads.len() != N_LEADS {
            return Err(SignalError::MissingLead {
                path: record_id,
                found: leads.len(),
            });
        }
        let n = leads[0].len();
        if leads.iter().any(|l| l.len() != n) {
            return Err(SignalError::Invalid("leads have unequal lengths".into()));
        }
        let expected = (sampling_rate_hz * duration_s).round();
        if !(duration_s > 0.0) || expected != n as f64 {
            return Err(SignalError::LengthMismatch {
                record_id,
                found: n,
                expected: expected.max(0.0) as usize,
                rate: sampling_rate_hz,
            });
        }
        for (lead, samples) in leads.iter().enumerate() {
            if let Some(index) = samples.iter().position(|v| !v.is_finite()) {
                return Err(SignalError::NonFiniteSample {
                    lead: LEAD_NAMES[lead].to_string(),
                    index,
                });
            }
        }
        Ok(Self {
            record_id,
            sampling_rate_hz,
            leads,
            label,
            duration_s,
        })
    }

    pub fn record_id(&self) -> &str {
        &self.record_id
    }

    pub fn sampling_rate_hz(&self) -> f64 {
        self.sampling_rate_hz
    }

    pub fn leads(&self) -> &[Vec<f64>] {
        &self.leads
    }

    pub fn lead(&self, i: usize) -> &[f64] {
        &self.leads[i]
    }

    pub fn label(&self) -> ArrhythmiaClass {
        self.label
    }

    pub fn duration_s(&self) -> f64 {
        self.duration_s
    }

    pub fn len(&self) -> usize {
        self.leads[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Replaces the samples, keeping id, rate, label and duration.
    pub fn with_leads(&self, leads: Vec<Vec<f64>>) -> Result<Self, SignalError> {
        Self::new(
            self.record_id.clone(),
            self.sampling_rate_hz,
            leads,
            self.label,
            self.duration_s,
        )
    }
}

/// `record_id -> class` table read from `labels.csv`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabelTable {
    entries: Vec<(String, ArrhythmiaClass)>,
    index: HashMap<String, ArrhythmiaClass>,
}

impl LabelTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, record_id: impl Into<String>, class: ArrhythmiaClass) {
        let id = record_id.into();
        if self.index.insert(id.clone(), class).is_none() {
            self.entries.push((id, class));
        } else if let Some(e) = self.entries.iter_mut().find(|(k, _)| *k == id) {
            e.1 = class;
        }
    }

    pub fn get(&self, record_id: &str) -> Option<ArrhythmiaClass> {
        self.index.get(record_id).copied()
    }

    /// Entries in insertion (file) order.
    pub fn entries(&self) -> &[(String, ArrhythmiaClass)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn load_labels(path: &Path) -> Result<LabelTable, SignalError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let headers = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    if headers.len() != 2 || &headers[0] != "record_id" || &headers[1] != "class" {
        return Err(SignalError::Parse {
            path: path.display().to_string(),
            line: 1,
            msg: "header must be `record_id,class`".into(),
        });
    }
    let mut table = LabelTable::new();
    for (i, row) in reader.records().enumerate() {
        let row = row.map_err(|e| csv_err(path, e))?;
        if row.len() != 2 {
            return Err(SignalError::Parse {
                path: path.display().to_string(),
                line: i + 2,
                msg: "expected 2 columns".into(),
            });
        }
        let class: ArrhythmiaClass = row[1].parse()?;
        table.insert(&row[0], class);
    }
    Ok(table)
}

pub fn save_labels(path: &Path, table: &LabelTable) -> Result<(), SignalError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        writeln!(w, "record_id,class")?;
        for (id, class) in table.entries() {
            writeln!(w, "{id},{class}")?;
        }
        w.flush()
    };
    write().map_err(|e| io_err(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> SignalError {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => io_err(path, source),
        kind => SignalError::Parse {
            path: path.display().to_string(),
            line,
            msg: format!("{kind:?}"),
        },
    }
}

/// Expected acquisition parameters for [`load_record`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadOptions {
    pub sampling_rate_hz: f64,
    pub duration_s: f64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            sampling_rate_hz: 500.0,
            duration_s: 10.0,
        }
    }
}

/// Reads `<record_id>.csv`. The record id is the file stem.
///
/// Malformed input is rejected, never repaired. The sample count must be
/// within one sample of `rate * duration`.
pub fn load_record(
    path: &Path,
    labels: &LabelTable,
    opts: &LoadOptions,
) -> Result<EcgRecord, SignalError> {
    let record_id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| SignalError::Invalid(format!("bad record path {}", path.display())))?
        .to_string();
    let label = labels
        .get(&record_id)
        .ok_or_else(|| SignalError::UnknownLabel(record_id.clone()))?;

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let headers = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    if headers.len() != N_LEADS {
        return Err(SignalError::MissingLead {
            path: path.display().to_string(),
            found: headers.len(),
        });
    }
    if headers.iter().zip(LEAD_NAMES).any(|(h, n)| h != n) {
        return Err(SignalError::BadHeader {
            path: path.display().to_string(),
        });
    }

    let mut leads: Vec<Vec<f64>> = vec![Vec::new(); N_LEADS];
    for (row_idx, row) in reader.records().enumerate() {
        let row = row.map_err(|e| csv_err(path, e))?;
        if row.len() != N_LEADS {
            return Err(SignalError::MissingLead {
                path: path.display().to_string(),
                found: row.len(),
            });
        }
        for (lead, field) in row.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| SignalError::Parse {
                path: path.display().to_string(),
                line: row_idx + 2,
                msg: format!("`{field}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(SignalError::NonFiniteSample {
                    lead: LEAD_NAMES[lead].to_string(),
                    index: row_idx,
                });
            }
            leads[lead].push(v);
        }
    }

    let n = leads[0].len();
    let expected = (opts.sampling_rate_hz * opts.duration_s).round() as usize;
    if n == 0 || n.abs_diff(expected) > 1 {
        return Err(SignalError::LengthMismatch {
            record_id,
            found: n,
            expected,
            rate: opts.sampling_rate_hz,
        });
    }
    let duration_s = n as f64 / opts.sampling_rate_hz;
    EcgRecord::new(record_id, opts.sampling_rate_hz, leads, label, duration_s)
}

/// Writes `<dir>/<record_id>.csv` and returns its path.
pub fn save_record(dir: &Path, record: &EcgRecord) -> Result<PathBuf, SignalError> {
    let path = dir.join(format!("{}.csv", record.record_id()));
    let file = File::create(&path).map_err(|e| io_err(&path, e))?;
    let mut w = BufWriter::new(file);
    let mut line = String::with_capacity(N_LEADS * 12);
    let mut write = || -> std::io::Result<()> {
        writeln!(w, "{}", LEAD_NAMES.join(","))?;
        for i in 0..record.len() {
            line.clear();
            for lead in 0..N_LEADS {
                if lead > 0 {
                    line.push(',');
                }
                // Avoid "-0.000000", which would not be byte-stable across
                // tiny perturbations of zero.
                let v = record.leads[lead][i];
                let v = if v.abs() < 5e-7 { 0.0 } else { v };
                line.push_str(&format!("{v:.CSV_DECIMALS$}"));
            }
            writeln!(w, "{line}")?;
        }
        w.flush()
    };
    write().map_err(|e| io_err(&path, e))?;
    Ok(path)
}

/// A synthetic record together with the beat times the generator placed.
#[derive(Debug, Clone)]
pub struct SyntheticRecord {
    pub record: EcgRecord,
    /// R-peak times in seconds, restricted to `[0, duration)`.
    pub beat_times_s: Vec<f64>,
    /// Mean heart rate drawn for this record, beats per minute.
    pub mean_rate_bpm: f64,
}

impl SyntheticRecord {
    /// Successive differences of `beat_times_s`.
    pub fn rr_intervals_s(&self) -> Vec<f64> {
        self.beat_times_s.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

/// Heart-rate range (bpm) drawn uniformly for each class.
pub fn rate_range_bpm(class: ArrhythmiaClass) -> (f64, f64) {
    match class {
        ArrhythmiaClass::Sr => (60.0, 100.0),
        ArrhythmiaClass::Sb => (40.0, 59.0),
        ArrhythmiaClass::St => (150.0, 220.0),
        ArrhythmiaClass::Afib => (80.0, 140.0),
    }
}

/// Minimum coefficient of variation of AFIB RR intervals inside the record.
pub const AFIB_MIN_RR_CV: f64 = 0.15;

// (offset from R peak in s, width in s, amplitude in mV) of the P, Q, R, S
// components. The T wave is placed separately because it tracks RR.
const P_WAVE: (f64, f64, f64) = (-0.16, 0.022, 0.14);
const Q_WAVE: (f64, f64, f64) = (-0.028, 0.008, -0.12);
const R_WAVE: (f64, f64, f64) = (0.0, 0.011, 1.0);
const S_WAVE: (f64, f64, f64) = (0.03, 0.009, -0.28);
const T_AMPLITUDE: f64 = 0.28;

const QRS_GAIN: [f64; N_LEADS] = [
    0.55, 1.0, 0.45, -0.75, 0.25, 0.7, -0.6, -0.3, 0.45, 1.1, 1.0, 0.8,
];
const PT_GAIN: [f64; N_LEADS] = [0.6, 1.0, 0.4, -0.8, 0.3, 0.7, 0.2, 0.5, 0.8, 1.0, 0.9, 0.7];

const NOISE_STD_MV: f64 = 0.015;

/// Deterministic pseudo-ECG for `class` (see [`generate_synthetic_with_beats`]).
pub fn generate_synthetic(
    class: ArrhythmiaClass,
    seed: u64,
    duration_s: f64,
    sampling_rate_hz: f64,
) -> Result<EcgRecord, SignalError> {
    generate_synthetic_with_beats(class, seed, duration_s, sampling_rate_hz).map(|s| s.record)
}

/// Builds a 12-lead pseudo-ECG from a Gaussian P-QRS-T beat template
/// repeated at class-specific RR intervals, plus slow drift and white noise.
///
/// SR, SB and ST use a constant RR at a rate drawn from [`rate_range_bpm`].
/// AFIB uses i.i.d. jittered RR intervals whose in-record coefficient of
/// variation is at least [`AFIB_MIN_RR_CV`], and has no P wave. The T wave
/// is delayed by `0.3 * sqrt(RR)` seconds after the R peak.
pub fn generate_synthetic_with_beats(
    class: ArrhythmiaClass,
    seed: u64,
    duration_s: f64,
    sampling_rate_hz: f64,
) -> Result<SyntheticRecord, SignalError> {
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(SignalError::Invalid(format!(
            "duration {duration_s} must be positive"
        )));
    }
    if !(sampling_rate_hz > 0.0 && sampling_rate_hz.is_finite()) {
        return Err(SignalError::Invalid(format!(
            "sampling rate {sampling_rate_hz} must be positive"
        )));
    }
    let n = (sampling_rate_hz * duration_s).round() as usize;
    if n == 0 {
        return Err(SignalError::Invalid("record would have no samples".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(class.index() as u64 + 1);

    let (lo, hi) = rate_range_bpm(class);
    let rate = rng.random_range(lo..=hi);
    let mean_rr = 60.0 / rate;
    let (beats, rrs) = beat_schedule(class, mean_rr, duration_s, &mut rng);

    let lead_jitter: Vec<f64> = (0..N_LEADS).map(|_| rng.random_range(0.85..1.15)).collect();
    let drift_hz = rng.random_range(0.1..0.4);
    let drift_amp: Vec<f64> = (0..N_LEADS).map(|_| rng.random_range(0.02..0.1)).collect();
    let drift_phase: Vec<f64> = (0..N_LEADS)
        .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
        .collect();
    let noise = Normal::new(0.0, NOISE_STD_MV).expect("valid normal");

    let p_amp = if class == ArrhythmiaClass::Afib {
        0.0
    } else {
        P_WAVE.2
    };

    let mut leads = vec![vec![0.0f64; n]; N_LEADS];
    for (lead, samples) in leads.iter_mut().enumerate() {
        let qrs = QRS_GAIN[lead] * lead_jitter[lead];
        let pt = PT_GAIN[lead] * lead_jitter[lead];
        for (&t_r, &rr) in beats.iter().zip(&rrs) {
            let rr = rr.clamp(0.25, 2.0);
            add_gaussian(samples, sampling_rate_hz, t_r + P_WAVE.0, P_WAVE.1, pt * p_amp);
            for w in [Q_WAVE, R_WAVE, S_WAVE] {
                add_gaussian(samples, sampling_rate_hz, t_r + w.0, w.1, qrs * w.2);
            }
            add_gaussian(
                samples,
                sampling_rate_hz,
                t_r + 0.3 * rr.sqrt(),
                0.045 * rr.sqrt(),
                pt * T_AMPLITUDE,
            );
        }
        for (i, s) in samples.iter_mut().enumerate() {
            let t = i as f64 / sampling_rate_hz;
            *s += drift_amp[lead] * (std::f64::consts::TAU * drift_hz * t + drift_phase[lead]).sin();
            *s += noise.sample(&mut rng);
        }
    }

    let beat_times_s: Vec<f64> = beats
        .iter()
        .copied()
        .filter(|&t| (0.0..duration_s).contains(&t))
        .collect();
    let record_id = format!("synth_{}_{seed}", class.as_str());
    let record = EcgRecord::new(record_id, sampling_rate_hz, leads, class, duration_s)?;
    Ok(SyntheticRecord {
        record,
        beat_times_s,
        mean_rate_bpm: rate,
    })
}

/// R-peak times covering `[-1, duration + 1]` with the RR interval that
/// precedes each beat.
fn beat_schedule(
    class: ArrhythmiaClass,
    mean_rr: f64,
    duration_s: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<f64>, Vec<f64>) {
    let count = ((duration_s + 2.0) / (0.3 * mean_rr)).ceil() as usize + 2;
    loop {
        let rrs: Vec<f64> = if class == ArrhythmiaClass::Afib {
            let cv = rng.random_range(0.2..0.3);
            let z: Vec<f64> = (0..count)
                .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
                .collect();
            let mean = z.iter().sum::<f64>() / count as f64;
            let sd = (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / count as f64).sqrt();
            z.iter()
                .map(|v| (mean_rr * (1.0 + cv * (v - mean) / sd.max(1e-12))).max(0.3 * mean_rr))
                .collect()
        } else {
            vec![mean_rr; count]
        };

        let mut t = -1.0 + rng.random_range(0.0..rrs[0]);
        let mut beats = Vec::new();
        let mut preceding = Vec::new();
        for &rr in &rrs {
            if t > duration_s + 1.0 {
                break;
            }
            beats.push(t);
            preceding.push(rr);
            t += rr;
        }
        if class != ArrhythmiaClass::Afib {
            return (beats, preceding);
        }
        let inside: Vec<f64> = beats
            .iter()
            .copied()
            .filter(|&b| (0.0..duration_s).contains(&b))
            .collect();
        if inside.len() < 3 || rr_cv(&inside) >= AFIB_MIN_RR_CV {
            return (beats, preceding);
        }
    }
}

fn rr_cv(beats: &[f64]) -> f64 {
    let rr: Vec<f64> = beats.windows(2).map(|w| w[1] - w[0]).collect();
    let mean = rr.iter().sum::<f64>() / rr.len() as f64;
    let var = rr.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / rr.len() as f64;
    var.sqrt() / mean
}

fn add_gaussian(samples: &mut [f64], fs: f64, center_s: f64, width_s: f64, amp: f64) {
    if amp == 0.0 {
        return;
    }
    let c = center_s * fs;
    let w = width_s * fs;
    let lo = (c - 5.0 * w).floor().max(0.0) as usize;
    let hi = ((c + 5.0 * w).ceil() as isize).min(samples.len() as isize - 1);
    if hi < 0 {
        return;
    }
    for i in lo..=hi as usize {
        let u = (i as f64 - c) / w;
        samples[i] += amp * (-0.5 * u * u).exp();
    }
}
