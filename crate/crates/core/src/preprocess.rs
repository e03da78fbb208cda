//! Median-filter preprocessing and one-second segmentation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal_io::{ArrhythmiaClass, EcgRecord, SignalError, N_LEADS};

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("median window {0} must be odd and positive")]
    EvenWindow(usize),
    #[error("median window {window} exceeds signal length {len}")]
    WindowTooLarge { window: usize, len: usize },
    #[error("record of {samples} samples at {rate} Hz is not a whole number of seconds")]
    NonIntegralDuration { samples: usize, rate: f64 },
    #[error(transparent)]
    Signal(#[from] SignalError),
}

/// Running median with reflect padding.
///
/// The pad sample at distance `d` beyond an edge mirrors the sample at
/// distance `d` inside it, so the edge sample itself is not repeated:
/// `[1, 5, 2, 8, 3]` with window 3 is filtered as `[5, 1, 5, 2, 8, 3, 8]`.
pub fn median_filter(signal: &[f64], window: usize) -> Result<Vec<f64>, PreprocessError> {
    if window == 0 || window % 2 == 0 {
        return Err(PreprocessError::EvenWindow(window));
    }
    if window > signal.len() {
        return Err(PreprocessError::WindowTooLarge {
            window,
            len: signal.len(),
        });
    }
    let half = window / 2;
    if half == 0 {
        return Ok(signal.to_vec());
    }
    let n = signal.len() as isize;
    let at = |i: isize| -> f64 {
        let j = if i < 0 {
            -i
        } else if i >= n {
            2 * (n - 1) - i
        } else {
            i
        };
        signal[j as usize]
    };

    // Sorted copy of the current window; one remove and one insert per step.
    let mut sorted: Vec<f64> = (-(half as isize)..=half as isize).map(at).collect();
    sorted.sort_by(f64::total_cmp);
    let mut out = Vec::with_capacity(signal.len());
    out.push(sorted[half]);
    for i in 1..n {
        let leaving = at(i - 1 - half as isize);
        let entering = at(i + half as isize);
        let pos = sorted
            .binary_search_by(|p| p.total_cmp(&leaving))
            .expect("leaving sample is in the window");
        sorted.remove(pos);
        let ins = sorted.partition_point(|p| p.total_cmp(&entering).is_lt());
        sorted.insert(ins, entering);
        out.push(sorted[half]);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMode {
    /// Denoise with a short median filter.
    Smooth,
    /// Subtract a two-stage median estimate of baseline wander.
    Baseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub mode: FilterMode,
    pub smooth_window: usize,
    pub baseline_w1_ms: f64,
    pub baseline_w2_ms: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            mode: FilterMode::Baseline,
            smooth_window: 5,
            baseline_w1_ms: 200.0,
            baseline_w2_ms: 600.0,
        }
    }
}

/// Window length in samples for `ms` milliseconds, rounded up to odd.
pub fn odd_window(ms: f64, sampling_rate_hz: f64) -> usize {
    let w = (ms * sampling_rate_hz / 1000.0).ceil().max(1.0) as usize;
    if w % 2 == 0 {
        w + 1
    } else {
        w
    }
}

/// Applies the configured median filtering to every lead independently.
/// Filtering runs on the whole record, before segmentation.
pub fn preprocess_record(
    record: &EcgRecord,
    config: &PreprocessConfig,
) -> Result<EcgRecord, PreprocessError> {
    let fs = record.sampling_rate_hz();
    let leads = crate::par::map(record.leads(), |lead| -> Result<Vec<f64>, PreprocessError> {
        match config.mode {
            FilterMode::Smooth => median_filter(lead, config.smooth_window),
            FilterMode::Baseline => {
                let w1 = odd_window(config.baseline_w1_ms, fs);
                let w2 = odd_window(config.baseline_w2_ms, fs);
                let baseline = median_filter(&median_filter(lead, w1)?, w2)?;
                Ok(lead.iter().zip(&baseline).map(|(x, b)| x - b).collect())
            }
        }
    });
    let leads = leads.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(record.with_leads(leads)?)
}

/// One second of all 12 leads.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub record_id: String,
    pub segment_index: usize,
    /// `N_LEADS` rows of `samples_per_second` samples.
    pub samples: Vec<Vec<f64>>,
    pub label: ArrhythmiaClass,
    pub sampling_rate_hz: f64,
}

impl Segment {
    pub fn width(&self) -> usize {
        self.samples[0].len()
    }
}

/// Splits a record into non-overlapping one-second tiles in time order.
///
/// A trailing remainder of at most one sample (either side of a whole second)
/// is tolerated; anything else is `NonIntegralDuration`.
pub fn segment_record(record: &EcgRecord) -> Result<Vec<Segment>, PreprocessError> {
    let fs = record.sampling_rate_hz();
    let w = fs.round() as usize;
    let n = record.len();
    let err = || PreprocessError::NonIntegralDuration {
        samples: n,
        rate: fs,
    };
    if w == 0 {
        return Err(err());
    }
    let count = n / w;
    let rem = n % w;
    if count == 0 || (rem > 1 && rem + 1 < w) {
        return Err(err());
    }
    Ok((0..count)
        .map(|k| Segment {
            record_id: record.record_id().to_string(),
            segment_index: k,
            samples: (0..N_LEADS)
                .map(|lead| record.lead(lead)[k * w..(k + 1) * w].to_vec())
                .collect(),
            label: record.label(),
            sampling_rate_hz: fs,
        })
        .collect())
}
