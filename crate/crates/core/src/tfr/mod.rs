//! Per-lead Morlet scalograms and their row-wise stacking into one image.

mod cwt;
mod image;
pub mod stfs;
mod viridis;

pub use cwt::{hz_to_scale, morlet_cwt, scale_to_hz, CwtMatrix, CwtPlan, SUPPORT_SIGMAS};
pub use image::{colormap, resize, ResizeMethod};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::preprocess::{preprocess_record, segment_record, PreprocessConfig, PreprocessError};
use crate::signal_io::{ArrhythmiaClass, EcgRecord, N_LEADS};

#[derive(Debug, Error)]
pub enum TfrError {
    #[error("scale {0} is below one sample")]
    ScaleTooSmall(f64),
    #[error("signal needs at least two samples")]
    EmptySignal,
    #[error("omega0 {0} is below 5")]
    OmegaTooSmall(f64),
    #[error("expected 12 scalograms, got {0}")]
    LeadCountMismatch(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("lead index {0} appears more than once or is out of range")]
    DuplicateLead(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TfrConfig {
    pub omega0: f64,
    pub n_scales: usize,
    pub f_min_hz: f64,
    pub f_max_hz: f64,
    pub log_compress: bool,
    pub log_eps: f64,
}

impl Default for TfrConfig {
    fn default() -> Self {
        Self {
            omega0: 6.0,
            n_scales: 64,
            f_min_hz: 0.5,
            f_max_hz: 50.0,
            log_compress: true,
            log_eps: 1e-6,
        }
    }
}

impl TfrConfig {
    /// Log-spaced pseudo-frequencies from `f_max_hz` down to `f_min_hz`.
    pub fn frequencies_hz(&self) -> Result<Vec<f64>, TfrError> {
        if self.n_scales == 0 {
            return Err(TfrError::InvalidConfig("n_scales must be positive".into()));
        }
        if !(self.f_min_hz > 0.0 && self.f_max_hz > self.f_min_hz) {
            return Err(TfrError::InvalidConfig(format!(
                "need 0 < f_min_hz < f_max_hz, got {} and {}",
                self.f_min_hz, self.f_max_hz
            )));
        }
        if self.n_scales == 1 {
            return Ok(vec![self.f_max_hz]);
        }
        let ratio = self.f_min_hz / self.f_max_hz;
        let last = (self.n_scales - 1) as f64;
        Ok((0..self.n_scales)
            .map(|k| self.f_max_hz * ratio.powf(k as f64 / last))
            .collect())
    }
}

/// `S x T` magnitude image of one lead, top row = highest frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct Scalogram {
    pub magnitudes: Vec<f64>,
    pub n_scales: usize,
    pub n_times: usize,
    pub scales_hz: Vec<f64>,
    pub lead_index: usize,
}

impl Scalogram {
    pub fn row(&self, s: usize) -> &[f64] {
        &self.magnitudes[s * self.n_times..(s + 1) * self.n_times]
    }

    fn min_max(&self) -> (f64, f64) {
        self.magnitudes
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// A CWT plan bound to one segment length and sampling rate.
#[derive(Debug)]
pub struct ScalogramPlan {
    config: TfrConfig,
    freqs_hz: Vec<f64>,
    cwt: CwtPlan,
}

impl ScalogramPlan {
    pub fn new(config: &TfrConfig, len: usize, sampling_rate_hz: f64) -> Result<Self, TfrError> {
        let freqs_hz = config.frequencies_hz()?;
        let scales: Vec<f64> = freqs_hz
            .iter()
            .map(|&f| hz_to_scale(f, config.omega0, sampling_rate_hz))
            .collect();
        let cwt = CwtPlan::new(len, &scales, config.omega0)?;
        Ok(Self {
            config: config.clone(),
            freqs_hz,
            cwt,
        })
    }

    pub fn frequencies_hz(&self) -> &[f64] {
        &self.freqs_hz
    }

    pub fn len(&self) -> usize {
        self.cwt.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cwt.is_empty()
    }

    pub fn scalogram(&self, lead: &[f64], lead_index: usize) -> Result<Scalogram, TfrError> {
        let mut magnitudes = self.cwt.magnitudes(lead)?;
        if self.config.log_compress {
            let eps = self.config.log_eps;
            magnitudes.iter_mut().for_each(|m| *m = (*m / eps).ln_1p());
        }
        Ok(Scalogram {
            magnitudes,
            n_scales: self.freqs_hz.len(),
            n_times: lead.len(),
            scales_hz: self.freqs_hz.clone(),
            lead_index,
        })
    }
}

/// Scalogram of one lead of one segment.
pub fn scalogram(
    segment_lead: &[f64],
    lead_index: usize,
    sampling_rate_hz: f64,
    config: &TfrConfig,
) -> Result<Scalogram, TfrError> {
    ScalogramPlan::new(config, segment_lead.len(), sampling_rate_hz)?
        .scalogram(segment_lead, lead_index)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// One min/max shared by all 12 leads.
    Group,
    PerLead,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImageConfig {
    /// Composed canvas `[height, width]`; height must be divisible by 12.
    pub canvas: [usize; 2],
    /// Final `[height, width]` fed to the models.
    pub model_input: [usize; 2],
    pub normalize: Normalization,
    pub resize: ResizeMethod,
}

impl Default for ImageConfig {
    fn default() -> Self {
        Self {
            canvas: [240, 240],
            model_input: [227, 227],
            normalize: Normalization::Group,
            resize: ResizeMethod::Bilinear,
        }
    }
}

impl ImageConfig {
    pub fn validate(&self) -> Result<(), TfrError> {
        let [ch, cw] = self.canvas;
        if ch == 0 || cw == 0 || ch % N_LEADS != 0 {
            return Err(TfrError::InvalidConfig(format!(
                "canvas {ch}x{cw}: height must be a positive multiple of 12"
            )));
        }
        if self.model_input.contains(&0) {
            return Err(TfrError::InvalidConfig("model_input must be positive".into()));
        }
        Ok(())
    }
}

/// Interleaved `height x width x 3` image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl RgbImage {
    pub fn dims(&self) -> [usize; 3] {
        [self.height, self.width, 3]
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

/// One second of a record as a single stacked multi-lead image.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedScalogramImage {
    pub image: RgbImage,
    pub record_id: String,
    pub segment_index: usize,
    pub label: ArrhythmiaClass,
}

fn check_leads(per_lead: &[Scalogram]) -> Result<Vec<&Scalogram>, TfrError> {
    if per_lead.len() != N_LEADS {
        return Err(TfrError::LeadCountMismatch(per_lead.len()));
    }
    let (s, t) = (per_lead[0].n_scales, per_lead[0].n_times);
    let mut by_lead: [Option<&Scalogram>; N_LEADS] = [None; N_LEADS];
    for sc in per_lead {
        if sc.n_scales != s || sc.n_times != t || sc.magnitudes.len() != s * t {
            return Err(TfrError::ShapeMismatch(format!(
                "lead {} is {}x{}, expected {s}x{t}",
                sc.lead_index, sc.n_scales, sc.n_times
            )));
        }
        match by_lead.get_mut(sc.lead_index) {
            Some(slot @ None) => *slot = Some(sc),
            _ => return Err(TfrError::DuplicateLead(sc.lead_index)),
        }
    }
    Ok(by_lead.into_iter().map(|s| s.expect("all 12 leads present")).collect())
}

/// Normalization bounds per lead index, as chosen by `config.normalize`.
pub fn normalization_bounds(
    per_lead: &[Scalogram],
    mode: Normalization,
) -> Result<[(f64, f64); N_LEADS], TfrError> {
    let ordered = check_leads(per_lead)?;
    let mut bounds = [(0.0, 0.0); N_LEADS];
    match mode {
        Normalization::PerLead => {
            for (b, sc) in bounds.iter_mut().zip(&ordered) {
                *b = sc.min_max();
            }
        }
        Normalization::Group => {
            let g = ordered.iter().map(|s| s.min_max()).fold(
                (f64::INFINITY, f64::NEG_INFINITY),
                |(lo, hi), (a, b)| (lo.min(a), hi.max(b)),
            );
            bounds = [g; N_LEADS];
        }
    }
    Ok(bounds)
}

/// Normalizes, resizes and stacks 12 lead scalograms (keyed by
/// `lead_index`, lead 0 on top), colour-maps the canvas and resizes it to
/// the model input resolution.
pub fn stack_scalograms(per_lead: &[Scalogram], config: &ImageConfig) -> Result<RgbImage, TfrError> {
    let bounds = normalization_bounds(per_lead, config.normalize)?;
    stack_with_bounds(per_lead, config, &bounds)
}

/// [`stack_scalograms`] with explicit `(min, max)` bounds per lead index.
pub fn stack_with_bounds(
    per_lead: &[Scalogram],
    config: &ImageConfig,
    bounds: &[(f64, f64); N_LEADS],
) -> Result<RgbImage, TfrError> {
    config.validate()?;
    let ordered = check_leads(per_lead)?;
    let [canvas_h, canvas_w] = config.canvas;
    let band_h = canvas_h / N_LEADS;
    let mut canvas = Vec::with_capacity(canvas_h * canvas_w);
    for (sc, &(lo, hi)) in ordered.iter().zip(bounds) {
        let span = hi - lo;
        let normalized: Vec<f64> = sc
            .magnitudes
            .iter()
            .map(|&m| {
                if span > 0.0 {
                    ((m - lo) / span).clamp(0.0, 1.0)
                } else {
                    0.0
                }
            })
            .collect();
        canvas.extend(resize(
            &normalized,
            sc.n_scales,
            sc.n_times,
            1,
            band_h,
            canvas_w,
            config.resize,
        ));
    }
    let rgb: Vec<f32> = canvas.iter().flat_map(|&v| colormap(v)).collect();
    let [out_h, out_w] = config.model_input;
    let data = resize(&rgb, canvas_h, canvas_w, 3, out_h, out_w, config.resize)
        .into_iter()
        .map(|v| v.clamp(0.0, 1.0))
        .collect();
    Ok(RgbImage {
        height: out_h,
        width: out_w,
        data,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WrapConfig {
    pub pool_k: usize,
}

impl Default for WrapConfig {
    fn default() -> Self {
        Self { pool_k: 4 }
    }
}

/// Length of the vector produced by [`wrap_to_1d`].
pub fn wrapped_len(height: usize, width: usize, pool_k: usize) -> usize {
    let k = pool_k.max(1);
    (height / k) * (width / k)
}

/// Luminance (channel mean), `k x k` average pooling over the largest
/// multiple-of-`k` crop, then row-major flattening.
pub fn wrap_to_1d(image: &RgbImage, pool_k: usize) -> Vec<f32> {
    let k = pool_k.max(1);
    let (oh, ow) = (image.height / k, image.width / k);
    let lum = |y: usize, x: usize| -> f64 {
        let p = image.pixel(y, x);
        (p[0] as f64 + p[1] as f64 + p[2] as f64) / 3.0
    };
    let area = (k * k) as f64;
    let mut out = Vec::with_capacity(oh * ow);
    for by in 0..oh {
        for bx in 0..ow {
            let mut acc = 0.0;
            for y in by * k..(by + 1) * k {
                for x in bx * k..(bx + 1) * k {
                    acc += lum(y, x);
                }
            }
            out.push((acc / area) as f32);
        }
    }
    out
}

/// Shifts and scales `v` in place to zero mean and unit variance. A
/// constant vector becomes all zeros.
pub fn standardize(v: &mut [f32]) {
    if v.is_empty() {
        return;
    }
    let n = v.len() as f64;
    let mean = v.iter().map(|&x| x as f64).sum::<f64>() / n;
    let var = v.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
    let inv = if var > 1e-12 { 1.0 / var.sqrt() } else { 0.0 };
    for x in v.iter_mut() {
        *x = ((*x as f64 - mean) * inv) as f32;
    }
}

/// Everything that determines the bytes of a feature file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeaturizeConfig {
    pub preprocess: PreprocessConfig,
    pub tfr: TfrConfig,
    pub image: ImageConfig,
}

impl FeaturizeConfig {
    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// Record-to-images pipeline: filter, segment, scalogram every lead, stack.
#[derive(Debug)]
pub struct Featurizer {
    config: FeaturizeConfig,
    sampling_rate_hz: f64,
    plan: ScalogramPlan,
}

impl Featurizer {
    pub fn new(config: &FeaturizeConfig, sampling_rate_hz: f64) -> Result<Self, TfrError> {
        config.image.validate()?;
        let width = sampling_rate_hz.round() as usize;
        let plan = ScalogramPlan::new(&config.tfr, width, sampling_rate_hz)?;
        Ok(Self {
            config: config.clone(),
            sampling_rate_hz,
            plan,
        })
    }

    pub fn config(&self) -> &FeaturizeConfig {
        &self.config
    }

    pub fn featurize_record(
        &self,
        record: &EcgRecord,
    ) -> Result<Vec<StackedScalogramImage>, TfrError> {
        if record.sampling_rate_hz() != self.sampling_rate_hz {
            return Err(TfrError::ShapeMismatch(format!(
                "featurizer built for {} Hz, record `{}` is {} Hz",
                self.sampling_rate_hz,
                record.record_id(),
                record.sampling_rate_hz()
            )));
        }
        let filtered = preprocess_record(record, &self.config.preprocess)?;
        let segments = segment_record(&filtered)?;
        let images = crate::par::map(&segments, |seg| -> Result<_, TfrError> {
            let per_lead = seg
                .samples
                .iter()
                .enumerate()
                .map(|(i, lead)| self.plan.scalogram(lead, i))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(StackedScalogramImage {
                image: stack_scalograms(&per_lead, &self.config.image)?,
                record_id: seg.record_id.clone(),
                segment_index: seg.segment_index,
                label: seg.label,
            })
        });
        images.into_iter().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat_scalograms(value: f64, s: usize, t: usize) -> Vec<Scalogram> {
        (0..N_LEADS)
            .map(|i| Scalogram {
                magnitudes: vec![value; s * t],
                n_scales: s,
                n_times: t,
                scales_hz: (0..s).map(|k| 50.0 - k as f64).collect(),
                lead_index: i,
            })
            .collect()
    }

    #[test]
    fn default_frequencies_descend() {
        let f = TfrConfig::default().frequencies_hz().unwrap();
        assert_eq!(f.len(), 64);
        assert!((f[0] - 50.0).abs() < 1e-12);
        assert!((f[63] - 0.5).abs() < 1e-12);
        assert!(f.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn default_scalogram_shape() {
        let x: Vec<f64> = (0..500).map(|i| (i as f64 * 0.1).sin()).collect();
        let sc = scalogram(&x, 3, 500.0, &TfrConfig::default()).unwrap();
        assert_eq!((sc.n_scales, sc.n_times), (64, 500));
        assert_eq!(sc.lead_index, 3);
        assert!(sc.magnitudes.iter().all(|m| m.is_finite() && *m >= 0.0));
        let zero = scalogram(&[0.0; 500], 0, 500.0, &TfrConfig::default()).unwrap();
        assert!(zero.magnitudes.iter().all(|&m| m == 0.0));
    }

    #[test]
    fn zero_scalograms_map_to_colormap_origin() {
        let img = stack_scalograms(&flat_scalograms(0.0, 8, 30), &ImageConfig::default()).unwrap();
        assert_eq!(img.dims(), [227, 227, 3]);
        let c0 = colormap(0.0);
        for y in 0..img.height {
            for x in 0..img.width {
                assert_eq!(img.pixel(y, x), c0);
            }
        }
    }

    #[test]
    fn stacking_errors() {
        let cfg = ImageConfig::default();
        let mut v = flat_scalograms(1.0, 4, 10);
        v.pop();
        assert!(matches!(stack_scalograms(&v, &cfg), Err(TfrError::LeadCountMismatch(11))));
        let mut v = flat_scalograms(1.0, 4, 10);
        v[5].lead_index = 4;
        assert!(matches!(stack_scalograms(&v, &cfg), Err(TfrError::DuplicateLead(4))));
        let mut v = flat_scalograms(1.0, 4, 10);
        v[2].n_times = 9;
        assert!(matches!(stack_scalograms(&v, &cfg), Err(TfrError::ShapeMismatch(_))));
        let bad = ImageConfig { canvas: [250, 240], ..cfg };
        assert!(matches!(
            stack_scalograms(&flat_scalograms(1.0, 4, 10), &bad),
            Err(TfrError::InvalidConfig(_))
        ));
    }

    #[test]
    fn bands_follow_lead_index() {
        // Lead i has constant value i; with nearest resizing and no final
        // resize, band i of the canvas is exactly colormap(i / 11).
        let mut v = flat_scalograms(0.0, 6, 20);
        for sc in &mut v {
            let i = sc.lead_index as f64;
            sc.magnitudes.iter_mut().for_each(|m| *m = i);
        }
        v.reverse();
        let cfg = ImageConfig {
            canvas: [24, 10],
            model_input: [24, 10],
            resize: ResizeMethod::Nearest,
            ..Default::default()
        };
        let img = stack_scalograms(&v, &cfg).unwrap();
        for y in 0..24 {
            let lead = y / 2;
            assert_eq!(img.pixel(y, 0), colormap(lead as f64 / 11.0));
        }
    }

    #[test]
    fn standardize_gives_zero_mean_unit_variance() {
        let mut v = vec![1.0f32, 2.0, 3.0, 4.0];
        standardize(&mut v);
        let s = 1.25f32.sqrt();
        for (a, b) in v.iter().zip([-1.5 / s, -0.5 / s, 0.5 / s, 1.5 / s]) {
            assert!((a - b).abs() < 1e-6);
        }
        let mut c = vec![0.3f32; 5];
        standardize(&mut c);
        assert!(c.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn wrap_matches_index_oracle() {
        let mut data = Vec::new();
        for i in 0..16 {
            data.extend_from_slice(&[i as f32 / 16.0, i as f32 / 32.0, 0.0]);
        }
        let img = RgbImage { height: 4, width: 4, data };
        let v = wrap_to_1d(&img, 1);
        let mut expected = Vec::new();
        for y in 0..4 {
            for x in 0..4 {
                let p = img.pixel(y, x);
                expected.push(((p[0] as f64 + p[1] as f64 + p[2] as f64) / 3.0) as f32);
            }
        }
        assert_eq!(v, expected);
        assert_eq!(wrapped_len(227, 227, 4), 3136);
        let c = RgbImage { height: 227, width: 227, data: vec![0.3; 227 * 227 * 3] };
        let w = wrap_to_1d(&c, 4);
        assert_eq!(w.len(), 3136);
        assert!(w.iter().all(|&x| x == 0.3));
    }

    #[test]
    fn config_hash_tracks_changes() {
        let a = FeaturizeConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.tfr.omega0 = 7.0;
        assert_ne!(a.hash(), b.hash());
    }
}
