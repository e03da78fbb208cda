mod common;

use common::{cwt_direct, detect_peaks, log_grid, median_oracle, tone_peak_scale};
use ecgstack::preprocess::{median_filter, preprocess_record, segment_record, PreprocessConfig};
use ecgstack::signal_io::{
    generate_synthetic, generate_synthetic_with_beats, load_record, LabelTable, save_record, LoadOptions,
    AFIB_MIN_RR_CV, CSV_DECIMALS, N_LEADS,
};
use ecgstack::tfr::{hz_to_scale, morlet_cwt, scale_to_hz, scalogram, TfrConfig};
use ecgstack::ArrhythmiaClass;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FS: f64 = 500.0;

fn arb_class() -> impl Strategy<Value = ArrhythmiaClass> {
    (0usize..4).prop_map(|i| ArrhythmiaClass::from_index(i).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn median_matches_sort_oracle(
        x in prop::collection::vec(-5.0f64..5.0, 1..200),
        w in 0usize..40,
    ) {
        let window = (2 * w + 1).min(if x.len() % 2 == 1 { x.len() } else { x.len() - 1 }).max(1);
        let got = median_filter(&x, window).unwrap();
        prop_assert_eq!(got, median_oracle(&x, window));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn median_output_is_bounded(x in prop::collection::vec(-1e3f64..1e3, 5..300)) {
        let y = median_filter(&x, 5).unwrap();
        let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(y.iter().all(|&v| v >= lo && v <= hi));
    }

    #[test]
    fn median_fixed_points_are_stable(x in prop::collection::vec(-1.0f64..1.0, 9..120)) {
        let y = median_filter(&x, 3).unwrap();
        if median_filter(&y, 3).unwrap() == y {
            prop_assert_eq!(median_filter(&median_filter(&y, 3).unwrap(), 3).unwrap(), y);
        }
        let constant = vec![x[0]; x.len()];
        prop_assert_eq!(median_filter(&constant, 5).unwrap(), constant);
    }

    #[test]
    fn cwt_matches_direct_summation(
        seed in any::<u64>(),
        len in 2usize..=256,
        n_scales in 1usize..6,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..len).map(|_| rng.random_range(-1.0..1.0)).collect();
        let scales: Vec<f64> = (0..n_scales).map(|_| rng.random_range(1.0..80.0)).collect();
        let fast = morlet_cwt(&x, &scales, 6.0).unwrap();
        let slow = cwt_direct(&x, &scales, 6.0);
        for (s, row) in slow.iter().enumerate() {
            let scale = row.iter().map(|c| c.norm()).fold(0.0, f64::max);
            for (t, c) in row.iter().enumerate() {
                prop_assert!((fast.get(s, t) - c).norm() <= 1e-10 * scale);
            }
        }
    }

    #[test]
    fn synthetic_records_are_well_formed(seed in 0u64..10_000, class in arb_class()) {
        let r = generate_synthetic(class, seed, 10.0, FS).unwrap();
        prop_assert_eq!(r.leads().len(), N_LEADS);
        prop_assert!(r.leads().iter().all(|l| l.len() == 5000));
        prop_assert!(r.leads().iter().flatten().all(|v| v.is_finite()));
        prop_assert_eq!(r.label(), class);
    }

    #[test]
    fn rates_are_ordered_by_class(seed in 0u64..10_000) {
        let rate = |c| generate_synthetic_with_beats(c, seed, 10.0, FS).unwrap().mean_rate_bpm;
        let (sb, sr, st) = (rate(ArrhythmiaClass::Sb), rate(ArrhythmiaClass::Sr), rate(ArrhythmiaClass::St));
        prop_assert!(sb < sr && sr < st);
    }

    #[test]
    fn preprocessing_keeps_shape(seed in 0u64..1000, class in arb_class()) {
        let r = generate_synthetic(class, seed, 3.0, FS).unwrap();
        for cfg in [PreprocessConfig::default(), PreprocessConfig { mode: ecgstack::preprocess::FilterMode::Smooth, ..Default::default() }] {
            let p = preprocess_record(&r, &cfg).unwrap();
            prop_assert_eq!(p.leads().len(), N_LEADS);
            prop_assert_eq!(p.len(), r.len());
        }
    }
}

#[test]
fn median_filter_example() {
    assert_eq!(median_filter(&[1.0, 5.0, 2.0, 8.0, 3.0], 3).unwrap(), vec![5.0, 2.0, 5.0, 3.0, 8.0]);
}

#[test]
fn segments_tile_the_record() {
    let r = generate_synthetic(ArrhythmiaClass::Sr, 4, 10.0, FS).unwrap();
    let segs = segment_record(&r).unwrap();
    assert_eq!(segs.len(), 10);
    for lead in 0..N_LEADS {
        let joined: Vec<f64> = segs.iter().flat_map(|s| s.samples[lead].clone()).collect();
        assert_eq!(joined, r.lead(lead));
    }
    for (k, s) in segs.iter().enumerate() {
        assert_eq!(s.segment_index, k);
        assert_eq!(s.width(), 500);
    }
}

#[test]
fn save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let r = generate_synthetic(ArrhythmiaClass::St, 11, 2.0, FS).unwrap();
    let path = save_record(dir.path(), &r).unwrap();
    let mut labels = LabelTable::new();
    labels.insert(r.record_id(), r.label());
    let back = load_record(&path, &labels, &LoadOptions { duration_s: 2.0, ..Default::default() }).unwrap();
    assert_eq!(back.record_id(), r.record_id());
    let tol = 0.5 * 10f64.powi(-(CSV_DECIMALS as i32)) + 1e-12;
    for (a, b) in r.leads().iter().zip(back.leads()) {
        assert!(a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol));
    }
}

#[test]
fn synthetic_generation_is_deterministic() {
    let a = generate_synthetic(ArrhythmiaClass::Sr, 7, 10.0, FS).unwrap();
    let b = generate_synthetic(ArrhythmiaClass::Sr, 7, 10.0, FS).unwrap();
    assert_eq!(a, b);
}

/// Lead II R peaks after baseline removal.
fn detected_rr(class: ArrhythmiaClass, seed: u64) -> Vec<f64> {
    let r = generate_synthetic(class, seed, 10.0, FS).unwrap();
    let p = preprocess_record(&r, &PreprocessConfig::default()).unwrap();
    let peaks = detect_peaks(p.lead(1), 0.5, (0.2 * FS) as usize);
    peaks.windows(2).map(|w| (w[1] - w[0]) as f64 / FS).collect()
}

#[test]
fn bradycardia_rr_exceeds_one_second() {
    let rr = detected_rr(ArrhythmiaClass::Sb, 1);
    assert!(rr.len() >= 7);
    let mean = rr.iter().sum::<f64>() / rr.len() as f64;
    assert!(mean > 1.0, "mean RR {mean}");
}

#[test]
fn afib_rr_variation() {
    let s = generate_synthetic_with_beats(ArrhythmiaClass::Afib, 3, 10.0, FS).unwrap();
    let beats: Vec<usize> = s.beat_times_s.iter().map(|t| (t * FS).round() as usize).collect();
    let p = preprocess_record(&s.record, &PreprocessConfig::default()).unwrap();
    let peaks = detect_peaks(p.lead(1), 0.5, (0.2 * FS) as usize);
    // Every logged beat is found by the detector within 5 ms.
    for b in &beats {
        assert!(peaks.iter().any(|&p| p.abs_diff(*b) <= 3), "beat at {b} not detected");
    }
    let rr: Vec<f64> = peaks.windows(2).map(|w| (w[1] - w[0]) as f64 / FS).collect();
    let mean = rr.iter().sum::<f64>() / rr.len() as f64;
    let var = rr.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / rr.len() as f64;
    assert!(var.sqrt() / mean >= AFIB_MIN_RR_CV, "cv {}", var.sqrt() / mean);
}

#[test]
fn zero_signal_has_zero_coefficients() {
    let c = morlet_cwt(&[0.0; 64], &[1.0, 4.0, 20.0], 6.0).unwrap();
    assert!(c.data.iter().all(|v| v.norm() == 0.0));
}

#[test]
fn coefficients_scale_linearly() {
    let x: Vec<f64> = (0..100).map(|i| (i as f64 * 0.3).sin()).collect();
    let y: Vec<f64> = x.iter().map(|v| -2.5 * v).collect();
    let (a, b) = (morlet_cwt(&x, &[3.0, 9.0], 6.0).unwrap(), morlet_cwt(&y, &[3.0, 9.0], 6.0).unwrap());
    for (p, q) in a.data.iter().zip(&b.data) {
        assert!((2.5 * p.norm() - q.norm()).abs() <= 1e-12 * (1.0 + q.norm()));
    }
}

/// Pseudo-frequency of the scale with largest mean magnitude over the
/// central half of a 3 s tone.
fn localized_hz(tone_hz: f64, scales: &[f64]) -> f64 {
    let len = (3.0 * FS) as usize;
    let x: Vec<f64> = (0..len).map(|i| (2.0 * std::f64::consts::PI * tone_hz * i as f64 / FS).sin()).collect();
    let c = morlet_cwt(&x, scales, 6.0).unwrap();
    let mid = len / 4..3 * len / 4;
    let best = (0..scales.len())
        .max_by(|&a, &b| {
            let m = |s: usize| c.row(s)[mid.clone()].iter().map(|v| v.norm()).sum::<f64>();
            m(a).partial_cmp(&m(b)).unwrap()
        })
        .unwrap();
    scale_to_hz(scales[best], 6.0, FS)
}

#[test]
fn tones_localize_within_five_percent() {
    let grid = log_grid(hz_to_scale(80.0, 6.0, FS), hz_to_scale(2.0, 6.0, FS), 160);
    for tone in [5.0, 10.0, 20.0, 40.0] {
        let hz = localized_hz(tone, &grid);
        assert!((hz - tone).abs() <= 0.05 * tone, "{tone} Hz tone localized at {hz}");
    }
}

#[test]
fn ten_hz_tone_matches_inner_product_oracle() {
    let expected = 6.0 / (2.0 * std::f64::consts::PI) * FS / 10.0;
    let grid = log_grid(0.8 * expected, 1.25 * expected, 41);
    let oracle = tone_peak_scale(10.0, FS, 1000, 6.0, &grid);
    assert!((oracle - expected).abs() <= 0.05 * expected);
    let lib = hz_to_scale(localized_hz(10.0, &grid), 6.0, FS);
    assert!((lib - expected).abs() <= 0.05 * expected, "library peak {lib}, oracle {oracle}");
}

#[test]
fn eight_hz_scalogram_row() {
    let cfg = TfrConfig::default();
    let lead: Vec<f64> = (0..500).map(|i| (2.0 * std::f64::consts::PI * 8.0 * i as f64 / FS).sin()).collect();
    let sc = scalogram(&lead, 0, FS, &cfg).unwrap();
    assert_eq!((sc.n_scales, sc.n_times), (64, 500));
    assert!(sc.scales_hz.windows(2).all(|w| w[0] > w[1]));
    let mean = |s: usize| sc.row(s).iter().sum::<f64>();
    let best = (0..64).max_by(|&a, &b| mean(a).partial_cmp(&mean(b)).unwrap()).unwrap();
    let nearest = (0..64)
        .min_by(|&a, &b| (sc.scales_hz[a].ln() - 8f64.ln()).abs().partial_cmp(&(sc.scales_hz[b].ln() - 8f64.ln()).abs()).unwrap())
        .unwrap();
    assert!(best.abs_diff(nearest) <= 1, "peak row {best} ({} Hz)", sc.scales_hz[best]);
}

#[test]
fn zero_lead_gives_zero_scalogram() {
    let sc = scalogram(&[0.0; 500], 3, FS, &TfrConfig::default()).unwrap();
    assert!(sc.magnitudes.iter().all(|&m| m == 0.0));
    assert_eq!(sc.lead_index, 3);
}
