use ecgstack::par;
use ecgstack::signal_io::generate_synthetic;
use ecgstack::tfr::{
    colormap, normalization_bounds, scalogram, stack_scalograms, stack_with_bounds, stfs, wrap_to_1d,
    FeaturizeConfig, Featurizer, ImageConfig, Normalization, RgbImage, Scalogram, TfrConfig,
};
use ecgstack::ArrhythmiaClass;

fn featurize(seed: u64, workers: Option<usize>) -> Vec<Vec<u8>> {
    let record = generate_synthetic(ArrhythmiaClass::Afib, seed, 10.0, 500.0).unwrap();
    let f = Featurizer::new(&FeaturizeConfig::default(), 500.0).unwrap();
    let images = par::with_workers(workers, || f.featurize_record(&record).unwrap());
    images.iter().map(|i| stfs::encode(&i.image.dims(), &i.image.data)).collect()
}

#[test]
fn ten_second_record_gives_ten_images() {
    let record = generate_synthetic(ArrhythmiaClass::Sr, 1, 10.0, 500.0).unwrap();
    let f = Featurizer::new(&FeaturizeConfig::default(), 500.0).unwrap();
    let images = f.featurize_record(&record).unwrap();
    assert_eq!(images.len(), 10);
    for (k, img) in images.iter().enumerate() {
        assert_eq!(img.segment_index, k);
        assert_eq!(img.image.dims(), [227, 227, 3]);
        assert_eq!(img.label, ArrhythmiaClass::Sr);
        assert!(img.image.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn featurization_is_deterministic_and_worker_invariant() {
    let one = featurize(3, Some(1));
    assert_eq!(one, featurize(3, Some(1)));
    assert_eq!(one, featurize(3, Some(4)));
}

fn lead_scalograms(seed: u64) -> Vec<Scalogram> {
    let record = generate_synthetic(ArrhythmiaClass::St, seed, 1.0, 500.0).unwrap();
    (0..12).map(|i| scalogram(record.lead(i), i, 500.0, &TfrConfig::default()).unwrap()).collect()
}

#[test]
fn stacking_keys_on_lead_index() {
    let leads = lead_scalograms(2);
    let cfg = ImageConfig::default();
    let a = stack_scalograms(&leads, &cfg).unwrap();
    let mut shuffled = leads.clone();
    shuffled.reverse();
    shuffled.swap(0, 5);
    assert_eq!(a, stack_scalograms(&shuffled, &cfg).unwrap());
}

#[test]
fn bands_are_independent_under_fixed_bounds() {
    let cfg = ImageConfig { model_input: [240, 240], ..Default::default() };
    let leads = lead_scalograms(6);
    let bounds = normalization_bounds(&leads, Normalization::Group).unwrap();
    let base = stack_with_bounds(&leads, &cfg, &bounds).unwrap();
    let band = |img: &RgbImage, b: usize| img.data[b * 20 * 240 * 3..(b + 1) * 20 * 240 * 3].to_vec();
    for changed in [0, 7, 11] {
        let mut perturbed = leads.clone();
        perturbed[changed].magnitudes.iter_mut().for_each(|m| *m *= 0.5);
        let img = stack_with_bounds(&perturbed, &cfg, &bounds).unwrap();
        for b in 0..12 {
            assert_eq!(band(&img, b) == band(&base, b), b != changed, "lead {changed}, band {b}");
        }
    }
}

#[test]
fn zero_scalograms_map_to_colormap_origin() {
    let leads: Vec<Scalogram> = (0..12)
        .map(|i| Scalogram { magnitudes: vec![0.0; 64 * 500], n_scales: 64, n_times: 500, scales_hz: vec![1.0; 64], lead_index: i })
        .collect();
    let img = stack_scalograms(&leads, &ImageConfig::default()).unwrap();
    let c0 = colormap(0.0);
    assert!(img.data.chunks(3).all(|p| p == c0));
}

#[test]
fn wrapping_contract() {
    let img = RgbImage { height: 227, width: 227, data: vec![0.25; 227 * 227 * 3] };
    let v = wrap_to_1d(&img, 4);
    assert_eq!(v.len(), 3136);
    assert!(v.iter().all(|&x| x == 0.25));

    let data: Vec<f32> = (0..16).flat_map(|i| [i as f32 / 16.0, 0.0, i as f32 / 32.0]).collect();
    let small = RgbImage { height: 4, width: 4, data };
    let v = wrap_to_1d(&small, 1);
    let mut expected = Vec::new();
    for y in 0..4 {
        for x in 0..4 {
            let p = small.pixel(y, x);
            expected.push(((p[0] as f64 + p[1] as f64 + p[2] as f64) / 3.0) as f32);
        }
    }
    assert_eq!(v, expected);
}
