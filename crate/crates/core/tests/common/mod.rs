//! Independent oracles shared by the integration tests and the acceptance
//! harness.
#![allow(dead_code)]

use std::f64::consts::PI;

use num_complex::Complex64;

/// Median of every reflect-padded window, by sorting each window afresh.
pub fn median_oracle(x: &[f64], window: usize) -> Vec<f64> {
    let n = x.len() as isize;
    let half = (window / 2) as isize;
    let reflect = |i: isize| -> f64 {
        let mut j = i;
        if j < 0 {
            j = -j;
        }
        if j >= n {
            j = 2 * (n - 1) - j;
        }
        x[j as usize]
    };
    (0..n)
        .map(|i| {
            let mut w: Vec<f64> = (i - half..=i + half).map(reflect).collect();
            w.sort_by(|a, b| a.partial_cmp(b).unwrap());
            w[w.len() / 2]
        })
        .collect()
}

fn morlet(u: f64, omega0: f64) -> Complex64 {
    let envelope = PI.powf(-0.25) * (-u * u / 2.0).exp();
    Complex64::new(envelope * (omega0 * u).cos(), envelope * (omega0 * u).sin())
}

/// Direct summation of `x[tau] conj(psi((tau - t) / s)) / sqrt(s)` over
/// `|tau - t| <= min(floor(4 s), T - 1)` and `0 <= tau < T`.
pub fn cwt_direct(x: &[f64], scales: &[f64], omega0: f64) -> Vec<Vec<Complex64>> {
    let len = x.len();
    scales
        .iter()
        .map(|&s| {
            let reach = ((4.0 * s).floor() as usize).min(len - 1) as isize;
            (0..len as isize)
                .map(|t| {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for tau in (t - reach).max(0)..=(t + reach).min(len as isize - 1) {
                        let u = (tau - t) as f64 / s;
                        acc += x[tau as usize] * morlet(u, omega0).conj() / s.sqrt();
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

/// Scale (in samples) maximizing the time-averaged magnitude of the
/// inner product of a unit tone with sampled Morlet atoms, over a dense
/// log grid.
pub fn tone_peak_scale(tone_hz: f64, fs: f64, len: usize, omega0: f64, grid: &[f64]) -> f64 {
    let x: Vec<f64> = (0..len).map(|i| (2.0 * PI * tone_hz * i as f64 / fs).sin()).collect();
    let coefs = cwt_direct(&x, grid, omega0);
    let mut best = (0, f64::MIN);
    for (i, row) in coefs.iter().enumerate() {
        let mean = row.iter().map(|c| c.norm()).sum::<f64>() / len as f64;
        if mean > best.1 {
            best = (i, mean);
        }
    }
    grid[best.0]
}

pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Band power below `cutoff_hz` by a direct DFT (DC excluded).
pub fn low_band_power(x: &[f64], fs: f64, cutoff_hz: f64) -> f64 {
    let n = x.len();
    let mut total = 0.0;
    for k in 1..n / 2 {
        let f = k as f64 * fs / n as f64;
        if f >= cutoff_hz {
            break;
        }
        let (mut re, mut im) = (0.0, 0.0);
        for (t, &v) in x.iter().enumerate() {
            let a = -2.0 * PI * (k * t) as f64 / n as f64;
            re += v * a.cos();
            im += v * a.sin();
        }
        total += re * re + im * im;
    }
    total
}

/// Local maxima above `threshold`, at least `refractory` samples apart
/// (the larger peak wins).
pub fn detect_peaks(x: &[f64], threshold: f64, refractory: usize) -> Vec<usize> {
    let mut peaks: Vec<usize> = Vec::new();
    for i in 1..x.len().saturating_sub(1) {
        if x[i] > threshold && x[i] >= x[i - 1] && x[i] > x[i + 1] {
            match peaks.last() {
                Some(&p) if i - p < refractory => {
                    if x[i] > x[p] {
                        *peaks.last_mut().unwrap() = i;
                    }
                }
                _ => peaks.push(i),
            }
        }
    }
    peaks
}

/// One-vs-rest counts `(tp, fp, fn, tn)` by direct iteration over pairs.
pub fn brute_counts(labels: &[usize], preds: &[usize], class: usize) -> (u64, u64, u64, u64) {
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (&l, &p) in labels.iter().zip(preds) {
        match (l == class, p == class) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    (tp, fp, fn_, tn)
}

/// Accuracy and per-class `(precision, recall, specificity)` from the
/// brute-force counts. A metric with an empty denominator is 1 for a class
/// that is never involved in an error and 0 otherwise.
pub fn brute_metrics(labels: &[usize], preds: &[usize], n_classes: usize) -> (f64, Vec<[f64; 3]>) {
    let correct = labels.iter().zip(preds).filter(|(a, b)| a == b).count();
    let acc = if labels.is_empty() { 0.0 } else { correct as f64 / labels.len() as f64 };
    let per = (0..n_classes)
        .map(|c| {
            let (tp, fp, fn_, tn) = brute_counts(labels, preds, c);
            let clean = fp == 0 && fn_ == 0;
            let div = |a: u64, b: u64| {
                if b == 0 {
                    if clean { 1.0 } else { 0.0 }
                } else {
                    a as f64 / b as f64
                }
            };
            [div(tp, tp + fp), div(tp, tp + fn_), div(tn, tn + fp)]
        })
        .collect();
    (acc, per)
}

pub mod grad {
    use ecgstack::nn::gradcheck::{check_layer, check_softmax_xent};
    use ecgstack::nn::{
        Conv1d, Conv2d, Dense, Dropout, Flatten, LastStep, Layer, Lstm, MaxPool1d, MaxPool2d,
        MultiHeadAttention, Relu, SelfAttention, Tensor,
    };
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub const H: f64 = 1e-5;
    pub const LINEAR_TOL: f64 = 1e-6;
    pub const NONLINEAR_TOL: f64 = 1e-4;

    #[derive(Debug)]
    pub struct Row {
        pub layer: &'static str,
        pub seeds: usize,
        pub worst: f64,
        pub tol: f64,
    }

    impl Row {
        pub fn passed(&self) -> bool {
            self.worst < self.tol
        }
    }

    fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Distinct values at least 0.01 apart, so no max-pool window is within
    /// a finite-difference step of a tie.
    fn spaced(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.01 - n as f64 * 0.005).collect();
        v.shuffle(rng);
        v
    }

    /// Values with magnitude at least 0.05, away from the ReLU kink.
    fn off_zero(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n)
            .map(|_| {
                let m = rng.random_range(0.05..1.0);
                if rng.random::<bool>() { m } else { -m }
            })
            .collect()
    }

    fn run(
        layer: &'static str,
        tol: f64,
        seeds: u64,
        mut case: impl FnMut(&mut ChaCha8Rng, u64) -> f64,
    ) -> Row {
        let mut worst: f64 = 0.0;
        for seed in 0..seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(seed * 7919 + 17);
            worst = worst.max(case(&mut rng, seed));
        }
        Row { layer, seeds: seeds as usize, worst, tol }
    }

    fn check(layer: &mut dyn Layer<f64>, x: Tensor<f64>, seed: u64, training: bool) -> f64 {
        check_layer(layer, &x, seed, training, H, 400).expect("gradient check runs").max_rel()
    }

    pub fn suite(seeds: u64) -> Vec<Row> {
        let mut rows = Vec::new();
        rows.push(run("conv2d", LINEAR_TOL, seeds, |rng, seed| {
            let (k, cin, cout, stride) = (rng.random_range(1..=3), rng.random_range(1..=3), rng.random_range(1..=4), rng.random_range(1..=2));
            let (h, w) = (rng.random_range(k..=k + 4), rng.random_range(k..=k + 4));
            let mut l = Conv2d::<f64>::from_params(k, cin, cout, stride, uniform(rng, k * k * cin * cout), uniform(rng, cout)).unwrap();
            let x = Tensor::from_vec(&[2, h, w, cin], uniform(rng, 2 * h * w * cin)).unwrap();
            check(&mut l, x, seed, false)
        }));
        rows.push(run("conv1d", LINEAR_TOL, seeds, |rng, seed| {
            let (k, cin, cout, stride) = (rng.random_range(1..=5), rng.random_range(1..=3), rng.random_range(1..=4), rng.random_range(1..=3));
            let len = rng.random_range(k..=k + 12);
            let mut l = Conv1d::<f64>::from_params(k, cin, cout, stride, uniform(rng, k * cin * cout), uniform(rng, cout)).unwrap();
            let x = Tensor::from_vec(&[2, len, cin], uniform(rng, 2 * len * cin)).unwrap();
            check(&mut l, x, seed, false)
        }));
        rows.push(run("maxpool2d", LINEAR_TOL, seeds, |rng, seed| {
            let (size, c) = (rng.random_range(1..=3), rng.random_range(1..=3));
            let stride = rng.random_range(1..=size);
            let (h, w) = (rng.random_range(size..=size + 5), rng.random_range(size..=size + 5));
            let mut l = MaxPool2d::new(size, stride).unwrap();
            let x = Tensor::from_vec(&[2, h, w, c], spaced(rng, 2 * h * w * c)).unwrap();
            check(&mut l, x, seed, false)
        }));
        rows.push(run("maxpool1d", LINEAR_TOL, seeds, |rng, seed| {
            let (size, c) = (rng.random_range(1..=4), rng.random_range(1..=3));
            let len = rng.random_range(size..=size + 10);
            let mut l = MaxPool1d::new(size, size).unwrap();
            let x = Tensor::from_vec(&[2, len, c], spaced(rng, 2 * len * c)).unwrap();
            check(&mut l, x, seed, false)
        }));
        rows.push(run("dense", LINEAR_TOL, seeds, |rng, seed| {
            let (i, o) = (rng.random_range(1..=10), rng.random_range(1..=6));
            let mut l = Dense::<f64>::from_params(i, o, uniform(rng, i * o), uniform(rng, o)).unwrap();
            let x = Tensor::from_vec(&[3, i], uniform(rng, 3 * i)).unwrap();
            check(&mut l, x, seed, false)
        }));
        rows.push(run("relu", LINEAR_TOL, seeds, |rng, seed| {
            let n = rng.random_range(1..=20);
            let x = Tensor::from_vec(&[2, n], off_zero(rng, 2 * n)).unwrap();
            check(&mut Relu::new(), x, seed, false)
        }));
        rows.push(run("dropout-eval", LINEAR_TOL, seeds, |rng, seed| {
            let n = rng.random_range(1..=20);
            let mut l = Dropout::<f64>::new(0.5).unwrap();
            let x = Tensor::from_vec(&[2, n], uniform(rng, 2 * n)).unwrap();
            check(&mut l, x, seed, false)
        }));
        rows.push(run("dropout-train", LINEAR_TOL, seeds, |rng, seed| {
            let n = rng.random_range(1..=20);
            let mut l = Dropout::<f64>::new(rng.random_range(0.0..0.9)).unwrap();
            let x = Tensor::from_vec(&[2, n], uniform(rng, 2 * n)).unwrap();
            check(&mut l, x, seed, true)
        }));
        rows.push(run("flatten+last_step", LINEAR_TOL, seeds, |rng, seed| {
            let (t, f) = (rng.random_range(1..=5), rng.random_range(1..=4));
            let x = Tensor::from_vec(&[2, t, f], uniform(rng, 2 * t * f)).unwrap();
            check(&mut Flatten::new(), x.clone_values(), seed, false).max(check(&mut LastStep::new(), x, seed, false))
        }));
        rows.push(run("softmax-xent", NONLINEAR_TOL, seeds, |rng, _| {
            let b = rng.random_range(1..=5);
            let logits = Tensor::from_vec(&[b, 4], uniform(rng, b * 4).iter().map(|v| v * 3.0).collect()).unwrap();
            let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..4)).collect();
            check_softmax_xent(&logits, &labels, H).unwrap()
        }));
        rows.push(run("self-attention", NONLINEAR_TOL, seeds, |rng, seed| {
            let c = 8 * rng.random_range(1..=2);
            let (h, w) = (rng.random_range(1..=4), rng.random_range(2..=4));
            let d = c / 8;
            let mut l = SelfAttention::<f64>::from_params(c, uniform(rng, c * d), uniform(rng, c * d), uniform(rng, c * c), rng.random_range(0.2..1.0)).unwrap();
            let x = Tensor::from_vec(&[2, h, w, c], uniform(rng, 2 * h * w * c)).unwrap();
            check(&mut l, x, seed, false)
        }));
        rows.push(run("multi-head-attention", NONLINEAR_TOL, seeds, |rng, seed| {
            // Seed 0 is the 6x6x16, two-head configuration.
            let (c, heads, h, w) = if seed == 0 {
                (16, 2, 6, 6)
            } else {
                let heads = [1, 2][rng.random_range(0..2)];
                (16, heads, rng.random_range(1..=4), rng.random_range(2..=4))
            };
            let d = c / 8;
            let mut l = MultiHeadAttention::<f64>::from_params(
                c,
                heads,
                uniform(rng, c * d),
                uniform(rng, c * d),
                uniform(rng, c * c),
                uniform(rng, c * c),
                rng.random_range(0.2..1.0),
            )
            .unwrap();
            let x = Tensor::from_vec(&[1, h, w, c], uniform(rng, h * w * c)).unwrap();
            check(&mut l, x, seed, false)
        }));
        rows.push(run("gated-residual", NONLINEAR_TOL, seeds, |rng, seed| {
            // Freshly initialized block: gate closed at gamma = 0.
            let c = 16;
            let mut l = SelfAttention::<f64>::new(c, rng).unwrap();
            assert_eq!(l.gamma(), 0.0);
            let x = Tensor::from_vec(&[2, 3, 3, c], uniform(rng, 2 * 9 * c)).unwrap();
            check(&mut l, x, seed, false)
        }));
        rows.push(run("lstm-3-layer-bptt", NONLINEAR_TOL, seeds, |rng, seed| {
            let (t, d, hid) = if seed == 0 {
                (5, 8, 8)
            } else {
                (rng.random_range(1..=6), rng.random_range(1..=8), rng.random_range(2..=8))
            };
            let mut l = Lstm::<f64>::new(d, hid, 3, rng).unwrap();
            // Non-zero biases exercise every gate path.
            for (_, p) in l.params_mut() {
                if p.dims().len() == 1 {
                    let v = uniform(rng, p.len());
                    p.data_mut().copy_from_slice(&v);
                }
            }
            let x = Tensor::from_vec(&[2, t, d], uniform(rng, 2 * t * d)).unwrap();
            check(&mut l, x, seed, false)
        }));
        rows
    }
}
