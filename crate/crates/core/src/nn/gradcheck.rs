//! Central finite-difference checks of analytic layer gradients.
//!
//! The scalar objective is `L = sum(r * layer(x))` for a fixed random
//! `r`, so `dL/dy = r` is what `backward` receives.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{softmax_xent_batch, Context, Layer, NnError, Tensor};

/// Denominator floor of the relative error, so entries whose true
/// gradient is essentially zero are compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-3;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub max_rel_input: f64,
    /// Worst relative error per named parameter.
    pub max_rel_params: Vec<(&'static str, f64)>,
    pub checked: usize,
}

impl GradReport {
    pub fn max_rel(&self) -> f64 {
        self.max_rel_params
            .iter()
            .map(|p| p.1)
            .fold(self.max_rel_input, f64::max)
    }
}

fn objective(layer: &mut dyn Layer<f64>, x: &Tensor<f64>, r: &[f64], training: bool, seed: u64) -> Result<f64, NnError> {
    let mut ctx = Context::new(training, seed);
    let y = layer.forward(x, &mut ctx)?;
    Ok(y.data().iter().zip(r).map(|(a, b)| a * b).sum())
}

fn indices(rng: &mut ChaCha8Rng, len: usize, max: usize) -> Vec<usize> {
    if len <= max {
        (0..len).collect()
    } else {
        let mut v = sample(rng, len, max).into_vec();
        v.sort_unstable();
        v
    }
}

/// Compares `backward` against central differences with step `h`, on at
/// most `max_per_tensor` entries of the input and of each parameter.
/// Every forward pass uses a fresh `Context` seeded with `seed`, so
/// stochastic layers see the same mask each time.
pub fn check_layer(
    layer: &mut dyn Layer<f64>,
    x: &Tensor<f64>,
    seed: u64,
    training: bool,
    h: f64,
    max_per_tensor: usize,
) -> Result<GradReport, NnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut ctx = Context::new(training, seed);
    let y = layer.forward(x, &mut ctx)?;
    let r: Vec<f64> = (0..y.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    for (_, p) in layer.params_mut() {
        p.zero_grad();
    }
    let dx = layer.backward(&Tensor::from_vec(y.dims(), r.clone())?)?;
    let param_grads: Vec<Vec<f64>> = layer
        .params()
        .iter()
        .map(|(_, p)| p.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; p.len()]))
        .collect();

    let mut checked = 0;
    let mut max_rel_input: f64 = 0.0;
    let mut xp = x.clone_values();
    for i in indices(&mut rng, x.len(), max_per_tensor) {
        let orig = xp.data()[i];
        xp.data_mut()[i] = orig + h;
        let plus = objective(layer, &xp, &r, training, seed)?;
        xp.data_mut()[i] = orig - h;
        let minus = objective(layer, &xp, &r, training, seed)?;
        xp.data_mut()[i] = orig;
        max_rel_input = max_rel_input.max(relative_error(dx.data()[i], (plus - minus) / (2.0 * h)));
        checked += 1;
    }

    let names: Vec<&'static str> = layer.params().iter().map(|(n, _)| *n).collect();
    let mut max_rel_params = Vec::with_capacity(names.len());
    for (pi, name) in names.into_iter().enumerate() {
        let len = layer.params()[pi].1.len();
        let mut worst: f64 = 0.0;
        for i in indices(&mut rng, len, max_per_tensor) {
            let orig = layer.params()[pi].1.data()[i];
            layer.params_mut()[pi].1.data_mut()[i] = orig + h;
            let plus = objective(layer, x, &r, training, seed)?;
            layer.params_mut()[pi].1.data_mut()[i] = orig - h;
            let minus = objective(layer, x, &r, training, seed)?;
            layer.params_mut()[pi].1.data_mut()[i] = orig;
            worst = worst.max(relative_error(param_grads[pi][i], (plus - minus) / (2.0 * h)));
            checked += 1;
        }
        max_rel_params.push((name, worst));
    }
    Ok(GradReport { max_rel_input, max_rel_params, checked })
}

/// Checks the logit gradient of mean softmax cross-entropy.
pub fn check_softmax_xent(logits: &Tensor<f64>, labels: &[usize], h: f64) -> Result<f64, NnError> {
    let (_, _, grad) = softmax_xent_batch(logits, labels)?;
    let mut lp = logits.clone_values();
    let mut worst: f64 = 0.0;
    for i in 0..logits.len() {
        let orig = lp.data()[i];
        lp.data_mut()[i] = orig + h;
        let plus = softmax_xent_batch(&lp, labels)?.0;
        lp.data_mut()[i] = orig - h;
        let minus = softmax_xent_batch(&lp, labels)?.0;
        lp.data_mut()[i] = orig;
        worst = worst.max(relative_error(grad.data()[i], (plus - minus) / (2.0 * h)));
    }
    Ok(worst)
}
