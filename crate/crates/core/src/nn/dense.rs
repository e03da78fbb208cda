//! Fully connected layer and shape/element-wise helpers.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{init, matmul, Context, Layer, NnError, Scalar, Tensor};

/// `y = x W + b` with `W` stored `[in, out]`.
pub struct Dense<T> {
    weight: Tensor<T>,
    bias: Tensor<T>,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Dense<T> {
    /// He-uniform weights, zero bias.
    pub fn new(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Result<Self, NnError> {
        let w = init::he_uniform(rng, inputs, inputs * outputs);
        Self::from_params(inputs, outputs, w, vec![T::zero(); outputs])
    }

    pub fn from_params(inputs: usize, outputs: usize, w: Vec<T>, b: Vec<T>) -> Result<Self, NnError> {
        Ok(Self {
            weight: Tensor::param(&[inputs, outputs], w)?,
            bias: Tensor::param(&[outputs], b)?,
            cache: None,
        })
    }

    pub fn inputs(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.dims()[1]
    }
}

impl<T: Scalar> Layer<T> for Dense<T> {
    fn kind(&self) -> &'static str {
        "dense"
    }

    fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>, NnError> {
        if input != [self.inputs()] {
            return Err(NnError::ShapeMismatch(format!(
                "dense expects [{}], got {input:?}",
                self.inputs()
            )));
        }
        Ok(vec![self.outputs()])
    }

    fn forward(&mut self, x: &Tensor<T>, _ctx: &mut Context) -> Result<Tensor<T>, NnError> {
        self.output_dims(&x.dims()[1..])?;
        let (b, i, o) = (x.batch(), self.inputs(), self.outputs());
        let mut y = Vec::with_capacity(b * o);
        for _ in 0..b {
            y.extend_from_slice(self.bias.data());
        }
        matmul(x.data(), false, self.weight.data(), false, &mut y, b, i, o, true);
        self.cache = Some(x.clone_values());
        Tensor::from_vec(&[b, o], y)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let x = self.cache.as_ref().ok_or(NnError::NoForwardCache("dense"))?;
        let (b, i, o) = (x.batch(), self.inputs(), self.outputs());
        if grad_out.dims() != [b, o] {
            return Err(NnError::ShapeMismatch(format!(
                "dense backward expects [{b}, {o}], got {:?}",
                grad_out.dims()
            )));
        }
        let dy = grad_out.data();
        matmul(x.data(), true, dy, false, self.weight.grad_mut(), i, b, o, true);
        let db = self.bias.grad_mut();
        for row in dy.chunks_exact(o) {
            for (d, v) in db.iter_mut().zip(row) {
                *d += *v;
            }
        }
        let mut dx = vec![T::zero(); b * i];
        matmul(dy, false, self.weight.data(), true, &mut dx, b, o, i, false);
        Tensor::from_vec(x.dims(), dx)
    }

    fn params(&self) -> Vec<(&'static str, &Tensor<T>)> {
        vec![("weight", &self.weight), ("bias", &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        vec![("weight", &mut self.weight), ("bias", &mut self.bias)]
    }
}

pub fn relu<T: Scalar>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect()
}

#[derive(Default)]
pub struct Relu {
    mask: Option<(Vec<usize>, Vec<bool>)>,
}

impl Relu {
    pub fn new() -> Self {
        Self::default()
    }
}

impl<T: Scalar> Layer<T> for Relu {
    fn kind(&self) -> &'static str {
        "relu"
    }

    fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>, NnError> {
        Ok(input.to_vec())
    }

    fn forward(&mut self, x: &Tensor<T>, _ctx: &mut Context) -> Result<Tensor<T>, NnError> {
        let mask: Vec<bool> = x.data().iter().map(|&v| v > T::zero()).collect();
        self.mask = Some((x.dims().to_vec(), mask));
        Tensor::from_vec(x.dims(), relu(x.data()))
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let (dims, mask) = self.mask.as_ref().ok_or(NnError::NoForwardCache("relu"))?;
        if grad_out.len() != mask.len() {
            return Err(NnError::ShapeMismatch("relu backward gradient length".into()));
        }
        let dx = grad_out
            .data()
            .iter()
            .zip(mask)
            .map(|(&g, &m)| if m { g } else { T::zero() })
            .collect();
        Tensor::from_vec(dims, dx)
    }
}

/// Inverted dropout: kept activations are divided by `1 - rate`. Identity
/// when `training` is false. Returns the output and the per-element scale
/// (0 or `1 / (1 - rate)`).
pub fn dropout<T: Scalar>(
    x: &[T],
    rate: f64,
    training: bool,
    rng: &mut ChaCha8Rng,
) -> (Vec<T>, Option<Vec<T>>) {
    if !training || rate == 0.0 {
        return (x.to_vec(), None);
    }
    let keep = T::lit(1.0 / (1.0 - rate));
    let scale: Vec<T> = x
        .iter()
        .map(|_| if rng.random::<f64>() >= rate { keep } else { T::zero() })
        .collect();
    let y = x.iter().zip(&scale).map(|(&v, &s)| v * s).collect();
    (y, Some(scale))
}

pub struct Dropout<T> {
    rate: f64,
    cache: Option<(Vec<usize>, Option<Vec<T>>)>,
}

impl<T: Scalar> Dropout<T> {
    pub fn new(rate: f64) -> Result<Self, NnError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NnError::InvalidHyperparameter(format!("dropout rate {rate} not in [0, 1)")));
        }
        Ok(Self { rate, cache: None })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }
}

impl<T: Scalar> Layer<T> for Dropout<T> {
    fn kind(&self) -> &'static str {
        "dropout"
    }

    fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>, NnError> {
        Ok(input.to_vec())
    }

    fn forward(&mut self, x: &Tensor<T>, ctx: &mut Context) -> Result<Tensor<T>, NnError> {
        let (y, scale) = dropout(x.data(), self.rate, ctx.training, &mut ctx.rng);
        self.cache = Some((x.dims().to_vec(), scale));
        Tensor::from_vec(x.dims(), y)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let (dims, scale) = self.cache.as_ref().ok_or(NnError::NoForwardCache("dropout"))?;
        let dx = match scale {
            Some(s) => grad_out.data().iter().zip(s).map(|(&g, &k)| g * k).collect(),
            None => grad_out.data().to_vec(),
        };
        Tensor::from_vec(dims, dx)
    }
}

/// `[batch, ...] -> [batch, product]`.
#[derive(Default)]
pub struct Flatten {
    dims: Option<Vec<usize>>,
}

impl Flatten {
    pub fn new() -> Self {
        Self::default()
    }
}

impl<T: Scalar> Layer<T> for Flatten {
    fn kind(&self) -> &'static str {
        "flatten"
    }

    fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>, NnError> {
        Ok(vec![input.iter().product()])
    }

    fn forward(&mut self, x: &Tensor<T>, _ctx: &mut Context) -> Result<Tensor<T>, NnError> {
        self.dims = Some(x.dims().to_vec());
        x.clone_values().reshape(&[x.batch(), x.sample_len()])
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let dims = self.dims.as_ref().ok_or(NnError::NoForwardCache("flatten"))?;
        grad_out.clone_values().reshape(dims)
    }
}

/// `[batch, time, features] -> [batch, features]` at the final time step.
#[derive(Default)]
pub struct LastStep {
    dims: Option<Vec<usize>>,
}

impl LastStep {
    pub fn new() -> Self {
        Self::default()
    }
}

impl<T: Scalar> Layer<T> for LastStep {
    fn kind(&self) -> &'static str {
        "last_step"
    }

    fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>, NnError> {
        match input {
            [t, f] if *t > 0 => Ok(vec![*f]),
            [0, _] => Err(NnError::EmptySequence),
            _ => Err(NnError::ShapeMismatch(format!("last_step expects [time, features], got {input:?}"))),
        }
    }

    fn forward(&mut self, x: &Tensor<T>, _ctx: &mut Context) -> Result<Tensor<T>, NnError> {
        let out = <Self as Layer<T>>::output_dims(self, &x.dims()[1..])?;
        let (t, f) = (x.dims()[1], out[0]);
        let y: Vec<T> = x
            .data()
            .chunks_exact(t * f)
            .flat_map(|s| s[(t - 1) * f..].iter().copied())
            .collect();
        self.dims = Some(x.dims().to_vec());
        Tensor::from_vec(&[x.batch(), f], y)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let dims = self.dims.as_ref().ok_or(NnError::NoForwardCache("last_step"))?;
        let (b, t, f) = (dims[0], dims[1], dims[2]);
        let mut dx = vec![T::zero(); b * t * f];
        for (i, g) in grad_out.data().chunks_exact(f).enumerate() {
            dx[i * t * f + (t - 1) * f..(i + 1) * t * f].copy_from_slice(g);
        }
        Tensor::from_vec(dims, dx)
    }
}
