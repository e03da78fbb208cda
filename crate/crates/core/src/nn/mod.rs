//! Minimal tensor engine: layers with analytic forward/backward passes,
//! softmax cross-entropy and Adam.
//!
//! Activations are batch-major: `[batch, ...per-sample dims]`, images are
//! `[batch, height, width, channels]` and sequences `[batch, time, features]`.
//! All code is generic over [`Scalar`] so the gradient checks run the exact
//! training code paths in `f64`.

mod adam;
mod attention;
mod conv;
mod dense;
mod gemm;
pub mod gradcheck;
pub mod init;
mod loss;
mod lstm;
mod pool;
mod tensor;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use adam::{AdamConfig, AdamState};
pub use attention::{MultiHeadAttention, SelfAttention};
pub use conv::{Conv1d, Conv2d};
pub use dense::{dropout, relu, Dense, Dropout, Flatten, LastStep, Relu};
pub use gemm::matmul;
pub use loss::{softmax, softmax_xent, softmax_xent_batch};
pub use lstm::Lstm;
pub use pool::{MaxPool1d, MaxPool2d};
pub use tensor::Tensor;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("kernel {kernel} larger than input extent {input}")]
    KernelLargerThanInput { kernel: usize, input: usize },
    #[error("pool window {window} larger than input extent {input}")]
    WindowTooLarge { window: usize, input: usize },
    #[error("attention needs channels divisible by 8, got {0}")]
    ChannelsNotDivisibleBy8(usize),
    #[error("{channels} channels cannot be split across {heads} heads")]
    IndivisibleHeads { channels: usize, heads: usize },
    #[error("empty sequence")]
    EmptySequence,
    #[error("{0}: backward called before forward")]
    NoForwardCache(&'static str),
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),
}

/// Floating-point element type of tensors (`f32` for training, `f64` for
/// gradient checks).
pub trait Scalar:
    Float
    + FromPrimitive
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Send
    + Sync
    + Debug
    + Display
    + Default
    + 'static
{
    /// `c = alpha * a b + beta * c` with explicit strides.
    ///
    /// # Safety
    /// Pointers and strides must describe valid, non-aliasing matrices.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("representable literal")
    }
}

impl Scalar for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Per-pass state shared with layers.
pub struct Context {
    pub training: bool,
    pub rng: ChaCha8Rng,
}

impl Context {
    pub fn new(training: bool, seed: u64) -> Self {
        use rand::SeedableRng;
        Self {
            training,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

/// A differentiable layer. `backward` must follow the matching `forward`;
/// it returns the input gradient and adds parameter gradients into each
/// parameter's gradient slot.
pub trait Layer<T: Scalar>: Send {
    fn kind(&self) -> &'static str;

    /// Per-sample output dims for per-sample input dims.
    fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>, NnError>;

    fn forward(&mut self, x: &Tensor<T>, ctx: &mut Context) -> Result<Tensor<T>, NnError>;

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError>;

    fn params(&self) -> Vec<(&'static str, &Tensor<T>)> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        Vec::new()
    }
}

/// A straight chain of layers.
pub struct Network<T: Scalar> {
    input_dims: Vec<usize>,
    layers: Vec<Box<dyn Layer<T>>>,
}

impl<T: Scalar> Network<T> {
    pub fn new(input_dims: Vec<usize>) -> Self {
        Self {
            input_dims,
            layers: Vec::new(),
        }
    }

    pub fn push(&mut self, layer: Box<dyn Layer<T>>) -> Result<(), NnError> {
        // Shape-check against the current chain.
        let mut dims = self.input_dims.clone();
        for l in &self.layers {
            dims = l.output_dims(&dims)?;
        }
        layer.output_dims(&dims)?;
        self.layers.push(layer);
        Ok(())
    }

    pub fn input_dims(&self) -> &[usize] {
        &self.input_dims
    }

    pub fn output_dims(&self) -> Result<Vec<usize>, NnError> {
        let mut dims = self.input_dims.clone();
        for l in &self.layers {
            dims = l.output_dims(&dims)?;
        }
        Ok(dims)
    }

    pub fn layers(&self) -> &[Box<dyn Layer<T>>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Box<dyn Layer<T>>] {
        &mut self.layers
    }

    pub fn forward(&mut self, x: &Tensor<T>, ctx: &mut Context) -> Result<Tensor<T>, NnError> {
        if x.dims().get(1..) != Some(&self.input_dims[..]) {
            return Err(NnError::ShapeMismatch(format!(
                "network expects [batch, {:?}], got {:?}",
                self.input_dims,
                x.dims()
            )));
        }
        let mut h = x.clone_values();
        for layer in &mut self.layers {
            h = layer.forward(&h, ctx)?;
        }
        Ok(h)
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let mut g = grad.clone_values();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    /// Parameters named `<layer index>.<kind>.<param>`, in a fixed order.
    pub fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                let kind = l.kind();
                l.params()
                    .into_iter()
                    .map(move |(n, t)| (format!("{i}.{kind}.{n}"), t))
            })
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params_mut().into_iter().map(|(_, t)| t))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Overwrites parameter values by name; every parameter must be present
    /// with a matching shape.
    pub fn load_params(&mut self, values: &[(String, Tensor<T>)]) -> Result<(), NnError> {
        let names: Vec<String> = self.named_params().into_iter().map(|(n, _)| n).collect();
        if names.len() != values.len() {
            return Err(NnError::ShapeMismatch(format!(
                "network has {} parameters, got {}",
                names.len(),
                values.len()
            )));
        }
        for ((name, p), (vname, v)) in names.iter().zip(self.params_mut()).zip(values) {
            if name != vname || p.dims() != v.dims() {
                return Err(NnError::ShapeMismatch(format!(
                    "parameter {name} {:?} vs {vname} {:?}",
                    p.dims(),
                    v.dims()
                )));
            }
            p.data_mut().copy_from_slice(v.data());
        }
        Ok(())
    }
}
