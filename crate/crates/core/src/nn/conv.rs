//! Valid (unpadded) strided convolutions via im2col + GEMM.

use rand_chacha::ChaCha8Rng;

use super::{init, matmul, Context, Layer, NnError, Scalar, Tensor};
use crate::par;

/// Geometry of one convolution over an `h x w x c_in` sample.
#[derive(Debug, Clone, Copy)]
struct Geometry {
    h: usize,
    w: usize,
    c_in: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    oh: usize,
    ow: usize,
    c_out: usize,
}

impl Geometry {
    fn new(
        h: usize,
        w: usize,
        c_in: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        c_out: usize,
    ) -> Result<Self, NnError> {
        if kh > h {
            return Err(NnError::KernelLargerThanInput { kernel: kh, input: h });
        }
        if kw > w {
            return Err(NnError::KernelLargerThanInput { kernel: kw, input: w });
        }
        Ok(Self {
            h,
            w,
            c_in,
            kh,
            kw,
            stride,
            oh: (h - kh) / stride + 1,
            ow: (w - kw) / stride + 1,
            c_out,
        })
    }

    fn patch_len(&self) -> usize {
        self.kh * self.kw * self.c_in
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    fn in_len(&self) -> usize {
        self.h * self.w * self.c_in
    }

    fn out_len(&self) -> usize {
        self.positions() * self.c_out
    }

    /// Rows of `cols` are flattened `(ky, kx, c)` patches, one per output.
    fn im2col<T: Copy>(&self, x: &[T], cols: &mut [T]) {
        let run = self.kw * self.c_in;
        let row_len = self.patch_len();
        for oy in 0..self.oh {
            for ox in 0..self.ow {
                let row = &mut cols[(oy * self.ow + ox) * row_len..][..row_len];
                for ky in 0..self.kh {
                    let src = ((oy * self.stride + ky) * self.w + ox * self.stride) * self.c_in;
                    row[ky * run..(ky + 1) * run].copy_from_slice(&x[src..src + run]);
                }
            }
        }
    }

    /// Adjoint of [`Self::im2col`]: scatter-adds patch rows into `dx`.
    fn col2im<T: Scalar>(&self, cols: &[T], dx: &mut [T]) {
        let run = self.kw * self.c_in;
        let row_len = self.patch_len();
        for oy in 0..self.oh {
            for ox in 0..self.ow {
                let row = &cols[(oy * self.ow + ox) * row_len..][..row_len];
                for ky in 0..self.kh {
                    let dst = ((oy * self.stride + ky) * self.w + ox * self.stride) * self.c_in;
                    for (d, s) in dx[dst..dst + run].iter_mut().zip(&row[ky * run..(ky + 1) * run]) {
                        *d += *s;
                    }
                }
            }
        }
    }
}

/// Kernel stored `[kh, kw, c_in, c_out]`, i.e. a `patch_len x c_out` matrix.
struct ConvCore<T> {
    kernel: Tensor<T>,
    bias: Tensor<T>,
    kh: usize,
    kw: usize,
    c_in: usize,
    c_out: usize,
    stride: usize,
    one_d: bool,
    cache: Option<(Tensor<T>, Geometry)>,
}

impl<T: Scalar> ConvCore<T> {
    fn forward(&mut self, x: &Tensor<T>, g: Geometry) -> Tensor<T> {
        let batch = x.batch();
        let mut out = vec![T::zero(); batch * g.out_len()];
        let kernel = self.kernel.data();
        let bias = self.bias.data();
        let xs = x.data();
        par::for_each_chunk_mut(&mut out, g.out_len(), |b, y| {
            let mut cols = vec![T::zero(); g.positions() * g.patch_len()];
            g.im2col(&xs[b * g.in_len()..(b + 1) * g.in_len()], &mut cols);
            for row in y.chunks_exact_mut(g.c_out) {
                row.copy_from_slice(bias);
            }
            matmul(&cols, false, kernel, false, y, g.positions(), g.patch_len(), g.c_out, true);
        });
        self.cache = Some((x.clone_values(), g));
        out_tensor(batch, g, self.one_d, out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>, kind: &'static str) -> Result<Tensor<T>, NnError> {
        let (x, g) = self.cache.as_ref().ok_or(NnError::NoForwardCache(kind))?;
        let g = *g;
        let batch = x.batch();
        if grad_out.len() != batch * g.out_len() {
            return Err(NnError::ShapeMismatch(format!(
                "{kind} backward: gradient has {} values, expected {}",
                grad_out.len(),
                batch * g.out_len()
            )));
        }
        let kernel = self.kernel.data();
        let xs = x.data();
        let dys = grad_out.data();
        let mut dx = vec![T::zero(); batch * g.in_len()];
        let partials = par::map_chunks_mut(&mut dx, g.in_len(), |b, dxb| {
            let dy = &dys[b * g.out_len()..(b + 1) * g.out_len()];
            let mut cols = vec![T::zero(); g.positions() * g.patch_len()];
            g.im2col(&xs[b * g.in_len()..(b + 1) * g.in_len()], &mut cols);
            let mut dk = vec![T::zero(); g.patch_len() * g.c_out];
            matmul(&cols, true, dy, false, &mut dk, g.patch_len(), g.positions(), g.c_out, false);
            let mut db = vec![T::zero(); g.c_out];
            for row in dy.chunks_exact(g.c_out) {
                for (d, v) in db.iter_mut().zip(row) {
                    *d += *v;
                }
            }
            matmul(dy, false, kernel, true, &mut cols, g.positions(), g.c_out, g.patch_len(), false);
            g.col2im(&cols, dxb);
            (dk, db)
        });
        // Fixed-order reduction keeps results independent of thread count.
        let dk_total = self.kernel.grad_mut();
        for (dk, _) in &partials {
            for (a, v) in dk_total.iter_mut().zip(dk) {
                *a += *v;
            }
        }
        let db_total = self.bias.grad_mut();
        for (_, db) in &partials {
            for (a, v) in db_total.iter_mut().zip(db) {
                *a += *v;
            }
        }
        let mut dims = x.dims().to_vec();
        dims[0] = batch;
        Tensor::from_vec(&dims, dx)
    }

    fn params(&self) -> Vec<(&'static str, &Tensor<T>)> {
        vec![("kernel", &self.kernel), ("bias", &self.bias)]
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        vec![("kernel", &mut self.kernel), ("bias", &mut self.bias)]
    }
}

fn out_tensor<T: Scalar>(batch: usize, g: Geometry, one_d: bool, data: Vec<T>) -> Tensor<T> {
    let dims = if one_d {
        vec![batch, g.ow, g.c_out]
    } else {
        vec![batch, g.oh, g.ow, g.c_out]
    };
    Tensor::from_vec(&dims, data).expect("conv output length")
}

fn check_stride(stride: usize) -> Result<(), NnError> {
    if stride == 0 {
        return Err(NnError::InvalidHyperparameter("stride must be positive".into()));
    }
    Ok(())
}

/// 2D convolution over `[batch, h, w, c_in]`.
pub struct Conv2d<T>(ConvCore<T>);

impl<T: Scalar> Conv2d<T> {
    /// He-uniform kernel, zero bias.
    pub fn new(
        kernel: usize,
        c_in: usize,
        c_out: usize,
        stride: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, NnError> {
        let fan_in = kernel * kernel * c_in;
        let k = init::he_uniform(rng, fan_in, fan_in * c_out);
        Self::from_params(kernel, c_in, c_out, stride, k, vec![T::zero(); c_out])
    }

    pub fn from_params(
        kernel: usize,
        c_in: usize,
        c_out: usize,
        stride: usize,
        weights: Vec<T>,
        bias: Vec<T>,
    ) -> Result<Self, NnError> {
        check_stride(stride)?;
        Ok(Self(ConvCore {
            kernel: Tensor::param(&[kernel, kernel, c_in, c_out], weights)?,
            bias: Tensor::param(&[c_out], bias)?,
            kh: kernel,
            kw: kernel,
            c_in,
            c_out,
            stride,
            one_d: false,
            cache: None,
        }))
    }

    fn geometry(&self, dims: &[usize]) -> Result<Geometry, NnError> {
        let c = &self.0;
        match dims {
            [h, w, ch] if *ch == c.c_in => Geometry::new(*h, *w, *ch, c.kh, c.kw, c.stride, c.c_out),
            _ => Err(NnError::ShapeMismatch(format!(
                "conv2d expects [h, w, {}], got {dims:?}",
                c.c_in
            ))),
        }
    }
}

impl<T: Scalar> Layer<T> for Conv2d<T> {
    fn kind(&self) -> &'static str {
        "conv2d"
    }

    fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>, NnError> {
        let g = self.geometry(input)?;
        Ok(vec![g.oh, g.ow, g.c_out])
    }

    fn forward(&mut self, x: &Tensor<T>, _ctx: &mut Context) -> Result<Tensor<T>, NnError> {
        let g = self.geometry(&x.dims()[1..])?;
        Ok(self.0.forward(x, g))
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        self.0.backward(grad_out, "conv2d")
    }

    fn params(&self) -> Vec<(&'static str, &Tensor<T>)> {
        self.0.params()
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        self.0.params_mut()
    }
}

/// 1D convolution over `[batch, length, c_in]`; kernel `[k, c_in, c_out]`.
pub struct Conv1d<T>(ConvCore<T>);

impl<T: Scalar> Conv1d<T> {
    pub fn new(
        kernel: usize,
        c_in: usize,
        c_out: usize,
        stride: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, NnError> {
        let fan_in = kernel * c_in;
        let k = init::he_uniform(rng, fan_in, fan_in * c_out);
        Self::from_params(kernel, c_in, c_out, stride, k, vec![T::zero(); c_out])
    }

    pub fn from_params(
        kernel: usize,
        c_in: usize,
        c_out: usize,
        stride: usize,
        weights: Vec<T>,
        bias: Vec<T>,
    ) -> Result<Self, NnError> {
        check_stride(stride)?;
        Ok(Self(ConvCore {
            kernel: Tensor::param(&[kernel, c_in, c_out], weights)?,
            bias: Tensor::param(&[c_out], bias)?,
            kh: 1,
            kw: kernel,
            c_in,
            c_out,
            stride,
            one_d: true,
            cache: None,
        }))
    }

    fn geometry(&self, dims: &[usize]) -> Result<Geometry, NnError> {
        let c = &self.0;
        match dims {
            [l, ch] if *ch == c.c_in => Geometry::new(1, *l, *ch, 1, c.kw, c.stride, c.c_out),
            _ => Err(NnError::ShapeMismatch(format!(
                "conv1d expects [length, {}], got {dims:?}",
                c.c_in
            ))),
        }
    }
}

impl<T: Scalar> Layer<T> for Conv1d<T> {
    fn kind(&self) -> &'static str {
        "conv1d"
    }

    fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>, NnError> {
        let g = self.geometry(input)?;
        Ok(vec![g.ow, g.c_out])
    }

    fn forward(&mut self, x: &Tensor<T>, _ctx: &mut Context) -> Result<Tensor<T>, NnError> {
        let g = self.geometry(&x.dims()[1..])?;
        Ok(self.0.forward(x, g))
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        self.0.backward(grad_out, "conv1d")
    }

    fn params(&self) -> Vec<(&'static str, &Tensor<T>)> {
        self.0.params()
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        self.0.params_mut()
    }
}
