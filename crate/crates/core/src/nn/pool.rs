//! Max pooling. Backward routes each output gradient to the first maximal
//! element of its window.

use super::{Context, Layer, NnError, Scalar, Tensor};
use crate::par;

#[derive(Debug, Clone, Copy)]
struct PoolGeom {
    h: usize,
    w: usize,
    c: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    oh: usize,
    ow: usize,
}

impl PoolGeom {
    fn new(h: usize, w: usize, c: usize, kh: usize, kw: usize, stride: usize) -> Result<Self, NnError> {
        if kh > h {
            return Err(NnError::WindowTooLarge { window: kh, input: h });
        }
        if kw > w {
            return Err(NnError::WindowTooLarge { window: kw, input: w });
        }
        Ok(Self {
            h,
            w,
            c,
            kh,
            kw,
            stride,
            oh: (h - kh) / stride + 1,
            ow: (w - kw) / stride + 1,
        })
    }

    fn in_len(&self) -> usize {
        self.h * self.w * self.c
    }

    fn out_len(&self) -> usize {
        self.oh * self.ow * self.c
    }

    /// Writes window maxima into `y` and their flat input offsets into `arg`.
    fn forward<T: Scalar>(&self, x: &[T], y: &mut [T], arg: &mut [u32]) {
        for oy in 0..self.oh {
            for ox in 0..self.ow {
                for ch in 0..self.c {
                    let mut best = T::neg_infinity();
                    let mut best_i = 0usize;
                    for ky in 0..self.kh {
                        for kx in 0..self.kw {
                            let i = ((oy * self.stride + ky) * self.w + ox * self.stride + kx) * self.c + ch;
                            // Strict comparison keeps the first maximum on ties.
                            if x[i] > best || (ky == 0 && kx == 0) {
                                best = x[i];
                                best_i = i;
                            }
                        }
                    }
                    let o = (oy * self.ow + ox) * self.c + ch;
                    y[o] = best;
                    arg[o] = best_i as u32;
                }
            }
        }
    }
}

struct PoolCore {
    kh: usize,
    kw: usize,
    stride: usize,
    cache: Option<(Vec<usize>, Vec<u32>, PoolGeom)>,
}

impl PoolCore {
    fn forward<T: Scalar>(&mut self, x: &Tensor<T>, g: PoolGeom, out_dims: Vec<usize>) -> Tensor<T> {
        let batch = x.batch();
        let mut y = vec![T::zero(); batch * g.out_len()];
        let mut arg = vec![0u32; batch * g.out_len()];
        let xs = x.data();
        let args = par::map_chunks_mut(&mut y, g.out_len(), |b, yb| {
            let mut a = vec![0u32; g.out_len()];
            g.forward(&xs[b * g.in_len()..(b + 1) * g.in_len()], yb, &mut a);
            a
        });
        for (dst, src) in arg.chunks_exact_mut(g.out_len().max(1)).zip(args) {
            dst.copy_from_slice(&src);
        }
        self.cache = Some((x.dims().to_vec(), arg, g));
        let mut dims = vec![batch];
        dims.extend(out_dims);
        Tensor::from_vec(&dims, y).expect("pool output length")
    }

    fn backward<T: Scalar>(&self, grad_out: &Tensor<T>, kind: &'static str) -> Result<Tensor<T>, NnError> {
        let (dims, arg, g) = self.cache.as_ref().ok_or(NnError::NoForwardCache(kind))?;
        if grad_out.len() != arg.len() {
            return Err(NnError::ShapeMismatch(format!("{kind} backward gradient length")));
        }
        let batch = dims[0];
        let mut dx = vec![T::zero(); batch * g.in_len()];
        let dy = grad_out.data();
        let ol = g.out_len();
        par::for_each_chunk_mut(&mut dx, g.in_len(), |b, dxb| {
            for o in 0..ol {
                dxb[arg[b * ol + o] as usize] += dy[b * ol + o];
            }
        });
        Tensor::from_vec(dims, dx)
    }
}

/// 2D max pooling over `[batch, h, w, c]`.
pub struct MaxPool2d(PoolCore);

impl MaxPool2d {
    pub fn new(size: usize, stride: usize) -> Result<Self, NnError> {
        if size == 0 || stride == 0 {
            return Err(NnError::InvalidHyperparameter("pool size and stride must be positive".into()));
        }
        Ok(Self(PoolCore { kh: size, kw: size, stride, cache: None }))
    }

    fn geometry(&self, dims: &[usize]) -> Result<PoolGeom, NnError> {
        match dims {
            [h, w, c] => PoolGeom::new(*h, *w, *c, self.0.kh, self.0.kw, self.0.stride),
            _ => Err(NnError::ShapeMismatch(format!("maxpool2d expects [h, w, c], got {dims:?}"))),
        }
    }
}

impl<T: Scalar> Layer<T> for MaxPool2d {
    fn kind(&self) -> &'static str {
        "maxpool2d"
    }

    fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>, NnError> {
        let g = self.geometry(input)?;
        Ok(vec![g.oh, g.ow, g.c])
    }

    fn forward(&mut self, x: &Tensor<T>, _ctx: &mut Context) -> Result<Tensor<T>, NnError> {
        let g = self.geometry(&x.dims()[1..])?;
        Ok(self.0.forward(x, g, vec![g.oh, g.ow, g.c]))
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        self.0.backward(grad_out, "maxpool2d")
    }
}

/// 1D max pooling over `[batch, length, c]`.
pub struct MaxPool1d(PoolCore);

impl MaxPool1d {
    pub fn new(size: usize, stride: usize) -> Result<Self, NnError> {
        if size == 0 || stride == 0 {
            return Err(NnError::InvalidHyperparameter("pool size and stride must be positive".into()));
        }
        Ok(Self(PoolCore { kh: 1, kw: size, stride, cache: None }))
    }

    fn geometry(&self, dims: &[usize]) -> Result<PoolGeom, NnError> {
        match dims {
            [l, c] => PoolGeom::new(1, *l, *c, 1, self.0.kw, self.0.stride),
            _ => Err(NnError::ShapeMismatch(format!("maxpool1d expects [length, c], got {dims:?}"))),
        }
    }
}

impl<T: Scalar> Layer<T> for MaxPool1d {
    fn kind(&self) -> &'static str {
        "maxpool1d"
    }

    fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>, NnError> {
        let g = self.geometry(input)?;
        Ok(vec![g.ow, g.c])
    }

    fn forward(&mut self, x: &Tensor<T>, _ctx: &mut Context) -> Result<Tensor<T>, NnError> {
        let g = self.geometry(&x.dims()[1..])?;
        Ok(self.0.forward(x, g, vec![g.ow, g.c]))
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        self.0.backward(grad_out, "maxpool1d")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_one_pool_shapes() {
        let p = MaxPool2d::new(2, 2).unwrap();
        assert_eq!(Layer::<f32>::output_dims(&p, &[223, 223, 32]).unwrap(), vec![111, 111, 32]);
        assert_eq!(Layer::<f32>::output_dims(&p, &[107, 107, 64]).unwrap(), vec![53, 53, 64]);
        assert_eq!(
            Layer::<f32>::output_dims(&p, &[1, 5, 2]),
            Err(NnError::WindowTooLarge { window: 2, input: 1 })
        );
    }

    #[test]
    fn ties_route_to_first_element() {
        let mut p = MaxPool2d::new(2, 2).unwrap();
        let x = Tensor::<f64>::from_vec(&[1, 4, 4, 1], vec![3.0; 16]).unwrap();
        let y = p.forward(&x, &mut Context::new(false, 0)).unwrap();
        assert_eq!(y.dims(), &[1, 2, 2, 1]);
        assert!(y.data().iter().all(|&v| v == 3.0));
        let g = Tensor::from_vec(&[1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let dx = p.backward(&g).unwrap();
        let mut expected = vec![0.0; 16];
        expected[0] = 1.0;
        expected[2] = 2.0;
        expected[8] = 3.0;
        expected[10] = 4.0;
        assert_eq!(dx.data(), &expected[..]);
    }

    #[test]
    fn picks_window_max_per_channel() {
        let mut p = MaxPool1d::new(2, 2).unwrap();
        // length 5, 2 channels; last position dropped by floor division.
        let x = Tensor::<f64>::from_vec(&[1, 5, 2], vec![1., 9., 4., 2., -1., 0., -3., 5., 7., 7.]).unwrap();
        let y = p.forward(&x, &mut Context::new(false, 0)).unwrap();
        assert_eq!(y.dims(), &[1, 2, 2]);
        assert_eq!(y.data(), &[4.0, 9.0, -1.0, 5.0]);
    }
}
