//! Spatial self-attention with a gated residual, single- and multi-head.
//!
//! A sample `[..., C]` is viewed as `N` positions by `C` channels. Per head
//! `A = softmax(Q Kᵀ / sqrt(d))`, heads are concatenated, optionally
//! projected by `Wo`, and the block returns `x + gamma * out`.

use rand_chacha::ChaCha8Rng;

use super::{init, matmul, Context, Layer, NnError, Scalar, Tensor};
use crate::par;

struct AttentionCore<T> {
    channels: usize,
    heads: usize,
    wq: Tensor<T>,
    wk: Tensor<T>,
    wv: Tensor<T>,
    wo: Option<Tensor<T>>,
    gamma: Tensor<T>,
    cache: Option<Tensor<T>>,
}

/// Forward intermediates of one sample.
struct Pass<T> {
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    /// Concatenated head outputs `[N, C]`.
    o: Vec<T>,
    /// Residual branch before gating (`o` or `o Wo`).
    p: Vec<T>,
}

fn take_cols<T: Scalar>(src: &[T], rows: usize, width: usize, start: usize, len: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(rows * len);
    for r in 0..rows {
        out.extend_from_slice(&src[r * width + start..r * width + start + len]);
    }
    out
}

fn put_cols<T: Scalar>(dst: &mut [T], rows: usize, width: usize, start: usize, src: &[T], len: usize) {
    for r in 0..rows {
        dst[r * width + start..r * width + start + len].copy_from_slice(&src[r * len..(r + 1) * len]);
    }
}

fn softmax_rows<T: Scalar>(s: &mut [T], n: usize) {
    for row in s.chunks_exact_mut(n) {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

impl<T: Scalar> AttentionCore<T> {
    fn new(channels: usize, heads: usize, project: bool, rng: &mut ChaCha8Rng) -> Result<Self, NnError> {
        check_dims(channels, heads)?;
        let d = channels / 8;
        let wq = init::xavier_uniform(rng, channels, d, channels * d);
        let wk = init::xavier_uniform(rng, channels, d, channels * d);
        let wv = init::he_uniform(rng, channels, channels * channels);
        let wo = project.then(|| init::xavier_uniform(rng, channels, channels, channels * channels));
        Self::from_params(channels, heads, wq, wk, wv, wo, T::zero())
    }

    fn from_params(
        channels: usize,
        heads: usize,
        wq: Vec<T>,
        wk: Vec<T>,
        wv: Vec<T>,
        wo: Option<Vec<T>>,
        gamma: T,
    ) -> Result<Self, NnError> {
        check_dims(channels, heads)?;
        let d = channels / 8;
        Ok(Self {
            channels,
            heads,
            wq: Tensor::param(&[channels, d], wq)?,
            wk: Tensor::param(&[channels, d], wk)?,
            wv: Tensor::param(&[channels, channels], wv)?,
            wo: wo.map(|w| Tensor::param(&[channels, channels], w)).transpose()?,
            gamma: Tensor::param(&[1], vec![gamma])?,
            cache: None,
        })
    }

    fn qk_width(&self) -> usize {
        self.channels / 8 / self.heads
    }

    fn v_width(&self) -> usize {
        self.channels / self.heads
    }

    fn scale(&self) -> T {
        T::one() / T::from(self.qk_width()).expect("width").sqrt()
    }

    fn check_input(&self, input: &[usize]) -> Result<usize, NnError> {
        match input.split_last() {
            Some((&c, rest)) if c == self.channels && !rest.is_empty() => {
                Ok(rest.iter().product())
            }
            _ => Err(NnError::ShapeMismatch(format!(
                "attention over {} channels got {input:?}",
                self.channels
            ))),
        }
    }

    fn attention(&self, q: &[T], k: &[T], n: usize, head: usize) -> Vec<T> {
        let (c8, dq) = (self.channels / 8, self.qk_width());
        let qh = take_cols(q, n, c8, head * dq, dq);
        let kh = take_cols(k, n, c8, head * dq, dq);
        let mut s = vec![T::zero(); n * n];
        matmul(&qh, false, &kh, true, &mut s, n, dq, n, false);
        let scale = self.scale();
        s.iter_mut().for_each(|v| *v *= scale);
        softmax_rows(&mut s, n);
        s
    }

    fn pass(&self, x: &[T], n: usize) -> Pass<T> {
        let (c, c8, dv) = (self.channels, self.channels / 8, self.v_width());
        let mut q = vec![T::zero(); n * c8];
        let mut k = vec![T::zero(); n * c8];
        let mut v = vec![T::zero(); n * c];
        matmul(x, false, self.wq.data(), false, &mut q, n, c, c8, false);
        matmul(x, false, self.wk.data(), false, &mut k, n, c, c8, false);
        matmul(x, false, self.wv.data(), false, &mut v, n, c, c, false);
        let mut o = vec![T::zero(); n * c];
        for h in 0..self.heads {
            let a = self.attention(&q, &k, n, h);
            let vh = take_cols(&v, n, c, h * dv, dv);
            let mut oh = vec![T::zero(); n * dv];
            matmul(&a, false, &vh, false, &mut oh, n, n, dv, false);
            put_cols(&mut o, n, c, h * dv, &oh, dv);
        }
        let p = match &self.wo {
            Some(wo) => {
                let mut p = vec![T::zero(); n * c];
                matmul(&o, false, wo.data(), false, &mut p, n, c, c, false);
                p
            }
            None => o.clone(),
        };
        Pass { q, k, v, o, p }
    }

    fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let n = self.check_input(&x.dims()[1..])?;
        let len = n * self.channels;
        let gamma = self.gamma.data()[0];
        let xs = x.data();
        let mut out = vec![T::zero(); xs.len()];
        par::for_each_chunk_mut(&mut out, len, |b, y| {
            let xb = &xs[b * len..(b + 1) * len];
            let pass = self.pass(xb, n);
            for ((yv, &xv), &pv) in y.iter_mut().zip(xb).zip(&pass.p) {
                *yv = xv + gamma * pv;
            }
        });
        self.cache = Some(x.clone_values());
        Tensor::from_vec(x.dims(), out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>, kind: &'static str) -> Result<Tensor<T>, NnError> {
        let x = self.cache.as_ref().ok_or(NnError::NoForwardCache(kind))?;
        if grad_out.dims() != x.dims() {
            return Err(NnError::ShapeMismatch(format!(
                "{kind} backward: {:?} vs {:?}",
                grad_out.dims(),
                x.dims()
            )));
        }
        let n = self.check_input(&x.dims()[1..])?;
        let (c, c8, dq, dv) = (self.channels, self.channels / 8, self.qk_width(), self.v_width());
        let len = n * c;
        let gamma = self.gamma.data()[0];
        let scale = self.scale();
        let xs = x.data();
        let dys = grad_out.data();
        let this = &*self;
        let mut dx = vec![T::zero(); xs.len()];
        let partials = par::map_chunks_mut(&mut dx, len, |b, dxb| {
            let xb = &xs[b * len..(b + 1) * len];
            let dy = &dys[b * len..(b + 1) * len];
            let pass = this.pass(xb, n);
            let dgamma: T = dy.iter().zip(&pass.p).map(|(&g, &p)| g * p).sum();
            let dp: Vec<T> = dy.iter().map(|&g| g * gamma).collect();
            let (do_, dwo) = match &this.wo {
                Some(wo) => {
                    let mut dwo = vec![T::zero(); c * c];
                    matmul(&pass.o, true, &dp, false, &mut dwo, c, n, c, false);
                    let mut d = vec![T::zero(); len];
                    matmul(&dp, false, wo.data(), true, &mut d, n, c, c, false);
                    (d, Some(dwo))
                }
                None => (dp, None),
            };
            let mut dq_all = vec![T::zero(); n * c8];
            let mut dk_all = vec![T::zero(); n * c8];
            let mut dv_all = vec![T::zero(); len];
            for h in 0..this.heads {
                let a = this.attention(&pass.q, &pass.k, n, h);
                let doh = take_cols(&do_, n, c, h * dv, dv);
                let vh = take_cols(&pass.v, n, c, h * dv, dv);
                let mut da = vec![T::zero(); n * n];
                matmul(&doh, false, &vh, true, &mut da, n, dv, n, false);
                let mut dvh = vec![T::zero(); n * dv];
                matmul(&a, true, &doh, false, &mut dvh, n, n, dv, false);
                put_cols(&mut dv_all, n, c, h * dv, &dvh, dv);
                // Softmax backward, folded with the score scale.
                let mut ds = da;
                for (drow, arow) in ds.chunks_exact_mut(n).zip(a.chunks_exact(n)) {
                    let dot: T = drow.iter().zip(arow).map(|(&d, &a)| d * a).sum();
                    for (d, &a) in drow.iter_mut().zip(arow) {
                        *d = a * (*d - dot) * scale;
                    }
                }
                let qh = take_cols(&pass.q, n, c8, h * dq, dq);
                let kh = take_cols(&pass.k, n, c8, h * dq, dq);
                let mut dqh = vec![T::zero(); n * dq];
                matmul(&ds, false, &kh, false, &mut dqh, n, n, dq, false);
                let mut dkh = vec![T::zero(); n * dq];
                matmul(&ds, true, &qh, false, &mut dkh, n, n, dq, false);
                put_cols(&mut dq_all, n, c8, h * dq, &dqh, dq);
                put_cols(&mut dk_all, n, c8, h * dq, &dkh, dq);
            }
            let mut dwq = vec![T::zero(); c * c8];
            let mut dwk = vec![T::zero(); c * c8];
            let mut dwv = vec![T::zero(); c * c];
            matmul(xb, true, &dq_all, false, &mut dwq, c, n, c8, false);
            matmul(xb, true, &dk_all, false, &mut dwk, c, n, c8, false);
            matmul(xb, true, &dv_all, false, &mut dwv, c, n, c, false);
            dxb.copy_from_slice(dy);
            matmul(&dq_all, false, this.wq.data(), true, dxb, n, c8, c, true);
            matmul(&dk_all, false, this.wk.data(), true, dxb, n, c8, c, true);
            matmul(&dv_all, false, this.wv.data(), true, dxb, n, c, c, true);
            (dwq, dwk, dwv, dwo, dgamma)
        });
        for (dwq, dwk, dwv, dwo, dgamma) in &partials {
            add_into(self.wq.grad_mut(), dwq);
            add_into(self.wk.grad_mut(), dwk);
            add_into(self.wv.grad_mut(), dwv);
            if let (Some(wo), Some(d)) = (self.wo.as_mut(), dwo) {
                add_into(wo.grad_mut(), d);
            }
            self.gamma.grad_mut()[0] += *dgamma;
        }
        Tensor::from_vec(x.dims(), dx)
    }

    fn attention_maps(&self, sample: &[T]) -> Result<Vec<Vec<T>>, NnError> {
        if sample.is_empty() || sample.len() % self.channels != 0 {
            return Err(NnError::ShapeMismatch(format!(
                "sample of {} values over {} channels",
                sample.len(),
                self.channels
            )));
        }
        let n = sample.len() / self.channels;
        let pass = self.pass(sample, n);
        Ok((0..self.heads).map(|h| self.attention(&pass.q, &pass.k, n, h)).collect())
    }

    fn params(&self) -> Vec<(&'static str, &Tensor<T>)> {
        let mut v = vec![("wq", &self.wq), ("wk", &self.wk), ("wv", &self.wv)];
        if let Some(wo) = &self.wo {
            v.push(("wo", wo));
        }
        v.push(("gamma", &self.gamma));
        v
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        let mut v = vec![("wq", &mut self.wq), ("wk", &mut self.wk), ("wv", &mut self.wv)];
        if let Some(wo) = &mut self.wo {
            v.push(("wo", wo));
        }
        v.push(("gamma", &mut self.gamma));
        v
    }
}

fn add_into<T: Scalar>(acc: &mut [T], v: &[T]) {
    for (a, b) in acc.iter_mut().zip(v) {
        *a += *b;
    }
}

fn check_dims(channels: usize, heads: usize) -> Result<(), NnError> {
    if channels == 0 || channels % 8 != 0 {
        return Err(NnError::ChannelsNotDivisibleBy8(channels));
    }
    if heads == 0 || (channels / 8) % heads != 0 {
        return Err(NnError::IndivisibleHeads { channels, heads });
    }
    Ok(())
}

macro_rules! attention_layer {
    ($name:ident, $kind:literal) => {
        impl<T: Scalar> $name<T> {
            pub fn channels(&self) -> usize {
                self.0.channels
            }

            pub fn heads(&self) -> usize {
                self.0.heads
            }

            /// Per-head width of Q and K.
            pub fn qk_width(&self) -> usize {
                self.0.qk_width()
            }

            pub fn gamma(&self) -> T {
                self.0.gamma.data()[0]
            }

            pub fn set_gamma(&mut self, gamma: T) {
                self.0.gamma.data_mut()[0] = gamma;
            }

            /// Row-stochastic `N x N` attention matrix of each head for one
            /// sample given as `N x C` values.
            pub fn attention_maps(&self, sample: &[T]) -> Result<Vec<Vec<T>>, NnError> {
                self.0.attention_maps(sample)
            }
        }

        impl<T: Scalar> Layer<T> for $name<T> {
            fn kind(&self) -> &'static str {
                $kind
            }

            fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>, NnError> {
                self.0.check_input(input)?;
                Ok(input.to_vec())
            }

            fn forward(&mut self, x: &Tensor<T>, _ctx: &mut Context) -> Result<Tensor<T>, NnError> {
                self.0.forward(x)
            }

            fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
                self.0.backward(grad_out, $kind)
            }

            fn params(&self) -> Vec<(&'static str, &Tensor<T>)> {
                self.0.params()
            }

            fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
                self.0.params_mut()
            }
        }
    };
}

/// Single-head attention: `Wq, Wk: C x C/8`, `Wv: C x C`, scalar `gamma`.
pub struct SelfAttention<T>(AttentionCore<T>);

impl<T: Scalar> SelfAttention<T> {
    /// Xavier-uniform Q/K, He-uniform V, `gamma = 0`.
    pub fn new(channels: usize, rng: &mut ChaCha8Rng) -> Result<Self, NnError> {
        AttentionCore::new(channels, 1, false, rng).map(Self)
    }

    pub fn from_params(channels: usize, wq: Vec<T>, wk: Vec<T>, wv: Vec<T>, gamma: T) -> Result<Self, NnError> {
        AttentionCore::from_params(channels, 1, wq, wk, wv, None, gamma).map(Self)
    }
}

attention_layer!(SelfAttention, "self_attention");

/// Multi-head attention: heads split the `C/8` Q/K columns and the `C` V
/// columns evenly, then `Wo: C x C` projects the concatenation.
pub struct MultiHeadAttention<T>(AttentionCore<T>);

impl<T: Scalar> MultiHeadAttention<T> {
    /// Xavier-uniform Q/K/Wo, He-uniform V, `gamma = 0`.
    pub fn new(channels: usize, heads: usize, rng: &mut ChaCha8Rng) -> Result<Self, NnError> {
        AttentionCore::new(channels, heads, true, rng).map(Self)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn from_params(
        channels: usize,
        heads: usize,
        wq: Vec<T>,
        wk: Vec<T>,
        wv: Vec<T>,
        wo: Vec<T>,
        gamma: T,
    ) -> Result<Self, NnError> {
        AttentionCore::from_params(channels, heads, wq, wk, wv, Some(wo), gamma).map(Self)
    }
}

attention_layer!(MultiHeadAttention, "multi_head_attention");

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn qk_width_is_an_eighth() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sa = SelfAttention::<f32>::new(64, &mut rng).unwrap();
        assert_eq!(sa.qk_width(), 8);
        assert_eq!(sa.params()[0].1.dims(), &[64, 8]);
        let mha = MultiHeadAttention::<f32>::new(64, 4, &mut rng).unwrap();
        assert_eq!(mha.qk_width(), 2);
    }

    #[test]
    fn invalid_channel_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            SelfAttention::<f32>::new(12, &mut rng).err(),
            Some(NnError::ChannelsNotDivisibleBy8(12))
        );
        assert_eq!(
            MultiHeadAttention::<f32>::new(16, 4, &mut rng).err(),
            Some(NnError::IndivisibleHeads { channels: 16, heads: 4 })
        );
    }

    #[test]
    fn closed_gate_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::from_vec(&[2, 3, 3, 16], random(&mut rng, 288)).unwrap();
        let mut sa = SelfAttention::<f64>::new(16, &mut rng).unwrap();
        let mut mha = MultiHeadAttention::<f64>::new(16, 2, &mut rng).unwrap();
        let mut ctx = Context::new(false, 0);
        assert_eq!(sa.forward(&x, &mut ctx).unwrap().data(), x.data());
        assert_eq!(mha.forward(&x, &mut ctx).unwrap().data(), x.data());
    }

    #[test]
    fn attention_rows_are_stochastic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sa = SelfAttention::<f64>::new(32, &mut rng).unwrap();
        let x: Vec<f64> = random(&mut rng, 20 * 32).iter().map(|v| v * 10.0).collect();
        for a in sa.attention_maps(&x).unwrap() {
            for row in a.chunks_exact(20) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn one_head_with_identity_projection_matches_self_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let c = 16;
        let wq = random(&mut rng, c * 2);
        let wk = random(&mut rng, c * 2);
        let wv = random(&mut rng, c * c);
        let mut eye = vec![0.0; c * c];
        (0..c).for_each(|i| eye[i * c + i] = 1.0);
        let mut sa = SelfAttention::from_params(c, wq.clone(), wk.clone(), wv.clone(), 0.7).unwrap();
        let mut mha = MultiHeadAttention::from_params(c, 1, wq, wk, wv, eye, 0.7).unwrap();
        let x = Tensor::from_vec(&[2, 5, c], random(&mut rng, 2 * 5 * c)).unwrap();
        let mut ctx = Context::new(false, 0);
        let a = sa.forward(&x, &mut ctx).unwrap();
        let b = mha.forward(&x, &mut ctx).unwrap();
        for (u, v) in a.data().iter().zip(b.data()) {
            assert!((u - v).abs() < 1e-10);
        }
    }
}
