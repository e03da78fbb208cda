//! Stacked LSTM over `[batch, time, features]` with backpropagation
//! through time. Gate order within the `4H` axis is `i, f, g, o`.

use rand_chacha::ChaCha8Rng;

use super::{init, matmul, Context, Layer, NnError, Scalar, Tensor};

const MAX_LAYERS: usize = 8;
const NAMES: [[&str; 3]; MAX_LAYERS] = [
    ["l0.w_ih", "l0.w_hh", "l0.bias"],
    ["l1.w_ih", "l1.w_hh", "l1.bias"],
    ["l2.w_ih", "l2.w_hh", "l2.bias"],
    ["l3.w_ih", "l3.w_hh", "l3.bias"],
    ["l4.w_ih", "l4.w_hh", "l4.bias"],
    ["l5.w_ih", "l5.w_hh", "l5.bias"],
    ["l6.w_ih", "l6.w_hh", "l6.bias"],
    ["l7.w_ih", "l7.w_hh", "l7.bias"],
];

struct Cell<T> {
    /// `[D, 4H]`
    w_ih: Tensor<T>,
    /// `[H, 4H]`
    w_hh: Tensor<T>,
    /// `[4H]`
    bias: Tensor<T>,
}

/// Activations of one layer over the whole batch, time-major.
struct Trace<T> {
    input: Vec<T>,
    /// Post-activation gates `[T, B, 4H]`.
    gates: Vec<T>,
    /// Cell states `[T, B, H]`.
    c: Vec<T>,
    /// Hidden states `[T, B, H]`.
    h: Vec<T>,
}

pub struct Lstm<T> {
    input: usize,
    hidden: usize,
    cells: Vec<Cell<T>>,
    cache: Option<(usize, usize, Vec<Trace<T>>)>,
}

fn sigmoid<T: Scalar>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

impl<T: Scalar> Lstm<T> {
    /// Xavier-uniform weights; biases are zero except the forget gate, at one.
    pub fn new(input: usize, hidden: usize, layers: usize, rng: &mut ChaCha8Rng) -> Result<Self, NnError> {
        check(input, hidden, layers)?;
        let mut params = Vec::with_capacity(layers);
        for l in 0..layers {
            let d = if l == 0 { input } else { hidden };
            let w_ih = init::xavier_uniform(rng, d, 4 * hidden, d * 4 * hidden);
            let w_hh = init::xavier_uniform(rng, hidden, 4 * hidden, hidden * 4 * hidden);
            let mut bias = vec![T::zero(); 4 * hidden];
            bias[hidden..2 * hidden].fill(T::one());
            params.push((w_ih, w_hh, bias));
        }
        Self::from_params(input, hidden, params)
    }

    /// One `(w_ih, w_hh, bias)` triple per layer.
    pub fn from_params(input: usize, hidden: usize, layers: Vec<(Vec<T>, Vec<T>, Vec<T>)>) -> Result<Self, NnError> {
        check(input, hidden, layers.len())?;
        let cells = layers
            .into_iter()
            .enumerate()
            .map(|(l, (w_ih, w_hh, b))| {
                let d = if l == 0 { input } else { hidden };
                Ok(Cell {
                    w_ih: Tensor::param(&[d, 4 * hidden], w_ih)?,
                    w_hh: Tensor::param(&[hidden, 4 * hidden], w_hh)?,
                    bias: Tensor::param(&[4 * hidden], b)?,
                })
            })
            .collect::<Result<_, NnError>>()?;
        Ok(Self { input, hidden, cells, cache: None })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn num_layers(&self) -> usize {
        self.cells.len()
    }

    pub fn input_width(&self) -> usize {
        self.input
    }

    /// Runs one layer; `x` is time-major `[T, B, D]`.
    fn run_layer(cell: &Cell<T>, x: Vec<T>, steps: usize, batch: usize, hidden: usize) -> Trace<T> {
        let h4 = 4 * hidden;
        let d = cell.w_ih.dims()[0];
        let rows = steps * batch;
        let mut z = Vec::with_capacity(rows * h4);
        for _ in 0..rows {
            z.extend_from_slice(cell.bias.data());
        }
        matmul(&x, false, cell.w_ih.data(), false, &mut z, rows, d, h4, true);
        let mut c = vec![T::zero(); rows * hidden];
        let mut h = vec![T::zero(); rows * hidden];
        let bh = batch * hidden;
        for t in 0..steps {
            let zt = &mut z[t * batch * h4..(t + 1) * batch * h4];
            if t > 0 {
                let h_prev = &h[(t - 1) * bh..t * bh];
                matmul(h_prev, false, cell.w_hh.data(), false, zt, batch, hidden, h4, true);
            }
            for b in 0..batch {
                let g = &mut zt[b * h4..(b + 1) * h4];
                for j in 0..hidden {
                    g[j] = sigmoid(g[j]);
                    g[hidden + j] = sigmoid(g[hidden + j]);
                    g[2 * hidden + j] = g[2 * hidden + j].tanh();
                    g[3 * hidden + j] = sigmoid(g[3 * hidden + j]);
                    let c_prev = if t > 0 { c[(t - 1) * bh + b * hidden + j] } else { T::zero() };
                    let ct = g[hidden + j] * c_prev + g[j] * g[2 * hidden + j];
                    c[t * bh + b * hidden + j] = ct;
                    h[t * bh + b * hidden + j] = g[3 * hidden + j] * ct.tanh();
                }
            }
        }
        Trace { input: x, gates: z, c, h }
    }

    fn check_input(&self, input: &[usize]) -> Result<usize, NnError> {
        match input {
            [0, _] => Err(NnError::EmptySequence),
            [t, d] if *d == self.input => Ok(*t),
            _ => Err(NnError::ShapeMismatch(format!(
                "lstm expects [time, {}], got {input:?}",
                self.input
            ))),
        }
    }
}

fn check(input: usize, hidden: usize, layers: usize) -> Result<(), NnError> {
    if input == 0 || hidden == 0 || layers == 0 || layers > MAX_LAYERS {
        return Err(NnError::InvalidHyperparameter(format!(
            "lstm needs positive widths and 1..={MAX_LAYERS} layers (input {input}, hidden {hidden}, layers {layers})"
        )));
    }
    Ok(())
}

/// `[B, T, F]` <-> `[T, B, F]`.
fn swap_bt<T: Copy>(x: &[T], a: usize, b: usize, f: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len());
    for j in 0..b {
        for i in 0..a {
            out.extend_from_slice(&x[(i * b + j) * f..(i * b + j + 1) * f]);
        }
    }
    out
}

impl<T: Scalar> Layer<T> for Lstm<T> {
    fn kind(&self) -> &'static str {
        "lstm"
    }

    fn output_dims(&self, input: &[usize]) -> Result<Vec<usize>, NnError> {
        let t = self.check_input(input)?;
        Ok(vec![t, self.hidden])
    }

    fn forward(&mut self, x: &Tensor<T>, _ctx: &mut Context) -> Result<Tensor<T>, NnError> {
        let steps = self.check_input(&x.dims()[1..])?;
        let batch = x.batch();
        let mut seq = swap_bt(x.data(), batch, steps, self.input);
        let mut traces = Vec::with_capacity(self.cells.len());
        for cell in &self.cells {
            let trace = Self::run_layer(cell, seq, steps, batch, self.hidden);
            seq = trace.h.clone();
            traces.push(trace);
        }
        let out = swap_bt(&seq, steps, batch, self.hidden);
        self.cache = Some((batch, steps, traces));
        Tensor::from_vec(&[batch, steps, self.hidden], out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let (batch, steps, traces) = self.cache.as_ref().ok_or(NnError::NoForwardCache("lstm"))?;
        let (batch, steps, hh) = (*batch, *steps, self.hidden);
        if grad_out.dims() != [batch, steps, hh] {
            return Err(NnError::ShapeMismatch(format!(
                "lstm backward expects [{batch}, {steps}, {hh}], got {:?}",
                grad_out.dims()
            )));
        }
        let h4 = 4 * hh;
        let bh = batch * hh;
        // Gradient w.r.t. the current layer's output sequence, time-major.
        let mut dseq = swap_bt(grad_out.data(), batch, steps, hh);
        for (cell, tr) in self.cells.iter_mut().zip(traces).rev() {
            let d = cell.w_ih.dims()[0];
            let mut dz = vec![T::zero(); steps * batch * h4];
            let mut dh_next = vec![T::zero(); bh];
            let mut dc_next = vec![T::zero(); bh];
            for t in (0..steps).rev() {
                let gates = &tr.gates[t * batch * h4..(t + 1) * batch * h4];
                let dzt = &mut dz[t * batch * h4..(t + 1) * batch * h4];
                for b in 0..batch {
                    let g = &gates[b * h4..(b + 1) * h4];
                    let dg = &mut dzt[b * h4..(b + 1) * h4];
                    for j in 0..hh {
                        let k = b * hh + j;
                        let (ig, fg, gg, og) = (g[j], g[hh + j], g[2 * hh + j], g[3 * hh + j]);
                        let tc = tr.c[t * bh + k].tanh();
                        let c_prev = if t > 0 { tr.c[(t - 1) * bh + k] } else { T::zero() };
                        let dh = dseq[t * bh + k] + dh_next[k];
                        let dc = dh * og * (T::one() - tc * tc) + dc_next[k];
                        dc_next[k] = dc * fg;
                        dg[j] = dc * gg * ig * (T::one() - ig);
                        dg[hh + j] = dc * c_prev * fg * (T::one() - fg);
                        dg[2 * hh + j] = dc * ig * (T::one() - gg * gg);
                        dg[3 * hh + j] = dh * tc * og * (T::one() - og);
                    }
                }
                if t > 0 {
                    matmul(dzt, false, cell.w_hh.data(), true, &mut dh_next, batch, h4, hh, false);
                    let h_prev = &tr.h[(t - 1) * bh..t * bh];
                    matmul(h_prev, true, dzt, false, cell.w_hh.grad_mut(), hh, batch, h4, true);
                }
            }
            let rows = steps * batch;
            matmul(&tr.input, true, &dz, false, cell.w_ih.grad_mut(), d, rows, h4, true);
            let db = cell.bias.grad_mut();
            for row in dz.chunks_exact(h4) {
                for (a, v) in db.iter_mut().zip(row) {
                    *a += *v;
                }
            }
            let mut dx = vec![T::zero(); rows * d];
            matmul(&dz, false, cell.w_ih.data(), true, &mut dx, rows, h4, d, false);
            dseq = dx;
        }
        let dx = swap_bt(&dseq, steps, batch, self.input);
        Tensor::from_vec(&[batch, steps, self.input], dx)
    }

    fn params(&self) -> Vec<(&'static str, &Tensor<T>)> {
        self.cells
            .iter()
            .zip(NAMES)
            .flat_map(|(c, n)| [(n[0], &c.w_ih), (n[1], &c.w_hh), (n[2], &c.bias)])
            .collect()
    }

    fn params_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        self.cells
            .iter_mut()
            .zip(NAMES)
            .flat_map(|(c, n)| [(n[0], &mut c.w_ih), (n[1], &mut c.w_hh), (n[2], &mut c.bias)])
            .collect()
    }
}
